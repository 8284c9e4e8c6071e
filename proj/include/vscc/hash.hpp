#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace vscc {

// FNV-1a, used for content fingerprints throughout (datasets, configs,
// checkpoints). Not cryptographic; collision resistance is not a goal.
class Fnv1a {
 public:
  void update(const void* bytes, size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(uint64_t v) { update(&v, sizeof v); }
  void update(double v) { update(&v, sizeof v); }

  uint64_t value() const { return hash_; }
  std::string hex() const {
    char buf[17];
    snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace vscc
