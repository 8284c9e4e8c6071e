#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vscc/image_io.hpp"
#include "vscc/loss.hpp"
#include "vscc/tensor.hpp"

namespace vscc {

class Encoder;

// Class-disjoint train/test split, fingerprinted over manifest order,
// labels and pixel content.
struct DatasetSplit {
  std::vector<Image> train;
  std::vector<Image> test;
  std::string fingerprint;
};

enum class LoadErrorPolicy { kFail, kSkip };

struct DatasetOptions {
  int crop_size = 32;
  LoadErrorPolicy on_error = LoadErrorPolicy::kFail;
};

// Reads `manifest.tsv` under root (lines: relpath<TAB>label<TAB>train|test),
// loads each PPM, resizes the shorter side up to crop_size when needed and
// center-crops. Verifies the class sets of the two splits are disjoint.
DatasetSplit load_dataset(const std::string& root, const DatasetOptions& options);

// Pixel [0,255] <-> normalized [-1,1] maps: x/127.5 - 1 and
// round(clamp(y,-1,1)*127.5 + 127.5).
Tensor normalize_images(const std::vector<const Image*>& images);
Tensor normalize_image(const Image& image);
Image denormalize_image(const Tensor& batch, int index);
double normalize_pixel(uint8_t value);
uint8_t denormalize_pixel(double value);

// sigma^2_KB: per-latent-element mean of encoder variances over the
// training set, with the scalar mean alongside.
struct KnowledgeBase {
  Tensor per_element_variance;  // [k, h, w]
  double scalar_variance = 0.0;
  std::string source_fingerprint;
  std::string model_fingerprint;
};

// The encode callback returns (mean, log_variance) stats for a
// normalized image batch; injected so tests can use stub encoders.
using StatsEncodeFn = std::function<LatentStats(const Tensor& batch)>;

KnowledgeBase build_knowledge_base(const StatsEncodeFn& encode,
                                   const std::vector<Image>& train_images, int batch_size,
                                   const std::string& source_fingerprint,
                                   const std::string& model_fingerprint);

// Convenience wrapper over a real encoder; throws unsupported-method
// for AE-mode encoders (no variance head).
KnowledgeBase build_knowledge_base(Encoder& encoder, const std::vector<Image>& train_images,
                                   int batch_size, const std::string& source_fingerprint,
                                   const std::string& model_fingerprint);

void save_knowledge_base(const KnowledgeBase& kb, const std::string& path);
KnowledgeBase load_knowledge_base(const std::string& path);

// Deterministic synthetic labelled corpus (parametric textures per
// class) used for desk-scale experiments. Writes PPMs plus manifest.tsv;
// train and test use disjoint class ids.
struct CorpusSpec {
  int train_classes = 10;
  int test_classes = 5;
  int train_per_class = 200;
  int test_per_class = 100;
  int image_size = 32;
  uint64_t seed = 42;
};

void generate_corpus(const std::string& root, const CorpusSpec& spec);

}  // namespace vscc
