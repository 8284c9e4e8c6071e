#include "vscc/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vscc/hash.hpp"
#include "vscc/network.hpp"
#include "vscc/rng.hpp"
#include "vscc/version.hpp"

namespace fs = std::filesystem;

namespace vscc {

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

double normalize_pixel(uint8_t value) { return static_cast<double>(value) / 127.5 - 1.0; }

uint8_t denormalize_pixel(double value) {
  const double clamped = std::clamp(value, -1.0, 1.0);
  const double scaled = std::round(clamped * 127.5 + 127.5);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

Tensor normalize_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("normalize_images: empty batch");
  const int h = images[0]->height, w = images[0]->width, c = images[0]->channels;
  Tensor out({static_cast<int>(images.size()), c, h, w});
  for (size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.height != h || img.width != w || img.channels != c)
      throw std::invalid_argument("normalize_images: inconsistent image sizes in batch");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          out.at(static_cast<int>(i), ch, y, x) = normalize_pixel(img.at(y, x, ch));
  }
  return out;
}

Tensor normalize_image(const Image& image) { return normalize_images({&image}); }

Image denormalize_image(const Tensor& batch, int index) {
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.pixels.resize(static_cast<size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) = denormalize_pixel(batch.at(index, ch, y, x));
  return img;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

namespace {

Image load_and_crop(const std::string& path, int crop_size) {
  Image img = read_ppm(path);
  if (img.height < crop_size || img.width < crop_size) {
    // Shorter-side resize up to the crop size, preserving aspect.
    const double scale = static_cast<double>(crop_size) / std::min(img.height, img.width);
    const int nh = std::max(crop_size, static_cast<int>(std::lround(img.height * scale)));
    const int nw = std::max(crop_size, static_cast<int>(std::lround(img.width * scale)));
    img = resize(img, nh, nw);
  }
  return center_crop(img, crop_size);
}

}  // namespace

DatasetSplit load_dataset(const std::string& root, const DatasetOptions& options) {
  const fs::path manifest_path = fs::path(root) / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest)
    throw std::runtime_error("load_dataset: cannot open manifest " + manifest_path.string());

  DatasetSplit split;
  Fnv1a fingerprint;
  std::set<int> train_labels, test_labels;
  std::string line;
  int line_no = 0;
  int skipped = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string rel, label_str, split_str;
    if (!std::getline(ls, rel, '\t') || !std::getline(ls, label_str, '\t') ||
        !std::getline(ls, split_str))
      throw std::runtime_error("load_dataset: malformed manifest line " + std::to_string(line_no));
    const int label = std::stoi(label_str);
    const std::string full = (fs::path(root) / rel).string();
    Image img;
    try {
      img = load_and_crop(full, options.crop_size);
    } catch (const std::exception& e) {
      if (options.on_error == LoadErrorPolicy::kFail)
        throw std::runtime_error(std::string("load_dataset: ") + e.what());
      std::cerr << "load_dataset: skipping " << full << ": " << e.what() << "\n";
      ++skipped;
      continue;
    }
    img.label = label;
    img.path = rel;
    fingerprint.update(rel);
    fingerprint.update(static_cast<uint64_t>(label));
    fingerprint.update(split_str);
    fingerprint.update(img.pixels.data(), img.pixels.size());
    if (split_str == "train") {
      train_labels.insert(label);
      split.train.push_back(std::move(img));
    } else if (split_str == "test") {
      test_labels.insert(label);
      split.test.push_back(std::move(img));
    } else {
      throw std::runtime_error("load_dataset: unknown split '" + split_str + "' at line " +
                               std::to_string(line_no));
    }
  }
  if (split.train.empty() || split.test.empty())
    throw std::runtime_error("load_dataset: train or test split is empty");
  for (int label : train_labels) {
    if (test_labels.count(label))
      throw std::runtime_error("load_dataset: class " + std::to_string(label) +
                               " appears in both train and test splits");
  }
  if (skipped > 0) std::cerr << "load_dataset: skipped " << skipped << " unreadable files\n";
  split.fingerprint = fingerprint.hex();
  return split;
}

// ---------------------------------------------------------------------------
// Knowledge base
// ---------------------------------------------------------------------------

KnowledgeBase build_knowledge_base(const StatsEncodeFn& encode,
                                   const std::vector<Image>& train_images, int batch_size,
                                   const std::string& source_fingerprint,
                                   const std::string& model_fingerprint) {
  if (train_images.empty()) throw std::invalid_argument("build_knowledge_base: no images");
  if (batch_size < 1) throw std::invalid_argument("build_knowledge_base: batch_size < 1");
  Tensor sum;
  int64_t count = 0;
  for (size_t start = 0; start < train_images.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(train_images.size(), start + static_cast<size_t>(batch_size));
    std::vector<const Image*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&train_images[i]);
    const LatentStats stats = encode(normalize_images(batch));
    const int k = stats.log_variance.dim(1), h = stats.log_variance.dim(2),
              w = stats.log_variance.dim(3);
    if (sum.empty()) sum = Tensor({k, h, w});
    const int64_t plane = static_cast<int64_t>(k) * h * w;
    for (size_t i = 0; i < batch.size(); ++i) {
      const double* lv = stats.log_variance.ptr() + static_cast<int64_t>(i) * plane;
      for (int64_t q = 0; q < plane; ++q) sum.data[q] += std::exp(lv[q]);
    }
    count += static_cast<int64_t>(batch.size());
  }
  KnowledgeBase kb;
  kb.per_element_variance = sum;
  double total = 0.0;
  for (auto& v : kb.per_element_variance.data) {
    v /= static_cast<double>(count);
    total += v;
  }
  kb.scalar_variance = total / static_cast<double>(kb.per_element_variance.numel());
  kb.source_fingerprint = source_fingerprint;
  kb.model_fingerprint = model_fingerprint;
  return kb;
}

KnowledgeBase build_knowledge_base(Encoder& encoder, const std::vector<Image>& train_images,
                                   int batch_size, const std::string& source_fingerprint,
                                   const std::string& model_fingerprint) {
  if (!encoder.config().emit_variance)
    throw std::invalid_argument(
        "build_knowledge_base: AE-mode encoder has no variance head (unsupported method)");
  return build_knowledge_base(
      [&encoder](const Tensor& batch) {
        EncoderOutput out = encoder.forward(batch, /*train=*/false);
        return LatentStats{std::move(out.mean), std::move(out.log_variance)};
      },
      train_images, batch_size, source_fingerprint, model_fingerprint);
}

namespace {
constexpr char kKbMagic[8] = {'V', 'S', 'C', 'C', 'K', 'B', '0', '1'};
}

void save_knowledge_base(const KnowledgeBase& kb, const std::string& path) {
  nlohmann::ordered_json header;
  header["format_version"] = 1;
  header["code_version"] = kCodeVersion;
  header["shape"] = kb.per_element_variance.shape;
  header["scalar_variance"] = kb.scalar_variance;
  header["source_fingerprint"] = kb.source_fingerprint;
  header["model_fingerprint"] = kb.model_fingerprint;
  const std::string header_str = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_knowledge_base: cannot open " + path);
  f.write(kKbMagic, sizeof kKbMagic);
  const uint64_t len = header_str.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  f.write(reinterpret_cast<const char*>(kb.per_element_variance.ptr()),
          static_cast<std::streamsize>(kb.per_element_variance.numel() * sizeof(double)));
  if (!f) throw std::runtime_error("save_knowledge_base: write failed for " + path);
}

KnowledgeBase load_knowledge_base(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_knowledge_base: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kKbMagic, sizeof kKbMagic) != 0)
    throw std::runtime_error("load_knowledge_base: " + path + " is not a knowledge base file");
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string header_str(len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("load_knowledge_base: truncated header in " + path);
  const auto header = nlohmann::json::parse(header_str);
  KnowledgeBase kb;
  kb.per_element_variance = Tensor(header.at("shape").get<std::vector<int>>());
  kb.scalar_variance = header.at("scalar_variance").get<double>();
  kb.source_fingerprint = header.at("source_fingerprint").get<std::string>();
  kb.model_fingerprint = header.at("model_fingerprint").get<std::string>();
  f.read(reinterpret_cast<char*>(kb.per_element_variance.ptr()),
         static_cast<std::streamsize>(kb.per_element_variance.numel() * sizeof(double)));
  if (!f) throw std::runtime_error("load_knowledge_base: truncated blob in " + path);
  return kb;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

struct ClassRecipe {
  int pattern = 0;
  double color_a[3], color_b[3], color_c[3];
  double angle = 0.0;
  double freq = 0.0;
  double size = 0.0;
};

ClassRecipe make_recipe(uint64_t seed, int class_id) {
  Rng rng(mix_seed(seed, 0xC0B5, static_cast<uint64_t>(class_id)));
  ClassRecipe r;
  r.pattern = static_cast<int>(rng.below(6));
  for (int i = 0; i < 3; ++i) r.color_a[i] = rng.uniform();
  for (int i = 0; i < 3; ++i) r.color_b[i] = rng.uniform();
  for (int i = 0; i < 3; ++i) r.color_c[i] = rng.uniform();
  r.angle = rng.uniform() * M_PI;
  // Low spatial frequencies: the corpus must be representable by
  // narrow-latent autoencoders at 4x downsampling.
  r.freq = 0.8 + rng.uniform() * 1.8;
  r.size = 0.18 + rng.uniform() * 0.25;
  return r;
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Image render_image(const ClassRecipe& base, int size, Rng& rng) {
  // Per-image jitter keeps images of a class related but distinct.
  ClassRecipe r = base;
  for (int i = 0; i < 3; ++i) {
    r.color_a[i] = std::clamp(r.color_a[i] + 0.12 * (rng.uniform() - 0.5), 0.0, 1.0);
    r.color_b[i] = std::clamp(r.color_b[i] + 0.12 * (rng.uniform() - 0.5), 0.0, 1.0);
    r.color_c[i] = std::clamp(r.color_c[i] + 0.12 * (rng.uniform() - 0.5), 0.0, 1.0);
  }
  r.angle += (rng.uniform() - 0.5) * 0.5;
  r.freq *= 0.85 + 0.3 * rng.uniform();
  const double phase = rng.uniform() * 2.0 * M_PI;
  const double cx = 0.3 + 0.4 * rng.uniform();
  const double cy = 0.3 + 0.4 * rng.uniform();

  Image img;
  img.height = size;
  img.width = size;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(size) * size * 3);
  const double ca = std::cos(r.angle), sa = std::sin(r.angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size;
      const double v = static_cast<double>(y) / size;
      const double proj = u * ca + v * sa;
      double t = 0.0;
      switch (r.pattern) {
        case 0:  // soft stripes
          t = 0.5 + 0.5 * std::sin(2.0 * M_PI * r.freq * proj + phase);
          break;
        case 1:  // soft checker (product of two sinusoids)
          t = 0.5 + 0.5 * std::sin(2 * M_PI * r.freq * u + phase) *
                        std::sin(2 * M_PI * r.freq * v + 0.6 * phase);
          break;
        case 2: {  // disc on gradient
          const double d = std::hypot(u - cx, v - cy);
          t = 1.0 - smoothstep(r.size * 0.6, r.size * 1.4, d);
          break;
        }
        case 3:  // plasma
          t = 0.5 + 0.25 * std::sin(2 * M_PI * r.freq * u + phase) +
              0.25 * std::sin(2 * M_PI * r.freq * 0.7 * v + 1.7 * phase);
          break;
        case 4: {  // concentric rings
          const double d = std::hypot(u - cx, v - cy);
          t = 0.5 + 0.5 * std::sin(2 * M_PI * r.freq * 1.5 * d + phase);
          break;
        }
        default: {  // diagonal gradient with a soft band
          t = 0.6 * proj + 0.4 * smoothstep(r.size, r.size + 0.3, std::abs(u - cx));
          break;
        }
      }
      t = std::clamp(t, 0.0, 1.0);
      const double g = 0.35 * u + 0.25 * v;  // shared gentle gradient
      for (int c = 0; c < 3; ++c) {
        double value = r.color_a[c] * (1.0 - t) + r.color_b[c] * t;
        value = value * (1.0 - 0.3 * g) + r.color_c[c] * 0.3 * g;
        value += 0.01 * (rng.uniform() - 0.5);
        img.at(y, x, c) = static_cast<uint8_t>(std::clamp(value, 0.0, 1.0) * 255.0 + 0.5);
      }
    }
  }
  return img;
}

}  // namespace

void generate_corpus(const std::string& root, const CorpusSpec& spec) {
  fs::create_directories(root);
  std::ofstream manifest(fs::path(root) / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("generate_corpus: cannot write manifest in " + root);

  const int total_classes = spec.train_classes + spec.test_classes;
  for (int cls = 0; cls < total_classes; ++cls) {
    const bool is_train = cls < spec.train_classes;
    const int count = is_train ? spec.train_per_class : spec.test_per_class;
    const ClassRecipe recipe = make_recipe(spec.seed, cls);
    char cls_dir[32];
    snprintf(cls_dir, sizeof cls_dir, "class_%03d", cls);
    fs::create_directories(fs::path(root) / cls_dir);
    for (int i = 0; i < count; ++i) {
      Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(cls) * 100003ULL,
                       static_cast<uint64_t>(i)));
      const Image img = render_image(recipe, spec.image_size, rng);
      char name[32];
      snprintf(name, sizeof name, "img_%04d.ppm", i);
      const std::string rel = std::string(cls_dir) + "/" + name;
      write_ppm(img, (fs::path(root) / rel).string());
      manifest << rel << "\t" << cls << "\t" << (is_train ? "train" : "test") << "\n";
    }
  }
}

}  // namespace vscc
