#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vscc/channel.hpp"
#include "vscc/datapipe.hpp"
#include "vscc/network.hpp"

namespace vscc {

enum class EvalMode { kAeDirect, kTransmissionVariance, kFixedVariance };

std::string eval_mode_name(EvalMode m);
EvalMode eval_mode_from_name(const std::string& name);

struct SsimConfig {
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;  // 0: derive from dynamic_range
  int window_size = 11;
  double gaussian_sigma = 1.5;
  double dynamic_range = 255.0;

  // c1 = (0.01 L)^2, c2 = (0.03 L)^2, c3 = c2 / 2 unless overridden.
  SsimConfig resolved() const;
};

// 10*log10(L^2 / MSE); +infinity on identical inputs.
double psnr(const std::vector<double>& reference, const std::vector<double>& candidate, double L);
double psnr(const Image& reference, const Image& candidate, double L = 255.0);

// Mean over Gaussian-weighted sliding windows of l^alpha c^beta s^gamma,
// computed per channel and averaged.
double ssim(const Image& reference, const Image& candidate, const SsimConfig& config = {});

struct ResampleStats {
  double mean = 0.0, min = 0.0, max = 0.0;
};

ResampleStats aggregate_resamples(const std::vector<double>& scores);

struct PerImageRecord {
  int image_index = 0;
  double test_snr_db = 0.0;
  ResampleStats psnr;
  ResampleStats ssim;
};

struct SnrAggregate {
  double test_snr_db = 0.0;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
};

struct EvalConfig {
  EvalMode mode = EvalMode::kFixedVariance;
  std::vector<double> test_snr_db = {5.0};
  int resample_count = 1;
  std::optional<KnowledgeBase> knowledge_base;
  uint64_t seed = 0;
  bool normalize_power = true;
  // Ablation switch: when false the variance symbols bypass channel
  // noise in transmission-variance mode.
  bool noise_on_variance = true;
  int encode_batch = 16;
  SsimConfig ssim;

  void validate() const;
};

struct EvalResult {
  std::string mode;
  int resample_count = 1;
  uint64_t seed = 0;
  std::string checkpoint_fingerprint;
  std::string checkpoint_method;
  double checkpoint_train_snr_db = 0.0;
  double checkpoint_cmc = 0.0;
  std::string config_fingerprint;
  std::vector<PerImageRecord> records;

  // Per test SNR, arithmetic mean of the per-image means.
  std::vector<SnrAggregate> aggregates() const;
};

// Algorithm 2 over the test split: AE direct decoding, or n resamples
// per image for the two variance modes, scored with PSNR/SSIM on
// denormalized pixels.
EvalResult evaluate(Model& model, const Checkpoint& checkpoint,
                    const std::vector<Image>& test_images, const EvalConfig& config,
                    const std::string& config_fingerprint = "");

void write_eval_csv(const EvalResult& result, const std::string& path);
EvalResult read_eval_csv(const std::string& path);
bool is_eval_csv(const std::string& path);
void write_eval_summary(const EvalResult& result, const std::string& path);

}  // namespace vscc
