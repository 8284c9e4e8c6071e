#include "vscc/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "vscc/rng.hpp"
#include "vscc/version.hpp"

namespace vscc {

std::string eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kAeDirect: return "ae";
    case EvalMode::kTransmissionVariance: return "transmission";
    case EvalMode::kFixedVariance: return "fixed";
  }
  return "?";
}

EvalMode eval_mode_from_name(const std::string& name) {
  if (name == "ae") return EvalMode::kAeDirect;
  if (name == "transmission") return EvalMode::kTransmissionVariance;
  if (name == "fixed") return EvalMode::kFixedVariance;
  throw std::invalid_argument("unknown eval mode: " + name + " (expected ae|transmission|fixed)");
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double psnr(const std::vector<double>& reference, const std::vector<double>& candidate,
            double L) {
  if (reference.size() != candidate.size())
    throw std::invalid_argument("psnr: shape mismatch");
  if (reference.empty()) throw std::invalid_argument("psnr: empty input");
  if (!(L > 0)) throw std::invalid_argument("psnr: dynamic range must be > 0");
  double mse = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    const double d = reference[i] - candidate[i];
    mse += d * d;
  }
  mse /= static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(L * L / mse);
}

double psnr(const Image& reference, const Image& candidate, double L) {
  if (reference.pixels.size() != candidate.pixels.size())
    throw std::invalid_argument("psnr: shape mismatch");
  std::vector<double> a(reference.pixels.begin(), reference.pixels.end());
  std::vector<double> b(candidate.pixels.begin(), candidate.pixels.end());
  return psnr(a, b, L);
}

SsimConfig SsimConfig::resolved() const {
  SsimConfig r = *this;
  if (r.c1 == 0.0) r.c1 = (0.01 * r.dynamic_range) * (0.01 * r.dynamic_range);
  if (r.c2 == 0.0) r.c2 = (0.03 * r.dynamic_range) * (0.03 * r.dynamic_range);
  if (r.c3 == 0.0) r.c3 = r.c2 / 2.0;
  return r;
}

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<size_t>(size));
  const double center = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<size_t>(i)] = std::exp(-0.5 * (i - center) * (i - center) / (sigma * sigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-mode separable filtering: in is h x w, out is (h-size+1) x (w-size+1).
void filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& kernel,
                  std::vector<double>& out) {
  const int size = static_cast<int>(kernel.size());
  const int oh = h - size + 1, ow = w - size + 1;
  std::vector<double> tmp(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < size; ++t) acc += kernel[static_cast<size_t>(t)] * in[static_cast<size_t>(y) * w + x + t];
      tmp[static_cast<size_t>(y) * ow + x] = acc;
    }
  out.assign(static_cast<size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < size; ++t) acc += kernel[static_cast<size_t>(t)] * tmp[static_cast<size_t>(y + t) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = acc;
    }
}

double pow_term(double base, double exponent) {
  if (exponent == 1.0) return base;
  return std::pow(base, exponent);
}

}  // namespace

double ssim(const Image& reference, const Image& candidate, const SsimConfig& config) {
  if (reference.height != candidate.height || reference.width != candidate.width ||
      reference.channels != candidate.channels)
    throw std::invalid_argument("ssim: shape mismatch");
  const SsimConfig cfg = config.resolved();
  const int h = reference.height, w = reference.width, size = cfg.window_size;
  if (h < size || w < size)
    throw std::invalid_argument("ssim: image smaller than the filter window");

  const auto kernel = gaussian_kernel(size, cfg.gaussian_sigma);
  const int oh = h - size + 1, ow = w - size + 1;
  double total = 0.0;
  std::vector<double> x(static_cast<size_t>(h) * w), y(static_cast<size_t>(h) * w);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  std::vector<double> mx, my, mxx, myy, mxy;

  for (int c = 0; c < reference.channels; ++c) {
    for (int p = 0; p < h * w; ++p) {
      x[static_cast<size_t>(p)] = reference.pixels[static_cast<size_t>(p) * reference.channels + c];
      y[static_cast<size_t>(p)] = candidate.pixels[static_cast<size_t>(p) * candidate.channels + c];
      xx[static_cast<size_t>(p)] = x[static_cast<size_t>(p)] * x[static_cast<size_t>(p)];
      yy[static_cast<size_t>(p)] = y[static_cast<size_t>(p)] * y[static_cast<size_t>(p)];
      xy[static_cast<size_t>(p)] = x[static_cast<size_t>(p)] * y[static_cast<size_t>(p)];
    }
    filter_valid(x, h, w, kernel, mx);
    filter_valid(y, h, w, kernel, my);
    filter_valid(xx, h, w, kernel, mxx);
    filter_valid(yy, h, w, kernel, myy);
    filter_valid(xy, h, w, kernel, mxy);

    double acc = 0.0;
    for (int p = 0; p < oh * ow; ++p) {
      const double mu_x = mx[static_cast<size_t>(p)], mu_y = my[static_cast<size_t>(p)];
      const double var_x = std::max(0.0, mxx[static_cast<size_t>(p)] - mu_x * mu_x);
      const double var_y = std::max(0.0, myy[static_cast<size_t>(p)] - mu_y * mu_y);
      const double cov = mxy[static_cast<size_t>(p)] - mu_x * mu_y;
      const double sx = std::sqrt(var_x), sy = std::sqrt(var_y);
      const double l = (2 * mu_x * mu_y + cfg.c1) / (mu_x * mu_x + mu_y * mu_y + cfg.c1);
      const double con = (2 * sx * sy + cfg.c2) / (var_x + var_y + cfg.c2);
      const double str = (cov + cfg.c3) / (sx * sy + cfg.c3);
      acc += pow_term(l, cfg.alpha) * pow_term(con, cfg.beta) * pow_term(str, cfg.gamma);
    }
    total += acc / (oh * ow);
  }
  return total / reference.channels;
}

ResampleStats aggregate_resamples(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate_resamples: empty score list");
  ResampleStats s;
  s.min = scores[0];
  s.max = scores[0];
  double sum = 0.0;
  for (double v : scores) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(scores.size());
  return s;
}

// ---------------------------------------------------------------------------
// Algorithm 2
// ---------------------------------------------------------------------------

void EvalConfig::validate() const {
  if (resample_count < 1) throw std::invalid_argument("EvalConfig: resample_count must be >= 1");
  if (test_snr_db.empty()) throw std::invalid_argument("EvalConfig: no test SNRs");
  if (mode == EvalMode::kFixedVariance && !knowledge_base.has_value())
    throw std::invalid_argument(
        "EvalConfig: fixed-variance mode requires a knowledge base (build one with kb-build)");
}

std::vector<SnrAggregate> EvalResult::aggregates() const {
  std::vector<SnrAggregate> out;
  for (const auto& rec : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SnrAggregate& a) {
      return a.test_snr_db == rec.test_snr_db;
    });
    if (it == out.end()) {
      out.push_back({rec.test_snr_db, 0.0, 0.0});
      it = out.end() - 1;
    }
    it->psnr_mean += rec.psnr.mean;
    it->ssim_mean += rec.ssim.mean;
  }
  for (auto& a : out) {
    int count = 0;
    for (const auto& rec : records)
      if (rec.test_snr_db == a.test_snr_db) ++count;
    a.psnr_mean /= count;
    a.ssim_mean /= count;
  }
  return out;
}

namespace {

// Softplus-style rectifier: keeps received variances positive without
// distorting clearly-positive values.
double rectify_variance(double v) {
  constexpr double kSharpness = 25.0;
  const double x = v * kSharpness;
  const double sp = x > 30.0 ? v : std::log1p(std::exp(x)) / kSharpness;
  return sp + 1e-12;
}

ChannelConfig channel_for_snr(double snr_db, bool normalize_power) {
  if (std::isinf(snr_db) && snr_db > 0) {
    ChannelConfig cfg;
    cfg.snr_db = snr_db;
    cfg.noise_variance = 0.0;
    cfg.normalize_power = normalize_power;
    return cfg;
  }
  return ChannelConfig::from_snr_db(snr_db, normalize_power);
}

}  // namespace

EvalResult evaluate(Model& model, const Checkpoint& checkpoint,
                    const std::vector<Image>& test_images, const EvalConfig& config,
                    const std::string& config_fingerprint) {
  config.validate();
  if (test_images.empty()) throw std::invalid_argument("evaluate: empty test set");

  const std::string method = checkpoint.training_metadata.method;
  if (config.mode == EvalMode::kAeDirect && method != "ae")
    throw std::invalid_argument("evaluate: ae mode requires an AE checkpoint, got " + method);
  if (config.mode != EvalMode::kAeDirect && method != "vscc" && method != "vae")
    throw std::invalid_argument("evaluate: resampling modes require a VSCC or VAE checkpoint, got " +
                                method);
  if (config.mode == EvalMode::kFixedVariance) {
    const auto& kb_shape = config.knowledge_base->per_element_variance.shape;
    const auto& arch = model.config();
    if (kb_shape != std::vector<int>{arch.latent_channels, arch.latent_hw(), arch.latent_hw()})
      throw std::invalid_argument("evaluate: knowledge base shape does not match the latent");
  }

  EvalResult result;
  result.mode = eval_mode_name(config.mode);
  result.resample_count = config.resample_count;
  result.seed = config.seed;
  result.checkpoint_fingerprint = checkpoint.fingerprint();
  result.checkpoint_method = method;
  result.checkpoint_train_snr_db = checkpoint.training_metadata.snr_db;
  result.checkpoint_cmc = checkpoint.training_metadata.cmc;
  result.config_fingerprint = config_fingerprint;

  // Encode the whole test set once per run; the encoder has no
  // cross-image state so batching is purely a throughput choice.
  std::vector<Tensor> means, log_variances;
  means.reserve(test_images.size());
  const int k = model.config().latent_channels;
  const int lhw = model.config().latent_hw();
  const int64_t latent_numel = static_cast<int64_t>(k) * lhw * lhw;
  for (size_t start = 0; start < test_images.size();
       start += static_cast<size_t>(config.encode_batch)) {
    const size_t end =
        std::min(test_images.size(), start + static_cast<size_t>(config.encode_batch));
    std::vector<const Image*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&test_images[i]);
    EncoderOutput out = model.encoder().forward(normalize_images(batch), /*train=*/false);
    for (size_t i = 0; i < batch.size(); ++i) {
      Tensor mu({1, k, lhw, lhw});
      std::copy_n(out.mean.ptr() + static_cast<int64_t>(i) * latent_numel, latent_numel, mu.ptr());
      means.push_back(std::move(mu));
      if (out.has_variance()) {
        Tensor lv({1, k, lhw, lhw});
        std::copy_n(out.log_variance.ptr() + static_cast<int64_t>(i) * latent_numel, latent_numel,
                    lv.ptr());
        log_variances.push_back(std::move(lv));
      }
    }
  }

  for (size_t snr_index = 0; snr_index < config.test_snr_db.size(); ++snr_index) {
    const double snr = config.test_snr_db[snr_index];
    const ChannelConfig channel = channel_for_snr(snr, config.normalize_power);

    for (size_t i = 0; i < test_images.size(); ++i) {
      Rng rng(mix_seed(config.seed, snr_index, i));
      const Image& ref = test_images[i];
      PerImageRecord rec;
      rec.image_index = static_cast<int>(i);
      rec.test_snr_db = snr;

      if (config.mode == EvalMode::kAeDirect) {
        Tensor z({1, k, lhw, lhw});
        const auto noisy = apply_awgn(
            {means[i].ptr(), static_cast<size_t>(latent_numel)}, channel, rng);
        std::copy(noisy.begin(), noisy.end(), z.data.begin());
        const Tensor xhat = model.decoder().forward(z, /*train=*/false);
        const Image out = denormalize_image(xhat, 0);
        rec.psnr = aggregate_resamples({psnr(ref, out, config.ssim.dynamic_range)});
        rec.ssim = aggregate_resamples({ssim(ref, out, config.ssim)});
      } else {
        // Resampling modes: build per-resample latents, decode as one batch.
        const int n = config.resample_count;
        Tensor resample_center({1, k, lhw, lhw});
        Tensor resample_var({1, k, lhw, lhw});

        if (config.mode == EvalMode::kTransmissionVariance) {
          double mean_scale = 1.0;
          const auto z_mean = apply_awgn_scaled(
              {means[i].ptr(), static_cast<size_t>(latent_numel)}, channel, rng, &mean_scale);
          std::vector<double> variance(static_cast<size_t>(latent_numel));
          for (int64_t q = 0; q < latent_numel; ++q)
            variance[static_cast<size_t>(q)] = std::exp(log_variances[i].data[q]);
          std::vector<double> z_var = variance;
          if (config.noise_on_variance) z_var = apply_awgn(variance, channel, rng);
          // Noise variance in symbol units: the unit-power convention is
          // undone by the mean block's normalization scale.
          const double channel_var = channel.noise_variance * mean_scale * mean_scale;
          for (int64_t q = 0; q < latent_numel; ++q) {
            resample_center.data[q] = z_mean[static_cast<size_t>(q)];
            resample_var.data[q] = rectify_variance(z_var[static_cast<size_t>(q)]) + channel_var;
          }
        } else {  // fixed variance
          const auto z_mean = apply_awgn(
              {means[i].ptr(), static_cast<size_t>(latent_numel)}, channel, rng);
          for (int64_t q = 0; q < latent_numel; ++q) {
            resample_center.data[q] = z_mean[static_cast<size_t>(q)];
            resample_var.data[q] = config.knowledge_base->per_element_variance.data[q];
          }
        }

        Tensor batch({n, k, lhw, lhw});
        for (int l = 0; l < n; ++l) {
          for (int64_t q = 0; q < latent_numel; ++q) {
            batch.data[static_cast<int64_t>(l) * latent_numel + q] =
                resample_center.data[q] + std::sqrt(resample_var.data[q]) * rng.gaussian();
          }
        }
        const Tensor xhat = model.decoder().forward(batch, /*train=*/false);
        std::vector<double> psnr_scores, ssim_scores;
        psnr_scores.reserve(static_cast<size_t>(n));
        ssim_scores.reserve(static_cast<size_t>(n));
        for (int l = 0; l < n; ++l) {
          const Image out = denormalize_image(xhat, l);
          psnr_scores.push_back(psnr(ref, out, config.ssim.dynamic_range));
          ssim_scores.push_back(ssim(ref, out, config.ssim));
        }
        rec.psnr = aggregate_resamples(psnr_scores);
        rec.ssim = aggregate_resamples(ssim_scores);
      }
      result.records.push_back(rec);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Results files
// ---------------------------------------------------------------------------

void write_eval_csv(const EvalResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path);
  f << "# vscc-results v1\n";
  f << "# code_version=" << kCodeVersion << "\n";
  f << "# mode=" << result.mode << "\n";
  f << "# resample_count=" << result.resample_count << "\n";
  f << "# seed=" << result.seed << "\n";
  f << "# checkpoint_fingerprint=" << result.checkpoint_fingerprint << "\n";
  f << "# checkpoint_method=" << result.checkpoint_method << "\n";
  char buf[64];
  snprintf(buf, sizeof buf, "%.17g", result.checkpoint_train_snr_db);
  f << "# checkpoint_train_snr_db=" << buf << "\n";
  snprintf(buf, sizeof buf, "%.17g", result.checkpoint_cmc);
  f << "# checkpoint_cmc=" << buf << "\n";
  f << "# config_fingerprint=" << result.config_fingerprint << "\n";
  f << "image_index,test_snr_db,psnr_mean,psnr_min,psnr_max,ssim_mean,ssim_min,ssim_max\n";
  for (const auto& rec : result.records) {
    char line[256];
    snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
             rec.image_index, rec.test_snr_db, rec.psnr.mean, rec.psnr.min, rec.psnr.max,
             rec.ssim.mean, rec.ssim.min, rec.ssim.max);
    f << line;
  }
  if (!f) throw std::runtime_error("write_eval_csv: write failed for " + path);
}

bool is_eval_csv(const std::string& path) {
  std::ifstream f(path);
  std::string first;
  std::getline(f, first);
  return first == "# vscc-results v1";
}

EvalResult read_eval_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_eval_csv: cannot open " + path);
  {
    std::string first;
    std::getline(f, first);
    if (first != "# vscc-results v1")
      throw std::runtime_error("read_eval_csv: " + path + " is not a results file");
    f.seekg(0);
  }
  EvalResult result;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      if (key == "mode") result.mode = value;
      else if (key == "resample_count") result.resample_count = std::stoi(value);
      else if (key == "seed") result.seed = std::stoull(value);
      else if (key == "checkpoint_fingerprint") result.checkpoint_fingerprint = value;
      else if (key == "checkpoint_method") result.checkpoint_method = value;
      else if (key == "checkpoint_train_snr_db") result.checkpoint_train_snr_db = std::stod(value);
      else if (key == "checkpoint_cmc") result.checkpoint_cmc = std::stod(value);
      else if (key == "config_fingerprint") result.config_fingerprint = value;
      continue;
    }
    if (!header_seen) {  // column header row
      header_seen = true;
      continue;
    }
    PerImageRecord rec;
    std::istringstream ls(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ls, field, ',')) values.push_back(std::stod(field));
    if (values.size() != 8)
      throw std::runtime_error("read_eval_csv: malformed row in " + path + ": " + line);
    rec.image_index = static_cast<int>(values[0]);
    rec.test_snr_db = values[1];
    rec.psnr = {values[2], values[3], values[4]};
    rec.ssim = {values[5], values[6], values[7]};
    result.records.push_back(rec);
  }
  return result;
}

void write_eval_summary(const EvalResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_eval_summary: cannot open " + path);
  f << "# mode=" << result.mode << " checkpoint=" << result.checkpoint_method
    << " train_snr_db=" << result.checkpoint_train_snr_db << " cmc=" << result.checkpoint_cmc
    << "\n";
  f << "# code_version=" << kCodeVersion
    << " checkpoint_fingerprint=" << result.checkpoint_fingerprint
    << " config_fingerprint=" << result.config_fingerprint << "\n";
  f << "test_snr_db,psnr_mean,ssim_mean\n";
  for (const auto& a : result.aggregates()) {
    char line[128];
    snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", a.test_snr_db, a.psnr_mean, a.ssim_mean);
    f << line;
  }
}

}  // namespace vscc
