#include "vscc/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace vscc {

std::string method_name(Method m) {
  switch (m) {
    case Method::kVscc: return "vscc";
    case Method::kVae: return "vae";
    case Method::kAe: return "ae";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "vscc") return Method::kVscc;
  if (name == "vae") return Method::kVae;
  if (name == "ae") return Method::kAe;
  throw std::invalid_argument("unknown method: " + name + " (expected vscc|vae|ae)");
}

void LatentStats::validate() const {
  require_same_shape(mean, log_variance, "LatentStats");
  for (double lv : log_variance.data) {
    if (!std::isfinite(lv) || !std::isfinite(std::exp(lv)))
      throw std::invalid_argument("LatentStats: variance not positive-finite");
  }
}

void LossConfig::validate() const {
  if (!(cmc > 0.0)) throw std::invalid_argument("LossConfig: cmc must be > 0");
  if (!(reconstruction_weight > 0.0))
    throw std::invalid_argument("LossConfig: reconstruction_weight must be > 0");
  if (noise_variance < 0.0)
    throw std::invalid_argument("LossConfig: noise_variance must be >= 0");
}

double gaussian_kl_channel_matched(const LatentStats& stats, double noise_variance,
                                   double cmc) {
  require_same_shape(stats.mean, stats.log_variance, "gaussian_kl_channel_matched");
  if (noise_variance < 0.0 || !(cmc > 0.0))
    throw std::invalid_argument("gaussian_kl_channel_matched: need noise_variance >= 0, cmc > 0");
  const double prior_var = noise_variance + cmc;  // sigma2^2 + d
  const int64_t n = stats.mean.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double mu = stats.mean.data[i];
    const double post_var = std::exp(stats.log_variance.data[i]) + noise_variance;
    acc += 0.5 * (std::log(prior_var / post_var) + (mu * mu + post_var) / prior_var - 1.0);
  }
  return acc / static_cast<double>(n);
}

void gaussian_kl_channel_matched_grad(const LatentStats& stats, double noise_variance,
                                      double cmc, double upstream, Tensor* mean_grad,
                                      Tensor* log_variance_grad) {
  const double prior_var = noise_variance + cmc;
  const int64_t n = stats.mean.numel();
  const double inv_n = upstream / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    const double mu = stats.mean.data[i];
    const double s1 = std::exp(stats.log_variance.data[i]);
    const double post_var = s1 + noise_variance;
    mean_grad->data[i] += inv_n * mu / prior_var;
    // d(kl_i)/d(s1) = 1/2 (1/prior - 1/post); chain through s1 = e^logvar.
    log_variance_grad->data[i] += inv_n * 0.5 * s1 * (1.0 / prior_var - 1.0 / post_var);
  }
}

double gaussian_kl_standard(const LatentStats& stats) {
  require_same_shape(stats.mean, stats.log_variance, "gaussian_kl_standard");
  const int64_t n = stats.mean.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double mu = stats.mean.data[i];
    const double lv = stats.log_variance.data[i];
    acc += 0.5 * (-lv + std::exp(lv) + mu * mu - 1.0);
  }
  return acc / static_cast<double>(n);
}

void gaussian_kl_standard_grad(const LatentStats& stats, double upstream, Tensor* mean_grad,
                               Tensor* log_variance_grad) {
  const int64_t n = stats.mean.numel();
  const double inv_n = upstream / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    mean_grad->data[i] += inv_n * stats.mean.data[i];
    log_variance_grad->data[i] +=
        inv_n * 0.5 * (std::exp(stats.log_variance.data[i]) - 1.0);
  }
}

Tensor reparameterize(const Tensor& center, const Tensor& variance, Rng& rng,
                      Tensor* eps_out) {
  require_same_shape(center, variance, "reparameterize");
  Tensor out(center.shape);
  if (eps_out) *eps_out = Tensor(center.shape);
  for (int64_t i = 0; i < center.numel(); ++i) {
    const double v = variance.data[i];
    if (v < 0.0) throw std::invalid_argument("reparameterize: negative variance element");
    const double eps = rng.gaussian();
    if (eps_out) eps_out->data[i] = eps;
    out.data[i] = v == 0.0 ? center.data[i] : center.data[i] + std::sqrt(v) * eps;
  }
  return out;
}

Tensor reparameterize(const Tensor& center, const Tensor& variance, Rng& rng) {
  return reparameterize(center, variance, rng, nullptr);
}

double reconstruction_nll(const Tensor& original, const Tensor& reconstructed) {
  require_same_shape(original, reconstructed, "reconstruction_nll");
  const int64_t n = original.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = original.data[i] - reconstructed.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

void reconstruction_nll_grad(const Tensor& original, const Tensor& reconstructed,
                             double upstream, Tensor* reconstructed_grad) {
  const int64_t n = original.numel();
  const double scale = 2.0 * upstream / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    reconstructed_grad->data[i] += scale * (reconstructed.data[i] - original.data[i]);
}

namespace {
LossBreakdown assemble(double channel_matching, double reconstruction, double weight) {
  LossBreakdown b;
  b.channel_matching_term = channel_matching;
  b.reconstruction_term = reconstruction;
  b.total = weight * reconstruction + channel_matching;
  return b;
}
}  // namespace

LossBreakdown vscc_loss(const Tensor& original, const Tensor& reconstructed,
                        const LatentStats& stats, const LossConfig& config) {
  config.validate();
  if (config.method != Method::kVscc)
    throw std::invalid_argument("vscc_loss: config.method must be VSCC");
  return assemble(gaussian_kl_channel_matched(stats, config.noise_variance, config.cmc),
                  reconstruction_nll(original, reconstructed), config.reconstruction_weight);
}

LossBreakdown vae_loss(const Tensor& original, const Tensor& reconstructed,
                       const LatentStats& stats, const LossConfig& config) {
  config.validate();
  if (config.method != Method::kVae)
    throw std::invalid_argument("vae_loss: config.method must be VAE");
  return assemble(gaussian_kl_standard(stats), reconstruction_nll(original, reconstructed),
                  config.reconstruction_weight);
}

LossBreakdown ae_loss(const Tensor& original, const Tensor& reconstructed) {
  const double mse = reconstruction_nll(original, reconstructed);
  LossBreakdown b;
  b.channel_matching_term = 0.0;
  b.reconstruction_term = mse;
  b.total = mse;
  return b;
}

}  // namespace vscc
