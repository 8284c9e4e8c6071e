#pragma once

#include <string>

#include "vscc/rng.hpp"
#include "vscc/tensor.hpp"

namespace vscc {

enum class Method { kVscc, kVae, kAe };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// Gaussian latent statistics emitted by the joint encoder: per-element
// mean and log-variance maps of identical shape.
struct LatentStats {
  Tensor mean;
  Tensor log_variance;

  void validate() const;
};

struct LossConfig {
  Method method = Method::kVscc;
  double cmc = 1.0;                   // channel matching coefficient d
  double reconstruction_weight = 1.0;
  double noise_variance = 0.0;        // sigma2^2, copied from the channel
  void validate() const;
};

// total = reconstruction_weight * reconstruction_term + channel_matching_term.
struct LossBreakdown {
  double total = 0.0;
  double channel_matching_term = 0.0;
  double reconstruction_term = 0.0;
};

// Mean over latent elements of
//   1/2 * ( log((s2+d)/(s1+s2)) + (mu^2 + s1 + s2)/(s2+d) - 1 )
// with s1 = exp(log_variance), s2 = noise_variance, d = cmc. This is the
// KL divergence between N(mu, s1+s2) and N(0, s2+d).
double gaussian_kl_channel_matched(const LatentStats& stats, double noise_variance, double cmc);

// Accumulates upstream * d(kl)/d(mean|log_variance) into the given grads.
void gaussian_kl_channel_matched_grad(const LatentStats& stats, double noise_variance,
                                      double cmc, double upstream, Tensor* mean_grad,
                                      Tensor* log_variance_grad);

// Mean over elements of 1/2 * (-log s + s + mu^2 - 1), the KL against a
// standard normal prior.
double gaussian_kl_standard(const LatentStats& stats);

void gaussian_kl_standard_grad(const LatentStats& stats, double upstream, Tensor* mean_grad,
                               Tensor* log_variance_grad);

// center + sqrt(variance) .* eps with eps ~ N(0, 1). Zero variance
// returns the center exactly.
Tensor reparameterize(const Tensor& center, const Tensor& variance, Rng& rng);

// Variant that also captures the standard-normal draws, which the
// pathwise gradient d(out)/d(variance) = eps / (2*sqrt(variance)) needs.
Tensor reparameterize(const Tensor& center, const Tensor& variance, Rng& rng, Tensor* eps_out);

// Mean squared error over all elements (a fixed-variance Gaussian
// likelihood up to an additive constant).
double reconstruction_nll(const Tensor& original, const Tensor& reconstructed);

void reconstruction_nll_grad(const Tensor& original, const Tensor& reconstructed,
                             double upstream, Tensor* reconstructed_grad);

LossBreakdown vscc_loss(const Tensor& original, const Tensor& reconstructed,
                        const LatentStats& stats, const LossConfig& config);

LossBreakdown vae_loss(const Tensor& original, const Tensor& reconstructed,
                       const LatentStats& stats, const LossConfig& config);

LossBreakdown ae_loss(const Tensor& original, const Tensor& reconstructed);

}  // namespace vscc
