#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vscc/rng.hpp"

namespace vscc {

// AWGN channel: z = y + n with n ~ N(0, noise_variance) elementwise.
// SNR is defined against unit mean-square transmit power, so with
// power normalization enabled noise_variance = 10^(-snr_db/10). An
// infinite snr_db encodes the noiseless channel.
struct ChannelConfig {
  double snr_db = 0.0;
  double noise_variance = 1.0;
  bool normalize_power = true;

  static ChannelConfig from_snr_db(double snr_db, bool normalize_power = true);
  void validate() const;
};

// Calibration diagnostics produced by measure_empirical_snr.
struct ChannelReport {
  double empirical_snr_db = 0.0;
  int64_t symbol_count = 0;
  double mean_signal_power = 0.0;
};

// sigma2^2 = signal_power * 10^(-snr_db/10).
double snr_to_noise_variance(double snr_db, double signal_power);

// Scales symbols to unit mean-square power; returns (scaled, divisor).
// An all-zero input is returned unchanged with scale 1.
std::pair<std::vector<double>, double> power_normalize(std::span<const double> symbols);

// Applies the channel. With normalize_power the symbols are scaled to
// unit power, noise of variance noise_variance is added, and the scale
// (treated as receiver side information) is multiplied back, so the
// realized SNR matches snr_db regardless of input power. noise_variance
// of 0 returns the input bit-exactly.
std::vector<double> apply_awgn(std::span<const double> symbols, const ChannelConfig& config,
                               Rng& rng);

// Like apply_awgn but also reports the power-normalization scale, which
// the receiver needs to convert noise_variance into symbol units.
std::vector<double> apply_awgn_scaled(std::span<const double> symbols,
                                      const ChannelConfig& config, Rng& rng, double* scale_out);

// empirical_snr_db = 10*log10(mean(clean^2) / mean((noisy-clean)^2)).
ChannelReport measure_empirical_snr(std::span<const double> clean,
                                    std::span<const double> noisy);

}  // namespace vscc
