#include "vscc/channel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vscc {

ChannelConfig ChannelConfig::from_snr_db(double snr_db, bool normalize_power) {
  if (std::isnan(snr_db)) throw std::invalid_argument("ChannelConfig: snr_db is NaN");
  ChannelConfig cfg;
  cfg.snr_db = snr_db;
  cfg.normalize_power = normalize_power;
  cfg.noise_variance = std::isinf(snr_db) && snr_db > 0 ? 0.0 : snr_to_noise_variance(snr_db, 1.0);
  return cfg;
}

void ChannelConfig::validate() const {
  if (std::isnan(noise_variance) || noise_variance < 0.0)
    throw std::invalid_argument("ChannelConfig: noise_variance must be >= 0");
}

double snr_to_noise_variance(double snr_db, double signal_power) {
  if (!std::isfinite(signal_power) || signal_power <= 0.0)
    throw std::invalid_argument("snr_to_noise_variance: signal_power must be finite and > 0");
  if (!std::isfinite(snr_db))
    throw std::invalid_argument("snr_to_noise_variance: snr_db must be finite");
  return signal_power * std::pow(10.0, -snr_db / 10.0);
}

std::pair<std::vector<double>, double> power_normalize(std::span<const double> symbols) {
  if (symbols.empty()) throw std::invalid_argument("power_normalize: empty input");
  double sum_sq = 0.0;
  for (double v : symbols) sum_sq += v * v;
  const double mean_sq = sum_sq / static_cast<double>(symbols.size());
  if (mean_sq == 0.0) {
    return {std::vector<double>(symbols.begin(), symbols.end()), 1.0};
  }
  const double scale = std::sqrt(mean_sq);
  std::vector<double> out(symbols.size());
  for (size_t i = 0; i < symbols.size(); ++i) out[i] = symbols[i] / scale;
  return {std::move(out), scale};
}

std::vector<double> apply_awgn_scaled(std::span<const double> symbols,
                                      const ChannelConfig& config, Rng& rng,
                                      double* scale_out) {
  config.validate();
  if (symbols.empty()) throw std::invalid_argument("apply_awgn: empty input");
  if (scale_out) *scale_out = 1.0;
  if (config.noise_variance == 0.0) {
    return std::vector<double>(symbols.begin(), symbols.end());
  }
  const double sigma = std::sqrt(config.noise_variance);
  if (!config.normalize_power) {
    std::vector<double> out(symbols.size());
    for (size_t i = 0; i < symbols.size(); ++i) out[i] = symbols[i] + sigma * rng.gaussian();
    return out;
  }
  // Normalize, add unit-convention noise, undo the scale. Equivalent to
  // y + scale * n, with the scale known at the receiver.
  auto [normalized, scale] = power_normalize(symbols);
  if (scale_out) *scale_out = scale;
  std::vector<double> out(symbols.size());
  for (size_t i = 0; i < symbols.size(); ++i)
    out[i] = (normalized[i] + sigma * rng.gaussian()) * scale;
  return out;
}

std::vector<double> apply_awgn(std::span<const double> symbols, const ChannelConfig& config,
                               Rng& rng) {
  return apply_awgn_scaled(symbols, config, rng, nullptr);
}

ChannelReport measure_empirical_snr(std::span<const double> clean,
                                    std::span<const double> noisy) {
  if (clean.size() != noisy.size())
    throw std::invalid_argument("measure_empirical_snr: length mismatch");
  if (clean.empty()) throw std::invalid_argument("measure_empirical_snr: empty input");
  double signal = 0.0;
  double noise = 0.0;
  for (size_t i = 0; i < clean.size(); ++i) {
    signal += clean[i] * clean[i];
    const double d = noisy[i] - clean[i];
    noise += d * d;
  }
  const auto n = static_cast<double>(clean.size());
  ChannelReport report;
  report.symbol_count = static_cast<int64_t>(clean.size());
  report.mean_signal_power = signal / n;
  report.empirical_snr_db = noise == 0.0
                                ? std::numeric_limits<double>::infinity()
                                : 10.0 * std::log10(signal / noise);
  return report;
}

}  // namespace vscc
