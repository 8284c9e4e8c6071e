#pragma once

#include <string>
#include <vector>

#include "vscc/network.hpp"
#include "vscc/trainer.hpp"

namespace vscc {

// One config file drives the whole harness; CLI flags override single
// fields. JSON with // comments allowed.
struct ExperimentConfig {
  uint64_t seed = 42;
  std::string output_dir = "runs/desk";

  // dataset
  std::string dataset_root = "data/synth32";
  int crop_size = 32;
  std::string on_error = "fail";  // fail | skip

  ArchitectureConfig architecture;

  // train defaults (method/snr/cmc may come from sweep cells or flags)
  std::string train_method = "vscc";
  double train_snr_db = 5.0;
  double cmc = 5.0;
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double reconstruction_weight = 1.0;
  int log_every = 0;
  bool normalize_power = true;

  // eval defaults
  std::vector<double> test_snr_db = {-10, -5, 0, 5, 10, 15, 20, 25};
  int resample_count = 20;
  bool noise_on_variance = true;

  // sweep grids
  std::vector<std::string> sweep_methods = {"vscc", "vae", "ae"};
  std::vector<double> sweep_snr_db = {-5, 5, 15};
  std::vector<double> sweep_cmc = {1, 2, 5, 10, 15};

  TrainConfig make_train_config() const;
  std::string fingerprint() const;
};

// Expands the sweep grids: one cell per (method, snr) with the CMC axis
// applying to VSCC only.
std::vector<SweepCell> make_sweep_grid(const ExperimentConfig& config);

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_json_text(const std::string& text);
std::string experiment_config_to_json_text(const ExperimentConfig& config);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);

}  // namespace vscc
