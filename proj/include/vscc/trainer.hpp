#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vscc/channel.hpp"
#include "vscc/datapipe.hpp"
#include "vscc/loss.hpp"
#include "vscc/network.hpp"

namespace vscc {

struct TrainConfig {
  Method method = Method::kVscc;
  double train_snr_db = 5.0;
  double cmc = 1.0;
  int epochs = 1;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double reconstruction_weight = 1.0;
  uint64_t seed = 42;
  ArchitectureConfig architecture;
  std::string checkpoint_dir;  // empty: keep everything in memory
  int log_every = 0;           // extra per-step log lines; 0 = per epoch only
  bool normalize_power = true;

  void validate() const;
  std::string run_id() const;
  std::string fingerprint(const std::string& dataset_fingerprint) const;
};

// Progress of a run; together with a checkpoint this reproduces the
// remaining epochs exactly (RNG streams are derived per epoch, and the
// optimizer moments ride along).
struct TrainState {
  int epoch = 0;
  int64_t step = 0;
  LossBreakdown running_loss;
  double best_metric = 0.0;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  int64_t adam_t = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> epoch_losses;
  std::string checkpoint_path;  // empty when checkpoint_dir is empty
  std::string log_path;
};

// One training forward/backward with the stochastic draws frozen: the
// channel perturbation enters as a constant offset and the
// reparameterization draws are supplied by the caller. This is the same
// path the trainer runs, exposed so gradient checks can difference it.
class TrainingStep {
 public:
  // Frozen-randomness variant used by gradient checks.
  LossBreakdown forward(Model& model, Method method, const Tensor& x,
                        const Tensor& channel_offset, const Tensor& reparam_eps,
                        const LossConfig& config, bool train);
  // Production variant: draws the channel noise from the encoded means
  // and the reparameterization draws from the given streams.
  LossBreakdown forward_through_channel(Model& model, Method method, const Tensor& x,
                                        const ChannelConfig& channel, Rng& noise_rng,
                                        Rng& reparam_rng, const LossConfig& config, bool train);
  // Accumulates parameter gradients for the last train-mode forward.
  void backward(Model& model);

 private:
  LossBreakdown finish(Model& model, const Tensor& x, EncoderOutput enc,
                       const Tensor& channel_offset, const Tensor& reparam_eps, bool train);

  Method method_ = Method::kAe;
  LossConfig config_;
  Tensor x_;
  Tensor xhat_;
  Tensor sigma_;
  Tensor eps_;
  LatentStats stats_;
};

// One optimizer step sequence over shuffled batches; epochs are driven
// one at a time so callers can checkpoint or stop between them.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const DatasetSplit& data);
  // Resume: restores parameters and optimizer state, continues at state.epoch.
  Trainer(const TrainConfig& config, const DatasetSplit& data, const Checkpoint& checkpoint,
          const TrainState& state);

  LossBreakdown run_epoch();
  const TrainState& state() const { return state_; }
  Model& model() { return model_; }
  Checkpoint make_checkpoint() const;

 private:
  LossBreakdown train_batch(const std::vector<const Image*>& batch, Rng& noise_rng,
                            Rng& reparam_rng);
  void adam_step();

  TrainConfig config_;
  const DatasetSplit& data_;
  Model model_;
  TrainState state_;
  double noise_variance_;
  int consecutive_nonfinite_ = 0;
};

// Full run per Algorithm 1: epochs of shuffled batches, per-epoch loss
// logging, divergence guard, final checkpoint (saved under
// checkpoint_dir when set).
TrainResult train(const TrainConfig& config, const DatasetSplit& data);

// Experiment grid driver. Completed cells (matching fingerprint and an
// existing checkpoint file) are skipped on rerun.
struct SweepCell {
  Method method = Method::kVscc;
  double snr_db = 0.0;
  double cmc = 0.0;  // ignored (with a warning) for AE
};

struct SweepCellResult {
  SweepCell cell;
  std::string status;  // "trained" | "skipped" | "failed"
  std::string checkpoint_path;
  std::string error;
};

struct SweepOptions {
  bool fail_fast = false;
};

std::vector<SweepCellResult> sweep(const std::vector<SweepCell>& grid, const TrainConfig& base,
                                   const DatasetSplit& data, const std::string& manifest_path,
                                   const SweepOptions& options = {});

}  // namespace vscc
