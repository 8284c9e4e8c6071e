#include "vscc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "vscc/hash.hpp"
#include "vscc/version.hpp"

namespace fs = std::filesystem;

namespace vscc {

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr int kDivergenceLimit = 10;

std::string format_double(double v) {
  char buf[32];
  snprintf(buf, sizeof buf, "%g", v);
  return buf;
}
}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(reconstruction_weight > 0))
    throw std::invalid_argument("TrainConfig: reconstruction_weight must be > 0");
  if (method == Method::kVscc && !(cmc > 0))
    throw std::invalid_argument("TrainConfig: cmc must be > 0 for VSCC");
  architecture.validate();
}

std::string TrainConfig::run_id() const {
  std::string id = method_name(method) + "_snr" + format_double(train_snr_db);
  if (method == Method::kVscc) id += "_cmc" + format_double(cmc);
  id += "_seed" + std::to_string(seed);
  return id;
}

std::string TrainConfig::fingerprint(const std::string& dataset_fingerprint) const {
  Fnv1a h;
  h.update(method_name(method));
  h.update(train_snr_db);
  h.update(method == Method::kVscc ? cmc : 0.0);
  h.update(static_cast<uint64_t>(epochs));
  h.update(static_cast<uint64_t>(batch_size));
  h.update(learning_rate);
  h.update(reconstruction_weight);
  h.update(seed);
  h.update(static_cast<uint64_t>(normalize_power));
  h.update(static_cast<uint64_t>(architecture.image_size));
  h.update(static_cast<uint64_t>(architecture.input_channels));
  for (int w : architecture.stage_widths) h.update(static_cast<uint64_t>(w));
  h.update(static_cast<uint64_t>(architecture.latent_channels));
  h.update(static_cast<uint64_t>(architecture.groupnorm_group_size));
  h.update(static_cast<uint64_t>(architecture.attention_enabled));
  h.update(dataset_fingerprint);
  h.update(std::string(kCodeVersion));
  return h.hex();
}

namespace {
ArchitectureConfig arch_for_method(ArchitectureConfig arch, Method method) {
  arch.emit_variance = method != Method::kAe;
  return arch;
}
}  // namespace

Trainer::Trainer(const TrainConfig& config, const DatasetSplit& data)
    : config_(config),
      data_(data),
      model_(arch_for_method(config.architecture, config.method), config.seed) {
  config_.validate();
  if (data_.train.empty()) throw std::invalid_argument("Trainer: empty training split");
  if (data_.train.front().height != config_.architecture.image_size)
    throw std::invalid_argument("Trainer: dataset image size does not match architecture");
  noise_variance_ = std::isinf(config_.train_snr_db) && config_.train_snr_db > 0
                        ? 0.0
                        : snr_to_noise_variance(config_.train_snr_db, 1.0);
  const auto n = static_cast<size_t>(model_.parameter_count());
  state_.adam_m.assign(n, 0.0);
  state_.adam_v.assign(n, 0.0);
}

Trainer::Trainer(const TrainConfig& config, const DatasetSplit& data,
                 const Checkpoint& checkpoint, const TrainState& state)
    : Trainer(config, data) {
  model_.load(checkpoint);
  if (state.adam_m.size() != static_cast<size_t>(model_.parameter_count()))
    throw std::invalid_argument("Trainer: optimizer state size mismatch");
  state_ = state;
}

Checkpoint Trainer::make_checkpoint() const {
  TrainingMetadata meta;
  meta.method = method_name(config_.method);
  meta.snr_db = config_.train_snr_db;
  meta.cmc = config_.method == Method::kVscc ? config_.cmc : 0.0;
  meta.epoch = state_.epoch;
  meta.seed = config_.seed;
  meta.dataset_fingerprint = data_.fingerprint;
  meta.config_fingerprint = config_.fingerprint(data_.fingerprint);
  return model_.to_checkpoint(meta);
}

void Trainer::adam_step() {
  ++state_.adam_t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state_.adam_t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state_.adam_t));
  size_t offset = 0;
  for (Param* p : model_.params()) {
    const size_t n = p->value.data.size();
    double* m = state_.adam_m.data() + offset;
    double* v = state_.adam_v.data() + offset;
    for (size_t i = 0; i < n; ++i) {
      const double g = p->grad.data[i];
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p->value.data[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
    offset += n;
  }
}

LossBreakdown TrainingStep::forward(Model& model, Method method, const Tensor& x,
                                    const Tensor& channel_offset, const Tensor& reparam_eps,
                                    const LossConfig& config, bool train) {
  method_ = method;
  config_ = config;
  EncoderOutput enc = model.encoder().forward(x, train);
  return finish(model, x, std::move(enc), channel_offset, reparam_eps, train);
}

LossBreakdown TrainingStep::forward_through_channel(Model& model, Method method, const Tensor& x,
                                                    const ChannelConfig& channel, Rng& noise_rng,
                                                    Rng& reparam_rng, const LossConfig& config,
                                                    bool train) {
  method_ = method;
  config_ = config;
  EncoderOutput enc = model.encoder().forward(x, train);

  // The channel perturbation enters gradients as a constant offset:
  // keep z - mu from one application of the channel to the means.
  const auto noisy =
      apply_awgn({enc.mean.ptr(), static_cast<size_t>(enc.mean.numel())}, channel, noise_rng);
  Tensor channel_offset = Tensor::uninit(enc.mean.shape);
  for (int64_t i = 0; i < channel_offset.numel(); ++i)
    channel_offset.data[i] = noisy[static_cast<size_t>(i)] - enc.mean.data[i];

  Tensor eps;
  if (method != Method::kAe) {
    eps = Tensor::uninit(enc.mean.shape);
    for (auto& e : eps.data) e = reparam_rng.gaussian();
  }
  return finish(model, x, std::move(enc), channel_offset, eps, train);
}

LossBreakdown TrainingStep::finish(Model& model, const Tensor& x, EncoderOutput enc,
                                   const Tensor& channel_offset, const Tensor& reparam_eps,
                                   bool train) {
  LossBreakdown loss;
  if (method_ == Method::kAe) {
    Tensor z = Tensor::uninit(enc.mean.shape);
    for (int64_t i = 0; i < z.numel(); ++i) z.data[i] = enc.mean.data[i] + channel_offset.data[i];
    Tensor xhat = model.decoder().forward(z, train);
    loss = ae_loss(x, xhat);
    if (train) {
      x_ = x;
      xhat_ = std::move(xhat);
    }
    return loss;
  }

  LatentStats stats{std::move(enc.mean), std::move(enc.log_variance)};
  // Transmit the mean; the receiver-side reparameterization adds the
  // source variance, realizing one sample of N(mu1, s1^2 + s2^2).
  Tensor sigma = Tensor::uninit(stats.log_variance.shape);
  for (int64_t i = 0; i < sigma.numel(); ++i)
    sigma.data[i] = std::exp(0.5 * stats.log_variance.data[i]);
  Tensor y_hat = Tensor::uninit(stats.mean.shape);
  for (int64_t i = 0; i < y_hat.numel(); ++i)
    y_hat.data[i] =
        stats.mean.data[i] + channel_offset.data[i] + sigma.data[i] * reparam_eps.data[i];

  Tensor xhat = model.decoder().forward(y_hat, train);
  loss = method_ == Method::kVscc ? vscc_loss(x, xhat, stats, config_)
                                  : vae_loss(x, xhat, stats, config_);
  if (train) {
    x_ = x;
    xhat_ = std::move(xhat);
    sigma_ = std::move(sigma);
    eps_ = reparam_eps;
    stats_ = std::move(stats);
  }
  return loss;
}

void TrainingStep::backward(Model& model) {
  if (xhat_.empty()) throw std::logic_error("TrainingStep::backward without train forward");
  if (method_ == Method::kAe) {
    Tensor g_xhat(xhat_.shape);
    reconstruction_nll_grad(x_, xhat_, 1.0, &g_xhat);
    const Tensor g_z = model.decoder().backward(g_xhat);
    model.encoder().backward(g_z, Tensor());
    return;
  }

  Tensor g_xhat(xhat_.shape);
  reconstruction_nll_grad(x_, xhat_, config_.reconstruction_weight, &g_xhat);
  const Tensor g_yhat = model.decoder().backward(g_xhat);

  Tensor g_mean = g_yhat;  // channel offset and additive reparam pass gradients through
  Tensor g_logvar = Tensor::uninit(g_yhat.shape);
  for (int64_t i = 0; i < g_logvar.numel(); ++i)
    g_logvar.data[i] = g_yhat.data[i] * eps_.data[i] * 0.5 * sigma_.data[i];

  if (method_ == Method::kVscc) {
    gaussian_kl_channel_matched_grad(stats_, config_.noise_variance, config_.cmc, 1.0, &g_mean,
                                     &g_logvar);
  } else {
    gaussian_kl_standard_grad(stats_, 1.0, &g_mean, &g_logvar);
  }
  model.encoder().backward(g_mean, g_logvar);
}

LossBreakdown Trainer::train_batch(const std::vector<const Image*>& batch, Rng& noise_rng,
                                   Rng& reparam_rng) {
  const Tensor x = normalize_images(batch);
  model_.zero_grads();

  LossConfig loss_cfg;
  loss_cfg.method = config_.method;
  loss_cfg.cmc = config_.method == Method::kVscc ? config_.cmc : 1.0;
  loss_cfg.reconstruction_weight = config_.reconstruction_weight;
  loss_cfg.noise_variance = noise_variance_;

  ChannelConfig channel;
  channel.snr_db = config_.train_snr_db;
  channel.noise_variance = noise_variance_;
  channel.normalize_power = config_.normalize_power;

  TrainingStep step;
  const LossBreakdown loss = step.forward_through_channel(model_, config_.method, x, channel,
                                                          noise_rng, reparam_rng, loss_cfg,
                                                          /*train=*/true);

  if (std::isfinite(loss.total)) {
    step.backward(model_);
    consecutive_nonfinite_ = 0;
    adam_step();
  } else {
    ++consecutive_nonfinite_;
  }
  return loss;
}

LossBreakdown Trainer::run_epoch() {
  const int epoch = state_.epoch;
  Rng shuffle_rng(mix_seed(config_.seed, static_cast<uint64_t>(epoch), 0));
  Rng noise_rng(mix_seed(config_.seed, static_cast<uint64_t>(epoch), 1));
  Rng reparam_rng(mix_seed(config_.seed, static_cast<uint64_t>(epoch), 2));

  std::vector<size_t> order(data_.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

  LossBreakdown sum;
  int batches = 0;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config_.batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(config_.batch_size));
    std::vector<const Image*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&data_.train[order[i]]);
    const LossBreakdown loss = train_batch(batch, noise_rng, reparam_rng);
    ++state_.step;
    sum.total += loss.total;
    sum.channel_matching_term += loss.channel_matching_term;
    sum.reconstruction_term += loss.reconstruction_term;
    ++batches;
    if (config_.log_every > 0 && state_.step % config_.log_every == 0) {
      std::cout << "step=" << state_.step << " epoch=" << epoch << " total=" << loss.total
                << " channel_matching=" << loss.channel_matching_term
                << " reconstruction=" << loss.reconstruction_term << "\n";
    }
    if (consecutive_nonfinite_ >= kDivergenceLimit) {
      if (!config_.checkpoint_dir.empty()) {
        fs::create_directories(config_.checkpoint_dir);
        std::ofstream diag(fs::path(config_.checkpoint_dir) / (config_.run_id() + ".diverged.json"));
        diag << nlohmann::ordered_json{{"run_id", config_.run_id()},
                                       {"epoch", epoch},
                                       {"step", state_.step},
                                       {"last_total", loss.total},
                                       {"consecutive_nonfinite", consecutive_nonfinite_}}
                    .dump(2)
             << "\n";
      }
      throw std::runtime_error("training diverged: loss non-finite for " +
                               std::to_string(kDivergenceLimit) + " consecutive steps at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(state_.step));
    }
  }
  sum.total /= batches;
  sum.channel_matching_term /= batches;
  sum.reconstruction_term /= batches;
  state_.running_loss = sum;
  state_.best_metric = state_.epoch == 0 ? sum.total : std::min(state_.best_metric, sum.total);
  ++state_.epoch;
  return sum;
}

TrainResult train(const TrainConfig& config, const DatasetSplit& data) {
  Trainer trainer(config, data);
  TrainResult result;
  std::ofstream log;
  if (!config.checkpoint_dir.empty()) {
    fs::create_directories(config.checkpoint_dir);
    result.log_path =
        (fs::path(config.checkpoint_dir) / (config.run_id() + ".train_log.csv")).string();
    log.open(result.log_path, std::ios::trunc);
    log << "epoch,step,total,channel_matching_term,reconstruction_term\n";
  }
  for (int e = 0; e < config.epochs; ++e) {
    const LossBreakdown loss = trainer.run_epoch();
    result.epoch_losses.push_back(loss);
    std::cout << "epoch=" << e + 1 << "/" << config.epochs << " step=" << trainer.state().step
              << " total=" << loss.total << " channel_matching=" << loss.channel_matching_term
              << " reconstruction=" << loss.reconstruction_term << "\n";
    if (log.is_open()) {
      char line[192];
      snprintf(line, sizeof line, "%d,%lld,%.17g,%.17g,%.17g\n", e + 1,
               static_cast<long long>(trainer.state().step), loss.total,
               loss.channel_matching_term, loss.reconstruction_term);
      log << line << std::flush;
    }
  }
  result.checkpoint = trainer.make_checkpoint();
  if (!config.checkpoint_dir.empty()) {
    result.checkpoint_path =
        (fs::path(config.checkpoint_dir) / (config.run_id() + ".ckpt")).string();
    save_checkpoint(result.checkpoint, result.checkpoint_path);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

json load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) return json{{"cells", json::array()}};
  try {
    return json::parse(f);
  } catch (const std::exception&) {
    return json{{"cells", json::array()}};
  }
}

void store_manifest(const json& manifest, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << manifest.dump(2) << "\n";
    if (!f) throw std::runtime_error("sweep: cannot write manifest " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

std::vector<SweepCellResult> sweep(const std::vector<SweepCell>& grid, const TrainConfig& base,
                                   const DatasetSplit& data, const std::string& manifest_path,
                                   const SweepOptions& options) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  json manifest = load_manifest(manifest_path);
  std::vector<SweepCellResult> results;

  for (const SweepCell& cell : grid) {
    TrainConfig config = base;
    config.method = cell.method;
    config.train_snr_db = cell.snr_db;
    if (cell.method == Method::kVscc) {
      config.cmc = cell.cmc;
    } else {
      if (cell.cmc != 0.0)
        std::cerr << "sweep: cmc=" << cell.cmc << " ignored for " << method_name(cell.method)
                  << " cell (no channel matching coefficient)\n";
      config.cmc = 1.0;
    }
    const std::string fingerprint = config.fingerprint(data.fingerprint);
    const std::string run_id = config.run_id();

    SweepCellResult r;
    r.cell = cell;

    bool skip = false;
    for (const auto& entry : manifest["cells"]) {
      if (entry.value("run_id", "") == run_id && entry.value("status", "") == "trained" &&
          entry.value("config_fingerprint", "") == fingerprint &&
          fs::exists(entry.value("checkpoint", ""))) {
        r.status = "skipped";
        r.checkpoint_path = entry["checkpoint"].get<std::string>();
        skip = true;
        break;
      }
    }
    if (skip) {
      std::cout << "sweep: " << run_id << " already trained, skipping\n";
      results.push_back(std::move(r));
      continue;
    }

    try {
      const TrainResult trained = train(config, data);
      r.status = "trained";
      r.checkpoint_path = trained.checkpoint_path;
      json entry{{"run_id", run_id},
                 {"method", method_name(cell.method)},
                 {"snr_db", cell.snr_db},
                 {"cmc", config.method == Method::kVscc ? config.cmc : 0.0},
                 {"status", "trained"},
                 {"checkpoint", trained.checkpoint_path},
                 {"config_fingerprint", fingerprint},
                 {"dataset_fingerprint", data.fingerprint},
                 {"checkpoint_fingerprint", trained.checkpoint.fingerprint()}};
      // Replace any stale entry for the same cell.
      auto& cells = manifest["cells"];
      cells.erase(std::remove_if(cells.begin(), cells.end(),
                                 [&](const json& e) { return e.value("run_id", "") == run_id; }),
                  cells.end());
      cells.push_back(entry);
      store_manifest(manifest, manifest_path);
    } catch (const std::exception& e) {
      r.status = "failed";
      r.error = e.what();
      auto& cells = manifest["cells"];
      cells.push_back(json{{"run_id", run_id},
                           {"status", "failed"},
                           {"error", r.error},
                           {"config_fingerprint", fingerprint}});
      store_manifest(manifest, manifest_path);
      if (options.fail_fast) {
        results.push_back(std::move(r));
        throw;
      }
      std::cerr << "sweep: cell " << run_id << " failed: " << r.error << "\n";
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace vscc
