#include "vscc/network.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vscc/hash.hpp"
#include "vscc/version.hpp"

namespace vscc {

namespace {

// Channel-slice helpers for the latent head split.
Tensor slice_channels(const Tensor& x, int from, int to) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::uninit({n, to - from, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = from; ch < to; ++ch)
      std::copy_n(x.ptr() + ((static_cast<int64_t>(i) * c + ch) * plane), plane,
                  out.ptr() + ((static_cast<int64_t>(i) * (to - from) + ch - from) * plane));
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  Tensor out = Tensor::uninit({n, ca + cb, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + static_cast<int64_t>(i) * ca * plane, ca * plane,
                out.ptr() + static_cast<int64_t>(i) * (ca + cb) * plane);
    std::copy_n(b.ptr() + static_cast<int64_t>(i) * cb * plane, cb * plane,
                out.ptr() + (static_cast<int64_t>(i) * (ca + cb) + ca) * plane);
  }
  return out;
}

}  // namespace

double ArchitectureConfig::bandwidth_ratio(bool include_variance) const {
  const double symbols = static_cast<double>(latent_channels) * latent_hw() * latent_hw() *
                         (include_variance ? 2.0 : 1.0);
  return symbols / (static_cast<double>(image_size) * image_size * input_channels);
}

void ArchitectureConfig::validate() const {
  if (stage_widths.empty()) throw std::invalid_argument("ArchitectureConfig: no stage widths");
  for (int w : stage_widths)
    if (w < 1) throw std::invalid_argument("ArchitectureConfig: stage width < 1");
  if (latent_channels < 1) throw std::invalid_argument("ArchitectureConfig: latent_channels < 1");
  if (input_channels < 1) throw std::invalid_argument("ArchitectureConfig: input_channels < 1");
  const int factor = 1 << stages();
  if (image_size <= 0 || image_size % factor != 0)
    throw std::invalid_argument("ArchitectureConfig: image_size must be divisible by 2^stages");
  if (latent_hw() < 1) throw std::invalid_argument("ArchitectureConfig: image too small");
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(const ArchitectureConfig& config, uint64_t init_seed)
    : config_(config),
      stem_("enc.stem", config.input_channels, config.stage_widths.front(), 3, 1, 1),
      head_norm_("enc.head.norm", config.stage_widths.back(), config.groupnorm_group_size),
      head_conv1_("enc.head.conv1", config.stage_widths.back(), config.stage_widths.back(), 3, 1, 1),
      head_conv2_("enc.head.conv2", config.stage_widths.back(),
                  config.emit_variance ? 2 * config.latent_channels : config.latent_channels, 3,
                  1, 1),
      pre_channel_mean_("enc.pre_channel.mean", config.latent_channels, config.latent_channels,
                        1, 1, 0) {
  config_.validate();
  const auto& widths = config_.stage_widths;
  int prev = widths.front();
  for (size_t i = 0; i < widths.size(); ++i) {
    stage_blocks_.emplace_back("enc.stage" + std::to_string(i) + ".block", prev, widths[i],
                               config_.groupnorm_group_size);
    downsamples_.emplace_back("enc.stage" + std::to_string(i) + ".down", widths[i], widths[i], 3,
                              2, 1);
    prev = widths[i];
  }
  const int top = widths.back();
  for (int i = 0; i < 3; ++i)
    tail_blocks_.emplace_back("enc.tail" + std::to_string(i), top, top,
                              config_.groupnorm_group_size);
  if (config_.attention_enabled)
    attention_ = std::make_unique<AttentionBlock>("enc.attn", top, config_.groupnorm_group_size);
  if (config_.emit_variance)
    pre_channel_var_ = std::make_unique<Conv2d>("enc.pre_channel.var", config_.latent_channels,
                                                config_.latent_channels, 1, 1, 0);

  Rng rng(mix_seed(init_seed, 0x656e63ULL));  // encoder stream
  stem_.init_weights(rng);
  for (auto& b : stage_blocks_) b.init_weights(rng);
  for (auto& d : downsamples_) d.init_weights(rng);
  for (auto& b : tail_blocks_) b.init_weights(rng);
  if (attention_) attention_->init_weights(rng);
  head_conv1_.init_weights(rng);
  head_conv2_.init_weights(rng);
  pre_channel_mean_.init_weights(rng);
  if (pre_channel_var_) pre_channel_var_->init_weights(rng);
}

void Encoder::collect(std::vector<Param*>& out) {
  stem_.collect(out);
  for (size_t i = 0; i < stage_blocks_.size(); ++i) {
    stage_blocks_[i].collect(out);
    downsamples_[i].collect(out);
  }
  for (auto& b : tail_blocks_) b.collect(out);
  if (attention_) attention_->collect(out);
  head_norm_.collect(out);
  head_conv1_.collect(out);
  head_conv2_.collect(out);
  pre_channel_mean_.collect(out);
  if (pre_channel_var_) pre_channel_var_->collect(out);
}

EncoderOutput Encoder::forward(const Tensor& image, bool train) {
  if (image.ndim() != 4 || image.dim(1) != config_.input_channels ||
      image.dim(2) != config_.image_size || image.dim(3) != config_.image_size)
    throw std::invalid_argument("Encoder: expected [N," + std::to_string(config_.input_channels) +
                                "," + std::to_string(config_.image_size) + "," +
                                std::to_string(config_.image_size) + "], got " +
                                shape_string(image));
  Tensor h = stem_.forward(image, train);
  for (size_t i = 0; i < stage_blocks_.size(); ++i) {
    h = stage_blocks_[i].forward(h, train);
    h = downsamples_[i].forward(h, train);
  }
  h = tail_blocks_[0].forward(h, train);
  h = tail_blocks_[1].forward(h, train);
  if (attention_) h = attention_->forward(h, train);
  h = tail_blocks_[2].forward(h, train);
  h = head_norm_.forward(h, train);
  h = head_act_.forward(h, train);
  h = head_conv1_.forward(h, train);
  h = head_conv2_.forward(h, train);

  EncoderOutput out;
  const int k = config_.latent_channels;
  if (config_.emit_variance) {
    out.mean = pre_channel_mean_.forward(slice_channels(h, 0, k), train);
    out.log_variance = pre_channel_var_->forward(slice_channels(h, k, 2 * k), train);
  } else {
    out.mean = pre_channel_mean_.forward(h, train);
  }
  return out;
}

Tensor Encoder::backward(const Tensor& mean_grad, const Tensor& log_variance_grad) {
  Tensor g;
  if (config_.emit_variance) {
    if (log_variance_grad.empty())
      throw std::invalid_argument("Encoder::backward: missing log-variance gradient");
    g = concat_channels(pre_channel_mean_.backward(mean_grad),
                        pre_channel_var_->backward(log_variance_grad));
  } else {
    g = pre_channel_mean_.backward(mean_grad);
  }
  g = head_conv2_.backward(g);
  g = head_conv1_.backward(g);
  g = head_act_.backward(g);
  g = head_norm_.backward(g);
  g = tail_blocks_[2].backward(g);
  if (attention_) g = attention_->backward(g);
  g = tail_blocks_[1].backward(g);
  g = tail_blocks_[0].backward(g);
  for (size_t i = stage_blocks_.size(); i-- > 0;) {
    g = downsamples_[i].backward(g);
    g = stage_blocks_[i].backward(g);
  }
  return stem_.backward(g);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder::Decoder(const ArchitectureConfig& config, uint64_t init_seed)
    : config_(config),
      post_channel_("dec.post_channel", config.latent_channels, config.latent_channels, 1, 1, 0),
      expand_("dec.expand", config.latent_channels, config.stage_widths.back(), 3, 1, 1),
      out_conv_("dec.out", config.stage_widths.front(), config.input_channels, 3, 1, 1) {
  config_.validate();
  const auto& widths = config_.stage_widths;
  const int top = widths.back();
  for (int i = 0; i < 2; ++i)
    tail_blocks_.emplace_back("dec.tail" + std::to_string(i), top, top,
                              config_.groupnorm_group_size);
  if (config_.attention_enabled)
    attention_ = std::make_unique<AttentionBlock>("dec.attn", top, config_.groupnorm_group_size);

  // Mirrors the encoder stages: widths walk back down, last cycle keeps
  // the bottom width.
  int cur = top;
  const int stages = config_.stages();
  for (int j = 0; j < stages; ++j) {
    const int target = j + 1 < stages ? widths[static_cast<size_t>(stages - 2 - j)] : widths[0];
    upsamples_.emplace_back();
    upsample_convs_.emplace_back("dec.stage" + std::to_string(j) + ".up", cur, cur, 3, 1, 1);
    stage_blocks_.emplace_back("dec.stage" + std::to_string(j) + ".block", cur, target,
                               config_.groupnorm_group_size);
    cur = target;
  }
  for (int i = 0; i < 2; ++i)
    refine_blocks_.emplace_back("dec.refine" + std::to_string(i), widths[0], widths[0],
                                config_.groupnorm_group_size);

  Rng rng(mix_seed(init_seed, 0x646563ULL));  // decoder stream
  post_channel_.init_weights(rng);
  expand_.init_weights(rng);
  for (auto& b : tail_blocks_) b.init_weights(rng);
  if (attention_) attention_->init_weights(rng);
  for (auto& c : upsample_convs_) c.init_weights(rng);
  for (auto& b : stage_blocks_) b.init_weights(rng);
  for (auto& b : refine_blocks_) b.init_weights(rng);
  out_conv_.init_weights(rng, 0.3);  // start the image head inside tanh's linear range
}

void Decoder::collect(std::vector<Param*>& out) {
  post_channel_.collect(out);
  expand_.collect(out);
  for (auto& b : tail_blocks_) b.collect(out);
  if (attention_) attention_->collect(out);
  for (size_t i = 0; i < stage_blocks_.size(); ++i) {
    upsample_convs_[i].collect(out);
    stage_blocks_[i].collect(out);
  }
  for (auto& b : refine_blocks_) b.collect(out);
  out_conv_.collect(out);
}

Tensor Decoder::forward(const Tensor& latent, bool train) {
  if (latent.ndim() != 4 || latent.dim(1) != config_.latent_channels ||
      latent.dim(2) != config_.latent_hw() || latent.dim(3) != config_.latent_hw())
    throw std::invalid_argument("Decoder: expected [N," + std::to_string(config_.latent_channels) +
                                "," + std::to_string(config_.latent_hw()) + "," +
                                std::to_string(config_.latent_hw()) + "], got " +
                                shape_string(latent));
  Tensor h = post_channel_.forward(latent, train);
  h = expand_.forward(h, train);
  h = tail_blocks_[0].forward(h, train);
  h = tail_blocks_[1].forward(h, train);
  if (attention_) h = attention_->forward(h, train);
  for (size_t j = 0; j < stage_blocks_.size(); ++j) {
    h = upsamples_[j].forward(h, train);
    h = upsample_convs_[j].forward(h, train);
    h = stage_blocks_[j].forward(h, train);
  }
  h = refine_blocks_[0].forward(h, train);
  h = refine_blocks_[1].forward(h, train);
  h = out_conv_.forward(h, train);
  return out_act_.forward(h, train);
}

Tensor Decoder::backward(const Tensor& grad_out) {
  Tensor g = out_act_.backward(grad_out);
  g = out_conv_.backward(g);
  g = refine_blocks_[1].backward(g);
  g = refine_blocks_[0].backward(g);
  for (size_t j = stage_blocks_.size(); j-- > 0;) {
    g = stage_blocks_[j].backward(g);
    g = upsample_convs_[j].backward(g);
    g = upsamples_[j].backward(g);
  }
  if (attention_) g = attention_->backward(g);
  g = tail_blocks_[1].backward(g);
  g = tail_blocks_[0].backward(g);
  g = expand_.backward(g);
  return post_channel_.backward(g);
}

// ---------------------------------------------------------------------------
// Model / Checkpoint
// ---------------------------------------------------------------------------

Model::Model(const ArchitectureConfig& config, uint64_t init_seed) : config_(config) {
  config_.validate();
  encoder_ = std::make_unique<Encoder>(config_, init_seed);
  decoder_ = std::make_unique<Decoder>(config_, init_seed);
  encoder_->collect(params_);
  decoder_->collect(params_);
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const Param* p : params_) n += p->value.numel();
  return n;
}

void Model::zero_grads() {
  for (Param* p : params_) p->grad.zero();
}

Checkpoint Model::to_checkpoint(const TrainingMetadata& meta) const {
  Checkpoint ckpt;
  ckpt.architecture = config_;
  ckpt.training_metadata = meta;
  ckpt.parameters.reserve(static_cast<size_t>(parameter_count()));
  for (const Param* p : params_)
    ckpt.parameters.insert(ckpt.parameters.end(), p->value.data.begin(), p->value.data.end());
  return ckpt;
}

void Model::load(const Checkpoint& checkpoint) {
  if (!(checkpoint.architecture == config_))
    throw std::invalid_argument("Model::load: architecture shape mismatch between checkpoint and model");
  if (checkpoint.parameters.size() != static_cast<size_t>(parameter_count()))
    throw std::invalid_argument("Model::load: parameter count mismatch");
  size_t offset = 0;
  for (Param* p : params_) {
    std::copy_n(checkpoint.parameters.begin() + static_cast<ptrdiff_t>(offset),
                p->value.data.size(), p->value.data.begin());
    offset += p->value.data.size();
  }
}

std::string Checkpoint::fingerprint() const {
  Fnv1a h;
  h.update(parameters.data(), parameters.size() * sizeof(double));
  h.update(training_metadata.method);
  h.update(training_metadata.dataset_fingerprint);
  h.update(training_metadata.snr_db);
  h.update(training_metadata.cmc);
  h.update(static_cast<uint64_t>(training_metadata.epoch));
  h.update(training_metadata.seed);
  return h.hex();
}

namespace {

using json = nlohmann::ordered_json;
constexpr char kMagic[8] = {'V', 'S', 'C', 'C', 'K', 'P', 'T', '1'};

json arch_to_json(const ArchitectureConfig& a) {
  return json{{"image_size", a.image_size},
              {"input_channels", a.input_channels},
              {"stage_widths", a.stage_widths},
              {"latent_channels", a.latent_channels},
              {"groupnorm_group_size", a.groupnorm_group_size},
              {"attention_enabled", a.attention_enabled},
              {"emit_variance", a.emit_variance}};
}

ArchitectureConfig arch_from_json(const json& j) {
  ArchitectureConfig a;
  a.image_size = j.at("image_size").get<int>();
  a.input_channels = j.at("input_channels").get<int>();
  a.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  a.latent_channels = j.at("latent_channels").get<int>();
  a.groupnorm_group_size = j.at("groupnorm_group_size").get<int>();
  a.attention_enabled = j.at("attention_enabled").get<bool>();
  a.emit_variance = j.at("emit_variance").get<bool>();
  return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  json header;
  header["format_version"] = 1;
  header["code_version"] = kCodeVersion;
  header["architecture"] = arch_to_json(checkpoint.architecture);
  header["training_metadata"] = {{"method", checkpoint.training_metadata.method},
                                 {"snr_db", checkpoint.training_metadata.snr_db},
                                 {"cmc", checkpoint.training_metadata.cmc},
                                 {"epoch", checkpoint.training_metadata.epoch},
                                 {"seed", checkpoint.training_metadata.seed},
                                 {"dataset_fingerprint",
                                  checkpoint.training_metadata.dataset_fingerprint},
                                 {"config_fingerprint",
                                  checkpoint.training_metadata.config_fingerprint}};
  header["parameter_count"] = checkpoint.parameters.size();
  Fnv1a blob_hash;
  blob_hash.update(checkpoint.parameters.data(), checkpoint.parameters.size() * sizeof(double));
  header["parameter_hash"] = blob_hash.hex();

  const std::string header_str = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof kMagic);
  const uint64_t len = header_str.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  f.write(reinterpret_cast<const char*>(checkpoint.parameters.data()),
          static_cast<std::streamsize>(checkpoint.parameters.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file (bad magic)");
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len > (1ULL << 30))
    throw std::runtime_error("load_checkpoint: corrupt header length in " + path);
  std::string header_str(len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(header_str);
  } catch (const std::exception& e) {
    throw std::runtime_error("load_checkpoint: corrupt header JSON in " + path + ": " + e.what());
  }
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported format version in " + path);

  Checkpoint ckpt;
  ckpt.architecture = arch_from_json(header.at("architecture"));
  const auto& meta = header.at("training_metadata");
  ckpt.training_metadata.method = meta.at("method").get<std::string>();
  ckpt.training_metadata.snr_db = meta.at("snr_db").get<double>();
  ckpt.training_metadata.cmc = meta.at("cmc").get<double>();
  ckpt.training_metadata.epoch = meta.at("epoch").get<int>();
  ckpt.training_metadata.seed = meta.at("seed").get<uint64_t>();
  ckpt.training_metadata.dataset_fingerprint =
      meta.at("dataset_fingerprint").get<std::string>();
  ckpt.training_metadata.config_fingerprint = meta.value("config_fingerprint", "");

  const auto count = header.at("parameter_count").get<uint64_t>();
  ckpt.parameters.resize(count);
  f.read(reinterpret_cast<char*>(ckpt.parameters.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw std::runtime_error("load_checkpoint: truncated parameter blob in " + path);

  Fnv1a blob_hash;
  blob_hash.update(ckpt.parameters.data(), ckpt.parameters.size() * sizeof(double));
  if (blob_hash.hex() != header.at("parameter_hash").get<std::string>())
    throw std::runtime_error("load_checkpoint: parameter blob hash mismatch in " + path +
                             " (file corrupt)");
  return ckpt;
}

}  // namespace vscc
