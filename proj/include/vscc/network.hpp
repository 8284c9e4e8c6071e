#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vscc/layers.hpp"
#include "vscc/loss.hpp"
#include "vscc/tensor.hpp"

namespace vscc {

struct ArchitectureConfig {
  int image_size = 256;
  int input_channels = 3;
  std::vector<int> stage_widths = {32, 64, 128, 192};
  int latent_channels = 16;
  int groupnorm_group_size = 32;
  bool attention_enabled = true;
  bool emit_variance = true;  // true for VSCC/VAE, false for AE

  int stages() const { return static_cast<int>(stage_widths.size()); }
  int latent_hw() const { return image_size >> stages(); }

  // Channel symbols per source pixel value; the variance-transmitting
  // test mode doubles it.
  double bandwidth_ratio(bool include_variance) const;

  void validate() const;
  bool operator==(const ArchitectureConfig&) const = default;
};

// Encoder output: mean/log-variance latent maps when emit_variance is
// set, otherwise only `mean` holds the plain latent.
struct EncoderOutput {
  Tensor mean;
  Tensor log_variance;
  bool has_variance() const { return !log_variance.empty(); }
};

// Stem conv, per-stage ResNet block + stride-2 downsample, tail ResNet
// blocks with attention, then the latent head (GN, Swish, two convs)
// and per-path 1x1 channel-matching convs.
class Encoder {
 public:
  Encoder(const ArchitectureConfig& config, uint64_t init_seed);

  EncoderOutput forward(const Tensor& image, bool train);
  // Gradient wrt the image input; log_variance_grad may be empty in AE mode.
  Tensor backward(const Tensor& mean_grad, const Tensor& log_variance_grad);
  void collect(std::vector<Param*>& out);

  const ArchitectureConfig& config() const { return config_; }

 private:
  ArchitectureConfig config_;
  Conv2d stem_;
  std::vector<ResnetBlock> stage_blocks_;
  std::vector<Conv2d> downsamples_;
  std::vector<ResnetBlock> tail_blocks_;  // attention sits after the first two
  std::unique_ptr<AttentionBlock> attention_;
  GroupNorm head_norm_;
  Swish head_act_;
  Conv2d head_conv1_;
  Conv2d head_conv2_;
  Conv2d pre_channel_mean_;
  std::unique_ptr<Conv2d> pre_channel_var_;
};

// Mirror of the encoder: post-channel 1x1 conv, expansion conv, tail
// blocks with attention, per-stage upsample + ResNet block, two
// refinement blocks, output conv, Tanh.
class Decoder {
 public:
  Decoder(const ArchitectureConfig& config, uint64_t init_seed);

  Tensor forward(const Tensor& latent, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);

 private:
  ArchitectureConfig config_;
  Conv2d post_channel_;
  Conv2d expand_;
  std::vector<ResnetBlock> tail_blocks_;
  std::unique_ptr<AttentionBlock> attention_;
  std::vector<Upsample2x> upsamples_;
  std::vector<Conv2d> upsample_convs_;
  std::vector<ResnetBlock> stage_blocks_;
  std::vector<ResnetBlock> refine_blocks_;
  Conv2d out_conv_;
  TanhLayer out_act_;
};

struct TrainingMetadata {
  std::string method = "untrained";
  double snr_db = 0.0;
  double cmc = 0.0;
  int epoch = 0;
  uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::string config_fingerprint;
};

struct Checkpoint {
  ArchitectureConfig architecture;
  std::vector<double> parameters;
  TrainingMetadata training_metadata;

  std::string fingerprint() const;
};

// Encoder/decoder pair sharing one parameter list.
class Model {
 public:
  Model(const ArchitectureConfig& config, uint64_t init_seed);

  Encoder& encoder() { return *encoder_; }
  Decoder& decoder() { return *decoder_; }
  const ArchitectureConfig& config() const { return config_; }

  std::vector<Param*>& params() { return params_; }
  int64_t parameter_count() const;
  void zero_grads();

  Checkpoint to_checkpoint(const TrainingMetadata& meta) const;
  // Throws on architecture/parameter-count mismatch.
  void load(const Checkpoint& checkpoint);

 private:
  ArchitectureConfig config_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
  std::vector<Param*> params_;
};

// Versioned container: magic + JSON header + raw little-endian blob.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vscc
