#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vscc/rng.hpp"
#include "vscc/tensor.hpp"

namespace vscc {

// A trainable tensor together with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void init(std::string param_name, std::vector<int> shape) {
    name = std::move(param_name);
    value = Tensor(shape);
    grad = Tensor(std::move(shape));
  }
};

// 2-d convolution over NCHW tensors, im2col + GEMM. Forward caches the
// input when train mode is on; backward accumulates weight/bias grads
// and returns the input gradient.
class Conv2d {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
  // He-normal scaled by gain; residual-branch outputs use a small gain
  // so deep stacks start close to identity without dead gradients.
  void init_weights(Rng& rng, double gain = 1.0);

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  Param weight;  // [out_ch, in_ch, k, k]
  Param bias;    // [out_ch]

 private:
  int in_ch_, out_ch_, ksize_, stride_, pad_;
  Tensor input_;                   // kept only for 1x1 convs (it doubles as the col panel)
  std::vector<int> input_shape_;
  std::vector<double> col_cache_;  // im2col panels kept from the train forward
};

// Group normalization with affine parameters. Group count is
// max(1, channels / group_size); channels must divide evenly.
class GroupNorm {
 public:
  GroupNorm(std::string name, int channels, int group_size);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);

  int group_count() const { return groups_; }

  Param gamma;
  Param beta;

 private:
  int channels_, groups_;
  Tensor normalized_;   // cached x-hat
  Tensor inv_std_;      // [N, groups]
};

// Swish(t) = t / (1 + e^-t).
class Swish {
 public:
  // Takes the input by value so chained temporaries move instead of copy.
  Tensor forward(Tensor x, bool train);
  Tensor backward(const Tensor& grad_out);

 private:
  Tensor input_;
};

double swish_scalar(double t);

class TanhLayer {
 public:
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);

 private:
  Tensor output_;
};

// Nearest-neighbour 2x upsampling.
class Upsample2x {
 public:
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
};

// GroupNorm -> Swish -> 3x3 conv, twice, plus a residual connection
// (1x1 projection when the channel count changes).
class ResnetBlock {
 public:
  ResnetBlock(std::string name, int width_in, int width_out, int group_size);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
  void init_weights(Rng& rng);

  Conv2d& conv2() { return conv2_; }
  bool has_projection() const { return skip_.has_value(); }

 private:
  GroupNorm norm1_, norm2_;
  Swish act1_, act2_;
  Conv2d conv1_, conv2_;
  std::optional<Conv2d> skip_;
};

// Spatial self-attention: Q, K, V from 1x1 convs over the normalized
// input, softmax(Q K^T / sqrt(C)) V, output 1x1 conv, residual add.
class AttentionBlock {
 public:
  AttentionBlock(std::string name, int width, int group_size);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
  void init_weights(Rng& rng);

 private:
  int width_;
  GroupNorm norm_;
  Conv2d q_, k_, v_, out_;
  Tensor q_t_, k_t_, v_t_;  // cached [N, HW, C] projections
  Tensor attn_;             // cached [N, HW, HW] weights
};

// Row-stochastic attention weights softmax(Q K^T / sqrt(channels)) for
// one image; q_t/k_t are [positions, channels] row-major.
Tensor attention_weights(const Tensor& q_t, const Tensor& k_t, int channels);

}  // namespace vscc
