#include "vscc/layers.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vscc {

namespace {

thread_local std::vector<double> tl_col;
thread_local std::vector<double> tl_col2;

int conv_out_size(int in, int ksize, int stride, int pad) {
  return (in + 2 * pad - ksize) / stride + 1;
}

// col is [in_ch*k*k, out_h*out_w] row-major.
void im2col(const double* img, int channels, int h, int w, int ksize, int stride, int pad,
            double* col) {
  const int out_h = conv_out_size(h, ksize, stride, pad);
  const int out_w = conv_out_size(w, ksize, stride, pad);
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        double* dst = col + static_cast<int64_t>((c * ksize + ky) * ksize + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = 0.0;
            continue;
          }
          const double* src = img + (static_cast<int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[oy * out_w + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int h, int w, int ksize, int stride, int pad,
            double* img) {
  const int out_h = conv_out_size(h, ksize, stride, pad);
  const int out_w = conv_out_size(w, ksize, stride, pad);
  const int plane = out_h * out_w;
  for (int64_t i = 0; i < static_cast<int64_t>(channels) * h * w; ++i) img[i] = 0.0;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < ksize; ++ky) {
      for (int kx = 0; kx < ksize; ++kx) {
        const double* src = col + static_cast<int64_t>((c * ksize + ky) * ksize + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = img + (static_cast<int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

double swish_scalar(double t) { return t * sigmoid(t); }

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(pad) {
  if (in_ch < 1 || out_ch < 1) throw std::invalid_argument("Conv2d: widths must be >= 1");
  weight.init(name + ".weight", {out_ch, in_ch, ksize, ksize});
  bias.init(name + ".bias", {out_ch});
}

void Conv2d::init_weights(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(in_ch_) * ksize_ * ksize_;
  const double std_dev = gain * std::sqrt(2.0 / fan_in);
  for (auto& v : weight.value.data) v = std_dev * rng.gaussian();
  bias.value.zero();
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.ndim() != 4 || x.dim(1) != in_ch_)
    throw std::invalid_argument("Conv2d " + weight.name + ": bad input " + shape_string(x));
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int out_h = conv_out_size(h, ksize_, stride_, pad_);
  const int out_w = conv_out_size(w, ksize_, stride_, pad_);
  const int plane = out_h * out_w;
  const int kdim = in_ch_ * ksize_ * ksize_;
  Tensor y = Tensor::uninit({n, out_ch_, out_h, out_w});
  const bool pointwise = ksize_ == 1 && stride_ == 1 && pad_ == 0;
  const int64_t col_size = static_cast<int64_t>(kdim) * plane;
  if (train && !pointwise) col_cache_.resize(static_cast<size_t>(n) * col_size);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* img = x.ptr() + static_cast<int64_t>(i) * in_ch_ * h * w;
    double* dst = y.ptr() + static_cast<int64_t>(i) * out_ch_ * plane;
    const double* col = img;
    if (!pointwise) {
      double* col_dst;
      if (train) {
        col_dst = col_cache_.data() + static_cast<int64_t>(i) * col_size;
      } else {
        tl_col.resize(static_cast<size_t>(col_size));
        col_dst = tl_col.data();
      }
      im2col(img, in_ch_, h, w, ksize_, stride_, pad_, col_dst);
      col = col_dst;
    }
    gemm_nn(out_ch_, plane, kdim, weight.value.ptr(), col, dst);
    for (int o = 0; o < out_ch_; ++o) {
      const double b = bias.value.data[o];
      double* row = dst + static_cast<int64_t>(o) * plane;
      for (int p = 0; p < plane; ++p) row[p] += b;
    }
  }
  if (train) {
    input_shape_ = x.shape;
    if (pointwise) input_ = x;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw std::logic_error("Conv2d::backward without train forward");
  const int n = input_shape_[0], h = input_shape_[2], w = input_shape_[3];
  const int out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  const int plane = out_h * out_w;
  const int kdim = in_ch_ * ksize_ * ksize_;
  const bool pointwise = ksize_ == 1 && stride_ == 1 && pad_ == 0;

  // Per-image weight-grad slabs, reduced in index order afterwards so
  // the result does not depend on thread scheduling.
  std::vector<double> wslab(static_cast<size_t>(n) * out_ch_ * kdim);
  Tensor grad_in = Tensor::uninit(input_shape_);

  // W^T once, for the input gradient.
  std::vector<double> wt(static_cast<size_t>(kdim) * out_ch_);
  for (int o = 0; o < out_ch_; ++o)
    for (int q = 0; q < kdim; ++q)
      wt[static_cast<size_t>(q) * out_ch_ + o] = weight.value.data[static_cast<size_t>(o) * kdim + q];

  const int64_t col_size = static_cast<int64_t>(kdim) * plane;

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* gout = grad_out.ptr() + static_cast<int64_t>(i) * out_ch_ * plane;
    double* gin = grad_in.ptr() + static_cast<int64_t>(i) * in_ch_ * h * w;
    const double* col = pointwise ? input_.ptr() + static_cast<int64_t>(i) * in_ch_ * h * w
                                  : col_cache_.data() + static_cast<int64_t>(i) * col_size;
    // dW_i = gout * col^T
    gemm_nt(out_ch_, kdim, plane, gout, col,
            wslab.data() + static_cast<int64_t>(i) * out_ch_ * kdim);
    // dcol = W^T * gout, then scatter back to image coordinates.
    if (pointwise) {
      gemm_nn(kdim, plane, out_ch_, wt.data(), gout, gin);
    } else {
      tl_col2.resize(static_cast<size_t>(col_size));
      gemm_nn(kdim, plane, out_ch_, wt.data(), gout, tl_col2.data());
      col2im(tl_col2.data(), in_ch_, h, w, ksize_, stride_, pad_, gin);
    }
  }

  for (int i = 0; i < n; ++i) {
    const double* slab = wslab.data() + static_cast<int64_t>(i) * out_ch_ * kdim;
    for (int64_t q = 0; q < static_cast<int64_t>(out_ch_) * kdim; ++q)
      weight.grad.data[q] += slab[q];
    const double* gout = grad_out.ptr() + static_cast<int64_t>(i) * out_ch_ * plane;
    for (int o = 0; o < out_ch_; ++o) {
      double acc = 0.0;
      const double* row = gout + static_cast<int64_t>(o) * plane;
      for (int p = 0; p < plane; ++p) acc += row[p];
      bias.grad.data[o] += acc;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

GroupNorm::GroupNorm(std::string name, int channels, int group_size) : channels_(channels) {
  groups_ = std::max(1, channels / std::max(1, group_size));
  if (channels % groups_ != 0)
    throw std::invalid_argument("GroupNorm: channels must divide into groups");
  gamma.init(name + ".gamma", {channels});
  beta.init(name + ".beta", {channels});
  gamma.value.fill(1.0);
}

void GroupNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Tensor GroupNorm::forward(const Tensor& x, bool train) {
  constexpr double kEps = 1e-6;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != channels_) throw std::invalid_argument("GroupNorm: channel mismatch");
  const int cpg = c / groups_;
  const int64_t group_elems = static_cast<int64_t>(cpg) * h * w;
  Tensor y = Tensor::uninit(x.shape);
  Tensor xhat = Tensor::uninit(x.shape);
  Tensor inv_std = Tensor::uninit({n, groups_});

#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const int64_t base = (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cpg) * h * w;
      double sum = 0.0, sum_sq = 0.0;
      for (int64_t q = 0; q < group_elems; ++q) {
        const double v = x.data[base + q];
        sum += v;
        sum_sq += v * v;
      }
      const double mean = sum / static_cast<double>(group_elems);
      const double var = sum_sq / static_cast<double>(group_elems) - mean * mean;
      const double istd = 1.0 / std::sqrt(var + kEps);
      inv_std.data[static_cast<size_t>(i) * groups_ + g] = istd;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double gm = gamma.value.data[ch];
        const double bt = beta.value.data[ch];
        const int64_t off = base + static_cast<int64_t>(cc) * h * w;
        for (int64_t q = 0; q < static_cast<int64_t>(h) * w; ++q) {
          const double xh = (x.data[off + q] - mean) * istd;
          xhat.data[off + q] = xh;
          y.data[off + q] = gm * xh + bt;
        }
      }
    }
  }
  if (train) {
    normalized_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
  if (normalized_.empty()) throw std::logic_error("GroupNorm::backward without train forward");
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
  const int cpg = c / groups_;
  const int64_t group_elems = static_cast<int64_t>(cpg) * h * w;
  Tensor grad_in = Tensor::uninit(grad_out.shape);

#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const int64_t base = (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cpg) * h * w;
      const double istd = inv_std_.data[static_cast<size_t>(i) * groups_ + g];
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double gm = gamma.value.data[ch];
        const int64_t off = base + static_cast<int64_t>(cc) * h * w;
        for (int64_t q = 0; q < static_cast<int64_t>(h) * w; ++q) {
          const double dxh = grad_out.data[off + q] * gm;
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * normalized_.data[off + q];
        }
      }
      mean_dxhat /= static_cast<double>(group_elems);
      mean_dxhat_xhat /= static_cast<double>(group_elems);
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double gm = gamma.value.data[ch];
        const int64_t off = base + static_cast<int64_t>(cc) * h * w;
        for (int64_t q = 0; q < static_cast<int64_t>(h) * w; ++q) {
          const double dxh = grad_out.data[off + q] * gm;
          grad_in.data[off + q] =
              istd * (dxh - mean_dxhat - normalized_.data[off + q] * mean_dxhat_xhat);
        }
      }
    }
  }

  // Parameter grads, ordered accumulation.
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const int64_t off = (static_cast<int64_t>(i) * c + ch) * h * w;
      double dg = 0.0, db = 0.0;
      for (int64_t q = 0; q < static_cast<int64_t>(h) * w; ++q) {
        dg += grad_out.data[off + q] * normalized_.data[off + q];
        db += grad_out.data[off + q];
      }
      gamma.grad.data[ch] += dg;
      beta.grad.data[ch] += db;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

Tensor Swish::forward(Tensor x, bool train) {
  Tensor y = Tensor::uninit(x.shape);
  const int64_t n = x.numel();
  const double* src = x.ptr();
  double* dst = y.ptr();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] / (1.0 + std::exp(-src[i]));
  if (train) input_ = std::move(x);
  return y;
}

Tensor Swish::backward(const Tensor& grad_out) {
  if (input_.empty()) throw std::logic_error("Swish::backward without train forward");
  Tensor grad_in = Tensor::uninit(grad_out.shape);
  const int64_t n = grad_out.numel();
  const double* in = input_.ptr();
  const double* g = grad_out.ptr();
  double* dst = grad_in.ptr();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-in[i]));
    dst[i] = g[i] * (s + in[i] * s * (1.0 - s));
  }
  return grad_in;
}

Tensor TanhLayer::forward(const Tensor& x, bool train) {
  Tensor y = Tensor::uninit(x.shape);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y.data[i] = std::tanh(x.data[i]);
  if (train) output_ = y;
  return y;
}

Tensor TanhLayer::backward(const Tensor& grad_out) {
  if (output_.empty()) throw std::logic_error("Tanh::backward without train forward");
  Tensor grad_in = Tensor::uninit(grad_out.shape);
  const int64_t n = grad_out.numel();
  for (int64_t i = 0; i < n; ++i)
    grad_in.data[i] = grad_out.data[i] * (1.0 - output_.data[i] * output_.data[i]);
  return grad_in;
}

Tensor Upsample2x::forward(const Tensor& x, bool) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y = Tensor::uninit({n, c, 2 * h, 2 * w});
  const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.ptr() + p * h * w;
    double* dst = y.ptr() + p * 4 * h * w;
    for (int yy = 0; yy < h; ++yy) {
      double* row0 = dst + static_cast<int64_t>(2 * yy) * 2 * w;
      double* row1 = row0 + 2 * w;
      for (int xx = 0; xx < w; ++xx) {
        const double v = src[yy * w + xx];
        row0[2 * xx] = v;
        row0[2 * xx + 1] = v;
        row1[2 * xx] = v;
        row1[2 * xx + 1] = v;
      }
    }
  }
  return y;
}

Tensor Upsample2x::backward(const Tensor& grad_out) {
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const int h = grad_out.dim(2) / 2, w = grad_out.dim(3) / 2;
  Tensor grad_in = Tensor::uninit({n, c, h, w});
  const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = grad_out.ptr() + p * 4 * h * w;
    double* dst = grad_in.ptr() + p * h * w;
    for (int yy = 0; yy < h; ++yy) {
      const double* row0 = src + static_cast<int64_t>(2 * yy) * 2 * w;
      const double* row1 = row0 + 2 * w;
      for (int xx = 0; xx < w; ++xx)
        dst[yy * w + xx] = row0[2 * xx] + row0[2 * xx + 1] + row1[2 * xx] + row1[2 * xx + 1];
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// ResnetBlock
// ---------------------------------------------------------------------------

ResnetBlock::ResnetBlock(std::string name, int width_in, int width_out, int group_size)
    : norm1_(name + ".norm1", width_in, group_size),
      norm2_(name + ".norm2", width_out, group_size),
      conv1_(name + ".conv1", width_in, width_out, 3, 1, 1),
      conv2_(name + ".conv2", width_out, width_out, 3, 1, 1) {
  if (width_in != width_out) skip_.emplace(name + ".skip", width_in, width_out, 1, 1, 0);
}

void ResnetBlock::collect(std::vector<Param*>& out) {
  norm1_.collect(out);
  conv1_.collect(out);
  norm2_.collect(out);
  conv2_.collect(out);
  if (skip_) skip_->collect(out);
}

void ResnetBlock::init_weights(Rng& rng) {
  conv1_.init_weights(rng);
  conv2_.init_weights(rng, 0.1);  // keep the residual stream tame at init
  if (skip_) skip_->init_weights(rng);
}

Tensor ResnetBlock::forward(const Tensor& x, bool train) {
  Tensor h = conv1_.forward(act1_.forward(norm1_.forward(x, train), train), train);
  h = conv2_.forward(act2_.forward(norm2_.forward(h, train), train), train);
  const Tensor residual = skip_ ? skip_->forward(x, train) : x;
  double* hp = h.ptr();
  const double* rp = residual.ptr();
  const int64_t total = h.numel();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < total; ++i) hp[i] += rp[i];
  return h;
}

Tensor ResnetBlock::backward(const Tensor& grad_out) {
  Tensor g = norm2_.backward(act2_.backward(conv2_.backward(grad_out)));
  Tensor grad_in = norm1_.backward(act1_.backward(conv1_.backward(g)));
  const Tensor* extra = &grad_out;
  Tensor gskip;
  if (skip_) {
    gskip = skip_->backward(grad_out);
    extra = &gskip;
  }
  double* gp = grad_in.ptr();
  const double* ep = extra->ptr();
  const int64_t total = grad_in.numel();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < total; ++i) gp[i] += ep[i];
  return grad_in;
}

// ---------------------------------------------------------------------------
// AttentionBlock
// ---------------------------------------------------------------------------

AttentionBlock::AttentionBlock(std::string name, int width, int group_size)
    : width_(width),
      norm_(name + ".norm", width, group_size),
      q_(name + ".q", width, width, 1, 1, 0),
      k_(name + ".k", width, width, 1, 1, 0),
      v_(name + ".v", width, width, 1, 1, 0),
      out_(name + ".out", width, width, 1, 1, 0) {}

void AttentionBlock::collect(std::vector<Param*>& out) {
  norm_.collect(out);
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  out_.collect(out);
}

void AttentionBlock::init_weights(Rng& rng) {
  q_.init_weights(rng);
  k_.init_weights(rng);
  v_.init_weights(rng);
  // Near-identity start: wide attention otherwise stalls early training
  // on a long plateau.
  out_.init_weights(rng, 0.01);
}

Tensor attention_weights(const Tensor& q_t, const Tensor& k_t, int channels) {
  const int positions = q_t.dim(0);
  Tensor weights({positions, positions});
  gemm_nt(positions, positions, channels, q_t.ptr(), k_t.ptr(), weights.ptr());
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  for (int a = 0; a < positions; ++a) {
    double* row = weights.ptr() + static_cast<int64_t>(a) * positions;
    double max_v = -1e300;
    for (int b = 0; b < positions; ++b) {
      row[b] *= scale;
      max_v = std::max(max_v, row[b]);
    }
    double sum = 0.0;
    for (int b = 0; b < positions; ++b) {
      row[b] = std::exp(row[b] - max_v);
      sum += row[b];
    }
    for (int b = 0; b < positions; ++b) row[b] /= sum;
  }
  return weights;
}

namespace {
// [C, HW] plane -> [HW, C] row-major.
void transpose_plane(const double* src, int channels, int positions, double* dst) {
  for (int c = 0; c < channels; ++c)
    for (int p = 0; p < positions; ++p)
      dst[static_cast<int64_t>(p) * channels + c] = src[static_cast<int64_t>(c) * positions + p];
}
}  // namespace

Tensor AttentionBlock::forward(const Tensor& x, bool train) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int hw = h * w;
  Tensor normed = norm_.forward(x, train);
  Tensor q = q_.forward(normed, train);
  Tensor k = k_.forward(normed, train);
  Tensor v = v_.forward(normed, train);

  Tensor qt = Tensor::uninit({n, hw, c}), kt = Tensor::uninit({n, hw, c}),
         vt = Tensor::uninit({n, hw, c});
  Tensor attn = Tensor::uninit({n, hw, hw});
  Tensor mixed = Tensor::uninit({n, c, h, w});

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const int64_t plane_off = static_cast<int64_t>(i) * c * hw;
    const int64_t t_off = static_cast<int64_t>(i) * hw * c;
    transpose_plane(q.ptr() + plane_off, c, hw, qt.ptr() + t_off);
    transpose_plane(k.ptr() + plane_off, c, hw, kt.ptr() + t_off);
    transpose_plane(v.ptr() + plane_off, c, hw, vt.ptr() + t_off);

    Tensor qt_i({hw, c}), kt_i({hw, c});
    std::copy(qt.ptr() + t_off, qt.ptr() + t_off + static_cast<int64_t>(hw) * c, qt_i.ptr());
    std::copy(kt.ptr() + t_off, kt.ptr() + t_off + static_cast<int64_t>(hw) * c, kt_i.ptr());
    Tensor weights = attention_weights(qt_i, kt_i, c);
    std::copy(weights.ptr(), weights.ptr() + static_cast<int64_t>(hw) * hw,
              attn.ptr() + static_cast<int64_t>(i) * hw * hw);

    // out_t[p, c] = sum_b A[p, b] * v_t[b, c], stored back as [C, HW].
    std::vector<double> out_t(static_cast<size_t>(hw) * c);
    gemm_nn(hw, c, hw, weights.ptr(), vt.ptr() + t_off, out_t.data());
    double* dst = mixed.ptr() + plane_off;
    for (int p = 0; p < hw; ++p)
      for (int cc = 0; cc < c; ++cc)
        dst[static_cast<int64_t>(cc) * hw + p] = out_t[static_cast<size_t>(p) * c + cc];
  }

  Tensor y = out_.forward(mixed, train);
  for (int64_t i = 0; i < y.numel(); ++i) y.data[i] += x.data[i];
  if (train) {
    q_t_ = std::move(qt);
    k_t_ = std::move(kt);
    v_t_ = std::move(vt);
    attn_ = std::move(attn);
  }
  return y;
}

Tensor AttentionBlock::backward(const Tensor& grad_out) {
  if (attn_.empty()) throw std::logic_error("AttentionBlock::backward without train forward");
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
  const int hw = h * w;
  Tensor g_mixed = out_.backward(grad_out);

  Tensor gq = Tensor::uninit({n, c, h, w}), gk = Tensor::uninit({n, c, h, w}),
         gv = Tensor::uninit({n, c, h, w});
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const int64_t plane_off = static_cast<int64_t>(i) * c * hw;
    const int64_t t_off = static_cast<int64_t>(i) * hw * c;
    const double* attn = attn_.ptr() + static_cast<int64_t>(i) * hw * hw;

    // d(out_t)[p, c] from g_mixed (stored [C, HW]).
    std::vector<double> g_out_t(static_cast<size_t>(hw) * c);
    transpose_plane(g_mixed.ptr() + plane_off, c, hw, g_out_t.data());

    // dA = g_out_t * v_t^T ; dV_t = A^T * g_out_t.
    std::vector<double> g_attn(static_cast<size_t>(hw) * hw);
    gemm_nt(hw, hw, c, g_out_t.data(), v_t_.ptr() + t_off, g_attn.data());
    std::vector<double> attn_t(static_cast<size_t>(hw) * hw);
    for (int a = 0; a < hw; ++a)
      for (int b = 0; b < hw; ++b)
        attn_t[static_cast<size_t>(b) * hw + a] = attn[static_cast<size_t>(a) * hw + b];
    std::vector<double> g_vt(static_cast<size_t>(hw) * c);
    gemm_nn(hw, c, hw, attn_t.data(), g_out_t.data(), g_vt.data());

    // Softmax backward per query row: ds = A .* (dA - sum(dA .* A)).
    std::vector<double> g_scores(static_cast<size_t>(hw) * hw);
    for (int a = 0; a < hw; ++a) {
      const double* arow = attn + static_cast<int64_t>(a) * hw;
      const double* darow = g_attn.data() + static_cast<int64_t>(a) * hw;
      double dot = 0.0;
      for (int b = 0; b < hw; ++b) dot += arow[b] * darow[b];
      double* srow = g_scores.data() + static_cast<int64_t>(a) * hw;
      for (int b = 0; b < hw; ++b) srow[b] = arow[b] * (darow[b] - dot) * scale;
    }

    // dQ_t = ds * K_t ; dK_t = ds^T * Q_t.
    std::vector<double> g_qt(static_cast<size_t>(hw) * c), g_kt(static_cast<size_t>(hw) * c);
    gemm_nn(hw, c, hw, g_scores.data(), k_t_.ptr() + t_off, g_qt.data());
    std::vector<double> g_scores_t(static_cast<size_t>(hw) * hw);
    for (int a = 0; a < hw; ++a)
      for (int b = 0; b < hw; ++b)
        g_scores_t[static_cast<size_t>(b) * hw + a] = g_scores[static_cast<size_t>(a) * hw + b];
    gemm_nn(hw, c, hw, g_scores_t.data(), q_t_.ptr() + t_off, g_kt.data());

    // Back to [C, HW] planes.
    for (int p = 0; p < hw; ++p) {
      for (int cc = 0; cc < c; ++cc) {
        gq.ptr()[plane_off + static_cast<int64_t>(cc) * hw + p] = g_qt[static_cast<size_t>(p) * c + cc];
        gk.ptr()[plane_off + static_cast<int64_t>(cc) * hw + p] = g_kt[static_cast<size_t>(p) * c + cc];
        gv.ptr()[plane_off + static_cast<int64_t>(cc) * hw + p] = g_vt[static_cast<size_t>(p) * c + cc];
      }
    }
  }

  Tensor g_normed = q_.backward(gq);
  const Tensor g_normed_k = k_.backward(gk);
  const Tensor g_normed_v = v_.backward(gv);
  for (int64_t i = 0; i < g_normed.numel(); ++i)
    g_normed.data[i] += g_normed_k.data[i] + g_normed_v.data[i];
  Tensor grad_in = norm_.backward(g_normed);
  for (int64_t i = 0; i < grad_in.numel(); ++i) grad_in.data[i] += grad_out.data[i];
  return grad_in;
}

}  // namespace vscc
