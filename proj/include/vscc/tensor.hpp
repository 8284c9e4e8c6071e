#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace vscc {

// Leaves doubles default-initialized so buffers that are fully
// overwritten (conv outputs, activation maps) skip the zeroing pass.
template <typename T>
struct NoInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using DataVector = std::vector<double, NoInitAllocator<double>>;

// Dense row-major tensor of doubles, up to 4 dimensions. All network
// activations use NCHW layout. The (shape) constructor zero-fills;
// uninit() does not.
struct Tensor {
  std::vector<int> shape;
  DataVector data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor uninit(std::vector<int> s);
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double value);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  // NCHW accessors (shape must be 4-d).
  double& at(int n, int c, int h, int w) {
    return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void fill(double value);
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

std::string shape_string(const Tensor& t);

// Throws std::invalid_argument naming `where` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

// C[M,N] = A[M,K] * B[K,N] (row-major, contiguous). accumulate=true adds
// into C instead of overwriting. Single-threaded; callers parallelize
// over independent problems.
void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c,
             bool accumulate = false);

// C[M,N] = A[M,K] * B[N,K]^T (both operands row-major).
void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c,
             bool accumulate = false);

}  // namespace vscc
