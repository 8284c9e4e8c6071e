#include "vscc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vscc {

namespace {
int64_t shape_numel(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::uninit(std::vector<int> s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.resize(static_cast<size_t>(shape_numel(t.shape)));
  return t;
}

Tensor Tensor::full(std::vector<int> s, double value) {
  Tensor t(std::move(s));
  t.fill(value);
  return t;
}

void Tensor::fill(double value) {
  for (auto& v : data) v = value;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                shape_string(a) + " vs " + shape_string(b));
  }
}

namespace {

// Register-tiled kernel: a 4-row by 16-column C tile is held in
// registers across the whole K loop, so each B load feeds four FMAs.
template <int Rows>
inline void gemm_nn_tile(int n, int k, const double* a, int lda, const double* b, double* c,
                         int ldc, bool accumulate, int j0, int jw) {
  constexpr int kJw = 16;
  if (jw == kJw) {
    double acc[Rows][kJw];
    for (int r = 0; r < Rows; ++r)
      for (int j = 0; j < kJw; ++j)
        acc[r][j] = accumulate ? c[static_cast<int64_t>(r) * ldc + j0 + j] : 0.0;
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = b + static_cast<int64_t>(kk) * n + j0;
      for (int r = 0; r < Rows; ++r) {
        const double av = a[static_cast<int64_t>(r) * lda + kk];
#pragma omp simd
        for (int j = 0; j < kJw; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (int r = 0; r < Rows; ++r)
      for (int j = 0; j < kJw; ++j) c[static_cast<int64_t>(r) * ldc + j0 + j] = acc[r][j];
  } else {
    // Column remainder, same structure with a runtime width.
    for (int r = 0; r < Rows; ++r) {
      double* crow = c + static_cast<int64_t>(r) * ldc + j0;
      if (!accumulate)
        for (int j = 0; j < jw; ++j) crow[j] = 0.0;
      for (int kk = 0; kk < k; ++kk) {
        const double av = a[static_cast<int64_t>(r) * lda + kk];
        const double* brow = b + static_cast<int64_t>(kk) * n + j0;
#pragma omp simd
        for (int j = 0; j < jw; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c,
             bool accumulate) {
  constexpr int kJw = 16;
  for (int j0 = 0; j0 < n; j0 += kJw) {
    const int jw = std::min(kJw, n - j0);
    int i = 0;
    for (; i + 4 <= m; i += 4)
      gemm_nn_tile<4>(n, k, a + static_cast<int64_t>(i) * k, k, b,
                      c + static_cast<int64_t>(i) * n, n, accumulate, j0, jw);
    for (; i < m; ++i)
      gemm_nn_tile<1>(n, k, a + static_cast<int64_t>(i) * k, k, b,
                      c + static_cast<int64_t>(i) * n, n, accumulate, j0, jw);
  }
}

namespace {

// 2x4 tile of dot products; eight vector accumulators share the A loads.
template <int Ar, int Br>
inline void gemm_nt_tile(int n, int k, const double* a, int lda, const double* b, int ldb,
                         double* c, int ldc, bool accumulate) {
  constexpr int kVw = 8;
  double acc[Ar][Br][kVw] = {};
  int kk = 0;
  for (; kk + kVw <= k; kk += kVw) {
    for (int i = 0; i < Ar; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * lda + kk;
      for (int j = 0; j < Br; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * ldb + kk;
#pragma omp simd
        for (int v = 0; v < kVw; ++v) acc[i][j][v] += arow[v] * brow[v];
      }
    }
  }
  for (int i = 0; i < Ar; ++i) {
    for (int j = 0; j < Br; ++j) {
      double sum = 0.0;
      for (int v = 0; v < kVw; ++v) sum += acc[i][j][v];
      for (int r = kk; r < k; ++r)
        sum += a[static_cast<int64_t>(i) * lda + r] * b[static_cast<int64_t>(j) * ldb + r];
      double* slot = c + static_cast<int64_t>(i) * ldc + j;
      *slot = accumulate ? *slot + sum : sum;
    }
  }
}

}  // namespace

void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c,
             bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    int j = 0;
    for (; j + 4 <= n; j += 4)
      gemm_nt_tile<4, 4>(n, k, a + static_cast<int64_t>(i) * k, k,
                         b + static_cast<int64_t>(j) * k, k, c + static_cast<int64_t>(i) * n + j,
                         n, accumulate);
    for (; j < n; ++j)
      gemm_nt_tile<4, 1>(n, k, a + static_cast<int64_t>(i) * k, k,
                         b + static_cast<int64_t>(j) * k, k, c + static_cast<int64_t>(i) * n + j,
                         n, accumulate);
  }
  for (; i < m; ++i) {
    int j = 0;
    for (; j + 4 <= n; j += 4)
      gemm_nt_tile<1, 4>(n, k, a + static_cast<int64_t>(i) * k, k,
                         b + static_cast<int64_t>(j) * k, k, c + static_cast<int64_t>(i) * n + j,
                         n, accumulate);
    for (; j < n; ++j)
      gemm_nt_tile<1, 1>(n, k, a + static_cast<int64_t>(i) * k, k,
                         b + static_cast<int64_t>(j) * k, k, c + static_cast<int64_t>(i) * n + j,
                         n, accumulate);
  }
}

}  // namespace vscc
