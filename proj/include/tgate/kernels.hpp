#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <string_view>

#include "tgate/tensor.hpp"

namespace tgate {

/// Tally of scalar multiply-accumulates, keyed by operation label.
/// Only matmuls report here; elementwise ops, softmax and normalization are free.
class MacCounter {
 public:
  void add(std::string_view label, std::uint64_t macs) {
    total_ += macs;
    per_label_[std::string(label)] += macs;
  }

  std::uint64_t total() const { return total_; }
  std::uint64_t of(std::string_view label) const {
    auto it = per_label_.find(std::string(label));
    return it == per_label_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::uint64_t>& per_label() const { return per_label_; }

  void reset() {
    total_ = 0;
    per_label_.clear();
  }

  MacCounter& operator+=(const MacCounter& other) {
    for (const auto& [label, n] : other.per_label_) add(label, n);
    return *this;
  }

 private:
  std::uint64_t total_ = 0;
  std::map<std::string, std::uint64_t> per_label_;
};

namespace detail {

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__)
#define TGATE_KERNEL_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define TGATE_KERNEL_CLONES
#endif

using f32x8 = float __attribute__((vector_size(32)));

// c += a·b over raw row-major buffers. Register tile of 4 rows × 16 columns;
// each element still accumulates its products in ascending k with one rounded
// multiply and one rounded add per term, so the tiled result is bit-identical
// to the scalar triple loop whatever vector width the compiler picks.
TGATE_KERNEL_CLONES
inline void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m,
                            std::size_t kk, std::size_t n) {
  constexpr std::size_t kRows = 4, kCols = 16;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      f32x8 acc[kRows][2];
      for (std::size_t r = 0; r < kRows; ++r) {
        __builtin_memcpy(&acc[r][0], c + (i + r) * n + j, sizeof(f32x8));
        __builtin_memcpy(&acc[r][1], c + (i + r) * n + j + 8, sizeof(f32x8));
      }
      for (std::size_t k = 0; k < kk; ++k) {
        f32x8 b0, b1;
        __builtin_memcpy(&b0, b + k * n + j, sizeof(f32x8));
        __builtin_memcpy(&b1, b + k * n + j + 8, sizeof(f32x8));
        for (std::size_t r = 0; r < kRows; ++r) {
          const float av = a[(i + r) * kk + k];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        __builtin_memcpy(c + (i + r) * n + j, &acc[r][0], sizeof(f32x8));
        __builtin_memcpy(c + (i + r) * n + j + 8, &acc[r][1], sizeof(f32x8));
      }
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < kRows; ++r) {
        float acc = c[(i + r) * n + j];
        for (std::size_t k = 0; k < kk; ++k) acc += a[(i + r) * kk + k] * b[k * n + j];
        c[(i + r) * n + j] = acc;
      }
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      float acc = c[i * n + j];
      for (std::size_t k = 0; k < kk; ++k) acc += a[i * kk + k] * b[k * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace detail

/// C = A·B for A (m×k) and B (k×n). Every output element is the f32 sum of its
/// k products taken in ascending k order, starting from zero.
inline Tensor matmul(const Tensor& a, const Tensor& b, MacCounter* counter = nullptr,
                     std::string_view label = "matmul") {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
  if (b.rows() != kk) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " +
                     shape_str(b.shape()));
  }
  Tensor c({m, n});
  detail::gemm_accumulate(a.ptr(), b.ptr(), c.ptr(), m, kk, n);
  if (counter) counter->add(label, static_cast<std::uint64_t>(m) * kk * n);
  require_finite(c, "matmul output");
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t.at(c, r) = a.at(r, c);
  return t;
}

// Columns [begin, begin+count) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_cols");
  if (begin + count > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  Tensor s({a.rows(), count});
  for (std::size_t r = 0; r < a.rows(); ++r)
    std::copy_n(a.row(r).begin() + static_cast<std::ptrdiff_t>(begin), count, s.row(r).begin());
  return s;
}

inline void write_cols(Tensor& dst, std::size_t begin, const Tensor& src) {
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols())
    throw ShapeError("write_cols: block does not fit");
  for (std::size_t r = 0; r < src.rows(); ++r)
    std::copy(src.row(r).begin(), src.row(r).end(),
              dst.row(r).begin() + static_cast<std::ptrdiff_t>(begin));
}

/// Row-wise softmax with per-row max subtraction; exponentials and the
/// normalizer are evaluated in double, then rounded once.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  require_finite(x, "softmax input");
  Tensor y(x.shape());
  std::vector<double> e(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const float mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      e[c] = std::exp(static_cast<double>(in[c]) - mx);
      z += e[c];
    }
    auto out = y.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = static_cast<float>(e[c] / z);
  }
  return y;
}

inline constexpr float kLayerNormEps = 1e-5f;

/// Normalizes each row of x to zero mean and unit variance, then applies the
/// per-column affine (gain, bias). Statistics are computed in double.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  detail::require_matrix(x, "layernorm");
  const std::size_t d = x.cols();
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layernorm: affine parameters must have " + std::to_string(d) + " entries");
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mu = 0.0;
    for (float v : in) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (float v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = y.row(r);
    for (std::size_t c = 0; c < d; ++c)
      out[c] = static_cast<float>((in[c] - mu) * inv) * gain[c] + bias[c];
  }
  require_finite(y, "layernorm output");
  return y;
}

// Exact-erf GELU: x/2 · (1 + erf(x/√2)).
inline float gelu(float x) {
  const double xd = x;
  return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd / std::numbers::sqrt2)));
}

inline Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = gelu(x[i]);
  return y;
}

inline void add_inplace(Tensor& acc, const Tensor& x) {
  require_same_shape(acc, x, "add");
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += x[i];
}

inline Tensor add(Tensor a, const Tensor& b) {
  add_inplace(a, b);
  return a;
}

inline void scale_inplace(Tensor& t, float s) {
  for (float& v : t.data()) v *= s;
}

// Adds the row vector v to every row of the matrix.
inline void add_row_inplace(Tensor& m, std::span<const float> v) {
  if (v.size() != m.cols()) throw ShapeError("add_row: width mismatch");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < v.size(); ++c) row[c] += v[c];
  }
}

}  // namespace tgate
