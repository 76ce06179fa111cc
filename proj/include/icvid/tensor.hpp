#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "icvid/errors.hpp"

namespace icvid {

// Dense row-major tensor. 32-bit storage is the training/sampling default;
// 64-bit instantiations back gradient checks and bitwise-reproducibility
// tests. Values are immutable by convention once an op has produced them.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
  }
  Tensor(std::vector<int64_t> shape, T fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
  }
  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
      throw ShapeError("tensor data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeError("non-positive dimension in tensor shape");
      n *= d;
    }
    return n;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  // 2D conveniences (most of the model runs on [rows x cols] views).
  int64_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_shape(); }
  int64_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_shape(); }
  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  T at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  Tensor<T> reshaped(std::vector<int64_t> new_shape) const {
    if (numel_of(new_shape) != numel())
      throw ShapeError("reshape changes element count");
    Tensor<T> out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i)
      out.data()[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool same_shape(const Tensor<T>& o) const { return shape_ == o.shape_; }

 private:
  [[noreturn]] static int64_t throw_shape() {
    throw ShapeError("expected a 2D tensor");
  }
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <class T>
inline std::string shape_str(const Tensor<T>& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

template <class T>
inline void require_2d(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected 2D tensor");
}

// C[m x n] = A[m x k] * B[k x n]. ikj loop order: the inner j-loop is
// contiguous over both B and C, which is what the hot path needs on one core.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul lhs");
  require_2d(b, "matmul rhs");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a) +
                     " vs " + shape_str(b));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (int64_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      const T* brow = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C[m x n] = A[m x k] * B[n x k]^T. Used for attention scores (Q K^T); both
// inner loops run contiguously.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_nt lhs");
  require_2d(b, "matmul_nt rhs");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dimensions disagree " + shape_str(a) +
                     " vs " + shape_str(b));
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    T* crow = c.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  }
  return c;
}

// C[k x n] = A[m x k]^T * B[m x n]. Backward passes of matmul need this; the
// accumulation order keeps both inner loops contiguous.
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_tn lhs");
  require_2d(b, "matmul_tn rhs");
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: outer dimensions disagree " + shape_str(a) +
                     " vs " + shape_str(b));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({k, n});
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    const T* brow = b.data() + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      T* crow = c.data() + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_2d(a, "transpose");
  Tensor<T> out({a.cols(), a.rows()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// Softmax over the last axis with max-subtraction for stability.
template <class T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  for (int64_t i = 0; i < rows; ++i) {
    const T* in = x.data() + i * cols;
    T* o = out.data() + i * cols;
    T mx = in[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (int64_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < cols; ++j) o[j] *= inv;
  }
  return out;
}

// Row-wise layer norm over the last axis; eps is fixed at 1e-5 by the callers
// that matter, but stays a parameter for the oracle tests.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  const int64_t cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols)
    throw ShapeError("layer_norm: gain/bias length must equal last axis");
  const int64_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < rows; ++i) {
    const T* in = x.data() + i * cols;
    T* o = out.data() + i * cols;
    T mean = 0;
    for (int64_t j = 0; j < cols; ++j) mean += in[j];
    mean /= T(cols);
    T var = 0;
    for (int64_t j = 0; j < cols; ++j) {
      const T d = in[j] - mean;
      var += d * d;
    }
    var /= T(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j)
      o[j] = (in[j] - mean) * inv * gain.data()[j] + bias.data()[j];
  }
  return out;
}

template <class T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                   : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] * sigmoid(x.data()[i]);
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

// Broadcast a [1 x d] (or length-d) vector over the rows of x.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  const int64_t cols = x.shape().back();
  if (v.numel() != cols) throw ShapeError("add_rowvec: length mismatch");
  Tensor<T> out(x.shape());
  const int64_t rows = x.numel() / cols;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out.data()[i * cols + j] = x.data()[i * cols + j] + v.data()[j];
  return out;
}

template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  const int64_t cols = x.shape().back();
  if (v.numel() != cols) throw ShapeError("mul_rowvec: length mismatch");
  Tensor<T> out(x.shape());
  const int64_t rows = x.numel() / cols;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out.data()[i * cols + j] = x.data()[i * cols + j] * v.data()[j];
  return out;
}

template <class T>
T mean_all(const Tensor<T>& x) {
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  return acc / T(x.numel());
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + s;
  return out;
}

// Rotates adjacent column pairs by per-element angles given as cos/sin
// tables of shape [rows x cols/2] (rotary position embedding workhorse).
template <class T>
Tensor<T> rotate_pairs(const Tensor<T>& x, const Tensor<T>& cos_t,
                       const Tensor<T>& sin_t) {
  require_2d(x, "rotate_pairs");
  const int64_t rows = x.rows(), cols = x.cols();
  if (cols % 2 != 0 || cos_t.rows() != rows || cos_t.cols() != cols / 2 ||
      !cos_t.same_shape(sin_t))
    throw ShapeError("rotate_pairs: cos/sin tables must be [rows x cols/2]");
  Tensor<T> out({rows, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols / 2; ++j) {
      const T c = cos_t.at(i, j), s = sin_t.at(i, j);
      const T x0 = x.at(i, 2 * j), x1 = x.at(i, 2 * j + 1);
      out.at(i, 2 * j) = x0 * c - x1 * s;
      out.at(i, 2 * j + 1) = x0 * s + x1 * c;
    }
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, int64_t r0, int64_t r1) {
  require_2d(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("slice_rows: bad range");
  Tensor<T> out({r1 - r0, x.cols()});
  std::copy(x.data() + r0 * x.cols(), x.data() + r1 * x.cols(), out.data());
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t c0, int64_t c1) {
  require_2d(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad range");
  Tensor<T> out({x.rows(), c1 - c0});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  int64_t rows = 0;
  const int64_t cols = parts[0].cols();
  for (const Tensor<T>& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor<T> out({rows, cols});
  int64_t r = 0;
  for (const Tensor<T>& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + r * cols);
    r += p.rows();
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rows = parts[0].rows();
  int64_t cols = 0;
  for (const Tensor<T>& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor<T> out({rows, cols});
  int64_t c = 0;
  for (const Tensor<T>& p : parts) {
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < p.cols(); ++j) out.at(i, c + j) = p.at(i, j);
    c += p.cols();
  }
  return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  require_2d(table, "gather_rows");
  Tensor<T> out({static_cast<int64_t>(ids.size()), table.cols()});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw ShapeError("gather_rows: id out of range");
    std::copy(table.data() + static_cast<int64_t>(ids[i]) * table.cols(),
              table.data() + static_cast<int64_t>(ids[i] + 1) * table.cols(),
              out.data() + static_cast<int64_t>(i) * table.cols());
  }
  return out;
}

template <class T>
Tensor<T> broadcast_row(const Tensor<T>& v, int64_t rows) {
  const int64_t cols = v.numel();
  Tensor<T> out({rows, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) = v.data()[j];
  return out;
}

template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_2d(x, "mean_rows");
  Tensor<T> out({int64_t{1}, x.cols()});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) out.at(0, j) += x.at(i, j);
  for (int64_t j = 0; j < x.cols(); ++j) out.at(0, j) /= T(x.rows());
  return out;
}

template <class T>
T mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  T acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<T>(a.numel());
}

template <class T>
bool all_finite(const Tensor<T>& x) {
  for (int64_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(x.data()[i])) return false;
  return true;
}

template <class T>
void assert_finite(const Tensor<T>& x, const char* what,
                   long long step = -1) {
  if (!all_finite(x))
    throw NumericError(std::string("non-finite values in ") + what, step);
}

}  // namespace icvid
