#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "stnl/rng.hpp"

namespace stnl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense N-dimensional array, row-major with the last dimension fastest.
/// A rank-0 tensor is a scalar and holds exactly one element. Dimensions of
/// size zero are permitted (empty batches); such tensors hold no data.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires a floating-point element type");

 public:
  Tensor() : shape_{}, data_(1, T{}) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T{}) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_)) {
      throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor scalar(T value) {
    Tensor t;
    t.data_[0] = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Ix>
  T& operator()(Ix... ix) {
    return data_[flat_index(ix...)];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const {
    return data_[flat_index(ix...)];
  }

  /// Row-major strides, in elements.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(T)) == 0;
  }

 private:
  template <typename... Ix>
  std::size_t flat_index(Ix... ix) const {
    static_assert((std::is_convertible_v<Ix, std::size_t> && ...));
    const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
    std::size_t flat = 0;
    for (std::size_t i = 0; i < sizeof...(Ix); ++i) flat = flat * shape_[i] + idx[i];
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

// ---- elementwise operations -------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <typename T>
void axpy_inplace(Tensor<T>& a, T s, const Tensor<T>& b) {
  check_same_shape(a, b, "axpy_inplace");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += s * b[i];
}

template <typename T>
void fill(Tensor<T>& a, T value) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = value;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T alpha) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] >= T(0) ? a[i] : alpha * a[i];
  return out;
}

/// Adjoint of leaky_relu; the subgradient at 0 uses the positive branch.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x, T alpha) {
  check_same_shape(grad_out, x, "leaky_relu_backward");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] >= T(0) ? grad_out[i] : alpha * grad_out[i];
  return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(a[i] > T(0))) {
      throw std::domain_error("log: non-positive element " + std::to_string(a[i]) + " at index " +
                              std::to_string(i));
    }
    out[i] = std::log(a[i]);
  }
  return out;
}

// ---- matrix operations ------------------------------------------------------

/// Matrix product of a [M x K] and b [K x N]. Accumulation runs over k in
/// ascending order per output element, so results are reproducible against a
/// naive triple-loop reference bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const T av = ap[i * k + l];
      const T* brow = bp + l * n;
      T* orow = op + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank 2, got " + shape_string(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

/// Row-wise softmax with max subtraction. Each output row is nonnegative and
/// sums to one for any finite input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) {
    throw std::invalid_argument("softmax_rows: expected rank 2, got " + shape_string(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data() + i * n;
    T* orow = out.data() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= denom;
  }
  return out;
}

// ---- reductions ---------------------------------------------------------------

enum class ReduceOp { Sum, Mean, Max, Argmax };

/// Reduce one axis away. Summation runs in ascending index order; max and
/// argmax break ties toward the lowest index.
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceOp op, std::size_t axis) {
  if (axis >= x.rank()) {
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_string(x.shape()));
  }
  const std::size_t len = x.dim(axis);
  if (len == 0) throw std::invalid_argument("reduce: empty axis " + std::to_string(axis));

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  Tensor<T> out(out_shape);

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T acc;
      std::size_t arg = 0;
      if (op == ReduceOp::Sum || op == ReduceOp::Mean) {
        acc = T(0);
        for (std::size_t j = 0; j < len; ++j) acc += x[base + j * inner];
        if (op == ReduceOp::Mean) acc /= static_cast<T>(len);
      } else {
        acc = x[base];
        for (std::size_t j = 1; j < len; ++j) {
          const T v = x[base + j * inner];
          if (v > acc) {
            acc = v;
            arg = j;
          }
        }
        if (op == ReduceOp::Argmax) acc = static_cast<T>(arg);
      }
      out[o * inner + in] = acc;
    }
  }
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  return acc;
}

template <typename T>
T mean_all(const Tensor<T>& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return sum_all(x) / static_cast<T>(x.numel());
}

// ---- shape manipulation -----------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                shape_string(shape));
  }
  Tensor<T> out(std::move(shape));
  std::copy(x.data(), x.data() + x.numel(), out.data());
  return out;
}

// ---- random fills -------------------------------------------------------------

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, T mean = T(0), T sigma = T(1)) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.gauss(static_cast<double>(mean), static_cast<double>(sigma)));
  return t;
}

template <typename U, typename T>
Tensor<U> cast_tensor(const Tensor<T>& x) {
  Tensor<U> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = static_cast<U>(x[i]);
  return out;
}

}  // namespace stnl
