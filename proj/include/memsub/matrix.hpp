#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "memsub/errors.hpp"

namespace memsub {

/// Dense row-major 2-D array. Value type; every kernel below sums in a fixed
/// order that depends only on the operands' shapes, so results are
/// reproducible run to run and a row's result does not depend on which other
/// rows share the batch.
template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool same_shape(const BasicMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  template <class U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.values()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <class T>
std::string shape_str(const BasicMatrix<T>& m) {
  return shape_str(m.rows(), m.cols());
}

namespace detail {

// Dot product with eight interleaved partial sums; the reduction tree is a
// function of n only.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) noexcept {
  T acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (std::size_t u = 0; u < 8; ++u) acc[u] += a[k + u] * b[k + u];
  }
  for (; k < n; ++k) acc[k % 8] += a[k] * b[k];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

}  // namespace detail

/// a · b
template <class T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  BasicMatrix<T> c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      const T* brow = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// a · bᵀ  (b stored as out×in, the layout of every linear weight here)
template <class T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
  }
  BasicMatrix<T> c(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = detail::dot(arow, b.data() + j * k, k);
  }
  return c;
}

/// aᵀ · b
template <class T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
  }
  BasicMatrix<T> c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.cols(); ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const T ari = a(r, i);
      const T* brow = b.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ari * brow[j];
    }
  }
  return c;
}

template <class T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Adds a 1×cols row vector to every row of m.
template <class T>
void add_row_inplace(BasicMatrix<T>& m, const BasicMatrix<T>& rowvec) {
  if (rowvec.rows() != 1 || rowvec.cols() != m.cols()) {
    throw ShapeError("broadcast add: " + shape_str(rowvec) + " onto " + shape_str(m));
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rowvec.data()[j];
  }
}

template <class T>
BasicMatrix<T> column_sums(const BasicMatrix<T>& m) {
  BasicMatrix<T> s(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s.data()[j] += r[j];
  }
  return s;
}

template <class T>
BasicMatrix<T> operator+(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("add: " + shape_str(a) + " + " + shape_str(b));
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
  return a;
}

template <class T>
BasicMatrix<T> operator-(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("sub: " + shape_str(a) + " - " + shape_str(b));
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] -= b.values()[i];
  return a;
}

template <class T>
BasicMatrix<T> operator*(BasicMatrix<T> a, T s) {
  for (auto& v : a.values()) v *= s;
  return a;
}

template <class T>
BasicMatrix<T> hadamard(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("hadamard: " + shape_str(a) + " * " + shape_str(b));
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] *= b.values()[i];
  return a;
}

/// Copies rows [begin, end) into a new matrix.
template <class T>
BasicMatrix<T> slice_rows(const BasicMatrix<T>& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw IndexError("slice_rows out of range");
  BasicMatrix<T> out(end - begin, m.cols());
  std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
  return out;
}

template <class T>
double frobenius_norm(const BasicMatrix<T>& m) {
  double s = 0.0;
  for (T v : m.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <class T>
std::size_t count_nonzero(const BasicMatrix<T>& m) {
  return static_cast<std::size_t>(
      std::count_if(m.values().begin(), m.values().end(), [](T v) { return v != T{0}; }));
}

}  // namespace memsub
