#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "planforge/error.hpp"

namespace planforge::diffmath {

using Real = double;

/// Dense row-major matrix of 64-bit reals. Zero-sized dimensions are allowed
/// so that fully pruned blocks still have well-formed (empty) weights.
class Tensor2 {
 public:
  Tensor2() = default;

  Tensor2(std::size_t rows, std::size_t cols, Real fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor2(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<Real> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("Tensor2::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2(r, c, std::move(data));
  }

  static Tensor2 scalar(Real v) { return Tensor2(1, 1, v); }

  static Tensor2 row_vector(std::span<const Real> values) {
    return Tensor2(1, values.size(), std::vector<Real>(values.begin(), values.end()));
  }

  static Tensor2 column_vector(std::span<const Real> values) {
    return Tensor2(values.size(), 1, std::vector<Real>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Value of a 1x1 tensor.
  Real item() const {
    if (size() != 1) throw DimensionError("Tensor2::item on non-scalar tensor");
    return data_[0];
  }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor2&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

inline std::string shape_string(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

/// a (m x k) times b (k x n).
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a) + " x " + shape_string(b));
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Real* o = out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const Real aik = a(i, k);
      if (aik == 0.0) continue;
      const Real* brow = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

/// a (m x k) times b^T where b is (n x k). Linear layers store weights as
/// (out x in), so this is the layer application x W^T.
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(a) + " x " + shape_string(b) + "^T");
  }
  Tensor2 out(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Real* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const Real* brow = b.data().data() + j * k;
      Real acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      out(i, j) = acc;
    }
  }
  return out;
}

/// a^T (k x m)^T times b (k x n) -> (m x n).
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_string(a) + "^T x " + shape_string(b));
  }
  Tensor2 out(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const Real ati = a(t, i);
      if (ati == 0.0) continue;
      Real* o = out.data().data() + i * out.cols();
      const Real* brow = b.data().data() + t * b.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += ati * brow[j];
    }
  }
  return out;
}

inline Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace planforge::diffmath
