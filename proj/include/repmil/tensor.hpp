#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "repmil/error.hpp"

namespace repmil {

// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Compressed sparse rows. Instance features are overwhelmingly zero (one-hot
// gene block, hashed 3-mer embeddings), so every projection of the input
// iterates stored entries only. Dense inputs work too, just without the
// speedup.
template <typename T>
class SparseRows {
 public:
  SparseRows() = default;
  explicit SparseRows(std::size_t cols) : cols_(cols) {}

  std::size_t rows() const noexcept { return offsets_.size() - 1; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  struct RowView {
    std::span<const std::uint32_t> index;
    std::span<const T> value;
  };

  RowView row(std::size_t r) const noexcept {
    const std::size_t b = offsets_[r], e = offsets_[r + 1];
    return {{index_.data() + b, e - b}, {values_.data() + b, e - b}};
  }

  // Appends a row from a dense vector, keeping nonzero entries.
  void push_dense(std::span<const T> dense) {
    if (dense.size() != cols_) throw ShapeError("row width " + std::to_string(dense.size()) + " != " + std::to_string(cols_));
    for (std::size_t j = 0; j < dense.size(); ++j) {
      if (dense[j] != T(0)) {
        index_.push_back(static_cast<std::uint32_t>(j));
        values_.push_back(dense[j]);
      }
    }
    offsets_.push_back(values_.size());
  }

  // Appends a row given sorted, unique column indices.
  void push_sparse(std::span<const std::uint32_t> idx, std::span<const T> val) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= cols_) throw ShapeError("column index out of range");
      index_.push_back(idx[i]);
      values_.push_back(val[i]);
    }
    offsets_.push_back(values_.size());
  }

  static SparseRows from_dense(const Matrix<T>& m) {
    SparseRows s(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) s.push_dense(m.row(r));
    return s;
  }

  Matrix<T> to_dense() const {
    Matrix<T> m(rows(), cols_);
    for (std::size_t r = 0; r < rows(); ++r) {
      auto v = row(r);
      for (std::size_t i = 0; i < v.index.size(); ++i) m(r, v.index[i]) = v.value[i];
    }
    return m;
  }

  template <typename U>
  SparseRows<U> cast() const {
    SparseRows<U> out(cols_);
    out.offsets_ = offsets_;
    out.index_ = index_;
    out.values_.assign(values_.begin(), values_.end());
    return out;
  }

  // Same sparsity pattern, values replaced.
  SparseRows with_values(std::vector<T> values) const {
    SparseRows out = *this;
    out.values_ = std::move(values);
    return out;
  }

  // Rows reordered: output row i is input row order[i].
  SparseRows permuted(std::span<const std::size_t> order) const {
    SparseRows out(cols_);
    for (std::size_t r : order) {
      auto v = row(r);
      out.push_sparse(v.index, v.value);
    }
    return out;
  }

  std::span<const T> values() const noexcept { return values_; }

 private:
  template <typename U>
  friend class SparseRows;

  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> index_;
  std::vector<T> values_;
};

}  // namespace repmil
