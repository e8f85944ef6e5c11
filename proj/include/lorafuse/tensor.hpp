#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lorafuse/errors.hpp"

namespace lorafuse {

// Dense row-major matrix. Library payloads use the float instantiation;
// arithmetic on deltas and merges is carried out on the double one.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols);
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static BasicMatrix identity(std::size_t n);
  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool all_finite() const noexcept;
  bool same_shape(const BasicMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

extern template class BasicMatrix<double>;
extern template class BasicMatrix<float>;

std::string shape_string(std::size_t rows, std::size_t cols);

template <typename T>
std::string shape_of(const BasicMatrix<T>& m) {
  return shape_string(m.rows(), m.cols());
}

// Product with a fixed summation order: each output entry accumulates its
// dot product left to right, so results are reproducible bit for bit.
Matrix matmul(const Matrix& x, const Matrix& y);

// acc + scale * x, elementwise.
Matrix axpy_accumulate(Matrix acc, double scale, const Matrix& x);

Matrix transpose(const Matrix& m);
Matrix scaled(Matrix m, double factor);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);
double max_abs_difference(const Matrix& a, const Matrix& b);

// Horizontal / vertical concatenation; all parts must agree on the shared
// dimension.
Matrix hstack(std::span<const Matrix> parts);
Matrix vstack(std::span<const Matrix> parts);

// One adapted layer: delta = (alpha / rank) * B * A with B d x r and A r x k.
class LoraPair {
 public:
  LoraPair(std::string layer_name, MatrixF b, MatrixF a, double alpha);
  LoraPair(std::string layer_name, MatrixF b, MatrixF a, std::size_t rank, double alpha);

  const std::string& layer_name() const noexcept { return layer_name_; }
  const MatrixF& b() const noexcept { return b_; }
  const MatrixF& a() const noexcept { return a_; }
  std::size_t rank() const noexcept { return b_.cols(); }
  double alpha() const noexcept { return alpha_; }
  std::size_t out_dim() const noexcept { return b_.rows(); }  // d
  std::size_t in_dim() const noexcept { return a_.cols(); }   // k
  double scaling() const noexcept { return alpha_ / static_cast<double>(rank()); }

  // rank strictly below min(d, k)
  bool is_low_rank() const noexcept;

  Matrix delta(bool apply_scaling) const;

  friend bool operator==(const LoraPair&, const LoraPair&) = default;

 private:
  std::string layer_name_;
  MatrixF b_;
  MatrixF a_;
  double alpha_;
};

Matrix delta(const LoraPair& pair, bool apply_scaling);

using Metadata = std::map<std::string, std::string>;

// Every adapted layer of one host model, in host order.
class AdapterSet {
 public:
  AdapterSet(std::string adapter_id, std::vector<LoraPair> layers, Metadata metadata = {});

  const std::string& adapter_id() const noexcept { return adapter_id_; }
  const std::vector<LoraPair>& layers() const noexcept { return layers_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  const LoraPair* find(std::string_view layer_name) const noexcept;
  const LoraPair& layer(std::string_view layer_name) const;

  // Empty when both sets have identical layer names, shapes, ranks and alpha;
  // otherwise a description of the first disagreement.
  std::optional<std::string> incompatibility_with(const AdapterSet& other) const;

  friend bool operator==(const AdapterSet&, const AdapterSet&) = default;

 private:
  std::string adapter_id_;
  std::vector<LoraPair> layers_;
  Metadata metadata_;
};

}  // namespace lorafuse
