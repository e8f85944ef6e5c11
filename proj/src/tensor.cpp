#include "lorafuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace lorafuse {

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw StructuralError("matrix data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(rows, cols));
  }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::identity(std::size_t n) {
  BasicMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
  return m;
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::from_rows(
    std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw StructuralError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicMatrix(r, c, std::move(data));
}

template <typename T>
bool BasicMatrix<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template class BasicMatrix<double>;
template class BasicMatrix<float>;

std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw StructuralError(std::string(op) + ": shape mismatch " + shape_of(a) +
                          " vs " + shape_of(b));
  }
}

}  // namespace

Matrix matmul(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.rows()) {
    throw StructuralError("matmul: inner dimensions differ, " + shape_of(x) +
                          " times " + shape_of(y));
  }
  const std::size_t n = x.rows(), m = y.cols(), inner = x.cols();
  const Matrix yt = transpose(y);
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xr = x.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto yc = yt.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < inner; ++p) s += xr[p] * yc[p];
      out(i, j) = s;
    }
  }
  return out;
}

Matrix axpy_accumulate(Matrix acc, double scale, const Matrix& x) {
  require_same_shape(acc, x, "axpy_accumulate");
  auto dst = acc.values();
  const auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  return acc;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix scaled(Matrix m, double factor) {
  for (auto& v : m.values()) v *= factor;
  return m;
}

Matrix add(const Matrix& a, const Matrix& b) { return axpy_accumulate(a, 1.0, b); }

Matrix subtract(const Matrix& a, const Matrix& b) {
  return axpy_accumulate(a, -1.0, b);
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

double max_abs_difference(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_difference");
  double worst = 0.0;
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    worst = std::max(worst, std::abs(av[i] - bv[i]));
  return worst;
}

Matrix hstack(std::span<const Matrix> parts) {
  if (parts.empty()) throw UsageError("hstack: nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw StructuralError("hstack: row count " + std::to_string(p.rows()) +
                            " differs from " + std::to_string(rows));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.row(i).begin(), p.row(i).end(), out.row(i).begin() + offset);
    offset += p.cols();
  }
  return out;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) throw UsageError("vstack: nothing to concatenate");
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw StructuralError("vstack: column count " + std::to_string(p.cols()) +
                            " differs from " + std::to_string(cols));
    }
    data.insert(data.end(), p.values().begin(), p.values().end());
    rows += p.rows();
  }
  return Matrix(rows, cols, std::move(data));
}

LoraPair::LoraPair(std::string layer_name, MatrixF b, MatrixF a, double alpha)
    : layer_name_(std::move(layer_name)), b_(std::move(b)), a_(std::move(a)), alpha_(alpha) {
  if (layer_name_.empty()) throw UsageError("lora pair: empty layer name");
  if (b_.empty() || a_.empty()) {
    throw StructuralError("lora pair '" + layer_name_ + "': empty factor");
  }
  if (b_.cols() != a_.rows()) {
    throw StructuralError("lora pair '" + layer_name_ + "': B is " + shape_of(b_) +
                          " but A is " + shape_of(a_));
  }
  if (rank() > std::min(out_dim(), in_dim())) {
    throw StructuralError("lora pair '" + layer_name_ + "': rank " +
                          std::to_string(rank()) + " exceeds min(d, k)");
  }
  if (!(alpha_ > 0.0) || !std::isfinite(alpha_)) {
    throw UsageError("lora pair '" + layer_name_ + "': alpha must be positive");
  }
  if (!b_.all_finite() || !a_.all_finite()) {
    throw NumericError("lora pair '" + layer_name_ + "': non-finite factor entries");
  }
}

LoraPair::LoraPair(std::string layer_name, MatrixF b, MatrixF a, std::size_t rank,
                   double alpha)
    : LoraPair(std::move(layer_name), std::move(b), std::move(a), alpha) {
  if (this->rank() != rank) {
    throw StructuralError("lora pair '" + layer_name_ + "': declared rank " +
                          std::to_string(rank) + " but factors have rank " +
                          std::to_string(this->rank()));
  }
}

bool LoraPair::is_low_rank() const noexcept {
  return rank() < std::min(out_dim(), in_dim());
}

Matrix LoraPair::delta(bool apply_scaling) const {
  Matrix d = matmul(b_.cast<double>(), a_.cast<double>());
  return apply_scaling ? scaled(std::move(d), scaling()) : d;
}

Matrix delta(const LoraPair& pair, bool apply_scaling) { return pair.delta(apply_scaling); }

AdapterSet::AdapterSet(std::string adapter_id, std::vector<LoraPair> layers,
                       Metadata metadata)
    : adapter_id_(std::move(adapter_id)),
      layers_(std::move(layers)),
      metadata_(std::move(metadata)) {
  if (adapter_id_.empty()) throw UsageError("adapter set: empty adapter id");
  if (layers_.empty()) {
    throw StructuralError("adapter set '" + adapter_id_ + "': no layers");
  }
  std::set<std::string> seen;
  for (const auto& l : layers_) {
    if (!seen.insert(l.layer_name()).second) {
      throw StructuralError("adapter set '" + adapter_id_ + "': duplicate layer '" +
                            l.layer_name() + "'");
    }
  }
}

const LoraPair* AdapterSet::find(std::string_view layer_name) const noexcept {
  for (const auto& l : layers_)
    if (l.layer_name() == layer_name) return &l;
  return nullptr;
}

const LoraPair& AdapterSet::layer(std::string_view layer_name) const {
  if (const auto* p = find(layer_name)) return *p;
  throw UsageError("adapter set '" + adapter_id_ + "': no layer '" +
                   std::string(layer_name) + "'");
}

std::optional<std::string> AdapterSet::incompatibility_with(const AdapterSet& other) const {
  if (layers_.size() != other.layers_.size()) {
    return "layer count " + std::to_string(other.layers_.size()) + " vs " +
           std::to_string(layers_.size());
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& mine = layers_[i];
    const auto& theirs = other.layers_[i];
    const std::string where = "layer '" + mine.layer_name() + "'";
    if (mine.layer_name() != theirs.layer_name()) {
      return "layer " + std::to_string(i) + " is '" + theirs.layer_name() +
             "', expected '" + mine.layer_name() + "'";
    }
    if (mine.rank() != theirs.rank()) {
      return where + ": rank " + std::to_string(theirs.rank()) + " vs " +
             std::to_string(mine.rank());
    }
    if (mine.out_dim() != theirs.out_dim() || mine.in_dim() != theirs.in_dim()) {
      return where + ": shape " + shape_string(theirs.out_dim(), theirs.in_dim()) +
             " vs " + shape_string(mine.out_dim(), mine.in_dim());
    }
    if (mine.alpha() != theirs.alpha()) {
      std::ostringstream os;
      os << where << ": alpha " << theirs.alpha() << " vs " << mine.alpha();
      return os.str();
    }
  }
  return std::nullopt;
}

}  // namespace lorafuse
