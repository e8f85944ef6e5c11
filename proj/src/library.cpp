#include "lorafuse/library.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "lorafuse/digest.hpp"

namespace lorafuse {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorMatrix> as_eigen(const Matrix& m) {
  return {m.values().data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

void require_low_rank(const AdapterSet& adapter) {
  for (const auto& layer : adapter.layers()) {
    if (!layer.is_low_rank()) {
      throw StructuralError("adapter '" + adapter.adapter_id() + "' layer '" +
                            layer.layer_name() + "': rank " + std::to_string(layer.rank()) +
                            " is not below min(d, k) for shape " +
                            shape_string(layer.out_dim(), layer.in_dim()));
    }
  }
}

}  // namespace

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw UsageError("embedding: zero dimension");
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("embedding: non-finite entry");
  }
}

double Embedding::norm() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

Embedding normalized(const Embedding& e) {
  const double n = e.norm();
  if (n == 0.0) throw UsageError("cannot normalize a zero-norm embedding");
  std::vector<double> out(e.values().begin(), e.values().end());
  for (auto& v : out) v /= n;
  return Embedding(std::move(out));
}

DomainRecord::DomainRecord(std::string domain_id, Embedding centroid,
                           std::size_t sample_count,
                           std::shared_ptr<const AdapterSet> adapter,
                           std::optional<Matrix> covariance, Metadata metadata)
    : domain_id_(std::move(domain_id)),
      centroid_(std::move(centroid)),
      sample_count_(sample_count),
      adapter_(std::move(adapter)),
      covariance_(std::move(covariance)),
      metadata_(std::move(metadata)) {
  if (domain_id_.empty()) throw UsageError("domain record: empty domain id");
  if (sample_count_ < 1) {
    throw UsageError("domain record '" + domain_id_ + "': sample count must be >= 1");
  }
  if (!adapter_) throw UsageError("domain record '" + domain_id_ + "': missing adapter");
  if (centroid_.dim() == 0) {
    throw UsageError("domain record '" + domain_id_ + "': empty centroid");
  }
  if (covariance_) {
    const Matrix& cov = *covariance_;
    const std::size_t dim = centroid_.dim();
    if (cov.rows() != dim || cov.cols() != dim) {
      throw StructuralError("domain record '" + domain_id_ + "': covariance is " +
                            shape_of(cov) + ", expected " + shape_string(dim, dim));
    }
    if (!cov.all_finite()) {
      throw NumericError("domain record '" + domain_id_ + "': non-finite covariance");
    }
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = i + 1; j < dim; ++j) {
        if (std::abs(cov(i, j) - cov(j, i)) > 1e-9) {
          throw StructuralError("domain record '" + domain_id_ +
                                "': covariance is not symmetric");
        }
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(as_eigen(cov));
    if (llt.info() != Eigen::Success) {
      throw StructuralError("domain record '" + domain_id_ +
                            "': covariance is not positive definite");
    }
    const Eigen::MatrixXd lower = llt.matrixL();
    cholesky_ = Matrix(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        cholesky_(i, j) = lower(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
}

double DomainRecord::mahalanobis(std::span<const double> query) const {
  if (!covariance_) {
    throw UsageError("domain record '" + domain_id_ + "' has no covariance");
  }
  const std::size_t dim = centroid_.dim();
  if (query.size() != dim) {
    throw StructuralError("mahalanobis: query dim " + std::to_string(query.size()) +
                          " vs centroid dim " + std::to_string(dim));
  }
  // Solve L y = (q - c) by forward substitution; the distance is |y|.
  std::vector<double> y(dim);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double v = query[i] - centroid_[i];
    for (std::size_t j = 0; j < i; ++j) v -= cholesky_(i, j) * y[j];
    y[i] = v / cholesky_(i, i);
    sum_sq += y[i] * y[i];
  }
  return std::sqrt(sum_sq);
}

void AccessLog::touch(const std::string& domain_id) {
  std::lock_guard lock(mutex_);
  entries_.push_back(domain_id);
}

std::vector<std::string> AccessLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

bool AccessLog::touched(const std::string& domain_id) const {
  std::lock_guard lock(mutex_);
  return std::find(entries_.begin(), entries_.end(), domain_id) != entries_.end();
}

void AccessLog::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

const DomainRecord& Library::record(std::size_t index) const { return *record_ptr(index); }

const std::shared_ptr<const DomainRecord>& Library::record_ptr(std::size_t index) const {
  if (index >= records_.size()) {
    throw UsageError("library: record index " + std::to_string(index) + " out of range");
  }
  const auto& rec = records_[index];
  if (access_log_) access_log_->touch(rec->domain_id());
  return rec;
}

std::optional<std::size_t> Library::find(std::string_view domain_id) const noexcept {
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i]->domain_id() == domain_id) return i;
  return std::nullopt;
}

std::vector<std::string> Library::domain_ids() const {
  std::vector<std::string> ids;
  ids.reserve(records_.size());
  for (const auto& r : records_) ids.push_back(r->domain_id());
  return ids;
}

Library Library::with_access_log(std::shared_ptr<AccessLog> log) const {
  Library copy = *this;
  copy.access_log_ = std::move(log);
  return copy;
}

std::string Library::digest() const {
  Digest d;
  d.update(static_cast<std::uint64_t>(kLibraryFormatVersion));
  d.update(static_cast<std::uint64_t>(embedding_dim_));
  for (const auto& r : records_) {
    d.update(r->domain_id());
    d.update(static_cast<std::uint64_t>(r->sample_count()));
    d.update(r->centroid().values());
    const auto& adapter = r->adapter();
    d.update(adapter.adapter_id());
    for (const auto& layer : adapter.layers()) {
      d.update(layer.layer_name());
      d.update(layer.alpha());
      d.update(layer.b().values());
      d.update(layer.a().values());
    }
    if (r->covariance()) d.update(r->covariance()->values());
  }
  return d.hex();
}

Embedding compute_centroid(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw UsageError("compute_centroid: no embeddings");
  const std::size_t dim = embeddings.front().dim();
  std::vector<double> sum(dim, 0.0);
  for (const auto& e : embeddings) {
    if (e.dim() != dim) {
      throw StructuralError("compute_centroid: mixed dimensions " + std::to_string(dim) +
                            " and " + std::to_string(e.dim()));
    }
    for (std::size_t i = 0; i < dim; ++i) sum[i] += e[i];
  }
  const double n = static_cast<double>(embeddings.size());
  for (auto& v : sum) v /= n;
  return Embedding(std::move(sum));
}

Matrix compute_covariance(std::span<const Embedding> embeddings, double ridge) {
  if (embeddings.size() < 2) {
    throw UsageError("compute_covariance: need at least 2 embeddings, got " +
                     std::to_string(embeddings.size()));
  }
  if (!(ridge >= 0.0)) throw UsageError("compute_covariance: ridge must be nonnegative");
  const Embedding mean = compute_centroid(embeddings);
  const std::size_t dim = mean.dim();
  Matrix cov(dim, dim);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double di = e[i] - mean[i];
      for (std::size_t j = i; j < dim; ++j) cov(i, j) += di * (e[j] - mean[j]);
    }
  }
  const double denom = static_cast<double>(embeddings.size() - 1);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      cov(i, j) /= denom;
      cov(j, i) = cov(i, j);
    }
    cov(i, i) += ridge;
  }
  return cov;
}

DomainRecord build_record(std::string domain_id, std::span<const Embedding> embeddings,
                          std::shared_ptr<const AdapterSet> adapter,
                          const RecordOptions& options) {
  if (embeddings.empty()) {
    throw UsageError("build_record '" + domain_id + "': no embeddings");
  }
  if (!adapter) throw UsageError("build_record '" + domain_id + "': missing adapter");
  require_low_rank(*adapter);

  std::vector<Embedding> normed;
  std::span<const Embedding> source = embeddings;
  if (options.normalize) {
    normed.reserve(embeddings.size());
    for (const auto& e : embeddings) normed.push_back(normalized(e));
    source = normed;
  }

  Embedding centroid = compute_centroid(source);
  std::optional<Matrix> covariance;
  if (source.size() >= std::max<std::size_t>(options.min_samples, 2)) {
    covariance = compute_covariance(source, options.ridge);
  }
  return DomainRecord(std::move(domain_id), std::move(centroid), source.size(),
                      std::move(adapter), std::move(covariance));
}

Library extend(const Library& lib, std::shared_ptr<const DomainRecord> record) {
  if (!record) throw UsageError("extend: null record");
  const std::string& id = record->domain_id();
  if (lib.find(id)) throw UsageError("extend: duplicate domain id '" + id + "'");
  require_low_rank(record->adapter());

  if (!lib.records_.empty()) {
    if (record->centroid().dim() != lib.embedding_dim_) {
      throw StructuralError("extend '" + id + "': embedding dim " +
                            std::to_string(record->centroid().dim()) + " vs library dim " +
                            std::to_string(lib.embedding_dim_));
    }
    const auto& reference = lib.records_.front()->adapter();
    if (auto why = reference.incompatibility_with(record->adapter())) {
      throw StructuralError("extend '" + id + "': adapter incompatible with library, " + *why);
    }
  }

  Library out = lib;
  out.embedding_dim_ = record->centroid().dim();
  out.records_.push_back(std::move(record));
  return out;
}

Library extend(const Library& lib, DomainRecord record) {
  return extend(lib, std::make_shared<const DomainRecord>(std::move(record)));
}

Library exclude(const Library& lib, std::string_view domain_id) {
  const auto index = lib.find(domain_id);
  if (!index) {
    throw UsageError("exclude: unknown domain id '" + std::string(domain_id) + "'");
  }
  Library out = lib;
  out.records_.erase(out.records_.begin() + static_cast<std::ptrdiff_t>(*index));
  if (out.records_.empty()) out.embedding_dim_ = lib.embedding_dim_;
  return out;
}

}  // namespace lorafuse
