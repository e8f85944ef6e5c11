#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lorafuse/tensor.hpp"

namespace lorafuse {

inline constexpr int kLibraryFormatVersion = 1;

// A point in the navigator embedding space (an image or a domain centroid).
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const noexcept;

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

// Unit-norm copy; zero vectors are a usage error.
Embedding normalized(const Embedding& e);

struct RecordOptions {
  double ridge = 1e-4;
  // Below this many samples no covariance is kept and the record is skipped
  // under the Mahalanobis metric.
  std::size_t min_samples = 500;
  bool normalize = false;
};

// One library entry: where the domain sits in embedding space and the
// adapter trained on it. Raw embeddings are never retained.
class DomainRecord {
 public:
  DomainRecord(std::string domain_id, Embedding centroid, std::size_t sample_count,
               std::shared_ptr<const AdapterSet> adapter,
               std::optional<Matrix> covariance = std::nullopt, Metadata metadata = {});

  const std::string& domain_id() const noexcept { return domain_id_; }
  const Embedding& centroid() const noexcept { return centroid_; }
  std::size_t sample_count() const noexcept { return sample_count_; }
  const AdapterSet& adapter() const noexcept { return *adapter_; }
  const std::shared_ptr<const AdapterSet>& adapter_ptr() const noexcept { return adapter_; }
  const std::optional<Matrix>& covariance() const noexcept { return covariance_; }
  const Metadata& metadata() const noexcept { return metadata_; }

  bool mahalanobis_eligible() const noexcept { return covariance_.has_value(); }

  // sqrt((q - c)^T Sigma^-1 (q - c)); requires an eligible record.
  double mahalanobis(std::span<const double> query) const;

 private:
  std::string domain_id_;
  Embedding centroid_;
  std::size_t sample_count_;
  std::shared_ptr<const AdapterSet> adapter_;
  std::optional<Matrix> covariance_;
  Metadata metadata_;
  Matrix cholesky_;  // lower factor of covariance_, empty when ineligible
};

// Records every domain id whose record is read through a Library view.
class AccessLog {
 public:
  void touch(const std::string& domain_id);
  std::vector<std::string> entries() const;
  bool touched(const std::string& domain_id) const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> entries_;
};

// Immutable ordered collection of domain records. Copies share record storage;
// extend() and exclude() return new views and never modify existing records.
class Library {
 public:
  Library() = default;

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t embedding_dim() const noexcept { return embedding_dim_; }
  int format_version() const noexcept { return kLibraryFormatVersion; }

  // Reads go through here so an attached AccessLog sees them.
  const DomainRecord& record(std::size_t index) const;
  const std::shared_ptr<const DomainRecord>& record_ptr(std::size_t index) const;

  std::optional<std::size_t> find(std::string_view domain_id) const noexcept;
  std::vector<std::string> domain_ids() const;

  Library with_access_log(std::shared_ptr<AccessLog> log) const;
  const std::shared_ptr<AccessLog>& access_log() const noexcept { return access_log_; }

  // Order-sensitive digest over ids, centroids and payloads.
  std::string digest() const;

  friend Library extend(const Library& lib, std::shared_ptr<const DomainRecord> record);
  friend Library exclude(const Library& lib, std::string_view domain_id);

 private:
  std::vector<std::shared_ptr<const DomainRecord>> records_;
  std::size_t embedding_dim_ = 0;
  std::shared_ptr<AccessLog> access_log_;
};

Embedding compute_centroid(std::span<const Embedding> embeddings);

// Sample covariance (N - 1 divisor) plus ridge * I.
Matrix compute_covariance(std::span<const Embedding> embeddings, double ridge);

DomainRecord build_record(std::string domain_id, std::span<const Embedding> embeddings,
                          std::shared_ptr<const AdapterSet> adapter,
                          const RecordOptions& options = {});

Library extend(const Library& lib, std::shared_ptr<const DomainRecord> record);
Library extend(const Library& lib, DomainRecord record);
Library exclude(const Library& lib, std::string_view domain_id);

}  // namespace lorafuse
