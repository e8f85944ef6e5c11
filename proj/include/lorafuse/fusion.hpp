#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lorafuse/library.hpp"
#include "lorafuse/tensor.hpp"

namespace lorafuse {

enum class DistanceMetric { kEuclidean, kCosine, kMahalanobis };

std::string_view to_string(DistanceMetric metric) noexcept;
DistanceMetric parse_metric(std::string_view name);

struct FusionConfig {
  std::size_t top_k = 7;
  double temperature = 0.01;
  DistanceMetric metric = DistanceMetric::kEuclidean;
  // Distances at or below this count as exact matches.
  double epsilon_exact = 1e-12;
  bool normalize_query = false;

  void validate() const;
};

struct PlanEntry {
  std::string domain_id;
  double distance = 0.0;
  double weight = 0.0;

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

// Which adapters a query selected and how much each contributes. Entries are
// ordered by ascending distance.
struct FusionPlan {
  std::vector<PlanEntry> selected;
  DistanceMetric metric = DistanceMetric::kEuclidean;
  double temperature = 0.0;
  std::size_t top_k = 0;
  std::string query_digest;

  std::string digest() const;
  double weight_of(std::string_view domain_id) const noexcept;

  friend bool operator==(const FusionPlan&, const FusionPlan&) = default;
};

std::string to_json(const FusionPlan& plan, int indent = -1);
FusionPlan plan_from_json(std::string_view text);

// Concatenated factors for one layer: B is d x (r K'), A is (r K') x k.
struct FusedLayer {
  std::string name;
  Matrix b;
  Matrix a;
  double scaling = 1.0;  // alpha / r shared by the merged adapters

  Matrix delta(bool apply_scaling = true) const;
};

struct FusedAdapter {
  std::vector<FusedLayer> layers;
  FusionPlan plan;
  std::size_t merged_count = 0;

  const FusedLayer& layer(std::string_view name) const;
};

struct Candidate {
  std::size_t index = 0;  // position in the library view
  std::string domain_id;
  double distance = 0.0;
};

double distance(const Embedding& query, const DomainRecord& record, DistanceMetric metric);

// Up to top_k records by ascending distance, ties broken by ascending
// domain id. Mahalanobis skips records without a covariance.
std::vector<Candidate> select_top_k(const Embedding& query, const Library& lib,
                                    const FusionConfig& config);

// Softmax of 1 / (d * tau). If any distance is within epsilon_exact of zero,
// those entries share the weight uniformly and the rest get none.
std::vector<double> compute_weights(std::span<const double> distances, double temperature,
                                    double epsilon_exact = 1e-12);

FusedAdapter merge_concat(std::span<const AdapterSet* const> adapters,
                          std::span<const double> weights);
FusedAdapter merge_concat(std::span<const AdapterSet> adapters, std::span<const double> weights);

// Equal weights over every adapter given; no retrieval.
FusedAdapter merge_uniform(std::span<const AdapterSet* const> adapters);
FusedAdapter merge_uniform(std::span<const AdapterSet> adapters);

FusionPlan plan_fusion(const Embedding& query, const Library& lib, const FusionConfig& config);
FusedAdapter fuse(const Embedding& query, const Library& lib, const FusionConfig& config);

using LayerMatrices = std::map<std::string, Matrix, std::less<>>;

// W + (alpha / r) B_fused A_fused for every fused layer.
LayerMatrices apply_fused(const LayerMatrices& base, const FusedAdapter& fused);

enum class OutputKind { kProbabilities, kLogits };

// Convex combination of per-adapter outputs (rows = samples, cols = classes).
Matrix late_fuse_outputs(std::span<const Matrix> outputs, std::span<const double> weights,
                         OutputKind kind = OutputKind::kProbabilities);

// Sum of w_i * c_i over the plan's entries.
Embedding plan_centroid(const FusionPlan& plan, const Library& lib);

}  // namespace lorafuse
