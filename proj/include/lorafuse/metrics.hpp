#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lorafuse/fusion.hpp"

namespace lorafuse {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count);

  std::size_t class_count() const noexcept { return classes_; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  void merge(const ConfusionMatrix& other);
  std::uint64_t count(std::size_t truth, std::size_t predicted) const;
  std::uint64_t total() const noexcept { return total_; }

  // IoU per class; nullopt when the class is absent from both truth and
  // prediction.
  std::vector<std::optional<double>> per_class_iou() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// Mean IoU over classes present in truth or prediction, in [0, 1].
double miou(const ConfusionMatrix& cm);

double harmonic_mean(std::span<const double> values);
double arithmetic_mean(std::span<const double> values);

// Mean fusion weight per (test domain, library adapter). A cell is absent
// when that adapter was never available to the test domain (the held-out
// diagonal under leave-one-out).
struct ContributionMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<std::optional<double>>> cells;

  std::optional<double> cell(std::string_view row, std::string_view col) const;
  double row_sum(std::size_t row) const;
};

// Accumulates plans as sums and counts, so arrival order does not matter.
class ContributionAccumulator {
 public:
  // Marks adapters available to a test domain even if never selected.
  void declare_available(const std::string& test_domain, std::span<const std::string> adapter_ids);
  void add(const std::string& test_domain, const FusionPlan& plan);

  std::size_t plan_count(const std::string& test_domain) const;
  ContributionMatrix finish() const;

 private:
  struct Row {
    std::size_t plans = 0;
    std::map<std::string, double> weight_sums;
    std::set<std::string> available;
  };
  std::map<std::string, Row> rows_;
};

struct TaggedPlan {
  std::string test_domain;
  FusionPlan plan;
};

ContributionMatrix contribution_matrix(std::span<const TaggedPlan> plans);

// Sum of w_i / d_i over the plan. Any exact match (d <= epsilon_exact) gives
// the cap 1 / epsilon_exact.
double support_score(const FusionPlan& plan, double epsilon_exact = 1e-12);

struct Correlation {
  double pearson_r = 0.0;
  double slope = 0.0;  // least squares, y on x
  double intercept = 0.0;
  std::size_t count = 0;
};

// Pairs are (x, y); typically (distance, metric improvement).
Correlation distance_performance_correlation(std::span<const std::pair<double, double>> pairs);

}  // namespace lorafuse
