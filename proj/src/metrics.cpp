#include "lorafuse/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace lorafuse {

ConfusionMatrix::ConfusionMatrix(std::size_t class_count)
    : classes_(class_count), counts_(class_count * class_count, 0) {
  if (class_count == 0) throw UsageError("confusion matrix: zero classes");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= classes_ || predicted >= classes_) {
    throw UsageError("confusion matrix: class index out of range");
  }
  counts_[truth * classes_ + predicted] += n;
  total_ += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw StructuralError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::uint64_t ConfusionMatrix::count(std::size_t truth, std::size_t predicted) const {
  if (truth >= classes_ || predicted >= classes_) {
    throw UsageError("confusion matrix: class index out of range");
  }
  return counts_[truth * classes_ + predicted];
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out(classes_);
  for (std::size_t c = 0; c < classes_; ++c) {
    std::uint64_t fp = 0, fn = 0;
    const std::uint64_t tp = counts_[c * classes_ + c];
    for (std::size_t o = 0; o < classes_; ++o) {
      if (o == c) continue;
      fn += counts_[c * classes_ + o];
      fp += counts_[o * classes_ + c];
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) out[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (const auto& iou : cm.per_class_iou()) {
    if (!iou) continue;
    sum += *iou;
    ++present;
  }
  if (present == 0) throw UsageError("miou: no class present in truth or prediction");
  return sum / static_cast<double>(present);
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("harmonic_mean: no values");
  double inv = 0.0;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw UsageError("harmonic_mean: values must be positive and finite");
    }
    inv += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv;
}

double arithmetic_mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("arithmetic_mean: no values");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::optional<double> ContributionMatrix::cell(std::string_view row, std::string_view col) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(cols.begin(), cols.end(), col);
  if (r == rows.end() || c == cols.end()) return std::nullopt;
  return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - cols.begin())];
}

double ContributionMatrix::row_sum(std::size_t row) const {
  double s = 0.0;
  for (const auto& v : cells.at(row))
    if (v) s += *v;
  return s;
}

void ContributionAccumulator::declare_available(const std::string& test_domain,
                                                std::span<const std::string> adapter_ids) {
  auto& row = rows_[test_domain];
  row.available.insert(adapter_ids.begin(), adapter_ids.end());
}

void ContributionAccumulator::add(const std::string& test_domain, const FusionPlan& plan) {
  auto& row = rows_[test_domain];
  ++row.plans;
  for (const auto& e : plan.selected) {
    row.weight_sums[e.domain_id] += e.weight;
    row.available.insert(e.domain_id);
  }
}

std::size_t ContributionAccumulator::plan_count(const std::string& test_domain) const {
  const auto it = rows_.find(test_domain);
  return it == rows_.end() ? 0 : it->second.plans;
}

ContributionMatrix ContributionAccumulator::finish() const {
  ContributionMatrix m;
  std::set<std::string> cols;
  for (const auto& [name, row] : rows_) {
    m.rows.push_back(name);
    cols.insert(row.available.begin(), row.available.end());
  }
  m.cols.assign(cols.begin(), cols.end());
  for (const auto& [name, row] : rows_) {
    std::vector<std::optional<double>> cells(m.cols.size());
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      if (!row.available.contains(m.cols[c]) || row.plans == 0) continue;
      const auto it = row.weight_sums.find(m.cols[c]);
      const double sum = it == row.weight_sums.end() ? 0.0 : it->second;
      cells[c] = sum / static_cast<double>(row.plans);
    }
    m.cells.push_back(std::move(cells));
  }
  return m;
}

ContributionMatrix contribution_matrix(std::span<const TaggedPlan> plans) {
  ContributionAccumulator acc;
  for (const auto& p : plans) acc.add(p.test_domain, p.plan);
  return acc.finish();
}

double support_score(const FusionPlan& plan, double epsilon_exact) {
  double score = 0.0;
  for (const auto& e : plan.selected) {
    if (e.distance <= epsilon_exact) return 1.0 / epsilon_exact;
    score += e.weight / e.distance;
  }
  return score;
}

Correlation distance_performance_correlation(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 3) throw UsageError("correlation: need at least 3 pairs");
  const double n = static_cast<double>(pairs.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UsageError("correlation: zero variance");
  Correlation c;
  c.count = pairs.size();
  c.pearson_r = sxy / std::sqrt(sxx * syy);
  c.slope = sxy / sxx;
  c.intercept = my - c.slope * mx;
  return c;
}

}  // namespace lorafuse
