#include "lorafuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "lorafuse/digest.hpp"

namespace lorafuse {

using nlohmann::json;

std::string_view to_string(DistanceMetric metric) noexcept {
  switch (metric) {
    case DistanceMetric::kEuclidean:
      return "euclidean";
    case DistanceMetric::kCosine:
      return "cosine";
    case DistanceMetric::kMahalanobis:
      return "mahalanobis";
  }
  return "euclidean";
}

DistanceMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "cosine") return DistanceMetric::kCosine;
  if (name == "mahalanobis") return DistanceMetric::kMahalanobis;
  throw UsageError("unknown distance metric '" + std::string(name) + "'");
}

void FusionConfig::validate() const {
  if (top_k < 1) throw UsageError("fusion config: top_k must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("fusion config: temperature must be positive and finite");
  }
  if (!(epsilon_exact > 0.0)) throw UsageError("fusion config: epsilon_exact must be positive");
}

std::string FusionPlan::digest() const {
  Digest d;
  d.update(to_string(metric));
  d.update(temperature);
  d.update(static_cast<std::uint64_t>(top_k));
  d.update(query_digest);
  for (const auto& e : selected) {
    d.update(e.domain_id);
    d.update(e.distance);
    d.update(e.weight);
  }
  return d.hex();
}

double FusionPlan::weight_of(std::string_view domain_id) const noexcept {
  for (const auto& e : selected)
    if (e.domain_id == domain_id) return e.weight;
  return 0.0;
}

std::string to_json(const FusionPlan& plan, int indent) {
  json selected = json::array();
  for (const auto& e : plan.selected)
    selected.push_back({{"domain_id", e.domain_id}, {"distance", e.distance}, {"weight", e.weight}});
  json j = {{"query_digest", plan.query_digest},
            {"metric", to_string(plan.metric)},
            {"tau", plan.temperature},
            {"top_k", plan.top_k},
            {"selected", std::move(selected)}};
  return j.dump(indent);
}

FusionPlan plan_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    FusionPlan plan;
    plan.query_digest = j.at("query_digest").get<std::string>();
    plan.metric = parse_metric(j.at("metric").get<std::string>());
    plan.temperature = j.at("tau").get<double>();
    plan.top_k = j.at("top_k").get<std::size_t>();
    for (const auto& e : j.at("selected")) {
      plan.selected.push_back({e.at("domain_id").get<std::string>(), e.at("distance").get<double>(),
                               e.at("weight").get<double>()});
    }
    return plan;
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed fusion plan: ") + e.what());
  }
}

Matrix FusedLayer::delta(bool apply_scaling) const {
  Matrix d = matmul(b, a);
  return apply_scaling ? scaled(std::move(d), scaling) : d;
}

const FusedLayer& FusedAdapter::layer(std::string_view name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw UsageError("fused adapter: no layer '" + std::string(name) + "'");
}

double distance(const Embedding& query, const DomainRecord& record, DistanceMetric metric) {
  const auto q = query.values();
  const auto c = record.centroid().values();
  if (q.size() != c.size()) {
    throw StructuralError("distance: query dim " + std::to_string(q.size()) +
                          " vs centroid dim " + std::to_string(c.size()) + " of '" +
                          record.domain_id() + "'");
  }
  switch (metric) {
    case DistanceMetric::kEuclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) s += (q[i] - c[i]) * (q[i] - c[i]);
      return std::sqrt(s);
    }
    case DistanceMetric::kCosine: {
      double dot = 0.0, qq = 0.0, cc = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        dot += q[i] * c[i];
        qq += q[i] * q[i];
        cc += c[i] * c[i];
      }
      if (qq == 0.0 || cc == 0.0) {
        throw UsageError("cosine distance undefined for a zero-norm vector (record '" +
                         record.domain_id() + "')");
      }
      // clamp rounding so identical directions give exactly 0, never -1e-16
      return std::max(0.0, 1.0 - dot / (std::sqrt(qq) * std::sqrt(cc)));
    }
    case DistanceMetric::kMahalanobis:
      return record.mahalanobis(q);
  }
  return 0.0;
}

std::vector<Candidate> select_top_k(const Embedding& query, const Library& lib,
                                    const FusionConfig& config) {
  config.validate();
  if (lib.empty()) throw UsageError("select_top_k: library is empty");
  const Embedding q = config.normalize_query ? normalized(query) : query;

  std::vector<Candidate> candidates;
  candidates.reserve(lib.size());
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const DomainRecord& rec = lib.record(i);
    if (config.metric == DistanceMetric::kMahalanobis && !rec.mahalanobis_eligible()) continue;
    candidates.push_back({i, rec.domain_id(), distance(q, rec, config.metric)});
  }
  if (candidates.empty()) {
    throw NoCandidatesError("select_top_k: no candidates, no library record supports metric '" +
                            std::string(to_string(config.metric)) + "'");
  }
  const std::size_t k = std::min(config.top_k, candidates.size());
  auto by_distance_then_id = [](const Candidate& x, const Candidate& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    return x.domain_id < y.domain_id;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), by_distance_then_id);
  candidates.resize(k);
  return candidates;
}

std::vector<double> compute_weights(std::span<const double> distances, double temperature,
                                    double epsilon_exact) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("compute_weights: temperature must be positive and finite");
  }
  if (distances.empty()) throw UsageError("compute_weights: no distances");
  for (double d : distances) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw UsageError("compute_weights: distances must be finite and nonnegative");
    }
  }

  std::vector<double> w(distances.size(), 0.0);
  const auto exact = static_cast<std::size_t>(std::count_if(
      distances.begin(), distances.end(), [&](double d) { return d <= epsilon_exact; }));
  if (exact > 0) {
    for (std::size_t i = 0; i < distances.size(); ++i)
      if (distances[i] <= epsilon_exact) w[i] = 1.0 / static_cast<double>(exact);
    return w;
  }

  double max_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < distances.size(); ++i) {
    w[i] = 1.0 / (distances[i] * temperature);
    max_score = std::max(max_score, w[i]);
  }
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(v - max_score);
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

FusedAdapter merge_concat(std::span<const AdapterSet* const> adapters,
                          std::span<const double> weights) {
  if (adapters.empty()) throw UsageError("merge_concat: no adapters selected");
  if (adapters.size() != weights.size()) {
    throw UsageError("merge_concat: " + std::to_string(adapters.size()) + " adapters but " +
                     std::to_string(weights.size()) + " weights");
  }
  const AdapterSet& reference = *adapters.front();
  for (const AdapterSet* other : adapters.subspan(1)) {
    if (auto why = reference.incompatibility_with(*other)) {
      throw StructuralError("merge_concat: adapter '" + other->adapter_id() +
                            "' incompatible with '" + reference.adapter_id() + "', " + *why);
    }
  }

  FusedAdapter fused;
  fused.merged_count = adapters.size();
  for (const auto& ref_layer : reference.layers()) {
    std::vector<Matrix> bs, as;
    bs.reserve(adapters.size());
    as.reserve(adapters.size());
    for (std::size_t i = 0; i < adapters.size(); ++i) {
      const LoraPair& pair = adapters[i]->layer(ref_layer.layer_name());
      bs.push_back(pair.b().cast<double>());
      as.push_back(scaled(pair.a().cast<double>(), weights[i]));
    }
    fused.layers.push_back(
        {ref_layer.layer_name(), hstack(bs), vstack(as), ref_layer.scaling()});
  }
  return fused;
}

FusedAdapter merge_concat(std::span<const AdapterSet> adapters, std::span<const double> weights) {
  std::vector<const AdapterSet*> ptrs;
  for (const auto& a : adapters) ptrs.push_back(&a);
  return merge_concat(std::span<const AdapterSet* const>(ptrs), weights);
}

FusedAdapter merge_uniform(std::span<const AdapterSet* const> adapters) {
  if (adapters.empty()) throw UsageError("merge_uniform: no adapters");
  const std::vector<double> w(adapters.size(), 1.0 / static_cast<double>(adapters.size()));
  return merge_concat(adapters, w);
}

FusedAdapter merge_uniform(std::span<const AdapterSet> adapters) {
  std::vector<const AdapterSet*> ptrs;
  for (const auto& a : adapters) ptrs.push_back(&a);
  return merge_uniform(std::span<const AdapterSet* const>(ptrs));
}

namespace {

struct IndexedPlan {
  FusionPlan plan;
  std::vector<std::size_t> indices;
};

IndexedPlan plan_with_indices(const Embedding& query, const Library& lib,
                              const FusionConfig& config) {
  const auto candidates = select_top_k(query, lib, config);
  std::vector<double> distances;
  for (const auto& c : candidates) distances.push_back(c.distance);
  const auto weights = compute_weights(distances, config.temperature, config.epsilon_exact);

  IndexedPlan out;
  out.plan.metric = config.metric;
  out.plan.temperature = config.temperature;
  out.plan.top_k = config.top_k;
  out.plan.query_digest = digest_hex(query.values());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.plan.selected.push_back({candidates[i].domain_id, candidates[i].distance, weights[i]});
    out.indices.push_back(candidates[i].index);
  }
  return out;
}

}  // namespace

FusionPlan plan_fusion(const Embedding& query, const Library& lib, const FusionConfig& config) {
  return plan_with_indices(query, lib, config).plan;
}

FusedAdapter fuse(const Embedding& query, const Library& lib, const FusionConfig& config) {
  auto [plan, indices] = plan_with_indices(query, lib, config);
  std::vector<const AdapterSet*> adapters;
  std::vector<double> weights;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    adapters.push_back(&lib.record(indices[i]).adapter());
    weights.push_back(plan.selected[i].weight);
  }
  FusedAdapter fused = merge_concat(adapters, weights);
  fused.plan = std::move(plan);
  return fused;
}

LayerMatrices apply_fused(const LayerMatrices& base, const FusedAdapter& fused) {
  LayerMatrices out = base;
  for (const auto& layer : fused.layers) {
    auto it = out.find(layer.name);
    if (it == out.end()) {
      throw StructuralError("apply_fused: host has no layer '" + layer.name + "'");
    }
    if (it->second.rows() != layer.b.rows() || it->second.cols() != layer.a.cols()) {
      throw StructuralError("apply_fused: layer '" + layer.name + "' is " +
                            shape_of(it->second) + " but the fused delta is " +
                            shape_string(layer.b.rows(), layer.a.cols()));
    }
    it->second = axpy_accumulate(std::move(it->second), layer.scaling, matmul(layer.b, layer.a));
  }
  return out;
}

Matrix late_fuse_outputs(std::span<const Matrix> outputs, std::span<const double> weights,
                         OutputKind kind) {
  if (outputs.empty()) throw UsageError("late_fuse_outputs: no outputs");
  if (outputs.size() != weights.size()) {
    throw UsageError("late_fuse_outputs: " + std::to_string(outputs.size()) + " outputs but " +
                     std::to_string(weights.size()) + " weights");
  }
  const Matrix& first = outputs.front();
  for (const auto& o : outputs) {
    if (!o.same_shape(first)) {
      throw StructuralError("late_fuse_outputs: output shapes differ, " + shape_of(o) + " vs " +
                            shape_of(first));
    }
    if (kind == OutputKind::kProbabilities) {
      for (std::size_t r = 0; r < o.rows(); ++r) {
        const auto row = o.row(r);
        const double s = std::accumulate(row.begin(), row.end(), 0.0);
        if (std::abs(s - 1.0) > 1e-6) {
          throw UsageError("late_fuse_outputs: row " + std::to_string(r) +
                           " is not a probability distribution");
        }
      }
    }
  }
  Matrix acc(first.rows(), first.cols());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    acc = axpy_accumulate(std::move(acc), weights[i], outputs[i]);
  return acc;
}

Embedding plan_centroid(const FusionPlan& plan, const Library& lib) {
  if (plan.selected.empty()) throw UsageError("plan_centroid: empty plan");
  std::vector<double> acc(lib.embedding_dim(), 0.0);
  for (const auto& e : plan.selected) {
    const auto index = lib.find(e.domain_id);
    if (!index) throw UsageError("plan_centroid: '" + e.domain_id + "' not in library");
    const auto c = lib.record(*index).centroid().values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.weight * c[i];
  }
  return Embedding(std::move(acc));
}

}  // namespace lorafuse
