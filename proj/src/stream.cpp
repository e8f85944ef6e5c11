#include "lorafuse/stream.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "json.hpp"
#include "lorafuse/metrics.hpp"

namespace lorafuse {

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

StreamState::StreamState(double beta, double swap_threshold, std::optional<Embedding> initial_ema)
    : beta_(beta), swap_threshold_(swap_threshold), ema_(std::move(initial_ema)) {
  if (!(beta_ >= 0.0 && beta_ < 1.0)) throw UsageError("stream: beta must lie in [0, 1)");
  if (!(swap_threshold_ >= 0.0)) throw UsageError("stream: swap threshold must be >= 0");
}

StreamState ema_update(StreamState state, const Embedding& e) {
  if (!state.ema_) {
    state.ema_ = e;
    return state;
  }
  const auto prev = state.ema_->values();
  if (prev.size() != e.dim()) {
    throw StructuralError("ema_update: embedding dim " + std::to_string(e.dim()) +
                          " vs EMA dim " + std::to_string(prev.size()));
  }
  std::vector<double> next(prev.size());
  for (std::size_t i = 0; i < next.size(); ++i)
    next[i] = state.beta_ * prev[i] + (1.0 - state.beta_) * e[i];
  state.ema_ = Embedding(std::move(next));
  return state;
}

RefuseResult maybe_refuse(StreamState state, const Library& lib, const FusionConfig& config) {
  if (!state.ema_) throw UsageError("maybe_refuse: no embedding observed yet");
  if (state.ema_->dim() != lib.embedding_dim()) {
    throw StructuralError("maybe_refuse: EMA dim " + std::to_string(state.ema_->dim()) +
                          " vs library dim " + std::to_string(lib.embedding_dim()));
  }
  std::optional<double> trigger;
  bool refuse = !state.active_plan_.has_value();
  if (!refuse) {
    const Embedding anchor = plan_centroid(*state.active_plan_, lib);
    trigger = euclidean(state.ema_->values(), anchor.values());
    refuse = *trigger > state.swap_threshold_;
  }
  if (!refuse) return {std::move(state), std::nullopt, trigger};

  FusedAdapter fused = fuse(*state.ema_, lib, config);
  if (state.active_plan_) ++state.swap_count_;
  ++state.fusion_count_;
  state.active_plan_ = fused.plan;
  return {std::move(state), std::move(fused), trigger};
}

std::string to_json(const StreamEvent& event) {
  nlohmann::json j = {{"step", event.step},
                      {"swapped", event.swapped},
                      {"plan_digest", event.plan_digest},
                      {"support_score", event.support_score}};
  j["trigger_distance"] = event.trigger_distance ? nlohmann::json(*event.trigger_distance)
                                                 : nlohmann::json(nullptr);
  return j.dump();
}

StreamAdapter::StreamAdapter(const Library& lib, FusionConfig config, double beta,
                             double swap_threshold)
    : lib_(lib), config_(config), state_(beta, swap_threshold) {
  config_.validate();
}

StreamEvent StreamAdapter::push(const Embedding& e) {
  auto result = maybe_refuse(ema_update(std::move(state_), e), lib_, config_);
  state_ = std::move(result.state);
  StreamEvent event;
  event.step = step_++;
  event.swapped = result.fused.has_value();
  if (result.fused) active_ = std::move(result.fused);
  event.plan_digest = state_.active_plan()->digest();
  event.support_score = support_score(*state_.active_plan(), config_.epsilon_exact);
  event.trigger_distance = result.trigger_distance;
  return event;
}

KMeansResult kmeans(std::span<const Embedding> points, std::size_t cluster_count,
                    std::uint64_t seed, std::size_t iterations) {
  if (points.empty()) throw UsageError("kmeans: no points");
  if (cluster_count < 1 || cluster_count > points.size()) {
    throw UsageError("kmeans: cluster count must be in [1, " + std::to_string(points.size()) +
                     "]");
  }
  const std::size_t dim = points.front().dim();
  for (const auto& p : points)
    if (p.dim() != dim) throw StructuralError("kmeans: mixed dimensions");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  std::vector<std::vector<double>> centers;
  const std::size_t first = pick(rng);
  centers.emplace_back(points[first].values().begin(), points[first].values().end());
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < cluster_count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], euclidean(points[i].values(), centers.back()));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    centers.emplace_back(points[best].values().begin(), points[best].values().end());
  }

  std::vector<std::size_t> assignment(points.size(), 0);
  auto assign = [&] {
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = euclidean(points[i].values(), centers[c]);
        if (d < best_d) {
          best_d = d;
          assignment[i] = c;
        }
      }
    }
  };
  for (std::size_t it = 0; it < iterations; ++it) {
    assign();
    std::vector<std::vector<double>> sums(centers.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++counts[assignment[i]];
      for (std::size_t k = 0; k < dim; ++k) sums[assignment[i]][k] += points[i][k];
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its center
      for (std::size_t k = 0; k < dim; ++k)
        centers[c][k] = sums[c][k] / static_cast<double>(counts[c]);
    }
  }
  assign();

  KMeansResult out;
  out.assignment = std::move(assignment);
  for (auto& c : centers) out.centroids.emplace_back(std::move(c));
  return out;
}

BatchFusion batch_cluster_fuse(std::span<const Embedding> embeddings, const Library& lib,
                               const FusionConfig& config, std::size_t cluster_count,
                               std::uint64_t seed) {
  if (embeddings.empty()) throw UsageError("batch_cluster_fuse: no embeddings");
  auto clusters = kmeans(embeddings, cluster_count, seed);
  BatchFusion out;
  out.assignment = std::move(clusters.assignment);
  out.cluster_centroids = std::move(clusters.centroids);
  for (const auto& c : out.cluster_centroids) {
    out.fused.push_back(fuse(c, lib, config));
    ++out.fuse_calls;
  }
  return out;
}

}  // namespace lorafuse
