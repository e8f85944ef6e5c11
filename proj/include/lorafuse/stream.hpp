#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lorafuse/fusion.hpp"
#include "lorafuse/library.hpp"

namespace lorafuse {

struct RefuseResult;

// State of one debounced stream. Single owner; advance it with ema_update()
// and maybe_refuse().
class StreamState {
 public:
  // No default threshold on purpose: it depends on the deployment's
  // embedding scale. Use +inf to never re-fuse after the first plan.
  StreamState(double beta, double swap_threshold, std::optional<Embedding> initial_ema = {});

  double beta() const noexcept { return beta_; }
  double swap_threshold() const noexcept { return swap_threshold_; }
  const std::optional<Embedding>& ema() const noexcept { return ema_; }
  const std::optional<FusionPlan>& active_plan() const noexcept { return active_plan_; }
  std::size_t swap_count() const noexcept { return swap_count_; }
  std::size_t fusion_count() const noexcept { return fusion_count_; }

 private:
  friend StreamState ema_update(StreamState state, const Embedding& e);
  friend RefuseResult maybe_refuse(StreamState state, const Library& lib,
                                   const FusionConfig& config);

  double beta_;
  double swap_threshold_;
  std::optional<Embedding> ema_;
  std::optional<FusionPlan> active_plan_;
  std::size_t swap_count_ = 0;
  std::size_t fusion_count_ = 0;
};

// ema' = beta * ema + (1 - beta) * e. The first update of an empty state
// adopts e as the EMA.
StreamState ema_update(StreamState state, const Embedding& e);

struct RefuseResult {
  StreamState state;
  std::optional<FusedAdapter> fused;
  // Distance from the EMA to the active plan's weighted centroid before the
  // decision; nullopt on the first call.
  std::optional<double> trigger_distance;
};

// Fuses on the first call; afterwards re-fuses iff the EMA is farther than
// the threshold (Euclidean) from the active plan's weighted centroid.
RefuseResult maybe_refuse(StreamState state, const Library& lib, const FusionConfig& config);

struct StreamEvent {
  std::size_t step = 0;
  bool swapped = false;  // a fusion happened at this step
  std::string plan_digest;
  double support_score = 0.0;
  std::optional<double> trigger_distance;
};

std::string to_json(const StreamEvent& event);

// Convenience driver: update EMA, decide, emit an event.
class StreamAdapter {
 public:
  StreamAdapter(const Library& lib, FusionConfig config, double beta, double swap_threshold);

  StreamEvent push(const Embedding& e);
  const StreamState& state() const noexcept { return state_; }
  const std::optional<FusedAdapter>& active() const noexcept { return active_; }

 private:
  const Library& lib_;
  FusionConfig config_;
  StreamState state_;
  std::optional<FusedAdapter> active_;
  std::size_t step_ = 0;
};

struct KMeansResult {
  std::vector<Embedding> centroids;
  std::vector<std::size_t> assignment;
};

// Farthest-point seeding (first point drawn from the seed), then a fixed
// number of Lloyd iterations. Deterministic for a given seed.
KMeansResult kmeans(std::span<const Embedding> points, std::size_t cluster_count,
                    std::uint64_t seed, std::size_t iterations = 25);

struct BatchFusion {
  std::vector<std::size_t> assignment;  // per input embedding
  std::vector<Embedding> cluster_centroids;
  std::vector<FusedAdapter> fused;  // per cluster
  std::size_t fuse_calls = 0;
};

BatchFusion batch_cluster_fuse(std::span<const Embedding> embeddings, const Library& lib,
                               const FusionConfig& config, std::size_t cluster_count,
                               std::uint64_t seed = 0);

}  // namespace lorafuse
