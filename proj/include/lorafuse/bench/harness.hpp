#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorafuse/bench/model.hpp"
#include "lorafuse/bench/trainer.hpp"
#include "lorafuse/bench/world.hpp"
#include "lorafuse/fusion.hpp"
#include "lorafuse/library.hpp"
#include "lorafuse/metrics.hpp"

namespace lorafuse::bench {

struct BenchmarkConfig {
  HostConfig host;
  WorldConfig world;
  TrainerConfig trainer;
  FusionConfig fusion;
  RecordOptions records;
  std::size_t pixels_per_image = 32;
  std::uint64_t seed = 0;
  // How fusion-late and uniform-late combine per-adapter outputs.
  OutputKind late_output = OutputKind::kProbabilities;
  // 0 picks the hardware concurrency.
  std::size_t threads = 0;
  // When set, used instead of the generated world (no compounds).
  std::vector<SyntheticDomainSpec> domains;
};

struct PreparedBenchmark {
  BenchmarkConfig config;
  ToyModel host;
  std::vector<SyntheticDomainSpec> domains;
  std::vector<DomainData> data;
  std::vector<TrainResult> training;
  Library library;  // every domain's adapter
  std::vector<CompoundSpec> compounds;
  std::vector<DomainData> compound_data;
};

// Generates the world from the config, then data, adapters and library.
PreparedBenchmark prepare_benchmark(const BenchmarkConfig& config);
PreparedBenchmark prepare_benchmark(ToyModel host, std::vector<SyntheticDomainSpec> domains,
                                    const BenchmarkConfig& config,
                                    std::vector<CompoundSpec> compounds = {});

inline constexpr std::array<std::string_view, 6> kLeaveOneOutMethods{
    "zero-shot", "uniform", "fusion", "fusion-late", "uniform-late", "oracle"};

// mIoU in percent per domain (rows) and method (columns).
struct MetricTable {
  std::vector<std::string> methods;
  std::vector<std::string> domains;
  std::vector<std::vector<double>> miou;

  std::size_t method_index(std::string_view method) const;
  double at(std::string_view domain, std::string_view method) const;
  std::vector<double> column(std::string_view method) const;
  double hmean(std::string_view method) const;
};

struct LeaveOneOutReport {
  MetricTable table;
  std::vector<TaggedPlan> plans;  // one per test image
  ContributionMatrix contributions;
  // Per test image and available adapter: (distance to its centroid, pixel
  // accuracy gain in points over zero-shot when applied alone).
  std::vector<std::pair<double, double>> distance_vs_gain;
  // Per test image: (support score of the plan, fused pixel accuracy).
  std::vector<std::pair<double, double>> support_vs_accuracy;
  // Held-out domains whose record was read through their own view.
  std::vector<std::string> leaked;
};

// Each domain in turn is tested against a library view without its adapter.
// The oracle reads the held-out adapter from the full library.
LeaveOneOutReport run_leave_one_out(const PreparedBenchmark& bench, const FusionConfig& fusion);

struct AllInclusiveReport {
  MetricTable table;  // zero-shot, uniform, fusion per temperature, oracle
  std::vector<double> temperatures;
  // Per temperature: max over test pixels of the largest absolute difference
  // between fused and oracle class probabilities.
  std::vector<double> max_gap_to_oracle;
};

AllInclusiveReport run_all_inclusive(const PreparedBenchmark& bench, const FusionConfig& fusion,
                                     std::span<const double> temperatures);

struct SweepGrid {
  std::vector<std::size_t> top_ks;
  std::vector<double> temperatures;
  std::vector<std::vector<double>> hmean;  // [k][temperature]

  std::pair<std::size_t, std::size_t> best() const;
  bool best_on_corner() const;
};

// Leave-one-out fusion h-mean over a K x temperature grid.
SweepGrid sweep_hyperparameters(const PreparedBenchmark& bench, const FusionConfig& base,
                                std::span<const std::size_t> top_ks,
                                std::span<const double> temperatures);

struct CompoundOutcome {
  std::string compound_id;
  std::pair<std::string, std::string> parents;
  double mix = 0.0;
  // Mean plan weight per adapter over the compound's test images, largest
  // first.
  std::vector<std::pair<std::string, double>> mean_weights;
  double parent_share = 0.0;
  bool parents_on_top = false;
};

std::vector<CompoundOutcome> run_compound_analysis(const PreparedBenchmark& bench,
                                                   const FusionConfig& fusion);

double pixel_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

}  // namespace lorafuse::bench
