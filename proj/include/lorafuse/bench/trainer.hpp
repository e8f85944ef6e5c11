#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "lorafuse/bench/model.hpp"
#include "lorafuse/bench/world.hpp"

namespace lorafuse::bench {

enum class TrainLoss {
  kCrossEntropy,  // against softmax(target logits)
  kSquared,       // 0.5 * |logits - target logits|^2
};

struct TrainerConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::size_t steps = 300;
  double learning_rate = 0.1;
  double init_scale = 0.1;
  // Every adapter starts from the same draw so differences come from data.
  std::uint64_t init_seed = 7;
  TrainLoss loss = TrainLoss::kCrossEntropy;

  void validate() const;
};

struct TrainResult {
  AdapterSet adapter;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Starting point of training: B and A drawn from N(0, init_scale^2) for every
// host layer.
AdapterSet initial_adapter(const ToyModel& host, const TrainerConfig& config,
                           std::string adapter_id);

double adapter_loss(const ToyModel& host, const LayerMatrices& deltas,
                    std::span<const ImageSample> samples, TrainLoss loss);

// Full-batch gradient descent on every layer's B and A with the host frozen.
// Throws NumericError if the loss stops being finite.
TrainResult train_adapter(const ToyModel& host, std::span<const ImageSample> samples,
                          const TrainerConfig& config, std::string adapter_id);

}  // namespace lorafuse::bench
