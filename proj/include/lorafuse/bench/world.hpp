#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lorafuse/bench/model.hpp"
#include "lorafuse/library.hpp"

namespace lorafuse::bench {

// One synthetic domain: image embeddings scatter isotropically around
// `embedding_center`; pixel labels come from the host with `target_map`
// added to the weights of `target_layer`.
struct SyntheticDomainSpec {
  std::string domain_id;
  Embedding embedding_center;
  double embedding_spread = 1.0;
  std::string target_layer;
  Matrix target_map;
  std::size_t n_train = 16;
  std::size_t n_test = 16;
  std::uint64_t seed = 0;

  void validate(const ToyModel& host) const;
};

// An image is a bag of pixels sharing one embedding.
struct ImageSample {
  Embedding embedding;
  Matrix features;       // pixels x feature_dim
  Matrix target_logits;  // pixels x classes
  std::vector<std::size_t> labels;
};

struct DomainData {
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;

  std::vector<Embedding> train_embeddings() const;
};

DomainData generate_domain(const SyntheticDomainSpec& spec, const ToyModel& host,
                           std::size_t pixels_per_image);

struct HostConfig {
  std::size_t layer_count = 2;
  std::size_t feature_dim = 16;
  std::size_t hidden_dim = 16;
  std::size_t class_count = 8;
  double head_gain = 3.0;
};

ToyModel make_host(const HostConfig& config, std::uint64_t seed);

// Domains live in a low-dimensional latent space. Each latent coordinate
// drives one rank-1 direction of the target map and, through a scaled
// orthonormal map, one direction of the embedding space. Domains cluster in
// groups around shared group centers.
struct WorldConfig {
  std::vector<std::size_t> group_sizes{3, 3, 4};
  std::size_t latent_dim = 6;
  std::size_t embedding_dim = 32;
  double group_scale = 1.0;
  double jitter = 0.35;
  double embedding_scale = 20.0;
  double embedding_spread = 1.25;
  double shift_scale = 0.8;
  double factor_gain = 4.0;
  // Compounds blend the closest pair inside each group.
  bool with_compounds = true;
  std::vector<double> compound_mix{0.4, 0.6};
  std::size_t n_train = 16;
  std::size_t n_test = 16;
};

struct CompoundSpec {
  SyntheticDomainSpec domain;
  std::pair<std::string, std::string> parents;
  double mix = 0.5;  // share of the first parent
};

struct World {
  ToyModel host;
  std::vector<SyntheticDomainSpec> domains;
  std::vector<std::size_t> group_of;
  std::vector<CompoundSpec> compounds;
};

World make_world(const HostConfig& host_config, const WorldConfig& config, std::uint64_t seed);

// Deterministic child seed for a labelled sub-task.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

}  // namespace lorafuse::bench
