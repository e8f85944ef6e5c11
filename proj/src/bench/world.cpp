#include "lorafuse/bench/world.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "lorafuse/digest.hpp"

namespace lorafuse::bench {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = n(rng) * scale;
  return m;
}

std::vector<double> gaussian_vector(std::size_t n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng) * scale;
  return out;
}

Matrix outer(std::span<const double> u, std::span<const double> v, double scale) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j] * scale;
  return m;
}

ImageSample make_image(const SyntheticDomainSpec& spec, const ToyModel& host,
                       std::size_t pixels, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> e(spec.embedding_center.values().begin(),
                        spec.embedding_center.values().end());
  for (auto& v : e) v += n(rng) * spec.embedding_spread;
  ImageSample img;
  img.embedding = Embedding(std::move(e));
  img.features = gaussian(pixels, host.feature_dim(), 1.0, rng);
  LayerMatrices shift;
  shift.emplace(spec.target_layer, spec.target_map);
  img.target_logits = host.logits(img.features, shift);
  img.labels = argmax_rows(img.target_logits);
  return img;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
  Digest d;
  d.update(seed);
  d.update(label);
  d.update(index);
  return d.value();
}

void SyntheticDomainSpec::validate(const ToyModel& host) const {
  if (domain_id.empty()) throw UsageError("domain spec: empty domain id");
  if (!(embedding_spread >= 0.0) || !std::isfinite(embedding_spread)) {
    throw UsageError("domain spec '" + domain_id + "': spread must be finite and >= 0");
  }
  if (n_train == 0 || n_test == 0) {
    throw UsageError("domain spec '" + domain_id + "': need at least one train and test image");
  }
  const auto& layer = host.layer(target_layer);
  if (!target_map.same_shape(layer.weight)) {
    throw StructuralError("domain spec '" + domain_id + "': target map " + shape_of(target_map) +
                          " vs layer '" + target_layer + "' " + shape_of(layer.weight));
  }
}

std::vector<Embedding> DomainData::train_embeddings() const {
  std::vector<Embedding> out;
  out.reserve(train.size());
  for (const auto& img : train) out.push_back(img.embedding);
  return out;
}

DomainData generate_domain(const SyntheticDomainSpec& spec, const ToyModel& host,
                           std::size_t pixels_per_image) {
  spec.validate(host);
  if (pixels_per_image == 0) throw UsageError("generate_domain: zero pixels per image");
  std::mt19937_64 rng(spec.seed);
  DomainData data;
  for (std::size_t i = 0; i < spec.n_train; ++i)
    data.train.push_back(make_image(spec, host, pixels_per_image, rng));
  for (std::size_t i = 0; i < spec.n_test; ++i)
    data.test.push_back(make_image(spec, host, pixels_per_image, rng));
  return data;
}

ToyModel make_host(const HostConfig& config, std::uint64_t seed) {
  if (config.layer_count < 1 || config.layer_count > 3) {
    throw UsageError("host: layer count must be 1, 2 or 3");
  }
  if (config.feature_dim == 0 || config.hidden_dim == 0 || config.class_count < 2) {
    throw UsageError("host: dimensions must be positive and classes >= 2");
  }
  std::mt19937_64 rng(derive_seed(seed, "host"));
  std::vector<AffineLayer> layers;
  std::size_t in = config.feature_dim;
  for (std::size_t l = 0; l + 1 < config.layer_count; ++l) {
    const std::string name = l == 0 ? "proj" : "proj" + std::to_string(l + 1);
    layers.push_back({name,
                      gaussian(config.hidden_dim, in, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                      std::vector<double>(config.hidden_dim, 0.0)});
    in = config.hidden_dim;
  }
  layers.push_back(
      {"head",
       gaussian(config.class_count, in, config.head_gain / std::sqrt(static_cast<double>(in)), rng),
       std::vector<double>(config.class_count, 0.0)});
  return ToyModel(std::move(layers));
}

World make_world(const HostConfig& host_config, const WorldConfig& config, std::uint64_t seed) {
  if (config.group_sizes.empty()) throw UsageError("world: no groups");
  if (config.latent_dim == 0 || config.latent_dim > config.embedding_dim) {
    throw UsageError("world: latent dim must be in [1, embedding dim]");
  }
  World world{make_host(host_config, seed), {}, {}, {}};
  const auto& target = world.host.layers().front();
  const std::size_t d = target.weight.rows();
  const std::size_t k = target.weight.cols();
  const double norm = 1.0 / std::sqrt(static_cast<double>(d * k));
  const std::size_t q = config.latent_dim;
  const std::size_t e = config.embedding_dim;

  std::mt19937_64 rng(derive_seed(seed, "world"));
  const Matrix u = gaussian(d, 2, 1.0, rng);
  const Matrix v = gaussian(2, k, 1.0, rng);
  const Matrix shared = scaled(matmul(u, v), norm * config.shift_scale * config.factor_gain);
  std::vector<Matrix> factors;
  for (std::size_t i = 0; i < q; ++i) {
    const auto a = gaussian_vector(d, 1.0, rng);
    const auto b = gaussian_vector(k, 1.0, rng);
    factors.push_back(outer(a, b, norm * config.factor_gain));
  }
  Eigen::MatrixXd raw(e, q);
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t c = 0; c < q; ++c) raw(r, c) = std::normal_distribution<double>()(rng);
  const Eigen::MatrixXd basis =
      Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() * Eigen::MatrixXd::Identity(e, q);
  const auto origin = gaussian_vector(e, 2.0, rng);

  auto target_of = [&](std::span<const double> z) {
    Matrix t = shared;
    for (std::size_t i = 0; i < q; ++i) t = axpy_accumulate(std::move(t), z[i], factors[i]);
    return t;
  };
  auto center_of = [&](std::span<const double> z) {
    std::vector<double> c = origin;
    for (std::size_t r = 0; r < e; ++r)
      for (std::size_t i = 0; i < q; ++i) c[r] += config.embedding_scale * basis(r, i) * z[i];
    return Embedding(std::move(c));
  };
  auto make_spec = [&](std::string id, std::span<const double> z, std::uint64_t s) {
    SyntheticDomainSpec spec;
    spec.domain_id = std::move(id);
    spec.embedding_center = center_of(z);
    spec.embedding_spread = config.embedding_spread;
    spec.target_layer = target.name;
    spec.target_map = target_of(z);
    spec.n_train = config.n_train;
    spec.n_test = config.n_test;
    spec.seed = s;
    return spec;
  };

  std::vector<std::vector<double>> latents;
  std::size_t index = 0;
  for (std::size_t g = 0; g < config.group_sizes.size(); ++g) {
    const auto center = gaussian_vector(q, config.group_scale, rng);
    for (std::size_t m = 0; m < config.group_sizes[g]; ++m, ++index) {
      auto z = gaussian_vector(q, config.jitter, rng);
      for (std::size_t i = 0; i < q; ++i) z[i] += center[i];
      char id[32];
      std::snprintf(id, sizeof id, "domain-%02zu", index);
      world.domains.push_back(make_spec(id, z, derive_seed(seed, "domain", index)));
      world.group_of.push_back(g);
      latents.push_back(std::move(z));
    }
  }

  if (!config.with_compounds) return world;
  std::size_t compound_index = 0;
  for (std::size_t g = 0; g < config.group_sizes.size(); ++g) {
    std::size_t best_a = 0, best_b = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < latents.size(); ++a) {
      for (std::size_t b = a + 1; b < latents.size(); ++b) {
        if (world.group_of[a] != g || world.group_of[b] != g) continue;
        double dist = 0.0;
        const auto ca = world.domains[a].embedding_center.values();
        const auto cb = world.domains[b].embedding_center.values();
        for (std::size_t r = 0; r < e; ++r) dist += (ca[r] - cb[r]) * (ca[r] - cb[r]);
        if (dist < best) {
          best = dist;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (!std::isfinite(best)) continue;  // singleton group
    for (double mix : config.compound_mix) {
      std::vector<double> z(q);
      for (std::size_t i = 0; i < q; ++i)
        z[i] = mix * latents[best_a][i] + (1.0 - mix) * latents[best_b][i];
      CompoundSpec c;
      c.parents = {world.domains[best_a].domain_id, world.domains[best_b].domain_id};
      c.mix = mix;
      char id[32];
      std::snprintf(id, sizeof id, "compound-%02zu", compound_index);
      c.domain = make_spec(id, z, derive_seed(seed, "compound", compound_index));
      ++compound_index;
      world.compounds.push_back(std::move(c));
    }
  }
  return world;
}

}  // namespace lorafuse::bench
