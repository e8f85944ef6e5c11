#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "lorafuse/bench/config.hpp"
#include "lorafuse/bench/harness.hpp"

using namespace lorafuse;
using namespace lorafuse::bench;

namespace {

const PreparedBenchmark& default_bench() {
  static const PreparedBenchmark b = prepare_benchmark(BenchmarkConfig{});
  return b;
}

double euclid(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Matrix low_rank(std::size_t d, std::size_t k, std::size_t r, double scale, std::mt19937_64& rng) {
  return scaled(matmul(testing::random_d(d, r, rng), testing::random_d(r, k, rng)), scale);
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("derive_seed") {
  CHECK(derive_seed(1, "a", 0) == derive_seed(1, "a", 0));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 0) != derive_seed(2, "a", 0));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "b", 0));
}

TEST_CASE("toy model") {
  const ToyModel host = make_host(HostConfig{}, 3);
  CHECK(host.feature_dim() == 16);
  CHECK(host.class_count() == 8);
  CHECK(host.layers().size() == 2);
  std::mt19937_64 rng(1);
  const Matrix x = testing::random_d(5, 16, rng);
  const LayerMatrices zero{{"proj", Matrix(16, 16)}};
  CHECK(host.logits(x, zero) == host.logits(x));
  const Matrix p = softmax_rows(host.logits(x));
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0));
  }
  CHECK(argmax_rows(Matrix::from_rows({{0, 3, 1}, {5, 4, 5}})) == std::vector<std::size_t>{1, 0});
  const LayerMatrices bad{{"proj", Matrix(2, 2)}};
  CHECK_THROWS_AS(host.logits(x, bad), StructuralError);
  CHECK_THROWS_AS(make_host(HostConfig{4}, 0), UsageError);
}

TEST_CASE("generation is deterministic") {
  const World w = make_world(HostConfig{}, WorldConfig{}, 5);
  const DomainData a = generate_domain(w.domains[2], w.host, 8);
  const DomainData b = generate_domain(w.domains[2], w.host, 8);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].embedding == b.train[i].embedding);
    CHECK(a.train[i].features == b.train[i].features);
    CHECK(a.train[i].labels == b.train[i].labels);
  }
  const World again = make_world(HostConfig{}, WorldConfig{}, 5);
  CHECK(again.host.weights_digest() == w.host.weights_digest());
  CHECK(again.domains[4].target_map == w.domains[4].target_map);
}

TEST_CASE("zero spread puts every embedding on the center") {
  const World w = make_world(HostConfig{}, WorldConfig{}, 6);
  SyntheticDomainSpec spec = w.domains[0];
  spec.embedding_spread = 0.0;
  const DomainData d = generate_domain(spec, w.host, 4);
  for (const auto& img : d.train) CHECK(img.embedding == spec.embedding_center);
  const auto c = compute_centroid(d.train_embeddings());
  for (std::size_t i = 0; i < c.dim(); ++i) CHECK(c[i] == doctest::Approx(spec.embedding_center[i]).epsilon(1e-14));
}

TEST_CASE("domains from different groups are well separated") {
  const auto& b = default_bench();
  const World w = make_world(b.config.host, b.config.world, b.config.seed);
  // Measured spread: RMS per-coordinate deviation from the domain centroid.
  double sq = 0.0;
  std::size_t n = 0;
  std::vector<Embedding> centroids;
  for (const auto& d : b.data) {
    const auto emb = d.train_embeddings();
    centroids.push_back(compute_centroid(emb));
    for (const auto& e : emb) {
      sq += std::pow(euclid(e, centroids.back()), 2);
      n += e.dim();
    }
  }
  const double spread = std::sqrt(sq / static_cast<double>(n));
  double inter = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centroids.size(); ++i)
    for (std::size_t j = i + 1; j < centroids.size(); ++j)
      if (w.group_of[i] != w.group_of[j]) inter = std::min(inter, euclid(centroids[i], centroids[j]));
  MESSAGE("closest cross-group centroids " << inter << ", intra-domain spread " << spread);
  CHECK(inter / spread > 5.0);
}

TEST_CASE("nothing to learn keeps the delta small") {
  // A single layer under squared loss has a unique optimum, zero. Stacked
  // layers or softmax targets admit non-zero deltas with unchanged outputs.
  HostConfig hc;
  hc.layer_count = 1;
  const ToyModel host = make_host(hc, 11);
  SyntheticDomainSpec spec{"flat", Embedding(std::vector<double>(4, 0.0)), 1.0, "head", Matrix(8, 16), 16, 4, 12};
  const auto data = generate_domain(spec, host, 32);
  TrainerConfig cfg;
  cfg.loss = TrainLoss::kSquared;
  const auto init = adapter_deltas(initial_adapter(host, cfg, "flat"));
  const auto trained = train_adapter(host, data.train, cfg, "flat");
  const auto after = adapter_deltas(trained.adapter);
  double init_norm = 0.0, after_norm = 0.0;
  for (const auto& [name, m] : init) init_norm += std::pow(frobenius_norm(m), 2);
  for (const auto& [name, m] : after) after_norm += std::pow(frobenius_norm(m), 2);
  MESSAGE("init delta " << std::sqrt(init_norm) << ", trained delta " << std::sqrt(after_norm));
  CHECK(std::sqrt(after_norm) < 0.1 * std::sqrt(init_norm));
  CHECK(trained.final_loss <= trained.initial_loss);
}

TEST_CASE("squared loss recovers the least-squares delta") {
  HostConfig hc;
  hc.layer_count = 1;
  const ToyModel host = make_host(hc, 13);
  std::mt19937_64 rng(14);
  SyntheticDomainSpec spec{"ls", Embedding(std::vector<double>(4, 0.0)), 1.0, "head",
                           low_rank(8, 16, 2, 0.3, rng), 16, 1, 15};
  const auto data = generate_domain(spec, host, 32);

  // Closed form: minimize sum |(W + D) x + b - y|^2 over D.
  std::size_t rows = 0;
  for (const auto& s : data.train) rows += s.features.rows();
  Eigen::MatrixXd X(rows, 16), R(rows, 8);
  std::size_t r = 0;
  for (const auto& s : data.train) {
    const Matrix base = host.logits(s.features);
    for (std::size_t p = 0; p < s.features.rows(); ++p, ++r) {
      for (std::size_t c = 0; c < 16; ++c) X(r, c) = s.features(p, c);
      for (std::size_t c = 0; c < 8; ++c) R(r, c) = s.target_logits(p, c) - base(p, c);
    }
  }
  const Eigen::MatrixXd oracle = (X.transpose() * X).ldlt().solve(X.transpose() * R).transpose();

  TrainerConfig cfg;
  cfg.loss = TrainLoss::kSquared;
  cfg.steps = 4000;
  cfg.learning_rate = 0.05;
  const auto trained = train_adapter(host, data.train, cfg, "ls");
  const Matrix got = trained.adapter.layer("head").delta(true);
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      diff += std::pow(got(i, j) - oracle(i, j), 2);
      norm += std::pow(oracle(i, j), 2);
    }
  MESSAGE("relative error " << std::sqrt(diff / norm));
  CHECK(std::sqrt(diff / norm) < 1e-2);
}

TEST_CASE("training leaves the host untouched and reports divergence") {
  const auto& b = default_bench();
  const ToyModel fresh = make_host(b.config.host, b.config.seed);
  CHECK(fresh.weights_digest() == b.host.weights_digest());

  TrainerConfig wild;
  wild.learning_rate = 1e6;
  wild.loss = TrainLoss::kSquared;
  try {
    (void)train_adapter(b.host, b.data[0].train, wild, "wild");
    FAIL("no divergence");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step") != std::string::npos);
    CHECK(msg.find("learning rate") != std::string::npos);
  }
}

TEST_CASE("leave-one-out on the default benchmark") {
  const auto& b = default_bench();
  const auto rep = run_leave_one_out(b, b.config.fusion);
  CHECK(rep.leaked.empty());
  CHECK(rep.table.methods.size() == kLeaveOneOutMethods.size());
  CHECK(rep.table.hmean("oracle") > rep.table.hmean("fusion"));
  CHECK(rep.table.hmean("fusion") > rep.table.hmean("uniform"));
  CHECK(rep.table.hmean("uniform") > rep.table.hmean("zero-shot"));
  for (const auto& d : rep.table.domains) {
    CHECK(rep.table.at(d, "oracle") >= rep.table.at(d, "zero-shot"));
    CHECK_FALSE(rep.contributions.cell(d, d).has_value());
  }
  for (const auto& p : rep.plans) CHECK(p.plan.weight_of(p.test_domain) == 0.0);
}

TEST_CASE("oracle beats zero-shot on every domain for another seed") {
  BenchmarkConfig cfg;
  cfg.seed = 3;
  const auto b = prepare_benchmark(cfg);
  const auto rep = run_leave_one_out(b, cfg.fusion);
  for (const auto& d : rep.table.domains) CHECK(rep.table.at(d, "oracle") >= rep.table.at(d, "zero-shot"));
}

TEST_CASE("K=1 fusion is the nearest adapter") {
  const auto& b = default_bench();
  FusionConfig k1 = b.config.fusion;
  k1.top_k = 1;
  const auto rep = run_leave_one_out(b, k1);
  for (const auto& p : rep.plans) {
    REQUIRE(p.plan.selected.size() == 1);
    CHECK(p.plan.selected[0].weight == 1.0);
  }
  CHECK(rep.table.column("fusion") == rep.table.column("fusion-late"));
}

TEST_CASE("high temperature over all candidates equals uniform") {
  const auto& b = default_bench();
  FusionConfig hot = b.config.fusion;
  hot.top_k = b.library.size() - 1;
  hot.temperature = 1e12;
  const auto rep = run_leave_one_out(b, hot);
  for (const auto& p : rep.plans)
    for (const auto& e : p.plan.selected) CHECK(e.weight == doctest::Approx(1.0 / 9.0).epsilon(1e-6));
  const auto fusion = rep.table.column("fusion");
  const auto uniform = rep.table.column("uniform");
  for (std::size_t i = 0; i < fusion.size(); ++i) CHECK(fusion[i] == doctest::Approx(uniform[i]).epsilon(1e-3));
}

TEST_CASE("identical domains tie") {
  BenchmarkConfig cfg;
  cfg.trainer.loss = TrainLoss::kSquared;
  std::mt19937_64 rng(17);
  const Embedding center = testing::random_embedding(8, rng, 5.0);
  for (int i = 0; i < 4; ++i)
    cfg.domains.push_back({"same-" + std::to_string(i), center, 1.0, "proj", Matrix(16, 16), 8, 8,
                           derive_seed(17, "same", i)});
  const auto b = prepare_benchmark(cfg);
  const auto rep = run_leave_one_out(b, cfg.fusion);
  for (const auto& d : rep.table.domains) {
    const double ref = rep.table.at(d, "zero-shot");
    for (const auto& m : rep.table.methods) CHECK(std::abs(rep.table.at(d, m) - ref) <= 1.0);
  }
}

TEST_CASE("all-inclusive one-hot limit") {
  const auto& b = default_bench();
  const double taus[] = {1e-4, 0.05};
  const auto rep = run_all_inclusive(b, b.config.fusion, taus);
  REQUIRE(rep.max_gap_to_oracle.size() == 2);
  CHECK(rep.max_gap_to_oracle[0] < 1e-3);
  CHECK(rep.table.hmean("fusion(tau=0.0001)") == doctest::Approx(rep.table.hmean("oracle")));
}

TEST_CASE("sweep consistency") {
  const auto& b = default_bench();
  const std::size_t k[] = {3};
  const double t[] = {0.01};
  const auto one = sweep_hyperparameters(b, b.config.fusion, k, t);
  FusionConfig f = b.config.fusion;
  f.top_k = 3;
  f.temperature = 0.01;
  CHECK(one.hmean[0][0] == run_leave_one_out(b, f).table.hmean("fusion"));

  const std::size_t k1[] = {1};
  const double ts[] = {1e-3, 0.01, 0.1, 10.0};
  const auto row = sweep_hyperparameters(b, b.config.fusion, k1, ts);
  for (double v : row.hmean[0]) CHECK(v == row.hmean[0][0]);
}

TEST_CASE("sweep grid corners") {
  SweepGrid g{{1, 3}, {0.1, 0.2}, {{1, 2}, {3, 0}}};
  CHECK(g.best() == std::pair<std::size_t, std::size_t>{1, 0});
  CHECK(g.best_on_corner());
  SweepGrid inner{{1, 3, 5}, {0.1, 0.2, 0.3}, {{1, 2, 1}, {1, 5, 1}, {0, 0, 0}}};
  CHECK_FALSE(inner.best_on_corner());
}

TEST_CASE("compounds decompose onto their parents") {
  const auto& b = default_bench();
  const auto out = run_compound_analysis(b, b.config.fusion);
  REQUIRE(out.size() == b.compounds.size());
  for (const auto& c : out) {
    CAPTURE(c.compound_id);
    CHECK(c.parents_on_top);
    CHECK(c.parent_share >= 0.7);
  }
}

TEST_CASE("config json round trip and unknown keys") {
  BenchmarkConfig cfg;
  cfg.seed = 42;
  cfg.fusion.top_k = 3;
  cfg.trainer.loss = TrainLoss::kSquared;
  const auto back = benchmark_config_from_json(benchmark_config_to_json(cfg, 2));
  CHECK(benchmark_config_to_json(back, -1) == benchmark_config_to_json(cfg, -1));
  CHECK_THROWS_AS(benchmark_config_from_json(R"({"fusion": {"topk": 3}})"), UsageError);
  CHECK_THROWS_AS(benchmark_config_from_json(R"({"trainer": {"loss": "hinge"}})"), UsageError);
  CHECK_THROWS_AS(benchmark_config_from_json("{"), UsageError);
  const auto flat = flatten_config(cfg);
  CHECK(std::find(flat.begin(), flat.end(), std::pair<std::string, std::string>{"fusion.top_k", "3"}) !=
        flat.end());
}

TEST_CASE("pixel accuracy") {
  const std::vector<std::size_t> a{0, 1, 2, 3}, b{0, 1, 0, 3};
  CHECK(pixel_accuracy(a, b) == 0.75);
}

}  // TEST_SUITE
