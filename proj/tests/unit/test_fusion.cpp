#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "lorafuse/fusion.hpp"

using namespace lorafuse;

namespace {

std::shared_ptr<const AdapterSet> shared(AdapterSet a) {
  return std::make_shared<const AdapterSet>(std::move(a));
}

Library point_library(const std::vector<std::pair<std::string, Embedding>>& points,
                      std::mt19937_64& rng) {
  Library lib;
  for (const auto& [id, e] : points) {
    const std::vector<Embedding> one{e};
    lib = extend(lib, build_record(id, one, shared(testing::random_adapter(id, {{"w", 4, 3, 2}}, 4.0, rng))));
  }
  return lib;
}

Matrix weighted_sum(std::span<const AdapterSet> adapters, std::span<const double> w,
                    const std::string& layer) {
  const auto& first = adapters[0].layer(layer);
  Matrix acc(first.out_dim(), first.in_dim());
  for (std::size_t i = 0; i < adapters.size(); ++i)
    acc = axpy_accumulate(std::move(acc), w[i], adapters[i].layer(layer).delta(true));
  return acc;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("distances") {
  std::mt19937_64 rng(41);
  const Library lib = point_library({{"o", Embedding({0, 0})}, {"c", Embedding({2, 0})}}, rng);
  CHECK(distance(Embedding({3, 4}), lib.record(0), DistanceMetric::kEuclidean) == 5.0);
  CHECK(distance(Embedding({2, 0}), lib.record(1), DistanceMetric::kCosine) == doctest::Approx(0.0));
  CHECK(distance(Embedding({5, 0}), lib.record(1), DistanceMetric::kCosine) == doctest::Approx(0.0));
  CHECK_THROWS_AS(distance(Embedding({1, 1}), lib.record(0), DistanceMetric::kCosine), UsageError);
  CHECK_THROWS_AS(distance(Embedding({1, 1, 1}), lib.record(0), DistanceMetric::kEuclidean),
                  StructuralError);

  const auto& cos = testing::oracle()["stats"]["cosine"];
  const Library c = point_library({{"c", Embedding(cos["centroid"].get<std::vector<double>>())}}, rng);
  CHECK(distance(Embedding(cos["query"].get<std::vector<double>>()), c.record(0), DistanceMetric::kCosine) ==
        doctest::Approx(cos["distance"].get<double>()).epsilon(1e-12));
}

TEST_CASE("mahalanobis with identity covariance equals euclidean") {
  std::mt19937_64 rng(42);
  const DomainRecord r("m", Embedding({1, 2, 3}), 1000,
                       shared(testing::random_adapter("m", {{"w", 4, 3, 2}}, 4.0, rng)),
                       Matrix::identity(3));
  const Embedding q({0.5, -1, 4});
  CHECK(distance(q, r, DistanceMetric::kMahalanobis) ==
        doctest::Approx(distance(q, r, DistanceMetric::kEuclidean)).epsilon(1e-14));
}

TEST_CASE("top-k selection") {
  std::mt19937_64 rng(43);
  const Library lib = point_library(
      {{"a", Embedding({0.2})}, {"b", Embedding({0.5})}, {"c", Embedding({0.1})}}, rng);
  FusionConfig cfg;
  cfg.top_k = 2;
  auto top = select_top_k(Embedding({0.0}), lib, cfg);
  REQUIRE(top.size() == 2);
  CHECK(top[0].domain_id == "c");
  CHECK(top[1].domain_id == "a");

  cfg.top_k = 10;
  CHECK(select_top_k(Embedding({0.0}), lib, cfg).size() == 3);

  const Library tie = point_library({{"zeta", Embedding({1.0})}, {"alpha", Embedding({-1.0})}}, rng);
  cfg.top_k = 1;
  CHECK(select_top_k(Embedding({0.0}), tie, cfg)[0].domain_id == "alpha");

  CHECK_THROWS_AS(select_top_k(Embedding({0.0}), Library{}, cfg), UsageError);
  cfg.top_k = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("mahalanobis skips ineligible records") {
  std::mt19937_64 rng(44);
  const Library lib = point_library({{"a", Embedding({0.0, 0.0})}}, rng);
  FusionConfig cfg;
  cfg.metric = DistanceMetric::kMahalanobis;
  CHECK_THROWS_AS(select_top_k(Embedding({1.0, 0.0}), lib, cfg), NoCandidatesError);

  const Library mixed = extend(
      lib, DomainRecord("b", Embedding({5.0, 5.0}), 900,
                        shared(testing::random_adapter("b", {{"w", 4, 3, 2}}, 4.0, rng)),
                        Matrix::identity(2)));
  const auto top = select_top_k(Embedding({0.0, 0.0}), mixed, cfg);
  REQUIRE(top.size() == 1);
  CHECK(top[0].domain_id == "b");
}

TEST_CASE("weights") {
  CHECK(compute_weights(std::vector<double>{1, 1}, 0.37) == std::vector<double>{0.5, 0.5});
  const auto w = compute_weights(std::vector<double>{0.5, 1.0}, 1.0);
  CHECK(w[0] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(0.2689414213699951).epsilon(1e-14));
  const auto cold = compute_weights(std::vector<double>{0.5, 1.0}, 0.001);
  CHECK(cold[0] == 1.0);
  CHECK(cold[1] < 1e-300);
  CHECK(compute_weights(std::vector<double>{0.3, 0.0, 0.0}, 0.01) ==
        std::vector<double>{0.0, 0.5, 0.5});
  CHECK_THROWS_AS(compute_weights(std::vector<double>{1.0}, 0.0), UsageError);
  CHECK_THROWS_AS(compute_weights(std::vector<double>{1.0}, -1.0), UsageError);
  CHECK_THROWS_AS(compute_weights(std::vector<double>{}, 1.0), UsageError);

  for (const auto& c : testing::oracle()["weights"]) {
    const auto got = compute_weights(c["distances"].get<std::vector<double>>(), c["tau"].get<double>());
    const auto want = c["weights"].get<std::vector<double>>();
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("concatenation merge") {
  const AdapterSet one("1", {LoraPair("w", MatrixF::from_rows({{2}}), MatrixF::from_rows({{3}}), 1.0)});
  const AdapterSet two("2", {LoraPair("w", MatrixF::from_rows({{4}}), MatrixF::from_rows({{1}}), 1.0)});
  const AdapterSet pair[] = {one, two};
  const double half[] = {0.5, 0.5};
  const auto f = merge_concat(pair, half);
  CHECK(f.layer("w").delta(false) == Matrix::from_rows({{5}}));
  CHECK(f.layer("w").b.cols() == 2);
  CHECK(f.merged_count == 2);

  const AdapterSet only[] = {one};
  const double unit[] = {1.0};
  CHECK(merge_concat(only, unit).layer("w").delta() == one.layer("w").delta(true));
}

TEST_CASE("merge matches the oracle") {
  for (const auto& c : testing::oracle()["merge"]) {
    const auto d = c["d"].get<std::size_t>(), k = c["k"].get<std::size_t>(), r = c["r"].get<std::size_t>();
    std::vector<AdapterSet> sets;
    for (std::size_t i = 0; i < c["b"].size(); ++i) {
      sets.emplace_back("a" + std::to_string(i),
                        std::vector<LoraPair>{LoraPair("w", MatrixF(d, r, c["b"][i].get<std::vector<float>>()),
                                                       MatrixF(r, k, c["a"][i].get<std::vector<float>>()),
                                                       c["alpha"].get<double>())});
    }
    const auto w = c["weights"].get<std::vector<double>>();
    const auto f = merge_concat(sets, w);
    const Matrix unscaled = testing::matrix_from(c["delta_unscaled"], d, k);
    const Matrix scaled_want = testing::matrix_from(c["delta_scaled"], d, k);
    CHECK(max_abs_difference(f.layer("w").delta(false), unscaled) < 1e-12);
    CHECK(max_abs_difference(f.layer("w").delta(true), scaled_want) < 1e-12);
  }
}

TEST_CASE("random K=5 merge equals weighted sum") {
  std::mt19937_64 rng(45);
  std::vector<AdapterSet> sets;
  for (int i = 0; i < 5; ++i)
    sets.push_back(testing::random_adapter("a" + std::to_string(i), {{"p", 9, 7, 3}, {"q", 4, 9, 3}}, 6.0, rng));
  const auto w = compute_weights(std::vector<double>{0.3, 0.9, 0.4, 1.5, 0.7}, 0.5);
  const auto f = merge_concat(sets, w);
  for (const char* layer : {"p", "q"}) {
    const Matrix want = weighted_sum(sets, w, layer);
    CHECK(frobenius_norm(subtract(f.layer(layer).delta(), want)) / frobenius_norm(want) < 1e-6);
  }
}

TEST_CASE("merge errors") {
  std::mt19937_64 rng(46);
  const auto a = testing::random_adapter("a", {{"w", 4, 3, 2}}, 4.0, rng);
  const auto b = testing::random_adapter("b", {{"w", 4, 3, 1}}, 4.0, rng);
  const AdapterSet ab[] = {a, b};
  const double w2[] = {0.5, 0.5};
  CHECK_THROWS_AS(merge_concat(ab, w2), StructuralError);
  const AdapterSet aa[] = {a, a};
  const double w1[] = {1.0};
  CHECK_THROWS_AS(merge_concat(aa, w1), UsageError);
  CHECK_THROWS_AS(merge_concat(std::span<const AdapterSet>{}, std::span<const double>{}), UsageError);
}

TEST_CASE("uniform merge") {
  std::mt19937_64 rng(47);
  const auto a = testing::random_adapter("a", {{"w", 4, 3, 2}}, 4.0, rng);
  const AdapterSet twins[] = {a, a};
  CHECK(max_abs_difference(merge_uniform(twins).layer("w").delta(), a.layer("w").delta(true)) < 1e-12);

  const LoraPair& p = a.layer("w");
  const AdapterSet neg("n", {LoraPair("w", p.b(), [&] {
                         MatrixF m = p.a();
                         for (auto& v : m.values()) v = -v;
                         return m;
                       }(), p.alpha())});
  const AdapterSet opposite[] = {a, neg};
  CHECK(frobenius_norm(merge_uniform(opposite).layer("w").delta()) < 1e-12);

  std::vector<AdapterSet> many;
  for (int i = 0; i < 4; ++i) many.push_back(testing::random_adapter("m" + std::to_string(i), {{"w", 4, 3, 2}}, 4.0, rng));
  const std::vector<double> equal(4, 0.25);
  CHECK(max_abs_difference(merge_uniform(many).layer("w").delta(), merge_concat(many, equal).layer("w").delta()) ==
        0.0);
}

TEST_CASE("fuse pipeline") {
  std::mt19937_64 rng(48);
  const Library lib = point_library(
      {{"a", Embedding({0, 0})}, {"b", Embedding({4, 0})}, {"c", Embedding({0, 4})}}, rng);
  FusionConfig cfg;
  cfg.top_k = 3;
  cfg.temperature = 1e-4;
  const auto at_b = fuse(Embedding({4, 0}), lib, cfg);
  CHECK(at_b.plan.selected[0].domain_id == "b");
  CHECK(max_abs_difference(at_b.layer("w").delta(), lib.record(1).adapter().layer("w").delta(true)) < 1e-6);

  cfg.top_k = 2;
  cfg.temperature = 0.5;
  const auto mid = plan_fusion(Embedding({2, 0}), lib, cfg);
  CHECK(mid.weight_of("a") == doctest::Approx(0.5));
  CHECK(mid.weight_of("b") == doctest::Approx(0.5));
  CHECK(mid.weight_of("c") == 0.0);

  const Library single = point_library({{"s", Embedding({1, 1})}}, rng);
  for (double tau : {1e-3, 1.0, 1e3}) {
    cfg.temperature = tau;
    cfg.top_k = 5;
    const auto f = fuse(Embedding({-3, 2}), single, cfg);
    CHECK(f.merged_count == 1);
    CHECK(max_abs_difference(f.layer("w").delta(), single.record(0).adapter().layer("w").delta(true)) < 1e-12);
  }
}

TEST_CASE("plan json round trip") {
  std::mt19937_64 rng(49);
  const Library lib = point_library({{"a", Embedding({0, 0})}, {"b", Embedding({1, 0})}}, rng);
  const auto plan = plan_fusion(Embedding({0.3, 0.1}), lib, FusionConfig{});
  CHECK(plan_from_json(to_json(plan)) == plan);
  CHECK(plan_from_json(to_json(plan, 2)).digest() == plan.digest());
}

TEST_CASE("apply fused deltas") {
  std::mt19937_64 rng(50);
  const auto a = testing::random_adapter("a", {{"w", 4, 3, 2}}, 4.0, rng);
  const AdapterSet only[] = {a};
  const double unit[] = {1.0};
  const auto fused = merge_concat(only, unit);
  const LayerMatrices base{{"w", testing::random_d(4, 3, rng)}};

  const auto applied = apply_fused(base, fused);
  CHECK(max_abs_difference(applied.at("w"), add(base.at("w"), a.layer("w").delta(true))) < 1e-12);
  CHECK(max_abs_difference(subtract(applied.at("w"), fused.layer("w").delta()), base.at("w")) < 1e-7);

  const AdapterSet zero_set("z", {LoraPair("w", MatrixF(4, 2), MatrixF(2, 3), 4.0)});
  const AdapterSet zero[] = {zero_set};
  CHECK(apply_fused(base, merge_concat(zero, unit)).at("w") == base.at("w"));

  const LayerMatrices wrong{{"w", Matrix(3, 3)}};
  CHECK_THROWS_AS(apply_fused(wrong, fused), StructuralError);
}

TEST_CASE("late fusion") {
  const Matrix p = Matrix::from_rows({{0.2, 0.8}});
  const Matrix same[] = {p, p};
  const double w[] = {0.4, 0.6};
  CHECK(max_abs_difference(late_fuse_outputs(same, w), p) < 1e-15);
  const Matrix pair[] = {Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 1}})};
  const double vertex[] = {1.0, 0.0};
  CHECK(late_fuse_outputs(pair, vertex) == pair[0]);
  const double mix[] = {0.3, 0.7};
  CHECK(max_abs_difference(late_fuse_outputs(pair, mix), Matrix::from_rows({{0.3, 0.7}})) < 1e-15);
  const double three[] = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(late_fuse_outputs(pair, three), UsageError);
}

TEST_CASE("plan centroid") {
  std::mt19937_64 rng(51);
  const Library lib = point_library({{"a", Embedding({0, 0})}, {"b", Embedding({2, 0})}}, rng);
  FusionConfig cfg;
  cfg.temperature = 10.0;
  const auto plan = plan_fusion(Embedding({1, 0}), lib, cfg);
  const auto c = plan_centroid(plan, lib);
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(0.0));
}

}  // TEST_SUITE
