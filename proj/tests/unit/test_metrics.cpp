#include <algorithm>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "lorafuse/metrics.hpp"

using namespace lorafuse;

namespace {

ConfusionMatrix confusion(std::size_t classes, const std::vector<std::size_t>& truth,
                          const std::vector<std::size_t>& pred) {
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

FusionPlan plan_of(std::vector<std::pair<std::string, double>> weights) {
  FusionPlan p;
  for (auto& [id, w] : weights) p.selected.push_back({id, 1.0, w});
  return p;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("miou vectors") {
  CHECK(miou(confusion(2, {0, 1, 1, 0}, {0, 1, 1, 0})) == 1.0);
  const auto cm = confusion(2, {0, 0, 1, 1}, {0, 0, 0, 0});
  CHECK(miou(cm) == doctest::Approx(0.25));
  const auto per = cm.per_class_iou();
  CHECK(*per[0] == doctest::Approx(0.5));
  CHECK(*per[1] == 0.0);
  CHECK_THROWS_AS(miou(ConfusionMatrix(3)), UsageError);
  CHECK_THROWS_AS(ConfusionMatrix(2).add(2, 0), UsageError);
}

TEST_CASE("miou matches the oracle") {
  for (const auto& c : testing::oracle()["miou"]) {
    const auto cm = confusion(c["classes"].get<std::size_t>(), c["truth"].get<std::vector<std::size_t>>(),
                              c["pred"].get<std::vector<std::size_t>>());
    CHECK(miou(cm) == doctest::Approx(c["miou"].get<double>()).epsilon(1e-12));
  }
}

TEST_CASE("miou is invariant to relabeling") {
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<std::size_t> cls(0, 4);
  std::vector<std::size_t> truth(200), pred(200);
  for (std::size_t i = 0; i < 200; ++i) {
    truth[i] = cls(rng);
    pred[i] = (i % 3 == 0) ? cls(rng) : truth[i];
  }
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto relabel = [&](std::vector<std::size_t> v) {
    for (auto& x : v) x = perm[x];
    return v;
  };
  CHECK(miou(confusion(5, truth, pred)) == doctest::Approx(miou(confusion(5, relabel(truth), relabel(pred)))));
}

TEST_CASE("confusion merge") {
  auto a = confusion(3, {0, 1}, {0, 2});
  a.merge(confusion(3, {2}, {2}));
  CHECK(a.total() == 3);
  CHECK(a.count(1, 2) == 1);
  CHECK_THROWS_AS(a.merge(ConfusionMatrix(4)), StructuralError);
}

TEST_CASE("harmonic mean") {
  CHECK(harmonic_mean(std::vector<double>{50, 50}) == 50.0);
  CHECK(harmonic_mean(std::vector<double>{40, 60}) == doctest::Approx(48.0));
  const auto& s = testing::oracle()["stats"];
  for (std::size_t i = 0; i < s["hmeans"].size(); ++i) {
    CHECK(harmonic_mean(s["hmean_inputs"][i].get<std::vector<double>>()) ==
          doctest::Approx(s["hmeans"][i].get<double>()).epsilon(1e-14));
  }
  CHECK_THROWS_AS(harmonic_mean(std::vector<double>{10, 0}), UsageError);
  CHECK_THROWS_AS(harmonic_mean(std::vector<double>{10, -1}), UsageError);
  CHECK_THROWS_AS(harmonic_mean(std::vector<double>{}), UsageError);
  CHECK(arithmetic_mean(std::vector<double>{1, 2, 6}) == 3.0);
}

TEST_CASE("contribution matrix") {
  const std::vector<TaggedPlan> one{{"t", plan_of({{"a", 0.6}, {"b", 0.4}})}};
  auto m = contribution_matrix(one);
  CHECK(*m.cell("t", "a") == doctest::Approx(0.6));
  CHECK(*m.cell("t", "b") == doctest::Approx(0.4));

  const std::vector<TaggedPlan> two{{"t", plan_of({{"a", 1.0}})}, {"t", plan_of({{"b", 1.0}})}};
  m = contribution_matrix(two);
  CHECK(*m.cell("t", "a") == doctest::Approx(0.5));
  CHECK(*m.cell("t", "b") == doctest::Approx(0.5));
  CHECK(m.row_sum(0) == doctest::Approx(1.0));

  // Order of arrival does not matter.
  const std::vector<TaggedPlan> swapped{two[1], two[0]};
  CHECK(contribution_matrix(swapped).cells == m.cells);
}

TEST_CASE("unavailable adapters are absent cells") {
  ContributionAccumulator acc;
  const std::vector<std::string> for_x{"b", "c"};
  const std::vector<std::string> for_y{"a", "c"};
  acc.declare_available("x", for_x);
  acc.declare_available("y", for_y);
  acc.add("x", plan_of({{"b", 1.0}}));
  acc.add("y", plan_of({{"a", 0.25}, {"c", 0.75}}));
  const auto m = acc.finish();
  CHECK_FALSE(m.cell("x", "a").has_value());
  CHECK(*m.cell("x", "c") == 0.0);
  CHECK_FALSE(m.cell("y", "b").has_value());
  CHECK(acc.plan_count("x") == 1);
}

TEST_CASE("support score") {
  for (const auto& c : testing::oracle()["support"]) {
    FusionPlan p;
    const auto w = c["weights"].get<std::vector<double>>();
    const auto d = c["distances"].get<std::vector<double>>();
    for (std::size_t i = 0; i < w.size(); ++i) p.selected.push_back({std::to_string(i), d[i], w[i]});
    CHECK(support_score(p) == doctest::Approx(c["score"].get<double>()));
  }
  FusionPlan exact;
  exact.selected.push_back({"a", 0.0, 1.0});
  CHECK(support_score(exact) == doctest::Approx(1e12));
}

TEST_CASE("correlation") {
  const std::vector<std::pair<double, double>> anti{{0, 3}, {1, 2}, {2, 1}, {3, 0}};
  CHECK(distance_performance_correlation(anti).pearson_r == doctest::Approx(-1.0));
  const std::vector<std::pair<double, double>> flat{{0, 1}, {1, 1}, {2, 1}};
  CHECK_THROWS_AS(distance_performance_correlation(flat), UsageError);

  const auto& s = testing::oracle()["stats"];
  std::vector<std::pair<double, double>> pairs;
  for (const auto& p : s["pairs"]) pairs.emplace_back(p[0].get<double>(), p[1].get<double>());
  const auto c = distance_performance_correlation(pairs);
  CHECK(c.pearson_r == doctest::Approx(s["pearson_r"].get<double>()).epsilon(1e-12));
  CHECK(c.slope == doctest::Approx(s["slope"].get<double>()).epsilon(1e-12));
  CHECK(c.intercept == doctest::Approx(s["intercept"].get<double>()).epsilon(1e-10));
  CHECK(c.count == pairs.size());
}

}  // TEST_SUITE
