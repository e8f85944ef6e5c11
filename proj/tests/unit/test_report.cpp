#include <regex>
#include <sstream>

#include "doctest.h"
#include "lorafuse/report.hpp"

using namespace lorafuse;

namespace {

ContributionMatrix sample_matrix() {
  ContributionMatrix m;
  m.rows = {"a", "b", "c,d"};
  m.cols = {"a", "b", "c,d"};
  m.cells = {{std::nullopt, 0.75, 0.25}, {0.04, std::nullopt, 0.96}, {0.5, 0.5, std::nullopt}};
  return m;
}

// Start/end tag balance; enough to catch unclosed or crossed elements.
bool balanced_xml(const std::string& text) {
  std::vector<std::string> stack;
  const std::regex tag(R"(<(/?)([A-Za-z][\w:-]*)[^>]*?(/?)>)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (m[3].length() > 0) continue;
    if (m[1].length() == 0) {
      stack.push_back(m[2]);
    } else {
      if (stack.empty() || stack.back() != m[2]) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("header lines") {
  std::ostringstream out;
  report::write_header(out, {"metrics", "abc", {{"fusion.tau", "0.01"}}});
  CHECK(out.str() == "# format_version: 1\n# report: metrics\n# library_digest: abc\n# fusion.tau: 0.01\n");
}

TEST_CASE("contributions round trip") {
  const auto m = sample_matrix();
  std::stringstream s;
  report::write_contributions(s, m, {"contributions", "", {}});
  const auto back = report::read_contributions(s);
  CHECK(back.rows == m.rows);
  CHECK(back.cols == m.cols);
  CHECK(back.cells == m.cells);
}

TEST_CASE("masking blanks small cells") {
  std::stringstream s;
  report::write_contributions(s, sample_matrix(), {"contributions", "", {}}, 0.1);
  CHECK(s.str().find("\nb,,NA,0.96\n") != std::string::npos);
  const auto back = report::read_contributions(s);
  CHECK(*back.cells[1][0] == 0.0);
  CHECK_FALSE(back.cells[1][1].has_value());
}

TEST_CASE("bad contribution csv") {
  std::istringstream ragged("test_domain,a,b\nx,0.5\n");
  CHECK_THROWS_AS(report::read_contributions(ragged), UsageError);
  std::istringstream junk("test_domain,a\nx,zz\n");
  CHECK_THROWS_AS(report::read_contributions(junk), UsageError);
  std::istringstream empty("# only comments\n");
  CHECK_THROWS_AS(report::read_contributions(empty), UsageError);
}

TEST_CASE("metric table layout") {
  bench::MetricTable t;
  t.methods = {"zero-shot", "fusion"};
  t.domains = {"d0", "d1"};
  t.miou = {{50, 50}, {50, 50}};
  std::ostringstream out;
  report::write_metric_table(out, t, {"metrics", "x", {}});
  const std::string s = out.str();
  CHECK(s.find("domain,zero-shot,fusion\nd0,50,50\nd1,50,50\nh-mean,50,50\n") != std::string::npos);
}

TEST_CASE("sweep and pairs") {
  bench::SweepGrid g{{1, 3}, {0.01, 0.1}, {{10, 11}, {12, 13}}};
  std::ostringstream out;
  report::write_sweep(out, g, {"sweep", "", {}});
  CHECK(out.str().find("top_k,tau=0.01,tau=0.1\n1,10,11\n3,12,13\n") != std::string::npos);
  const std::vector<std::pair<double, double>> pairs{{1.5, -2}};
  std::ostringstream p;
  report::write_pairs(p, pairs, "distance", "gain_points", {"pairs", "", {}});
  CHECK(p.str().find("distance,gain_points\n1.5,-2\n") != std::string::npos);
}

TEST_CASE("svg output is well formed") {
  const std::string heat = report::heatmap_svg(sample_matrix(), "weights <&> test");
  CHECK(heat.rfind("<svg", 0) == 0);
  CHECK(balanced_xml(heat));
  CHECK(heat.find("&lt;&amp;&gt;") != std::string::npos);

  const std::vector<std::pair<std::string, double>> slices{{"a", 0.6}, {"b", 0.38}, {"c", 0.01}, {"d", 0.01}};
  const std::string pie = report::pie_svg(slices, "pie");
  CHECK(balanced_xml(pie));
  CHECK(pie.find("other") != std::string::npos);
  CHECK(pie.find(">c<") == std::string::npos);
}

}  // TEST_SUITE
