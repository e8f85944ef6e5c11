#include <fstream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "lorafuse/bench/harness.hpp"
#include "lorafuse/report.hpp"
#include "lorafuse/storage.hpp"

using namespace lorafuse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream s(text);
  std::string line;
  while (std::getline(s, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// Default synthetic library plus inputs, written once per process.
const fs::path& synth_root() {
  static const fs::path root = [] {
    auto dir = testing::scratch_dir("cli-synth");
    const auto r = run({"synth", "--out", dir.string(), "--seed", "0"});
    REQUIRE(r.code == 0);
    return dir;
  }();
  return root;
}

// Three point domains on the axes of a 4-d space.
fs::path axis_library() {
  static const fs::path dir = [] {
    std::mt19937_64 rng(5);
    Library lib;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> c(4, 0.0);
      c[i] = 10.0;
      const std::vector<Embedding> e{Embedding(c)};
      const std::string id = "axis-" + std::to_string(i);
      lib = extend(lib, build_record(id, e, std::make_shared<const AdapterSet>(
                                                testing::random_adapter(id, {{"w", 3, 3, 1}}, 1.0, rng))));
    }
    auto d = testing::scratch_dir("cli-axis");
    save_library(lib, d);
    return d;
  }();
  return dir;
}

std::string two_shift_lines() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::ostringstream s;
  s << "# two shifts\n";
  for (int seg = 0; seg < 3; ++seg) {
    for (int n = 0; n < 15; ++n) {
      for (int k = 0; k < 4; ++k) s << (k == seg ? 10.0 : 0.0) + noise(rng) << (k < 3 ? ' ' : '\n');
    }
  }
  return s.str();
}

std::size_t fusion_events(const std::string& out) {
  std::size_t n = 0;
  for (const auto& j : json_lines(out))
    if (j.contains("swapped") && j["swapped"].get<bool>()) ++n;
  return n;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"--help"}).code == cli::kOk);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"query", "--library", "x"}).code == cli::kUsage);
  CHECK(run({"eval", "--protocol", "sideways"}).code == cli::kUsage);
}

TEST_CASE("build from a stub is deterministic") {
  const auto& root = synth_root();
  const auto lib_a = testing::scratch_dir("cli-build-a");
  const auto lib_b = testing::scratch_dir("cli-build-b");
  const auto stub = (root / "inputs" / "stub.json").string();
  const auto a = run({"build", "--stub", stub, "--out", lib_a.string()});
  REQUIRE(a.code == 0);
  CHECK(a.out.rfind("M=10 embedding_dim=32", 0) == 0);
  REQUIRE(run({"build", "--stub", stub, "--library", lib_b.string()}).code == 0);
  for (const auto& entry : fs::directory_iterator(lib_a))
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(lib_b / entry.path().filename()));
  CHECK(load_library(lib_a).digest() == load_library(root / "library").digest());
}

TEST_CASE("build names the domain with a mismatched rank") {
  const auto dir = testing::scratch_dir("cli-badrank");
  std::mt19937_64 rng(7);
  json stub = {{"domains", json::array()}};
  for (int i = 0; i < 3; ++i) {
    const std::string id = "dom" + std::to_string(i);
    const std::size_t rank = i == 2 ? 1 : 2;
    const auto set = testing::random_adapter(id, {{"w", 4, 4, rank}}, 2.0, rng);
    write_file_bytes(dir / (id + ".bin"), encode_adapter_blob(set));
    std::vector<Embedding> e{testing::random_embedding(3, rng), testing::random_embedding(3, rng)};
    write_embedding_file(dir / (id + ".emb"), e);
    json layer = {{"name", "w"}, {"out_dim", 4}, {"in_dim", 4}, {"rank", rank}, {"alpha", 2.0}};
    json adapter = {{"blob", id + ".bin"}, {"layers", json::array({layer})}};
    stub["domains"].push_back({{"domain_id", id}, {"embeddings", id + ".emb"}, {"adapter", adapter}});
  }
  std::ofstream(dir / "stub.json") << stub.dump();
  const auto r = run({"build", "--stub", (dir / "stub.json").string(), "--out", (dir / "lib").string()});
  CHECK(r.code == cli::kStructural);
  CHECK(r.err.find("dom2") != std::string::npos);
}

TEST_CASE("query at a centroid") {
  const auto& root = synth_root();
  const Library lib = load_library(root / "library");
  const auto target = lib.record(4).centroid();
  const auto q = testing::scratch_dir("cli-query") / "q.emb";
  write_embedding_file(q, std::vector<Embedding>{target});
  const auto r = run({"query", "--library", (root / "library").string(), "--embedding", q.string(), "--tau",
                      "1e-4", "--top-k", "3"});
  REQUIRE(r.code == 0);
  const auto plan = json_lines(r.out).at(0);
  CHECK(plan["selected"][0]["domain_id"] == lib.record(4).domain_id());
  CHECK(plan["selected"][0]["weight"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("printed weights sum to one") {
  const auto& root = synth_root();
  const auto r = run({"query", "--library", (root / "library").string(), "--embedding",
                      (root / "queries.emb").string(), "--tau", "0.05"});
  REQUIRE(r.code == 0);
  const auto plans = json_lines(r.out);
  CHECK(plans.size() == 160);
  for (const auto& p : plans) {
    double s = 0.0;
    for (const auto& e : p["selected"]) s += e["weight"].get<double>();
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("merge-out writes a blob and sidecar") {
  const auto& root = synth_root();
  const auto out = testing::scratch_dir("cli-merge") / "fused.bin";
  const auto r = run({"query", "--library", (root / "library").string(), "--embedding",
                      (root / "queries.emb").string(), "--row", "3", "--merge-out", out.string(), "--top-k", "2"});
  REQUIRE(r.code == 0);
  std::ifstream side(out.string() + ".json");
  const auto j = json::parse(side);
  CHECK(j["merged_count"] == 2);
  CHECK(read_file_bytes(out).size() == j["bytes"].get<std::size_t>());
  CHECK(crc32(read_file_bytes(out)) == j["crc32"].get<std::uint32_t>());

  CHECK(run({"query", "--library", (root / "library").string(), "--embedding", (root / "queries.emb").string(),
             "--merge-out", out.string()})
            .code == cli::kUsage);
}

TEST_CASE("mahalanobis on an ineligible library") {
  const auto& root = synth_root();
  const auto r = run({"query", "--library", (root / "library").string(), "--embedding",
                      (root / "queries.emb").string(), "--row", "0", "--metric", "mahalanobis"});
  CHECK(r.code == cli::kStructural);
  CHECK(r.err.find("no candidates") != std::string::npos);
}

TEST_CASE("corrupt library exits as data error") {
  const auto dir = testing::scratch_dir("cli-corrupt");
  fs::copy(axis_library(), dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto bytes = read_file_bytes(dir / "adapter-000.bin");
  bytes[0] ^= std::byte{0x80};
  write_file_bytes(dir / "adapter-000.bin", bytes);
  const auto r = run({"stream", "--library", dir.string(), "--threshold", "1"}, "10 0 0 0\n");
  CHECK(r.code == cli::kStructural);
  CHECK(r.err.find("adapter-000.bin") != std::string::npos);
}

TEST_CASE("stream thresholds") {
  const std::string lib = axis_library().string();
  const std::string lines = two_shift_lines();
  auto fusions = [&](const std::string& threshold) {
    const auto r = run({"stream", "--library", lib, "--beta", "0.2", "--threshold", threshold, "--top-k", "1"},
                       lines);
    REQUIRE(r.code == 0);
    const auto last = json_lines(r.out).back();
    CHECK(last["fusions"].get<std::size_t>() == fusion_events(r.out));
    return fusion_events(r.out);
  };
  CHECK(fusions("inf") == 1);
  CHECK(fusions("0") == 45);
  CHECK(fusions("3") == 3);
  CHECK(run({"stream", "--library", lib}, lines).code == cli::kUsage);
  CHECK(run({"stream", "--library", lib, "--threshold", "-1"}, lines).code == cli::kUsage);
  CHECK(run({"stream", "--library", lib, "--threshold", "1"}, "1 2 3\n").code == cli::kStructural);
}

TEST_CASE("stream batch mode") {
  const auto r = run({"stream", "--library", axis_library().string(), "--clusters", "3"}, two_shift_lines());
  REQUIRE(r.code == 0);
  const auto last = json_lines(r.out).back();
  CHECK(last["fuse_calls"] == 3);
  CHECK(last["inputs"] == 45);
}

TEST_CASE("eval writes the report bundle") {
  const auto dir = testing::scratch_dir("cli-eval");
  const auto r = run({"eval", "--report-dir", dir.string(), "--sweep", "--sweep-k", "1,3", "--sweep-tau",
                      "0.01,0.05", "--svg"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("domain,zero-shot,uniform,fusion,fusion-late,uniform-late,oracle") != std::string::npos);
  for (const char* name : {"metrics.csv", "contributions.csv", "correlation.csv", "support.csv", "compounds.csv",
                           "plans.jsonl", "sweep.csv", "bundle.json", "heatmap.svg"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir / name));
  }
  std::ifstream b(dir / "bundle.json");
  const auto bundle = json::parse(b);
  CHECK(bundle["status"] == "ok");
  CHECK(bundle["leaked"].empty());
  CHECK(bundle["hmean"]["fusion"].get<double>() > bundle["hmean"]["uniform"].get<double>());

  // Sweep CSV matches the library call.
  const auto bench = bench::prepare_benchmark(bench::BenchmarkConfig{});
  const std::size_t ks[] = {1, 3};
  const double taus[] = {0.01, 0.05};
  const auto grid = bench::sweep_hyperparameters(bench, bench.config.fusion, ks, taus);
  std::ifstream sweep(dir / "sweep.csv");
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(sweep, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1] == "1," + format_double(grid.hmean[0][0]) + "," + format_double(grid.hmean[0][1]));
  CHECK(rows[2] == "3," + format_double(grid.hmean[1][0]) + "," + format_double(grid.hmean[1][1]));

  const auto svg = dir / "plot.svg";
  CHECK(run({"plot", "--contributions", (dir / "contributions.csv").string(), "--out", svg.string()}).code == 0);
  CHECK(fs::exists(svg));
  CHECK(run({"plot", "--contributions", (dir / "contributions.csv").string(), "--out", svg.string(), "--pie",
             "nope"})
            .code == cli::kUsage);
}

TEST_CASE("all-inclusive at a cold temperature tracks the oracle") {
  const auto dir = testing::scratch_dir("cli-allinc");
  const auto r = run({"eval", "--protocol", "all-inclusive", "--tau", "1e-4", "--report-dir", dir.string()});
  REQUIRE(r.code == 0);
  std::ifstream b(dir / "bundle.json");
  const auto bundle = json::parse(b);
  const auto& gaps = bundle.at("max_gap_to_oracle");
  REQUIRE(gaps.size() == 2);
  CHECK(gaps.at(format_double(1e-4)).get<double>() < 1e-3);
}

TEST_CASE("eval failure leaves a marker") {
  const auto dir = testing::scratch_dir("cli-fail");
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"trainer": {"learning_rate": 1e6, "loss": "squared"}})";
  const auto r = run({"eval", "--config", cfg.string(), "--report-dir", (dir / "out").string()});
  CHECK(r.code == cli::kNumeric);
  CHECK(fs::exists(dir / "out" / "FAILED"));
  std::ofstream(cfg) << R"({"fusion": {"bogus": 1}})";
  CHECK(run({"eval", "--config", cfg.string()}).code == cli::kUsage);
}
