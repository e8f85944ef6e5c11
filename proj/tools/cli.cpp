#include "cli.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <optional>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lorafuse/bench/config.hpp"
#include "lorafuse/bench/harness.hpp"
#include "lorafuse/digest.hpp"
#include "lorafuse/fusion.hpp"
#include "lorafuse/library.hpp"
#include "lorafuse/metrics.hpp"
#include "lorafuse/report.hpp"
#include "lorafuse/storage.hpp"
#include "lorafuse/stream.hpp"

namespace lorafuse::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Flags shared by the retrieval subcommands.
struct FusionFlags {
  std::size_t top_k = FusionConfig{}.top_k;
  double tau = FusionConfig{}.temperature;
  std::string metric = "euclidean";
  bool normalize = false;

  void attach(CLI::App* app) {
    app->add_option("--top-k", top_k, "Adapters merged per query")->capture_default_str();
    app->add_option("--tau", tau, "Softmax temperature")->capture_default_str();
    app->add_option("--metric", metric, "euclidean | cosine | mahalanobis")
        ->check(CLI::IsMember({"euclidean", "cosine", "mahalanobis"}))
        ->capture_default_str();
    app->add_flag("--normalize", normalize, "L2-normalize query embeddings");
  }

  FusionConfig config() const {
    FusionConfig c;
    c.top_k = top_k;
    c.temperature = tau;
    c.metric = parse_metric(metric);
    c.normalize_query = normalize;
    c.validate();
    return c;
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

double parse_threshold(const std::string& text) {
  if (text == "inf" || text == "+inf" || text == "infinity") {
    return std::numeric_limits<double>::infinity();
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(v >= 0.0)) {
    throw UsageError("--threshold must be a nonnegative number or 'inf', got '" + text + "'");
  }
  return v;
}

json header_json(const report::ReportHeader& h) {
  json cfg = json::object();
  for (const auto& [k, v] : h.config) cfg[k] = v;
  return {{"format_version", report::kReportFormatVersion},
          {"report", h.kind},
          {"library_digest", h.library_digest},
          {"config", std::move(cfg)}};
}

// Fused factors as little-endian float32, B before A per layer, with a JSON
// sidecar describing the layers.
void write_fused(const fs::path& path, const FusedAdapter& fused) {
  std::vector<float> values;
  json layers = json::array();
  for (const auto& l : fused.layers) {
    for (double v : l.b.values()) values.push_back(static_cast<float>(v));
    for (double v : l.a.values()) values.push_back(static_cast<float>(v));
    layers.push_back({{"name", l.name},
                      {"out_dim", l.b.rows()},
                      {"in_dim", l.a.cols()},
                      {"rank", l.b.cols()},
                      {"scaling", l.scaling}});
  }
  std::vector<std::byte> bytes(values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (std::size_t b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<std::byte>(bits >> (8 * b));
  }
  write_file_bytes(path, bytes);
  const json side = {{"format_version", 1},
                     {"blob", path.filename().string()},
                     {"bytes", bytes.size()},
                     {"crc32", crc32(bytes)},
                     {"merged_count", fused.merged_count},
                     {"layers", std::move(layers)},
                     {"plan", json::parse(to_json(fused.plan))}};
  write_text(path.string() + ".json", side.dump(2) + "\n");
}

// ---------------------------------------------------------------- build

struct BuildArgs {
  std::string stub;
  std::string out;
  bool normalize = false;
  std::size_t min_samples = RecordOptions{}.min_samples;
  double ridge = RecordOptions{}.ridge;
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  const fs::path stub_path(a.stub);
  json stub;
  try {
    stub = json::parse(read_text(stub_path));
  } catch (const json::parse_error& e) {
    throw LoadError(LoadErrorCode::kMalformedManifest, a.stub + ": " + e.what());
  }
  const fs::path base = stub_path.parent_path();
  RecordOptions opts{a.ridge, a.min_samples, a.normalize};
  Library lib;
  try {
    for (const auto& d : stub.at("domains")) {
      const std::string id = d.at("domain_id").get<std::string>();
      const auto embeddings = read_embedding_file(base / d.at("embeddings").get<std::string>());
      const auto& ad = d.at("adapter");
      std::vector<LayerSpec> specs;
      for (const auto& l : ad.at("layers")) {
        specs.push_back({l.at("name").get<std::string>(), l.at("out_dim").get<std::size_t>(),
                         l.at("in_dim").get<std::size_t>(), l.at("rank").get<std::size_t>(),
                         l.at("alpha").get<double>()});
      }
      const auto blob_name = ad.at("blob").get<std::string>();
      const auto bytes = read_file_bytes(base / blob_name);
      Metadata meta;
      if (d.contains("metadata")) meta = d.at("metadata").get<Metadata>();
      try {
        auto adapter = std::make_shared<const AdapterSet>(
            decode_adapter_blob(bytes, id, specs, meta, blob_name));
        lib = extend(lib, build_record(id, embeddings, std::move(adapter), opts));
      } catch (const StructuralError& e) {
        throw StructuralError("domain '" + id + "': " + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorCode::kMalformedManifest, a.stub + ": " + e.what());
  }
  save_library(lib, a.out);
  out << "M=" << lib.size() << " embedding_dim=" << lib.embedding_dim() << '\n';
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const auto& r = lib.record(i);
    out << r.domain_id() << " samples=" << r.sample_count()
        << " covariance=" << (r.mahalanobis_eligible() ? "yes" : "no") << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- query

struct QueryArgs {
  std::string library;
  std::string embedding;
  long row = -1;
  std::string merge_out;
  FusionFlags fusion;
};

int cmd_query(const QueryArgs& a, std::ostream& out) {
  const FusionConfig cfg = a.fusion.config();
  const Library lib = load_library(a.library);
  auto queries = read_embedding_file(a.embedding);
  if (a.row >= 0) {
    if (static_cast<std::size_t>(a.row) >= queries.size()) {
      throw UsageError("--row " + std::to_string(a.row) + " out of range for " +
                       std::to_string(queries.size()) + " embeddings");
    }
    queries = {queries[static_cast<std::size_t>(a.row)]};
  }
  if (!a.merge_out.empty() && queries.size() != 1) {
    throw UsageError("--merge-out needs exactly one query; pick one with --row");
  }
  for (const auto& q : queries) {
    if (a.merge_out.empty()) {
      out << to_json(plan_fusion(q, lib, cfg)) << '\n';
    } else {
      const FusedAdapter fused = fuse(q, lib, cfg);
      write_fused(a.merge_out, fused);
      out << to_json(fused.plan) << '\n';
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string config;
  std::string protocol = "leave-one-out";
  bool sweep = false;
  std::vector<std::size_t> sweep_k{1, 3, 5, 7, 9};
  std::vector<double> sweep_tau{1e-3, 5e-3, 0.01, 0.05, 0.1};
  std::string report_dir;
  std::uint64_t seed = 0;
  double tau_high = 0.05;
  bool svg = false;
  std::size_t threads = 0;
  FusionFlags fusion;
  const CLI::App* app = nullptr;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  bench::BenchmarkConfig cfg;
  if (!a.config.empty()) cfg = bench::benchmark_config_from_json(read_text(a.config));
  // Flags given on the command line override the file.
  auto given = [&](const char* name) { return a.app->count(name) > 0; };
  if (given("--seed") || a.config.empty()) cfg.seed = a.seed;
  if (given("--threads")) cfg.threads = a.threads;
  if (given("--top-k")) cfg.fusion.top_k = a.fusion.top_k;
  if (given("--tau")) cfg.fusion.temperature = a.fusion.tau;
  if (given("--metric")) cfg.fusion.metric = parse_metric(a.fusion.metric);
  if (a.fusion.normalize) cfg.fusion.normalize_query = true;
  cfg.fusion.validate();

  const fs::path dir(a.report_dir);
  if (!a.report_dir.empty()) fs::create_directories(dir);

  report::ReportHeader header;
  header.config = bench::flatten_config(cfg);
  header.config.emplace_back("protocol", a.protocol);
  if (a.protocol == "all-inclusive") header.config.emplace_back("tau_high", format_double(a.tau_high));

  json bundle;
  auto emit = [&](const std::string& name, const std::string& kind, auto&& writer) {
    if (a.report_dir.empty()) return;
    report::ReportHeader h = header;
    h.kind = kind;
    std::ofstream f(dir / name, std::ios::trunc);
    if (!f) throw UsageError("cannot write " + (dir / name).string());
    writer(f, h);
    bundle["files"].push_back(name);
  };

  try {
    const bench::PreparedBenchmark bench = bench::prepare_benchmark(cfg);
    header.library_digest = bench.library.digest();
    bundle["header"] = header_json([&] {
      auto h = header;
      h.kind = "bundle";
      return h;
    }());
    bundle["files"] = json::array();

    if (a.protocol == "leave-one-out") {
      const auto rep = bench::run_leave_one_out(bench, cfg.fusion);
      report::write_metric_table(out, rep.table, {"metrics", header.library_digest, header.config});
      emit("metrics.csv", "metrics", [&](std::ostream& f, const auto& h) {
        report::write_metric_table(f, rep.table, h);
      });
      emit("contributions.csv", "contributions", [&](std::ostream& f, const auto& h) {
        report::write_contributions(f, rep.contributions, h);
      });
      emit("correlation.csv", "distance-gain pairs", [&](std::ostream& f, const auto& h) {
        report::write_pairs(f, rep.distance_vs_gain, "distance", "gain_points", h);
      });
      emit("support.csv", "support-accuracy pairs", [&](std::ostream& f, const auto& h) {
        report::write_pairs(f, rep.support_vs_accuracy, "support_score", "accuracy_percent", h);
      });
      const auto compounds = bench::run_compound_analysis(bench, cfg.fusion);
      if (!compounds.empty()) {
        emit("compounds.csv", "compounds", [&](std::ostream& f, const auto& h) {
          report::write_compounds(f, compounds, h);
        });
      }
      json hmeans = json::object();
      for (const auto& m : rep.table.methods) hmeans[m] = rep.table.hmean(m);
      bundle["hmean"] = std::move(hmeans);
      bundle["leaked"] = rep.leaked;
      try {
        const auto c = distance_performance_correlation(rep.distance_vs_gain);
        bundle["distance_gain"] = {{"pearson_r", c.pearson_r}, {"slope", c.slope}, {"count", c.count}};
      } catch (const UsageError&) {
        bundle["distance_gain"] = nullptr;
      }
      if (!a.report_dir.empty()) {
        std::ofstream plans(dir / "plans.jsonl", std::ios::trunc);
        for (const auto& p : rep.plans) {
          json line = json::parse(to_json(p.plan));
          line["test_domain"] = p.test_domain;
          plans << line.dump() << '\n';
        }
        bundle["files"].push_back("plans.jsonl");
      }
      if (a.svg && !a.report_dir.empty()) {
        write_text(dir / "heatmap.svg", report::heatmap_svg(rep.contributions, "adapter contribution"));
        bundle["files"].push_back("heatmap.svg");
        for (const auto& c : compounds) {
          const std::string name = "pie-" + c.compound_id + ".svg";
          write_text(dir / name, report::pie_svg(c.mean_weights, c.compound_id));
          bundle["files"].push_back(name);
        }
      }
    } else if (a.protocol == "all-inclusive") {
      const std::vector<double> taus{cfg.fusion.temperature, a.tau_high};
      const auto rep = bench::run_all_inclusive(bench, cfg.fusion, taus);
      report::write_metric_table(out, rep.table, {"metrics", header.library_digest, header.config});
      emit("metrics.csv", "metrics", [&](std::ostream& f, const auto& h) {
        report::write_metric_table(f, rep.table, h);
      });
      json gaps = json::object();
      for (std::size_t i = 0; i < taus.size(); ++i)
        gaps[format_double(taus[i])] = rep.max_gap_to_oracle[i];
      bundle["max_gap_to_oracle"] = std::move(gaps);
    } else {
      throw UsageError("--protocol must be leave-one-out or all-inclusive");
    }

    if (a.sweep) {
      const auto grid = bench::sweep_hyperparameters(bench, cfg.fusion, a.sweep_k, a.sweep_tau);
      emit("sweep.csv", "sweep", [&](std::ostream& f, const auto& h) {
        report::write_sweep(f, grid, h);
      });
      if (a.report_dir.empty()) report::write_sweep(out, grid, {"sweep", header.library_digest, header.config});
      bundle["sweep_best"] = {{"top_k", grid.top_ks[grid.best().first]},
                              {"tau", grid.temperatures[grid.best().second]},
                              {"on_corner", grid.best_on_corner()}};
    }
    bundle["status"] = "ok";
  } catch (const std::exception& e) {
    if (!a.report_dir.empty()) {
      bundle["status"] = "failed";
      bundle["error"] = e.what();
      write_text(dir / "bundle.json", bundle.dump(2) + "\n");
      write_text(dir / "FAILED", std::string(e.what()) + "\n");
    }
    throw;
  }
  if (!a.report_dir.empty()) write_text(dir / "bundle.json", bundle.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------- stream

struct StreamArgs {
  std::string library;
  std::string input = "-";
  double beta = 0.9;
  std::string threshold;
  std::size_t clusters = 0;
  std::uint64_t seed = 0;
  FusionFlags fusion;
};

// Tokens of one stream line; nullopt for blank and comment lines.
std::optional<std::vector<double>> parse_stream_line(const std::string& line, std::size_t line_no) {
  const auto start = line.find_first_not_of(" \t\r");
  if (start == std::string::npos || line[start] == '#') return std::nullopt;
  std::istringstream s(line);
  std::vector<double> values;
  std::string token;
  while (s >> token) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || !std::isfinite(v)) {
      throw LoadError(LoadErrorCode::kMalformedEmbeddings,
                      "stream line " + std::to_string(line_no) + ": bad value '" + token + "'");
    }
    values.push_back(v);
  }
  return values;
}

// One embedding per line. A leading "<dim> <N>" header is skipped when the
// library dimension is not 2, so embedding files can be streamed directly.
class StreamReader {
 public:
  StreamReader(std::istream& in, std::size_t dim) : in_(in), dim_(dim) {}

  std::optional<Embedding> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      auto values = parse_stream_line(line, line_no_);
      if (!values) continue;
      const bool first = !seen_data_;
      seen_data_ = true;
      if (first && values->size() == 2 && dim_ != 2) continue;
      if (values->size() != dim_) {
        throw StructuralError("stream line " + std::to_string(line_no_) + ": expected " +
                              std::to_string(dim_) + " values, found " +
                              std::to_string(values->size()));
      }
      return Embedding(std::move(*values));
    }
    return std::nullopt;
  }

 private:
  std::istream& in_;
  std::size_t dim_;
  std::size_t line_no_ = 0;
  bool seen_data_ = false;
};

int cmd_stream(const StreamArgs& a, std::istream& in, std::ostream& out) {
  const FusionConfig cfg = a.fusion.config();
  const double threshold = a.clusters > 0 ? 0.0 : parse_threshold(a.threshold);
  if (!(a.beta >= 0.0 && a.beta < 1.0)) throw UsageError("--beta must lie in [0, 1)");
  const Library lib = load_library(a.library);

  std::ifstream file;
  std::istream* src = &in;
  if (a.input != "-") {
    file.open(a.input);
    if (!file) throw LoadError(LoadErrorCode::kMissingFile, "cannot open " + a.input);
    src = &file;
  }

  if (a.clusters > 0) {
    StreamReader reader(*src, lib.embedding_dim());
    std::vector<Embedding> embeddings;
    while (auto e = reader.next()) embeddings.push_back(std::move(*e));
    const auto batch = batch_cluster_fuse(embeddings, lib, cfg, a.clusters, a.seed);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
      const auto c = batch.assignment[i];
      out << json{{"index", i}, {"cluster", c}, {"plan_digest", batch.fused[c].plan.digest()}}.dump()
          << '\n';
    }
    out << json{{"summary", true}, {"inputs", embeddings.size()}, {"fuse_calls", batch.fuse_calls}}.dump()
        << '\n';
    return kOk;
  }

  StreamAdapter adapter(lib, cfg, a.beta, threshold);
  // Events are written as lines arrive.
  StreamReader reader(*src, lib.embedding_dim());
  std::size_t pushed = 0;
  while (auto e = reader.next()) {
    out << to_json(adapter.push(*e)) << '\n';
    out.flush();
    ++pushed;
  }
  out << json{{"summary", true},
              {"inputs", pushed},
              {"fusions", adapter.state().fusion_count()},
              {"swaps", adapter.state().swap_count()}}
             .dump()
      << '\n';
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, const CLI::App* app, std::ostream& out) {
  bench::BenchmarkConfig cfg;
  if (!a.config.empty()) cfg = bench::benchmark_config_from_json(read_text(a.config));
  if (a.config.empty() || app->count("--seed")) cfg.seed = a.seed;
  const auto bench = bench::prepare_benchmark(cfg);
  const fs::path root(a.out);
  const fs::path inputs = root / "inputs";
  fs::create_directories(inputs);
  save_library(bench.library, root / "library");

  json stub = {{"domains", json::array()}};
  std::vector<Embedding> queries;
  for (std::size_t i = 0; i < bench.domains.size(); ++i) {
    const auto& id = bench.domains[i].domain_id;
    const auto train = bench.data[i].train_embeddings();
    write_embedding_file(inputs / (id + ".emb"), train);
    const auto& adapter = bench.training[i].adapter;
    write_file_bytes(inputs / (id + ".bin"), encode_adapter_blob(adapter));
    json layers = json::array();
    for (const auto& l : layer_table(adapter)) {
      layers.push_back({{"name", l.name},
                        {"out_dim", l.out_dim},
                        {"in_dim", l.in_dim},
                        {"rank", l.rank},
                        {"alpha", l.alpha}});
    }
    stub["domains"].push_back({{"domain_id", id},
                               {"embeddings", id + ".emb"},
                               {"adapter", {{"blob", id + ".bin"}, {"layers", std::move(layers)}}}});
    for (const auto& img : bench.data[i].test) queries.push_back(img.embedding);
  }
  write_text(inputs / "stub.json", stub.dump(2) + "\n");
  write_embedding_file(root / "queries.emb", queries);
  write_text(root / "config.json", bench::benchmark_config_to_json(cfg) + "\n");
  out << "library " << (root / "library").string() << " M=" << bench.library.size()
      << " embedding_dim=" << bench.library.embedding_dim() << " digest=" << bench.library.digest()
      << '\n';
  out << "queries " << (root / "queries.emb").string() << " N=" << queries.size() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- plot

struct PlotArgs {
  std::string contributions;
  std::string out;
  std::string pie_row;
  std::string title;
  double mask = 0.1;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  std::ifstream in(a.contributions);
  if (!in) throw LoadError(LoadErrorCode::kMissingFile, "cannot open " + a.contributions);
  const ContributionMatrix m = report::read_contributions(in);
  std::string svg;
  if (a.pie_row.empty()) {
    svg = report::heatmap_svg(m, a.title.empty() ? "adapter contribution" : a.title, a.mask);
  } else {
    const auto it = std::find(m.rows.begin(), m.rows.end(), a.pie_row);
    if (it == m.rows.end()) throw UsageError("no row '" + a.pie_row + "' in " + a.contributions);
    const auto& cells = m.cells[static_cast<std::size_t>(it - m.rows.begin())];
    std::vector<std::pair<std::string, double>> slices;
    for (std::size_t c = 0; c < m.cols.size(); ++c)
      if (cells[c] && *cells[c] > 0.0) slices.emplace_back(m.cols[c], *cells[c]);
    svg = report::pie_svg(slices, a.title.empty() ? a.pie_row : a.title, a.mask);
  }
  write_text(a.out, svg);
  out << "wrote " << a.out << '\n';
  return kOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kUsage;
    case ErrorKind::kStructural:
    case ErrorKind::kData: return kStructural;
    case ErrorKind::kNumeric: return kNumeric;
  }
  return kStructural;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Retrieve, weight and merge low-rank adapters by embedding proximity", "lorafuse"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* c_build = app.add_subcommand("build", "Assemble a library directory from a manifest stub");
  c_build->add_option("--stub", build.stub, "JSON stub listing domains, embeddings and blobs")->required();
  c_build->add_option("--out,--library", build.out, "Output library directory")->required();
  c_build->add_flag("--normalize", build.normalize, "L2-normalize embeddings before indexing");
  c_build->add_option("--min-samples", build.min_samples, "Samples needed to keep a covariance")
      ->capture_default_str();
  c_build->add_option("--ridge", build.ridge, "Covariance ridge")->capture_default_str();

  QueryArgs query;
  auto* c_query = app.add_subcommand("query", "Print the fusion plan for query embeddings");
  c_query->add_option("--library", query.library, "Library directory")->required();
  c_query->add_option("--embedding", query.embedding, "Embedding file")->required();
  c_query->add_option("--row", query.row, "Use only this row of the embedding file");
  c_query->add_option("--merge-out", query.merge_out, "Write the fused adapter blob here");
  query.fusion.attach(c_query);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Run the synthetic benchmark");
  c_eval->add_option("--config", eval.config, "Benchmark config JSON");
  c_eval->add_option("--protocol", eval.protocol, "leave-one-out | all-inclusive")
      ->check(CLI::IsMember({"leave-one-out", "all-inclusive"}))
      ->capture_default_str();
  c_eval->add_flag("--sweep", eval.sweep, "Also run the K x tau sweep");
  c_eval->add_option("--sweep-k", eval.sweep_k, "K values of the sweep")->delimiter(',');
  c_eval->add_option("--sweep-tau", eval.sweep_tau, "Temperatures of the sweep")->delimiter(',');
  c_eval->add_option("--report-dir", eval.report_dir, "Directory for CSV, JSON and SVG reports");
  c_eval->add_option("--seed", eval.seed, "Benchmark seed")->capture_default_str();
  c_eval->add_option("--tau-high", eval.tau_high, "Second all-inclusive temperature")
      ->capture_default_str();
  c_eval->add_flag("--svg", eval.svg, "Also write heatmap and pie SVGs");
  c_eval->add_option("--threads", eval.threads, "Worker threads (0 = all cores)");
  eval.fusion.attach(c_eval);
  eval.app = c_eval;

  StreamArgs stream;
  auto* c_stream = app.add_subcommand("stream", "Debounced fusion over an embedding stream");
  c_stream->add_option("--library", stream.library, "Library directory")->required();
  c_stream->add_option("--input", stream.input, "Embedding lines ('-' for stdin)")
      ->capture_default_str();
  c_stream->add_option("--beta", stream.beta, "EMA decay")->capture_default_str();
  auto* threshold =
      c_stream->add_option("--threshold", stream.threshold, "Swap threshold (number or inf)");
  c_stream->add_option("--clusters", stream.clusters, "Batch mode: k-means clusters, one fuse each");
  c_stream->add_option("--seed", stream.seed, "k-means seed")->capture_default_str();
  stream.fusion.attach(c_stream);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic library, inputs and queries");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--config", synth.config, "Benchmark config JSON");
  c_synth->add_option("--seed", synth.seed, "Benchmark seed")->capture_default_str();

  PlotArgs plot;
  auto* c_plot = app.add_subcommand("plot", "Render a contribution CSV as SVG");
  c_plot->add_option("--contributions", plot.contributions, "Contribution CSV")->required();
  c_plot->add_option("--out", plot.out, "Output SVG")->required();
  c_plot->add_option("--pie", plot.pie_row, "Render this row as a pie instead of the heatmap");
  c_plot->add_option("--title", plot.title, "Figure title");
  c_plot->add_option("--mask", plot.mask, "Hide weights below this value")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_build) return cmd_build(build, out);
    if (*c_query) return cmd_query(query, out);
    if (*c_eval) return cmd_eval(eval, out);
    if (*c_stream) {
      if (stream.clusters == 0 && threshold->count() == 0) {
        throw UsageError("stream: --threshold is required (no default; use 'inf' to never swap)");
      }
      return cmd_stream(stream, in, out);
    }
    if (*c_synth) return cmd_synth(synth, c_synth, out);
    if (*c_plot) return cmd_plot(plot, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kStructural;
  }
  return kUsage;
}

}  // namespace lorafuse::cli
