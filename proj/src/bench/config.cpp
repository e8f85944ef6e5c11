#include "lorafuse/bench/config.hpp"

#include <set>

#include "json.hpp"
#include "lorafuse/storage.hpp"

namespace lorafuse::bench {

namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& obj, std::string name) : obj_(obj), name_(std::move(name)) {
    if (!obj_.is_object()) throw UsageError("benchmark config: '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.contains(key)) {
        throw UsageError("benchmark config: unknown key '" + name_ + "." + key + "'");
      }
    }
  }

  template <class T>
  void take(const std::string& key, T& field) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const json::exception& e) {
      throw UsageError("benchmark config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

 private:
  const json& obj_;
  std::string name_;
  std::set<std::string> seen_;
};

Matrix matrix_from_json(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty() || !rows.front().is_array()) {
    throw UsageError("benchmark config: " + what + " must be a non-empty list of rows");
  }
  const std::size_t cols = rows.front().size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw StructuralError("benchmark config: ragged " + what);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

std::string loss_name(TrainLoss loss) {
  return loss == TrainLoss::kSquared ? "squared" : "cross-entropy";
}

TrainLoss parse_loss(const std::string& name) {
  if (name == "cross-entropy") return TrainLoss::kCrossEntropy;
  if (name == "squared") return TrainLoss::kSquared;
  throw UsageError("benchmark config: unknown loss '" + name + "'");
}

std::string output_name(OutputKind kind) {
  return kind == OutputKind::kLogits ? "logits" : "probabilities";
}

OutputKind parse_output(const std::string& name) {
  if (name == "probabilities") return OutputKind::kProbabilities;
  if (name == "logits") return OutputKind::kLogits;
  throw UsageError("benchmark config: unknown late_output '" + name + "'");
}

json to_json_value(const BenchmarkConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["pixels_per_image"] = c.pixels_per_image;
  j["threads"] = c.threads;
  j["late_output"] = output_name(c.late_output);
  j["host"] = {{"layer_count", c.host.layer_count},
               {"feature_dim", c.host.feature_dim},
               {"hidden_dim", c.host.hidden_dim},
               {"class_count", c.host.class_count},
               {"head_gain", c.host.head_gain}};
  j["world"] = {{"group_sizes", c.world.group_sizes},
                {"latent_dim", c.world.latent_dim},
                {"embedding_dim", c.world.embedding_dim},
                {"group_scale", c.world.group_scale},
                {"jitter", c.world.jitter},
                {"embedding_scale", c.world.embedding_scale},
                {"embedding_spread", c.world.embedding_spread},
                {"shift_scale", c.world.shift_scale},
                {"factor_gain", c.world.factor_gain},
                {"with_compounds", c.world.with_compounds},
                {"compound_mix", c.world.compound_mix},
                {"n_train", c.world.n_train},
                {"n_test", c.world.n_test}};
  j["trainer"] = {{"rank", c.trainer.rank},
                  {"alpha", c.trainer.alpha},
                  {"steps", c.trainer.steps},
                  {"learning_rate", c.trainer.learning_rate},
                  {"init_scale", c.trainer.init_scale},
                  {"init_seed", c.trainer.init_seed},
                  {"loss", loss_name(c.trainer.loss)}};
  j["fusion"] = {{"top_k", c.fusion.top_k},
                 {"temperature", c.fusion.temperature},
                 {"metric", std::string(to_string(c.fusion.metric))},
                 {"epsilon_exact", c.fusion.epsilon_exact},
                 {"normalize_query", c.fusion.normalize_query}};
  j["records"] = {{"ridge", c.records.ridge},
                  {"min_samples", c.records.min_samples},
                  {"normalize", c.records.normalize}};
  if (!c.domains.empty()) {
    json list = json::array();
    for (const auto& d : c.domains) {
      list.push_back({{"domain_id", d.domain_id},
                      {"embedding_center", std::vector<double>(d.embedding_center.values().begin(),
                                                               d.embedding_center.values().end())},
                      {"embedding_spread", d.embedding_spread},
                      {"target_layer", d.target_layer},
                      {"target_map", matrix_to_json(d.target_map)},
                      {"n_train", d.n_train},
                      {"n_test", d.n_test},
                      {"seed", d.seed}});
    }
    j["domains"] = std::move(list);
  }
  return j;
}

void flatten(const json& j, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items())
      flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    return;
  }
  if (j.is_number_float()) {
    out.emplace_back(prefix, format_double(j.get<double>()));
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

}  // namespace

BenchmarkConfig benchmark_config_from_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("benchmark config: invalid JSON: ") + e.what());
  }
  BenchmarkConfig c;
  {
    Section top(root, "config");
    top.take("seed", c.seed);
    top.take("pixels_per_image", c.pixels_per_image);
    top.take("threads", c.threads);
    std::string late = output_name(c.late_output);
    top.take("late_output", late);
    c.late_output = parse_output(late);
    if (const json* h = top.child("host")) {
      Section s(*h, "host");
      s.take("layer_count", c.host.layer_count);
      s.take("feature_dim", c.host.feature_dim);
      s.take("hidden_dim", c.host.hidden_dim);
      s.take("class_count", c.host.class_count);
      s.take("head_gain", c.host.head_gain);
    }
    if (const json* w = top.child("world")) {
      Section s(*w, "world");
      s.take("group_sizes", c.world.group_sizes);
      s.take("latent_dim", c.world.latent_dim);
      s.take("embedding_dim", c.world.embedding_dim);
      s.take("group_scale", c.world.group_scale);
      s.take("jitter", c.world.jitter);
      s.take("embedding_scale", c.world.embedding_scale);
      s.take("embedding_spread", c.world.embedding_spread);
      s.take("shift_scale", c.world.shift_scale);
      s.take("factor_gain", c.world.factor_gain);
      s.take("with_compounds", c.world.with_compounds);
      s.take("compound_mix", c.world.compound_mix);
      s.take("n_train", c.world.n_train);
      s.take("n_test", c.world.n_test);
    }
    if (const json* t = top.child("trainer")) {
      Section s(*t, "trainer");
      s.take("rank", c.trainer.rank);
      s.take("alpha", c.trainer.alpha);
      s.take("steps", c.trainer.steps);
      s.take("learning_rate", c.trainer.learning_rate);
      s.take("init_scale", c.trainer.init_scale);
      s.take("init_seed", c.trainer.init_seed);
      std::string loss = loss_name(c.trainer.loss);
      s.take("loss", loss);
      c.trainer.loss = parse_loss(loss);
    }
    if (const json* f = top.child("fusion")) {
      Section s(*f, "fusion");
      s.take("top_k", c.fusion.top_k);
      s.take("temperature", c.fusion.temperature);
      std::string metric(to_string(c.fusion.metric));
      s.take("metric", metric);
      c.fusion.metric = parse_metric(metric);
      s.take("epsilon_exact", c.fusion.epsilon_exact);
      s.take("normalize_query", c.fusion.normalize_query);
    }
    if (const json* r = top.child("records")) {
      Section s(*r, "records");
      s.take("ridge", c.records.ridge);
      s.take("min_samples", c.records.min_samples);
      s.take("normalize", c.records.normalize);
    }
    if (const json* list = top.child("domains")) {
      if (!list->is_array()) throw UsageError("benchmark config: 'domains' must be a list");
      for (const auto& item : *list) {
        Section s(item, "domains[]");
        SyntheticDomainSpec d;
        std::vector<double> center;
        s.take("domain_id", d.domain_id);
        s.take("embedding_center", center);
        s.take("embedding_spread", d.embedding_spread);
        s.take("target_layer", d.target_layer);
        s.take("n_train", d.n_train);
        s.take("n_test", d.n_test);
        s.take("seed", d.seed);
        if (const json* t = s.child("target_map")) {
          d.target_map = matrix_from_json(*t, "target_map of '" + d.domain_id + "'");
        }
        d.embedding_center = Embedding(std::move(center));
        c.domains.push_back(std::move(d));
      }
    }
  }
  c.trainer.validate();
  c.fusion.validate();
  return c;
}

std::string benchmark_config_to_json(const BenchmarkConfig& config, int indent) {
  return to_json_value(config).dump(indent);
}

std::vector<std::pair<std::string, std::string>> flatten_config(const BenchmarkConfig& config) {
  json j = to_json_value(config);
  j.erase("domains");
  std::vector<std::pair<std::string, std::string>> out;
  flatten(j, "", out);
  if (!config.domains.empty()) out.emplace_back("domains", std::to_string(config.domains.size()));
  return out;
}

}  // namespace lorafuse::bench
