#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lorafuse/bench/config.hpp"
#include "lorafuse/bench/harness.hpp"
#include "lorafuse/fusion.hpp"
#include "lorafuse/library.hpp"
#include "lorafuse/metrics.hpp"
#include "lorafuse/storage.hpp"

namespace py = pybind11;
using namespace lorafuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Embedding to_embedding(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d embedding");
  return Embedding(std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<Embedding> to_embeddings(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array of embeddings");
  std::vector<Embedding> out;
  const auto cols = static_cast<std::size_t>(a.shape(1));
  for (py::ssize_t r = 0; r < a.shape(0); ++r) {
    const double* row = a.data(r, 0);
    out.emplace_back(std::vector<double>(row, row + cols));
  }
  return out;
}

Array to_array(std::span<const Embedding> rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().dim();
  Array out({rows.size(), dim});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) m(r, c) = rows[r][c];
  return out;
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

FusionConfig make_config(std::size_t top_k, double tau, const std::string& metric, bool normalize) {
  FusionConfig c;
  c.top_k = top_k;
  c.temperature = tau;
  c.metric = parse_metric(metric);
  c.normalize_query = normalize;
  c.validate();
  return c;
}

py::dict plan_dict(const FusionPlan& plan) {
  py::list selected;
  for (const auto& e : plan.selected) {
    py::dict d;
    d["domain_id"] = e.domain_id;
    d["distance"] = e.distance;
    d["weight"] = e.weight;
    selected.append(std::move(d));
  }
  py::dict out;
  out["query_digest"] = plan.query_digest;
  out["metric"] = std::string(to_string(plan.metric));
  out["tau"] = plan.temperature;
  out["top_k"] = plan.top_k;
  out["selected"] = std::move(selected);
  out["digest"] = plan.digest();
  return out;
}

// Library errors surface as ValueError (usage) or RuntimeError (everything
// else) with the original message.
void translate(std::exception_ptr p) {
  try {
    if (p) std::rethrow_exception(p);
  } catch (const UsageError& e) {
    PyErr_SetString(PyExc_ValueError, e.what());
  } catch (const Error& e) {
    PyErr_SetString(PyExc_RuntimeError, e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adapter library retrieval, weighting and concatenation merge.";
  py::register_exception_translator(&translate);

  m.def("compute_weights",
        [](std::vector<double> distances, double temperature, double epsilon_exact) {
          return compute_weights(distances, temperature, epsilon_exact);
        },
        py::arg("distances"), py::arg("temperature"), py::arg("epsilon_exact") = 1e-12,
        "Softmax of 1/(d*tau) with exact matches sharing the weight.");

  m.def("harmonic_mean", [](std::vector<double> v) { return harmonic_mean(v); }, py::arg("values"));

  m.def("support_score",
        [](std::vector<double> weights, std::vector<double> distances, double epsilon_exact) {
          if (weights.size() != distances.size()) throw py::value_error("length mismatch");
          FusionPlan plan;
          for (std::size_t i = 0; i < weights.size(); ++i)
            plan.selected.push_back({std::to_string(i), distances[i], weights[i]});
          return support_score(plan, epsilon_exact);
        },
        py::arg("weights"), py::arg("distances"), py::arg("epsilon_exact") = 1e-12);

  m.def("read_embeddings",
        [](const std::filesystem::path& path) { return to_array(read_embedding_file(path)); },
        py::arg("path"), "Parse an embedding file into an (N, dim) array.");

  m.def("write_embeddings",
        [](const std::filesystem::path& path, const Array& rows) {
          write_embedding_file(path, to_embeddings(rows));
        },
        py::arg("path"), py::arg("rows"));

  m.def("compute_centroid",
        [](const Array& rows) {
          const Embedding c = compute_centroid(to_embeddings(rows));
          return std::vector<double>(c.values().begin(), c.values().end());
        },
        py::arg("rows"));

  py::class_<Library>(m, "Library")
      .def_static("load", [](const std::filesystem::path& dir) { return load_library(dir); },
                  py::arg("path"))
      .def("save", [](const Library& lib, const std::filesystem::path& dir) { save_library(lib, dir); },
           py::arg("path"))
      .def("__len__", &Library::size)
      .def_property_readonly("embedding_dim", &Library::embedding_dim)
      .def("domain_ids", &Library::domain_ids)
      .def("digest", &Library::digest)
      .def("centroid",
           [](const Library& lib, const std::string& id) {
             const auto idx = lib.find(id);
             if (!idx) throw py::key_error(id);
             const auto v = lib.record(*idx).centroid().values();
             return std::vector<double>(v.begin(), v.end());
           },
           py::arg("domain_id"))
      .def("exclude", [](const Library& lib, const std::string& id) { return exclude(lib, id); },
           py::arg("domain_id"))
      .def("plan",
           [](const Library& lib, const Array& query, std::size_t top_k, double tau,
              const std::string& metric, bool normalize) {
             return plan_dict(plan_fusion(to_embedding(query), lib,
                                          make_config(top_k, tau, metric, normalize)));
           },
           py::arg("query"), py::arg("top_k") = 7, py::arg("tau") = 0.01,
           py::arg("metric") = "euclidean", py::arg("normalize") = false)
      .def("fuse",
           [](const Library& lib, const Array& query, std::size_t top_k, double tau,
              const std::string& metric, bool normalize) {
             const FusedAdapter f =
                 fuse(to_embedding(query), lib, make_config(top_k, tau, metric, normalize));
             py::dict layers;
             for (const auto& l : f.layers) {
               py::dict d;
               d["b"] = to_array(l.b);
               d["a"] = to_array(l.a);
               d["scaling"] = l.scaling;
               d["delta"] = to_array(l.delta(true));
               layers[py::str(l.name)] = std::move(d);
             }
             py::dict out;
             out["plan"] = plan_dict(f.plan);
             out["layers"] = std::move(layers);
             return out;
           },
           py::arg("query"), py::arg("top_k") = 7, py::arg("tau") = 0.01,
           py::arg("metric") = "euclidean", py::arg("normalize") = false,
           "Fused factors per layer: B (d x rK), A (rK x k), scaling and the scaled delta.");

  m.def("synthesize_library",
        [](const std::filesystem::path& dir, std::uint64_t seed) {
          bench::BenchmarkConfig cfg;
          cfg.seed = seed;
          const auto b = bench::prepare_benchmark(cfg);
          save_library(b.library, dir);
          std::vector<Embedding> queries;
          std::vector<std::string> labels;
          for (std::size_t i = 0; i < b.domains.size(); ++i) {
            for (const auto& img : b.data[i].test) {
              queries.push_back(img.embedding);
              labels.push_back(b.domains[i].domain_id);
            }
          }
          return py::make_tuple(to_array(queries), labels);
        },
        py::arg("path"), py::arg("seed") = 0,
        "Train the default synthetic library into `path`; returns (test embeddings, domain ids).");

  m.def("run_leave_one_out",
        [](std::uint64_t seed, const std::string& config_json) {
          bench::BenchmarkConfig cfg =
              config_json.empty() ? bench::BenchmarkConfig{} : bench::benchmark_config_from_json(config_json);
          if (config_json.empty()) cfg.seed = seed;
          const auto b = bench::prepare_benchmark(cfg);
          const auto rep = bench::run_leave_one_out(b, cfg.fusion);
          py::dict hmean, table;
          for (const auto& method : rep.table.methods) {
            hmean[py::str(method)] = rep.table.hmean(method);
            table[py::str(method)] = rep.table.column(method);
          }
          py::dict out;
          out["domains"] = rep.table.domains;
          out["hmean"] = std::move(hmean);
          out["miou"] = std::move(table);
          out["library_digest"] = b.library.digest();
          return out;
        },
        py::arg("seed") = 0, py::arg("config_json") = "",
        "Leave-one-out benchmark; returns per-method h-means and per-domain mIoU.");
}
