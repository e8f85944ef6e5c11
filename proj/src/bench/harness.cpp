#include "lorafuse/bench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

namespace lorafuse::bench {

namespace {

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> predict(const Matrix& outputs) { return argmax_rows(outputs); }

void tally(ConfusionMatrix& cm, std::span<const std::size_t> predicted,
           std::span<const std::size_t> truth) {
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
}

// A library view plus each adapter's deltas, computed once per view.
struct ViewCache {
  Library view;
  std::vector<std::string> ids;
  std::vector<const AdapterSet*> adapters;
  std::vector<LayerMatrices> deltas;

  explicit ViewCache(Library v) : view(std::move(v)) {
    for (std::size_t j = 0; j < view.size(); ++j) {
      const auto& rec = view.record(j);
      ids.push_back(rec.domain_id());
      adapters.push_back(&rec.adapter());
      deltas.push_back(adapter_deltas(rec.adapter()));
    }
  }

  std::size_t index_of(std::string_view id) const {
    return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
  }
};

Matrix combine_late(std::span<const Matrix> logits, std::span<const double> weights,
                    OutputKind kind) {
  if (kind == OutputKind::kLogits) return late_fuse_outputs(logits, weights, kind);
  std::vector<Matrix> probs;
  probs.reserve(logits.size());
  for (const auto& l : logits) probs.push_back(softmax_rows(l));
  return late_fuse_outputs(probs, weights, kind);
}

struct FusionOutcome {
  FusionPlan plan;
  std::vector<std::size_t> predicted;
};

FusionOutcome fused_predict(const ToyModel& host, const Library& view, const FusionConfig& cfg,
                            const ImageSample& img) {
  FusedAdapter fused = fuse(img.embedding, view, cfg);
  return {std::move(fused.plan), predict(host.logits(img.features, fused_deltas(fused)))};
}

const AdapterSet& adapter_of(const Library& lib, std::string_view id) {
  const auto idx = lib.find(id);
  if (!idx) throw UsageError("benchmark: no adapter for '" + std::string(id) + "'");
  return lib.record(*idx).adapter();
}

std::vector<double> mious(const std::vector<ConfusionMatrix>& cms) {
  std::vector<double> out;
  for (const auto& cm : cms) out.push_back(100.0 * miou(cm));
  return out;
}

std::string temperature_label(double t) {
  std::ostringstream s;
  s << "fusion(tau=" << t << ")";
  return s.str();
}

}  // namespace

double pixel_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw UsageError("pixel_accuracy: size mismatch or empty");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

PreparedBenchmark prepare_benchmark(const BenchmarkConfig& config) {
  if (!config.domains.empty()) {
    return prepare_benchmark(make_host(config.host, config.seed), config.domains, config);
  }
  World world = make_world(config.host, config.world, config.seed);
  return prepare_benchmark(std::move(world.host), std::move(world.domains), config,
                           std::move(world.compounds));
}

PreparedBenchmark prepare_benchmark(ToyModel host, std::vector<SyntheticDomainSpec> domains,
                                    const BenchmarkConfig& config,
                                    std::vector<CompoundSpec> compounds) {
  config.trainer.validate();
  config.fusion.validate();
  if (domains.size() < 2) throw UsageError("benchmark: need at least two domains");
  std::set<std::string> seen;
  for (const auto& d : domains) {
    if (!seen.insert(d.domain_id).second) {
      throw UsageError("benchmark: duplicate domain id '" + d.domain_id + "'");
    }
    d.validate(host);
  }

  PreparedBenchmark bench{config, std::move(host), std::move(domains), {}, {}, {},
                          std::move(compounds), {}};
  const std::size_t n = bench.domains.size();
  bench.data.resize(n);
  std::vector<std::optional<TrainResult>> trained(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    bench.data[i] = generate_domain(bench.domains[i], bench.host, config.pixels_per_image);
    trained[i] = train_adapter(bench.host, bench.data[i].train, config.trainer,
                               bench.domains[i].domain_id);
  });
  for (std::size_t i = 0; i < n; ++i) {
    const auto embeddings = bench.data[i].train_embeddings();
    auto adapter = std::make_shared<const AdapterSet>(trained[i]->adapter);
    bench.library = extend(bench.library, build_record(bench.domains[i].domain_id, embeddings,
                                                       std::move(adapter), config.records));
    bench.training.push_back(std::move(*trained[i]));
  }
  bench.compound_data.resize(bench.compounds.size());
  parallel_for(bench.compounds.size(), config.threads, [&](std::size_t i) {
    bench.compound_data[i] =
        generate_domain(bench.compounds[i].domain, bench.host, config.pixels_per_image);
  });
  return bench;
}

std::size_t MetricTable::method_index(std::string_view method) const {
  const auto it = std::find(methods.begin(), methods.end(), method);
  if (it == methods.end()) throw UsageError("metric table: no method '" + std::string(method) + "'");
  return static_cast<std::size_t>(it - methods.begin());
}

double MetricTable::at(std::string_view domain, std::string_view method) const {
  const auto it = std::find(domains.begin(), domains.end(), domain);
  if (it == domains.end()) throw UsageError("metric table: no domain '" + std::string(domain) + "'");
  return miou[static_cast<std::size_t>(it - domains.begin())][method_index(method)];
}

std::vector<double> MetricTable::column(std::string_view method) const {
  const std::size_t m = method_index(method);
  std::vector<double> out;
  for (const auto& row : miou) out.push_back(row[m]);
  return out;
}

double MetricTable::hmean(std::string_view method) const {
  const auto col = column(method);
  // A zero score makes the harmonic mean zero.
  if (std::any_of(col.begin(), col.end(), [](double v) { return v <= 0.0; })) return 0.0;
  return harmonic_mean(col);
}

LeaveOneOutReport run_leave_one_out(const PreparedBenchmark& bench, const FusionConfig& fusion) {
  fusion.validate();
  const std::size_t n = bench.domains.size();
  const std::size_t classes = bench.host.class_count();
  const auto kind = bench.config.late_output;

  struct Slot {
    std::vector<ConfusionMatrix> cms;
    std::vector<TaggedPlan> plans;
    std::vector<std::string> available;
    std::vector<std::pair<double, double>> distance_vs_gain;
    std::vector<std::pair<double, double>> support_vs_accuracy;
    bool leaked = false;
  };
  std::vector<Slot> slots(n);

  parallel_for(n, bench.config.threads, [&](std::size_t i) {
    const std::string& held_out = bench.domains[i].domain_id;
    auto log = std::make_shared<AccessLog>();
    const ViewCache cache(exclude(bench.library, held_out).with_access_log(log));
    const auto uniform = fused_deltas(merge_uniform(std::span<const AdapterSet* const>(cache.adapters)));
    const auto oracle = adapter_deltas(adapter_of(bench.library, held_out));
    const std::vector<double> flat(cache.ids.size(), 1.0 / static_cast<double>(cache.ids.size()));

    Slot& slot = slots[i];
    slot.cms.assign(kLeaveOneOutMethods.size(), ConfusionMatrix(classes));
    slot.available = cache.ids;
    for (const auto& img : bench.data[i].test) {
      const Matrix base = bench.host.logits(img.features);
      const auto zs_pred = predict(base);
      const double zs_acc = pixel_accuracy(zs_pred, img.labels);

      std::vector<Matrix> single;
      for (std::size_t j = 0; j < cache.ids.size(); ++j) {
        single.push_back(bench.host.logits(img.features, cache.deltas[j]));
        const auto& rec = cache.view.record(j);
        if (fusion.metric == DistanceMetric::kMahalanobis && !rec.mahalanobis_eligible()) continue;
        const double gain = pixel_accuracy(predict(single.back()), img.labels) - zs_acc;
        const double d = distance(img.embedding, rec, fusion.metric);
        slot.distance_vs_gain.emplace_back(d, 100.0 * gain);
      }

      auto fused = fused_predict(bench.host, cache.view, fusion, img);
      std::vector<Matrix> picked;
      std::vector<double> weights;
      for (const auto& e : fused.plan.selected) {
        picked.push_back(single[cache.index_of(e.domain_id)]);
        weights.push_back(e.weight);
      }

      tally(slot.cms[0], zs_pred, img.labels);
      tally(slot.cms[1], predict(bench.host.logits(img.features, uniform)), img.labels);
      tally(slot.cms[2], fused.predicted, img.labels);
      tally(slot.cms[3], predict(combine_late(picked, weights, kind)), img.labels);
      tally(slot.cms[4], predict(combine_late(single, flat, kind)), img.labels);
      tally(slot.cms[5], predict(bench.host.logits(img.features, oracle)), img.labels);

      slot.support_vs_accuracy.emplace_back(support_score(fused.plan, fusion.epsilon_exact),
                                            100.0 * pixel_accuracy(fused.predicted, img.labels));
      slot.plans.push_back({held_out, std::move(fused.plan)});
    }
    slot.leaked = log->touched(held_out);
  });

  LeaveOneOutReport report;
  report.table.methods.assign(kLeaveOneOutMethods.begin(), kLeaveOneOutMethods.end());
  ContributionAccumulator acc;
  for (std::size_t i = 0; i < n; ++i) {
    auto& slot = slots[i];
    const std::string& id = bench.domains[i].domain_id;
    report.table.domains.push_back(id);
    report.table.miou.push_back(mious(slot.cms));
    acc.declare_available(id, slot.available);
    for (auto& p : slot.plans) {
      acc.add(p.test_domain, p.plan);
      report.plans.push_back(std::move(p));
    }
    report.distance_vs_gain.insert(report.distance_vs_gain.end(), slot.distance_vs_gain.begin(),
                                   slot.distance_vs_gain.end());
    report.support_vs_accuracy.insert(report.support_vs_accuracy.end(),
                                      slot.support_vs_accuracy.begin(),
                                      slot.support_vs_accuracy.end());
    if (slot.leaked) report.leaked.push_back(id);
  }
  report.contributions = acc.finish();
  return report;
}

AllInclusiveReport run_all_inclusive(const PreparedBenchmark& bench, const FusionConfig& fusion,
                                     std::span<const double> temperatures) {
  if (temperatures.empty()) throw UsageError("all-inclusive: no temperatures");
  std::vector<FusionConfig> configs;
  for (double t : temperatures) {
    FusionConfig c = fusion;
    c.temperature = t;
    c.validate();
    configs.push_back(c);
  }
  const std::size_t n = bench.domains.size();
  const std::size_t classes = bench.host.class_count();
  const std::size_t methods = configs.size() + 3;

  std::vector<const AdapterSet*> all;
  for (std::size_t j = 0; j < bench.library.size(); ++j)
    all.push_back(&bench.library.record(j).adapter());
  const auto uniform = fused_deltas(merge_uniform(std::span<const AdapterSet* const>(all)));

  struct Slot {
    std::vector<ConfusionMatrix> cms;
    std::vector<double> gaps;
  };
  std::vector<Slot> slots(n);
  parallel_for(n, bench.config.threads, [&](std::size_t i) {
    Slot& slot = slots[i];
    slot.cms.assign(methods, ConfusionMatrix(classes));
    slot.gaps.assign(configs.size(), 0.0);
    const auto oracle = adapter_deltas(adapter_of(bench.library, bench.domains[i].domain_id));
    for (const auto& img : bench.data[i].test) {
      const Matrix oracle_logits = bench.host.logits(img.features, oracle);
      const Matrix oracle_probs = softmax_rows(oracle_logits);
      tally(slot.cms[0], predict(bench.host.logits(img.features)), img.labels);
      tally(slot.cms[1], predict(bench.host.logits(img.features, uniform)), img.labels);
      for (std::size_t c = 0; c < configs.size(); ++c) {
        const FusedAdapter fused = fuse(img.embedding, bench.library, configs[c]);
        const Matrix logits = bench.host.logits(img.features, fused_deltas(fused));
        tally(slot.cms[2 + c], predict(logits), img.labels);
        slot.gaps[c] =
            std::max(slot.gaps[c], max_abs_difference(softmax_rows(logits), oracle_probs));
      }
      tally(slot.cms[methods - 1], predict(oracle_logits), img.labels);
    }
  });

  AllInclusiveReport report;
  report.temperatures.assign(temperatures.begin(), temperatures.end());
  report.max_gap_to_oracle.assign(configs.size(), 0.0);
  report.table.methods = {"zero-shot", "uniform"};
  for (double t : temperatures) report.table.methods.push_back(temperature_label(t));
  report.table.methods.push_back("oracle");
  for (std::size_t i = 0; i < n; ++i) {
    report.table.domains.push_back(bench.domains[i].domain_id);
    report.table.miou.push_back(mious(slots[i].cms));
    for (std::size_t c = 0; c < configs.size(); ++c)
      report.max_gap_to_oracle[c] = std::max(report.max_gap_to_oracle[c], slots[i].gaps[c]);
  }
  return report;
}

std::pair<std::size_t, std::size_t> SweepGrid::best() const {
  std::pair<std::size_t, std::size_t> at{0, 0};
  double best_value = -1.0;
  for (std::size_t k = 0; k < hmean.size(); ++k) {
    for (std::size_t t = 0; t < hmean[k].size(); ++t) {
      if (hmean[k][t] > best_value) {
        best_value = hmean[k][t];
        at = {k, t};
      }
    }
  }
  return at;
}

bool SweepGrid::best_on_corner() const {
  const auto [k, t] = best();
  const bool k_edge = k == 0 || k + 1 == top_ks.size();
  const bool t_edge = t == 0 || t + 1 == temperatures.size();
  return k_edge && t_edge;
}

SweepGrid sweep_hyperparameters(const PreparedBenchmark& bench, const FusionConfig& base,
                                std::span<const std::size_t> top_ks,
                                std::span<const double> temperatures) {
  if (top_ks.empty() || temperatures.empty()) throw UsageError("sweep: empty grid");
  std::vector<std::vector<FusionConfig>> configs(top_ks.size());
  for (std::size_t k = 0; k < top_ks.size(); ++k) {
    for (double t : temperatures) {
      FusionConfig c = base;
      c.top_k = top_ks[k];
      c.temperature = t;
      c.validate();
      configs[k].push_back(c);
    }
  }
  const std::size_t n = bench.domains.size();
  const std::size_t classes = bench.host.class_count();
  // [domain][k][t]
  std::vector<std::vector<std::vector<double>>> scores(n);
  parallel_for(n, bench.config.threads, [&](std::size_t i) {
    const Library view = exclude(bench.library, bench.domains[i].domain_id);
    std::vector<std::vector<ConfusionMatrix>> cms(
        top_ks.size(), std::vector<ConfusionMatrix>(temperatures.size(), ConfusionMatrix(classes)));
    for (const auto& img : bench.data[i].test) {
      for (std::size_t k = 0; k < top_ks.size(); ++k)
        for (std::size_t t = 0; t < temperatures.size(); ++t)
          tally(cms[k][t], fused_predict(bench.host, view, configs[k][t], img).predicted,
                img.labels);
    }
    for (const auto& row : cms) scores[i].push_back(mious(row));
  });

  SweepGrid grid;
  grid.top_ks.assign(top_ks.begin(), top_ks.end());
  grid.temperatures.assign(temperatures.begin(), temperatures.end());
  grid.hmean.assign(top_ks.size(), std::vector<double>(temperatures.size(), 0.0));
  for (std::size_t k = 0; k < top_ks.size(); ++k) {
    for (std::size_t t = 0; t < temperatures.size(); ++t) {
      std::vector<double> col;
      for (std::size_t i = 0; i < n; ++i) col.push_back(scores[i][k][t]);
      const bool has_zero = std::any_of(col.begin(), col.end(), [](double v) { return v <= 0.0; });
      grid.hmean[k][t] = has_zero ? 0.0 : harmonic_mean(col);
    }
  }
  return grid;
}

std::vector<CompoundOutcome> run_compound_analysis(const PreparedBenchmark& bench,
                                                   const FusionConfig& fusion) {
  fusion.validate();
  std::vector<CompoundOutcome> out;
  for (std::size_t c = 0; c < bench.compounds.size(); ++c) {
    const auto& spec = bench.compounds[c];
    const auto& images = bench.compound_data[c].test;
    std::map<std::string, double> sums;
    for (const auto& img : images) {
      const FusionPlan plan = plan_fusion(img.embedding, bench.library, fusion);
      for (const auto& e : plan.selected) sums[e.domain_id] += e.weight;
    }
    CompoundOutcome o;
    o.compound_id = spec.domain.domain_id;
    o.parents = spec.parents;
    o.mix = spec.mix;
    for (const auto& [id, total] : sums)
      o.mean_weights.emplace_back(id, total / static_cast<double>(images.size()));
    std::stable_sort(o.mean_weights.begin(), o.mean_weights.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [id, w] : o.mean_weights)
      if (id == spec.parents.first || id == spec.parents.second) o.parent_share += w;
    if (o.mean_weights.size() >= 2) {
      const std::set<std::string> top{o.mean_weights[0].first, o.mean_weights[1].first};
      o.parents_on_top = top == std::set<std::string>{spec.parents.first, spec.parents.second};
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace lorafuse::bench
