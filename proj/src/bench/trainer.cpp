#include "lorafuse/bench/trainer.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace lorafuse::bench {

namespace {

struct Batch {
  Matrix x;
  Matrix target;  // logits
};

Batch stack(const ToyModel& host, std::span<const ImageSample> samples) {
  if (samples.empty()) throw UsageError("train: no samples");
  std::size_t rows = 0;
  for (const auto& s : samples) rows += s.features.rows();
  Batch b{Matrix(rows, host.feature_dim()), Matrix(rows, host.class_count())};
  std::size_t at = 0;
  for (const auto& s : samples) {
    if (s.features.cols() != host.feature_dim() || s.target_logits.cols() != host.class_count() ||
        s.target_logits.rows() != s.features.rows()) {
      throw StructuralError("train: sample shapes do not match the host");
    }
    for (std::size_t r = 0; r < s.features.rows(); ++r, ++at) {
      std::copy(s.features.row(r).begin(), s.features.row(r).end(), b.x.row(at).begin());
      std::copy(s.target_logits.row(r).begin(), s.target_logits.row(r).end(),
                b.target.row(at).begin());
    }
  }
  return b;
}

// Loss and its gradient with respect to the logits.
double loss_and_grad(const Matrix& z, const Matrix& target, TrainLoss kind, Matrix* grad) {
  const double n = static_cast<double>(z.rows());
  double loss = 0.0;
  if (grad) *grad = Matrix(z.rows(), z.cols());
  if (kind == TrainLoss::kSquared) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < z.cols(); ++c) {
        const double diff = z(r, c) - target(r, c);
        loss += 0.5 * diff * diff;
        if (grad) (*grad)(r, c) = diff / n;
      }
    }
    return loss / n;
  }
  const Matrix p = softmax_rows(z);
  const Matrix t = softmax_rows(target);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) {
      if (t(r, c) > 0.0) loss -= t(r, c) * std::log(std::max(p(r, c), 1e-300));
      if (grad) (*grad)(r, c) = (p(r, c) - t(r, c)) / n;
    }
  }
  return loss / n;
}

void add_bias(Matrix& h, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < h.rows(); ++r) {
    auto row = h.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

}  // namespace

void TrainerConfig::validate() const {
  if (rank == 0) throw UsageError("trainer: rank must be >= 1");
  if (!(alpha > 0.0)) throw UsageError("trainer: alpha must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("trainer: learning rate must be finite and > 0");
  }
  if (!(init_scale >= 0.0)) throw UsageError("trainer: init scale must be >= 0");
}

AdapterSet initial_adapter(const ToyModel& host, const TrainerConfig& config,
                           std::string adapter_id) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<LoraPair> pairs;
  for (const auto& l : host.layers()) {
    MatrixF b(l.weight.rows(), config.rank);
    MatrixF a(config.rank, l.weight.cols());
    for (auto& v : b.values()) v = static_cast<float>(n(rng) * config.init_scale);
    for (auto& v : a.values()) v = static_cast<float>(n(rng) * config.init_scale);
    pairs.emplace_back(l.name, std::move(b), std::move(a), config.alpha);
  }
  return AdapterSet(std::move(adapter_id), std::move(pairs));
}

double adapter_loss(const ToyModel& host, const LayerMatrices& deltas,
                    std::span<const ImageSample> samples, TrainLoss loss) {
  const Batch b = stack(host, samples);
  return loss_and_grad(host.logits(b.x, deltas), b.target, loss, nullptr);
}

TrainResult train_adapter(const ToyModel& host, std::span<const ImageSample> samples,
                          const TrainerConfig& config, std::string adapter_id) {
  const AdapterSet init = initial_adapter(host, config, adapter_id);
  const Batch batch = stack(host, samples);
  const auto& layers = host.layers();
  const std::size_t count = layers.size();
  const double s = config.alpha / static_cast<double>(config.rank);

  std::vector<Matrix> bs, as;
  for (const auto& p : init.layers()) {
    bs.push_back(p.b().cast<double>());
    as.push_back(p.a().cast<double>());
  }

  auto effective = [&](std::size_t l) {
    return add(layers[l].weight, scaled(matmul(bs[l], as[l]), s));
  };
  auto fail = [&](std::size_t step, const char* what) {
    std::ostringstream msg;
    msg << "training '" << adapter_id << "' diverged at step " << step << " (" << what
        << ", learning rate " << config.learning_rate << ")";
    throw NumericError(msg.str());
  };

  TrainResult result{init, 0.0, 0.0};
  std::vector<Matrix> weights(count), inputs(count);
  for (std::size_t step = 0; step <= config.steps; ++step) {
    Matrix h = batch.x;
    for (std::size_t l = 0; l < count; ++l) {
      weights[l] = effective(l);
      inputs[l] = h;
      h = matmul(h, transpose(weights[l]));
      add_bias(h, layers[l].bias);
    }
    Matrix grad;
    const double loss =
        loss_and_grad(h, batch.target, config.loss, step < config.steps ? &grad : nullptr);
    if (!std::isfinite(loss)) fail(step, "non-finite loss");
    if (step == 0) result.initial_loss = loss;
    result.final_loss = loss;
    if (step == config.steps) break;

    for (std::size_t l = count; l-- > 0;) {
      const Matrix g_w = matmul(transpose(grad), inputs[l]);
      if (l > 0) grad = matmul(grad, weights[l]);
      const Matrix g_b = scaled(matmul(g_w, transpose(as[l])), s);
      const Matrix g_a = scaled(matmul(transpose(bs[l]), g_w), s);
      bs[l] = axpy_accumulate(std::move(bs[l]), -config.learning_rate, g_b);
      as[l] = axpy_accumulate(std::move(as[l]), -config.learning_rate, g_a);
      if (!bs[l].all_finite() || !as[l].all_finite()) fail(step, "non-finite parameters");
    }
  }

  std::vector<LoraPair> pairs;
  for (std::size_t l = 0; l < count; ++l) {
    pairs.emplace_back(layers[l].name, bs[l].cast<float>(), as[l].cast<float>(), config.alpha);
  }
  result.adapter = AdapterSet(std::move(adapter_id), std::move(pairs));
  return result;
}

}  // namespace lorafuse::bench
