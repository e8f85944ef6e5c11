#include "lorafuse/bench/model.hpp"

#include <algorithm>
#include <cmath>

#include "lorafuse/digest.hpp"

namespace lorafuse::bench {

ToyModel::ToyModel(std::vector<AffineLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty() || layers_.size() > 3) {
    throw UsageError("toy model: expected 1 to 3 layers, got " + std::to_string(layers_.size()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.empty()) throw StructuralError("toy model: layer '" + l.name + "' is empty");
    if (l.bias.size() != l.weight.rows()) {
      throw StructuralError("toy model: layer '" + l.name + "' bias length mismatch");
    }
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw StructuralError("toy model: layer '" + l.name + "' input dim " +
                            std::to_string(l.weight.cols()) + " does not chain from " +
                            std::to_string(layers_[i - 1].weight.rows()));
    }
  }
}

const AffineLayer& ToyModel::layer(std::string_view name) const {
  for (const auto& l : layers_)
    if (l.name == name) return l;
  throw UsageError("toy model: no layer '" + std::string(name) + "'");
}

LayerMatrices ToyModel::base_weights() const {
  LayerMatrices out;
  for (const auto& l : layers_) out.emplace(l.name, l.weight);
  return out;
}

Matrix ToyModel::logits(const Matrix& features, const LayerMatrices& deltas) const {
  if (features.cols() != feature_dim()) {
    throw StructuralError("toy model: features have " + std::to_string(features.cols()) +
                          " columns, expected " + std::to_string(feature_dim()));
  }
  Matrix h = features;
  for (const auto& l : layers_) {
    const auto it = deltas.find(l.name);
    const Matrix w = it == deltas.end() ? l.weight : add(l.weight, it->second);
    h = matmul(h, transpose(w));
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto row = h.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += l.bias[c];
    }
  }
  return h;
}

std::string ToyModel::weights_digest() const {
  Digest d;
  for (const auto& l : layers_) {
    d.update(l.name);
    d.update(l.weight.values());
    d.update(std::span<const double>(l.bias));
  }
  return d.hex();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  return p;
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

LayerMatrices adapter_deltas(const AdapterSet& adapter) {
  LayerMatrices out;
  for (const auto& l : adapter.layers()) out.emplace(l.layer_name(), l.delta(true));
  return out;
}

LayerMatrices fused_deltas(const FusedAdapter& fused) {
  LayerMatrices out;
  for (const auto& l : fused.layers) out.emplace(l.name, l.delta(true));
  return out;
}

}  // namespace lorafuse::bench
