#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lorafuse/fusion.hpp"
#include "lorafuse/tensor.hpp"

namespace lorafuse::bench {

// y = W x + b with W of shape out x in.
struct AffineLayer {
  std::string name;
  Matrix weight;
  std::vector<double> bias;
};

// Stack of affine layers without hidden nonlinearities; the class
// distribution is the softmax of the last layer's output.
class ToyModel {
 public:
  explicit ToyModel(std::vector<AffineLayer> layers);

  std::size_t feature_dim() const noexcept { return layers_.front().weight.cols(); }
  std::size_t class_count() const noexcept { return layers_.back().weight.rows(); }
  const std::vector<AffineLayer>& layers() const noexcept { return layers_; }
  const AffineLayer& layer(std::string_view name) const;

  LayerMatrices base_weights() const;

  // Logits for a batch (one sample per row). `deltas` are added to the
  // matching base weights; layers without an entry are used as is.
  Matrix logits(const Matrix& features, const LayerMatrices& deltas = {}) const;

  std::string weights_digest() const;

 private:
  std::vector<AffineLayer> layers_;
};

Matrix softmax_rows(const Matrix& logits);
std::vector<std::size_t> argmax_rows(const Matrix& m);

// Scaled per-layer deltas of one adapter / of a fused adapter.
LayerMatrices adapter_deltas(const AdapterSet& adapter);
LayerMatrices fused_deltas(const FusedAdapter& fused);

}  // namespace lorafuse::bench
