#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rangeaug/ndgrad.hpp"

namespace rangeaug {

// Fully connected rectifier network; logits come from the last affine layer.
struct MlpClassifier {
  std::vector<std::size_t> layer_dims;  // input, hidden..., classes
  std::vector<nd::Array> weights;       // [in, out]
  std::vector<nd::Array> biases;        // [out]
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t parameter_count() const;
};

// Glorot-uniform weights, zero biases.
MlpClassifier init_params(const std::vector<std::size_t>& layer_dims, std::uint64_t seed);

struct BoundModel {
  std::vector<nd::NodeId> weights;
  std::vector<nd::NodeId> biases;

  std::vector<nd::NodeId> all() const;
};

// Parameters as leaves when trainable, constants otherwise.
BoundModel bind_model(nd::Graph& g, const MlpClassifier& model, bool trainable = true);

// images: [n, input_dim] node. Throws nd::ShapeError on a width mismatch.
nd::NodeId forward_classifier(nd::Graph& g, const MlpClassifier& model, const BoundModel& bound, nd::NodeId images);

// Graph-free forward for evaluation; images may be [n, ...] with
// prod(...) == input_dim.
nd::Array predict_logits(const MlpClassifier& model, const nd::Array& images);

// argmax per row, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const nd::Array& logits);

// One JSON header line {"format":"rangeaug-mlp","version":1,"layer_dims":[..],
// "seed":..,"step":..} followed by little-endian float64 weights then biases
// per layer.
void save_checkpoint(const std::string& path, const MlpClassifier& model);
MlpClassifier load_checkpoint(const std::string& path);

}  // namespace rangeaug
