#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ar3d/tensor.hpp"

namespace ar3d {

enum class Activation { none, relu };

struct Conv3dLayer {
  std::size_t out_channels = 16;
  ConvGeom geom{};
  Activation activation = Activation::relu;
  bool operator==(const Conv3dLayer&) const = default;
};

struct MaxPool3dLayer {
  bool operator==(const MaxPool3dLayer&) const = default;
};

struct FlattenLayer {
  bool operator==(const FlattenLayer&) const = default;
};

struct DenseLayer {
  std::size_t units = 128;
  Activation activation = Activation::relu;
  bool operator==(const DenseLayer&) const = default;
};

struct DropoutLayer {
  double p = 0.5;  // drop probability
  bool operator==(const DropoutLayer&) const = default;
};

using LayerSpec = std::variant<Conv3dLayer, MaxPool3dLayer, FlattenLayer, DenseLayer, DropoutLayer>;

/// (C, T, H, W) of a single sample.
struct InputShape {
  std::size_t channels = 1;
  std::size_t frames = 35;
  std::size_t height = 20;
  std::size_t width = 20;
  Shape as_shape() const { return {channels, frames, height, width}; }
  bool operator==(const InputShape&) const = default;
};

struct ModelSpec {
  InputShape input;
  std::size_t num_classes = 2;
  std::vector<LayerSpec> layers;
  int preset = 0;  // 1..4 when built from a preset, 0 otherwise

  bool operator==(const ModelSpec&) const = default;

  /// Runs the static shape chain; throws on any inconsistency.
  void validate() const;
  /// Per-layer output shapes (per sample, no batch axis).
  std::vector<Shape> layer_shapes() const;
  /// Number of 2x2x2 pooling stages.
  std::size_t pool_stages() const;
};

/// Architecture presets. 4 shares the architecture of 3; its training recipe differs.
ModelSpec build_preset(int model_id, const InputShape& input, std::size_t num_classes);

struct NamedTensor {
  std::string name;  // "conv0.weight", "dense1.bias", ...
  Tensor value;
  bool operator==(const NamedTensor&) const = default;
};

/// Trainable tensors in layer order: weight then bias for every Conv3d/Dense layer.
struct ParamSet {
  std::vector<NamedTensor> tensors;

  bool operator==(const ParamSet&) const = default;
  std::size_t count() const;
  /// Zeros with the same names and shapes.
  ParamSet zeros_like() const;
  /// FNV-1a over names, shapes and raw bytes.
  std::uint64_t fingerprint() const;
};

/// Expected parameter shapes for a spec, in ParamSet order.
std::vector<NamedTensor> param_layout(const ModelSpec& spec);

void check_params(const ModelSpec& spec, const ParamSet& params);

/// He-normal for layers followed by relu, Normal(0, 1/fan_in) for the rest; zero biases.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

enum class Mode { train, eval };

/// Per-sample activations kept for the backward pass.
struct SampleCache {
  std::vector<Tensor> inputs;        // input to each layer
  std::vector<Tensor> pre_act;       // Conv/Dense output before activation
  std::vector<PoolIndex> pools;      // indexed by layer
  std::vector<std::vector<std::uint8_t>> masks;  // dropout keep masks, indexed by layer
  Tensor logits;
};

struct ForwardCache {
  std::vector<SampleCache> samples;
  std::uint64_t params_fingerprint = 0;
  std::size_t layer_count = 0;
};

struct ForwardResult {
  Tensor logits;  // [B, K]
  ForwardCache cache;
};

ForwardResult model_forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch,
                            Mode mode, std::uint64_t seed);

/// Logits only, eval mode, no cache retained.
Tensor model_logits(const ModelSpec& spec, const ParamSet& params, const Tensor& batch);

struct BackwardResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  ParamSet grads;
};

BackwardResult model_backward(const ModelSpec& spec, const ParamSet& params,
                              const ForwardCache& cache, const std::vector<std::size_t>& targets);

std::string layer_name(const LayerSpec& layer);

}  // namespace ar3d
