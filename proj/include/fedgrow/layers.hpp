#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fedgrow {

enum class Padding { same, valid };

/// Convolution kernel extents: filter width/height, input and output channels.
struct KernelShape {
  std::size_t w = 1;
  std::size_t h = 1;
  std::size_t i = 1;
  std::size_t o = 1;
  bool operator==(const KernelShape&) const = default;
};

struct Conv2D {
  KernelShape kernel;
  Padding padding = Padding::same;
  std::size_t stride = 1;
  bool operator==(const Conv2D&) const = default;
};

struct Dense {
  std::size_t in = 1;
  std::size_t out = 1;
  bool operator==(const Dense&) const = default;
};

/// Max pooling over square windows; floor division at the borders.
struct MaxPool {
  std::size_t window = 2;
  std::size_t stride = 2;
  bool operator==(const MaxPool&) const = default;
};

struct GlobalAvgPool {
  bool operator==(const GlobalAvgPool&) const = default;
};

/// Inverted dropout: scaled by 1/(1-rate) in training, identity in eval.
struct Dropout {
  float rate = 0.0f;
  bool operator==(const Dropout&) const = default;
};

struct Relu {
  bool operator==(const Relu&) const = default;
};

struct Softmax {
  bool operator==(const Softmax&) const = default;
};

/// Collapses (height, width, channels) into one axis in that row-major order.
struct Flatten {
  bool operator==(const Flatten&) const = default;
};

using LayerSpec = std::variant<Conv2D, Dense, MaxPool, GlobalAvgPool, Dropout, Relu, Softmax, Flatten>;

/// Per-sample activation shape. Flat activations use h = w = 1.
struct FeatureShape {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;
  bool flat = false;

  std::size_t size() const { return h * w * c; }
  bool operator==(const FeatureShape&) const = default;
};

/// Declarative layer sequence applied to a fixed per-sample input shape.
struct ModelArch {
  FeatureShape input;
  std::vector<LayerSpec> layers;
  bool operator==(const ModelArch&) const = default;
};

std::string kind_name(const LayerSpec& layer);
std::string describe(const LayerSpec& layer);
std::string describe(const ModelArch& arch);

bool is_trainable(const LayerSpec& layer);
/// Output channels (conv) or units (dense); nullopt for other kinds.
std::optional<std::size_t> output_width(const LayerSpec& layer);
/// Index of the last conv/dense layer, which is treated as the classifier.
std::optional<std::size_t> classifier_index(const ModelArch& arch);
std::vector<std::size_t> trainable_indices(const ModelArch& arch);

/// Padding and output geometry of one convolution.
struct ConvGeometry {
  std::size_t in_h, in_w, in_c;
  std::size_t k_h, k_w, out_c;
  std::size_t stride;
  std::size_t pad_top, pad_left;
  std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(const Conv2D& conv, const FeatureShape& input);

/// Shapes before every layer plus the final output (size layers + 1).
/// Throws ConfigError naming the first incompatible layer.
std::vector<FeatureShape> infer_shapes(const ModelArch& arch);

/// Number of output classes, taken from the final shape.
std::size_t class_count(const ModelArch& arch);

/// Exact count of trainable scalars (weights and biases).
std::size_t count_params(const ModelArch& arch);

/// Forward multiply-accumulates for one sample.
std::uint64_t forward_macs(const ModelArch& arch);

}  // namespace fedgrow
