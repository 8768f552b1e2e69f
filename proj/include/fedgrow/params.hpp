#pragma once

#include <cstddef>
#include <functional>
#include <map>

#include "fedgrow/layers.hpp"
#include "fedgrow/rng.hpp"
#include "fedgrow/tensor.hpp"

namespace fedgrow {

/// Weights of one conv or dense layer. Conv weights are (kh, kw, in, out),
/// dense weights are (in, out).
struct LayerParams {
  Tensor weight;
  Tensor bias;
  bool operator==(const LayerParams&) const = default;
};

/// Trainable weights keyed by layer index in the owning ModelArch.
struct ModelParams {
  std::map<std::size_t, LayerParams> layers;

  std::size_t scalar_count() const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

Shape weight_shape(const LayerSpec& layer);
Shape bias_shape(const LayerSpec& layer);

struct InitConfig {
  /// Stddev of the truncated normal before fan-in scaling.
  double base_stddev = 0.1;
  /// When set, stddev becomes min(base, sqrt(2 / fan_in)).
  bool scale_by_fan_in = true;
};

ModelParams init_params(const ModelArch& arch, Rng& rng, const InitConfig& cfg = {});
ModelParams zero_params(const ModelArch& arch);

/// Throws ConfigError unless every trainable layer has correctly shaped params
/// and no other layer has any.
void check_params(const ModelArch& arch, const ModelParams& params);

/// Visits every (weight, bias) tensor pair of two structurally identical
/// parameter sets in layer order.
void for_each_tensor_pair(ModelParams& dst, const ModelParams& src,
                          const std::function<void(Tensor&, const Tensor&)>& fn);

/// Flat copy of all scalars in layer order, weights before biases.
std::vector<float> flatten_params(const ModelParams& params);

}  // namespace fedgrow
