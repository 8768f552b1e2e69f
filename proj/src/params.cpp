#include "fedgrow/params.hpp"

#include <algorithm>
#include <cmath>

#include "fedgrow/error.hpp"

namespace fedgrow {

Shape weight_shape(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<Conv2D>(&layer)) {
    return {conv->kernel.h, conv->kernel.w, conv->kernel.i, conv->kernel.o};
  }
  if (const auto* dense = std::get_if<Dense>(&layer)) {
    return {dense->in, dense->out};
  }
  return {};
}

Shape bias_shape(const LayerSpec& layer) {
  if (auto width = output_width(layer)) return {*width};
  return {};
}

std::size_t ModelParams::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [index, p] : layers) {
    total += p.weight.size() + p.bias.size();
  }
  return total;
}

bool ModelParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const auto& kv) { return kv.second.weight.all_finite() && kv.second.bias.all_finite(); });
}

ModelParams init_params(const ModelArch& arch, Rng& rng, const InitConfig& cfg) {
  infer_shapes(arch);
  ModelParams params;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    if (!is_trainable(layer)) continue;
    const Shape ws = weight_shape(layer);
    const std::size_t fan_in = shape_size(ws) / ws.back();
    double stddev = cfg.base_stddev;
    if (cfg.scale_by_fan_in) {
      stddev = std::min(stddev, std::sqrt(2.0 / static_cast<double>(fan_in)));
    }
    LayerParams p{Tensor(ws), Tensor(bias_shape(layer))};
    for (float& w : p.weight.values()) {
      w = static_cast<float>(rng.truncated_normal(stddev));
    }
    params.layers.emplace(i, std::move(p));
  }
  return params;
}

ModelParams zero_params(const ModelArch& arch) {
  ModelParams params;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (is_trainable(arch.layers[i])) {
      params.layers.emplace(i, LayerParams{Tensor(weight_shape(arch.layers[i])), Tensor(bias_shape(arch.layers[i]))});
    }
  }
  return params;
}

void check_params(const ModelArch& arch, const ModelParams& params) {
  for (const auto& [index, p] : params.layers) {
    if (index >= arch.layers.size() || !is_trainable(arch.layers[index])) {
      throw ConfigError("parameters present for non-trainable layer " + std::to_string(index));
    }
  }
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (!is_trainable(arch.layers[i])) continue;
    auto it = params.layers.find(i);
    if (it == params.layers.end()) {
      throw ConfigError("missing parameters for layer " + std::to_string(i) + " (" + kind_name(arch.layers[i]) + ")");
    }
    if (it->second.weight.shape() != weight_shape(arch.layers[i]) ||
        it->second.bias.shape() != bias_shape(arch.layers[i])) {
      throw ConfigError("layer " + std::to_string(i) + " (" + kind_name(arch.layers[i]) + "): weight " +
                        shape_string(it->second.weight.shape()) + " / bias " + shape_string(it->second.bias.shape()) +
                        " do not match " + describe(arch.layers[i]));
    }
  }
}

void for_each_tensor_pair(ModelParams& dst, const ModelParams& src,
                          const std::function<void(Tensor&, const Tensor&)>& fn) {
  if (dst.layers.size() != src.layers.size()) {
    throw ConfigError("parameter sets have different layer counts");
  }
  auto s = src.layers.begin();
  for (auto& [index, p] : dst.layers) {
    if (s->first != index || s->second.weight.shape() != p.weight.shape() || s->second.bias.shape() != p.bias.shape()) {
      throw ConfigError("parameter sets differ at layer " + std::to_string(index));
    }
    fn(p.weight, s->second.weight);
    fn(p.bias, s->second.bias);
    ++s;
  }
}

std::vector<float> flatten_params(const ModelParams& params) {
  std::vector<float> out;
  out.reserve(params.scalar_count());
  for (const auto& [index, p] : params.layers) {
    out.insert(out.end(), p.weight.values().begin(), p.weight.values().end());
    out.insert(out.end(), p.bias.values().begin(), p.bias.values().end());
  }
  return out;
}

}  // namespace fedgrow
