#include "fedgrow/net2net.hpp"

#include "fedgrow/error.hpp"

namespace fedgrow {

namespace {

// Shifts parameter keys at or after `from` by `by` positions.
ModelParams rekey(const ModelParams& params, std::size_t from, std::size_t by) {
  ModelParams out;
  for (const auto& [index, p] : params.layers) {
    out.layers.emplace(index >= from ? index + by : index, p);
  }
  return out;
}

// Copies output columns of a (rows x old) matrix through the mapping.
Tensor widen_columns(const Tensor& weight, const WidenMapping& m) {
  Shape shape = weight.shape();
  const std::size_t old_cols = shape.back();
  const std::size_t rows = weight.size() / old_cols;
  const std::size_t new_cols = m.mapping.size();
  shape.back() = new_cols;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < new_cols; ++j) {
      out[r * new_cols + j] = weight[r * old_cols + m.mapping[j]];
    }
  }
  return out;
}

// Consumer weights viewed as (blocks, positions, old channels, cols): the
// channel axis is expanded through the mapping and divided by the counts.
Tensor widen_incoming(const Tensor& weight, Shape new_shape, std::size_t blocks, std::size_t positions,
                      std::size_t cols, const WidenMapping& m) {
  const std::size_t old_c = m.counts.size();
  const std::size_t new_c = m.mapping.size();
  Tensor out(std::move(new_shape));
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t j = 0; j < new_c; ++j) {
        const std::size_t q = m.mapping[j];
        const auto divisor = static_cast<float>(m.counts[q]);
        const float* src = weight.data() + ((b * positions + p) * old_c + q) * cols;
        float* dst = out.data() + ((b * positions + p) * new_c + j) * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] / divisor;
      }
    }
  }
  return out;
}

Widened widen_impl(const ModelArch& arch, const ModelParams& params, const WidenMapping& m, bool require_flatten) {
  check_params(arch, params);
  const std::size_t layer = m.layer;
  if (layer >= arch.layers.size() || !is_trainable(arch.layers[layer])) {
    throw StructuralError("layer " + std::to_string(layer) + " is not a conv or dense layer");
  }
  const std::size_t old_width = *output_width(arch.layers[layer]);
  if (m.counts.size() != old_width) {
    throw TransformError("mapping is for " + std::to_string(m.counts.size()) + " channels, layer has " +
                         std::to_string(old_width));
  }
  const std::size_t new_width = m.mapping.size();
  const TransformStep step = std::holds_alternative<Conv2D>(arch.layers[layer])
                                 ? TransformStep{WidenConv{layer, new_width}}
                                 : TransformStep{WidenDense{layer, new_width}};
  ModelArch wide = apply_structural(arch, step);
  const NextLayer next = next_trainable(arch, layer);
  if (require_flatten && !next.through_flatten) {
    throw StructuralError("layer " + std::to_string(layer) + " does not feed a dense layer through flatten");
  }

  ModelParams out = params;
  LayerParams& own = out.layers.at(layer);
  own.weight = widen_columns(own.weight, m);
  own.bias = widen_columns(own.bias, m);

  LayerParams& consumer = out.layers.at(next.index);
  const Shape new_shape = weight_shape(wide.layers[next.index]);
  if (const auto* conv = std::get_if<Conv2D>(&arch.layers[next.index])) {
    consumer.weight =
        widen_incoming(consumer.weight, new_shape, conv->kernel.h * conv->kernel.w, 1, conv->kernel.o, m);
  } else {
    const auto& dense = std::get<Dense>(arch.layers[next.index]);
    const std::size_t positions = next.through_flatten ? dense.in / old_width : 1;
    consumer.weight = widen_incoming(consumer.weight, new_shape, 1, positions, dense.out, m);
  }
  check_params(wide, out);
  return Widened{std::move(wide), std::move(out), m};
}

}  // namespace

WidenMapping make_widen_mapping(std::size_t layer, std::size_t old_width, std::size_t new_width, Rng& rng) {
  if (old_width == 0 || new_width < old_width) {
    throw TransformError("cannot widen from " + std::to_string(old_width) + " to " + std::to_string(new_width));
  }
  std::vector<std::size_t> mapping(new_width);
  for (std::size_t j = 0; j < new_width; ++j) {
    mapping[j] = j < old_width ? j : rng.index(old_width);
  }
  return widen_mapping_from(layer, old_width, std::move(mapping));
}

WidenMapping widen_mapping_from(std::size_t layer, std::size_t old_width, std::vector<std::size_t> mapping) {
  if (mapping.size() < old_width) throw TransformError("mapping is narrower than the layer");
  WidenMapping m{layer, std::move(mapping), std::vector<std::size_t>(old_width, 0)};
  for (std::size_t j = 0; j < m.mapping.size(); ++j) {
    if (j < old_width && m.mapping[j] != j) throw TransformError("mapping must start with the identity");
    if (m.mapping[j] >= old_width) throw TransformError("mapping entry out of range");
    ++m.counts[m.mapping[j]];
  }
  return m;
}

Widened widen(const ModelArch& arch, const ModelParams& params, std::size_t layer, std::size_t new_width, Rng& rng) {
  if (layer >= arch.layers.size() || !is_trainable(arch.layers[layer])) {
    throw StructuralError("layer " + std::to_string(layer) + " is not a conv or dense layer");
  }
  return widen(arch, params, make_widen_mapping(layer, *output_width(arch.layers[layer]), new_width, rng));
}

Widened widen(const ModelArch& arch, const ModelParams& params, const WidenMapping& mapping) {
  return widen_impl(arch, params, mapping, false);
}

Widened widen_through_flatten(const ModelArch& arch, const ModelParams& params, std::size_t conv_layer,
                              std::size_t new_channels, Rng& rng) {
  if (conv_layer >= arch.layers.size() || !std::holds_alternative<Conv2D>(arch.layers[conv_layer])) {
    throw StructuralError("layer " + std::to_string(conv_layer) + " is not a conv layer");
  }
  return widen_through_flatten(
      arch, params, make_widen_mapping(conv_layer, *output_width(arch.layers[conv_layer]), new_channels, rng));
}

Widened widen_through_flatten(const ModelArch& arch, const ModelParams& params, const WidenMapping& mapping) {
  return widen_impl(arch, params, mapping, true);
}

Transformed deepen_conv(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t channels,
                        std::size_t kernel, std::optional<float> dropout) {
  check_params(arch, params);
  const InsertConvIdentity step{position, channels, kernel, dropout};
  ModelArch deep = apply_structural(arch, step);
  const std::size_t block = deep.layers.size() - arch.layers.size();
  ModelParams out = rekey(params, position, block);
  LayerParams inserted{Tensor({kernel, kernel, channels, channels}), Tensor({channels})};
  const std::size_t center = kernel / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    inserted.weight[((center * kernel + center) * channels + c) * channels + c] = 1.0f;
  }
  out.layers.emplace(position, std::move(inserted));
  return Transformed{std::move(deep), std::move(out)};
}

Transformed deepen_dense(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t units,
                         std::optional<float> dropout) {
  check_params(arch, params);
  const InsertDenseIdentity step{position, units, dropout};
  ModelArch deep = apply_structural(arch, step);
  const std::size_t block = deep.layers.size() - arch.layers.size();
  ModelParams out = rekey(params, position, block);
  LayerParams inserted{Tensor({units, units}), Tensor({units})};
  for (std::size_t u = 0; u < units; ++u) inserted.weight[u * units + u] = 1.0f;
  out.layers.emplace(position, std::move(inserted));
  return Transformed{std::move(deep), std::move(out)};
}

Transformed split_pool(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t factor) {
  check_params(arch, params);
  ModelArch split = apply_structural(arch, SplitPool{position, factor});
  return Transformed{std::move(split), rekey(params, position + 1, 1)};
}

Transformed apply_step(const ModelArch& arch, const ModelParams& params, const TransformStep& step, Rng& rng) {
  if (const auto* s = std::get_if<WidenConv>(&step)) {
    if (s->layer >= arch.layers.size() || !std::holds_alternative<Conv2D>(arch.layers[s->layer])) {
      throw StructuralError("widen-conv target " + std::to_string(s->layer) + " is not a conv layer");
    }
    auto w = widen(arch, params, s->layer, s->channels, rng);
    return Transformed{std::move(w.arch), std::move(w.params)};
  }
  if (const auto* s = std::get_if<WidenDense>(&step)) {
    if (s->layer >= arch.layers.size() || !std::holds_alternative<Dense>(arch.layers[s->layer])) {
      throw StructuralError("widen-dense target " + std::to_string(s->layer) + " is not a dense layer");
    }
    auto w = widen(arch, params, s->layer, s->units, rng);
    return Transformed{std::move(w.arch), std::move(w.params)};
  }
  if (const auto* s = std::get_if<InsertConvIdentity>(&step)) {
    return deepen_conv(arch, params, s->position, s->channels, s->kernel, s->dropout);
  }
  if (const auto* s = std::get_if<InsertDenseIdentity>(&step)) {
    return deepen_dense(arch, params, s->position, s->units, s->dropout);
  }
  const auto& s = std::get<SplitPool>(step);
  return split_pool(arch, params, s.position, s.factor);
}

Transformed apply_diff(const ModelDiff& diff, const ModelArch& arch, const ModelParams& params, Rng& rng) {
  Transformed current{arch, params};
  for (const auto& step : diff.steps) {
    current = apply_step(current.arch, current.params, step, rng);
  }
  return current;
}

}  // namespace fedgrow
