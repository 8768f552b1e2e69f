#include "fedgrow/layers.hpp"

#include <sstream>

#include "fedgrow/error.hpp"

namespace fedgrow {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string shape_text(const FeatureShape& s) {
  std::ostringstream out;
  if (s.flat) {
    out << "(" << s.c << ")";
  } else {
    out << "(" << s.h << "x" << s.w << "x" << s.c << ")";
  }
  return out.str();
}

[[noreturn]] void fail(std::size_t index, const LayerSpec& layer, const std::string& what) {
  throw ConfigError("layer " + std::to_string(index) + " (" + kind_name(layer) + "): " + what);
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (padding == Padding::same) {
    return (in + stride - 1) / stride;
  }
  return in < k ? 0 : (in - k) / stride + 1;
}

}  // namespace

std::string kind_name(const LayerSpec& layer) {
  return std::visit(Overloaded{[](const Conv2D&) { return std::string("conv2d"); },
                               [](const Dense&) { return std::string("dense"); },
                               [](const MaxPool&) { return std::string("maxpool"); },
                               [](const GlobalAvgPool&) { return std::string("global-average-pool"); },
                               [](const Dropout&) { return std::string("dropout"); },
                               [](const Relu&) { return std::string("relu"); },
                               [](const Softmax&) { return std::string("softmax"); },
                               [](const Flatten&) { return std::string("flatten"); }},
                    layer);
}

std::string describe(const LayerSpec& layer) {
  std::ostringstream out;
  std::visit(Overloaded{[&](const Conv2D& c) {
                          out << "conv2d(" << c.kernel.o << ", " << c.kernel.h << "x" << c.kernel.w
                              << ", in=" << c.kernel.i << (c.padding == Padding::same ? ", same" : ", valid");
                          if (c.stride != 1) out << ", stride=" << c.stride;
                          out << ")";
                        },
                        [&](const Dense& d) { out << "dense(" << d.in << "->" << d.out << ")"; },
                        [&](const MaxPool& p) {
                          out << "maxpool(" << p.window << "," << p.window << ")";
                          if (p.stride != p.window) out << "/" << p.stride;
                        },
                        [&](const Dropout& d) { out << "dropout(" << d.rate << ")"; },
                        [&](const auto& other) { out << kind_name(LayerSpec{other}); }},
             layer);
  return out.str();
}

std::string describe(const ModelArch& arch) {
  std::ostringstream out;
  out << "input" << shape_text(arch.input);
  for (const auto& layer : arch.layers) {
    out << " -> " << describe(layer);
  }
  return out.str();
}

bool is_trainable(const LayerSpec& layer) {
  return std::holds_alternative<Conv2D>(layer) || std::holds_alternative<Dense>(layer);
}

std::optional<std::size_t> output_width(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<Conv2D>(&layer)) return conv->kernel.o;
  if (const auto* dense = std::get_if<Dense>(&layer)) return dense->out;
  return std::nullopt;
}

std::optional<std::size_t> classifier_index(const ModelArch& arch) {
  for (std::size_t i = arch.layers.size(); i-- > 0;) {
    if (is_trainable(arch.layers[i])) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> trainable_indices(const ModelArch& arch) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (is_trainable(arch.layers[i])) out.push_back(i);
  }
  return out;
}

ConvGeometry conv_geometry(const Conv2D& conv, const FeatureShape& input) {
  ConvGeometry g{};
  g.in_h = input.h;
  g.in_w = input.w;
  g.in_c = input.c;
  g.k_h = conv.kernel.h;
  g.k_w = conv.kernel.w;
  g.out_c = conv.kernel.o;
  g.stride = conv.stride;
  g.out_h = conv_out_extent(input.h, g.k_h, g.stride, conv.padding);
  g.out_w = conv_out_extent(input.w, g.k_w, g.stride, conv.padding);
  if (conv.padding == Padding::same) {
    const auto pad_total = [&](std::size_t in, std::size_t out, std::size_t k) -> std::size_t {
      const std::size_t needed = (out - 1) * g.stride + k;
      return needed > in ? needed - in : 0;
    };
    g.pad_top = pad_total(g.in_h, g.out_h, g.k_h) / 2;
    g.pad_left = pad_total(g.in_w, g.out_w, g.k_w) / 2;
  }
  return g;
}

std::vector<FeatureShape> infer_shapes(const ModelArch& arch) {
  if (arch.input.size() == 0) {
    throw ConfigError("model input shape has a zero extent");
  }
  std::vector<FeatureShape> shapes{arch.input};
  for (std::size_t index = 0; index < arch.layers.size(); ++index) {
    const LayerSpec& layer = arch.layers[index];
    const FeatureShape in = shapes.back();
    FeatureShape out = in;
    std::visit(
        Overloaded{
            [&](const Conv2D& conv) {
              const KernelShape& k = conv.kernel;
              if (k.w == 0 || k.h == 0 || k.i == 0 || k.o == 0 || conv.stride == 0) {
                fail(index, layer, "kernel extents and stride must be positive");
              }
              if (in.flat) fail(index, layer, "expects a spatial input, got " + shape_text(in));
              if (k.i != in.c) {
                fail(index, layer,
                     "kernel expects " + std::to_string(k.i) + " input channels, got " + shape_text(in));
              }
              const ConvGeometry g = conv_geometry(conv, in);
              if (g.out_h == 0 || g.out_w == 0) fail(index, layer, "kernel larger than input " + shape_text(in));
              out = FeatureShape{g.out_h, g.out_w, k.o, false};
            },
            [&](const Dense& dense) {
              if (dense.in == 0 || dense.out == 0) fail(index, layer, "unit counts must be positive");
              if (!in.flat) fail(index, layer, "expects a flat input, got " + shape_text(in));
              if (dense.in != in.c) {
                fail(index, layer,
                     "expects " + std::to_string(dense.in) + " input units, got " + std::to_string(in.c));
              }
              out = FeatureShape{1, 1, dense.out, true};
            },
            [&](const MaxPool& pool) {
              if (pool.window == 0 || pool.stride == 0) fail(index, layer, "window and stride must be positive");
              if (in.flat) fail(index, layer, "expects a spatial input, got " + shape_text(in));
              if (pool.window > in.h || pool.window > in.w) {
                fail(index, layer, "window larger than input " + shape_text(in));
              }
              out = FeatureShape{(in.h - pool.window) / pool.stride + 1, (in.w - pool.window) / pool.stride + 1,
                                 in.c, false};
            },
            [&](const GlobalAvgPool&) {
              if (in.flat) fail(index, layer, "expects a spatial input, got " + shape_text(in));
              out = FeatureShape{1, 1, in.c, true};
            },
            [&](const Dropout& dropout) {
              if (!(dropout.rate >= 0.0f && dropout.rate < 1.0f)) fail(index, layer, "rate must be in [0, 1)");
            },
            [&](const Relu&) {},
            [&](const Softmax&) {
              if (!in.flat) fail(index, layer, "expects a flat input, got " + shape_text(in));
            },
            [&](const Flatten&) {
              if (in.flat) fail(index, layer, "input is already flat");
              out = FeatureShape{1, 1, in.size(), true};
            }},
        layer);
    shapes.push_back(out);
  }
  return shapes;
}

std::size_t class_count(const ModelArch& arch) { return infer_shapes(arch).back().size(); }

std::size_t count_params(const ModelArch& arch) {
  std::size_t total = 0;
  for (const auto& layer : arch.layers) {
    if (const auto* conv = std::get_if<Conv2D>(&layer)) {
      const KernelShape& k = conv->kernel;
      total += k.w * k.h * k.i * k.o + k.o;
    } else if (const auto* dense = std::get_if<Dense>(&layer)) {
      total += dense->in * dense->out + dense->out;
    }
  }
  return total;
}

std::uint64_t forward_macs(const ModelArch& arch) {
  const auto shapes = infer_shapes(arch);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (const auto* conv = std::get_if<Conv2D>(&arch.layers[i])) {
      const KernelShape& k = conv->kernel;
      total += static_cast<std::uint64_t>(shapes[i + 1].h) * shapes[i + 1].w * k.h * k.w * k.i * k.o;
    } else if (const auto* dense = std::get_if<Dense>(&arch.layers[i])) {
      total += static_cast<std::uint64_t>(dense->in) * dense->out;
    }
  }
  return total;
}

}  // namespace fedgrow
