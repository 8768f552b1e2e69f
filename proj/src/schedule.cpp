#include "fedgrow/schedule.hpp"

#include <cmath>
#include <fstream>
#include <functional>
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

// --- builtin architectures ---------------------------------------------------

class ArchBuilder {
 public:
  ArchBuilder(FeatureShape input, float dropout) : dropout_(dropout) { arch_.input = input; }

  ArchBuilder& conv(std::size_t filters, std::size_t kernel) {
    const std::size_t in = infer_shapes(arch_).back().c;
    arch_.layers.emplace_back(Conv2D{KernelShape{kernel, kernel, in, filters}, Padding::same, 1});
    return activation();
  }
  ArchBuilder& pool(std::size_t window) {
    arch_.layers.emplace_back(MaxPool{window, window});
    return *this;
  }
  ArchBuilder& flatten() {
    arch_.layers.emplace_back(Flatten{});
    return *this;
  }
  ArchBuilder& gap() {
    arch_.layers.emplace_back(GlobalAvgPool{});
    return *this;
  }
  ArchBuilder& dense(std::size_t units) {
    arch_.layers.emplace_back(Dense{infer_shapes(arch_).back().c, units});
    return activation();
  }
  ModelArch classifier(std::size_t classes) {
    arch_.layers.emplace_back(Dense{infer_shapes(arch_).back().c, classes});
    arch_.layers.emplace_back(Softmax{});
    return arch_;
  }

 private:
  ArchBuilder& activation() {
    arch_.layers.emplace_back(Relu{});
    arch_.layers.emplace_back(Dropout{dropout_});
    return *this;
  }

  ModelArch arch_;
  float dropout_;
};

std::vector<ModelArch> digit_models(std::size_t classes, const std::vector<std::size_t>& hidden, float dropout) {
  const FeatureShape input{28, 28, 1, false};
  auto start = [&] { return ArchBuilder(input, dropout); };
  std::vector<ModelArch> models;
  models.push_back(start().conv(16, 5).pool(4).flatten().dense(hidden[0]).classifier(classes));
  models.push_back(start().conv(32, 5).pool(4).flatten().dense(hidden[1]).classifier(classes));
  models.push_back(start().conv(32, 5).pool(2).conv(32, 5).pool(2).flatten().dense(hidden[2]).classifier(classes));
  for (std::size_t m = 3; m < 6; ++m) {
    models.push_back(start().conv(32, 5).pool(2).conv(64, 5).pool(2).flatten().dense(hidden[m]).classifier(classes));
  }
  return models;
}

std::vector<ModelArch> cifar_models(float dropout) {
  const FeatureShape input{32, 32, 3, false};
  auto start = [&] { return ArchBuilder(input, dropout); };
  // The 10-filter conv before pooling is 1x1 in every model; the parameter
  // counts of the reference table only add up that way.
  std::vector<ModelArch> models;
  models.push_back(start().conv(32, 3).pool(3).conv(64, 3).pool(3).conv(10, 1).gap().classifier(10));
  models.push_back(
      start().conv(32, 3).conv(32, 3).pool(3).conv(64, 3).conv(64, 3).pool(3).conv(10, 1).gap().classifier(10));
  models.push_back(
      start().conv(64, 3).conv(64, 3).pool(3).conv(128, 3).conv(128, 3).pool(3).conv(10, 1).gap().classifier(10));
  models.push_back(
      start().conv(96, 3).conv(96, 3).pool(3).conv(192, 3).conv(192, 3).pool(3).conv(10, 1).gap().classifier(10));
  models.push_back(start()
                       .conv(96, 3)
                       .conv(96, 3)
                       .pool(3)
                       .conv(192, 3)
                       .conv(192, 3)
                       .pool(3)
                       .conv(192, 3)
                       .conv(10, 1)
                       .gap()
                       .classifier(10));
  models.push_back(start()
                       .conv(96, 3)
                       .conv(96, 3)
                       .pool(3)
                       .conv(192, 3)
                       .conv(192, 3)
                       .pool(3)
                       .conv(192, 3)
                       .conv(192, 1)
                       .conv(10, 1)
                       .gap()
                       .classifier(10));
  return models;
}

// --- structural helpers ----------------------------------------------------

[[noreturn]] void transform_error(const std::string& what) { throw TransformError(what); }

void require_after_relu(const ModelArch& arch, std::size_t position) {
  for (std::size_t i = position; i-- > 0;) {
    const LayerSpec& layer = arch.layers[i];
    if (std::holds_alternative<Relu>(layer)) return;
    if (std::holds_alternative<Dropout>(layer) || std::holds_alternative<MaxPool>(layer)) continue;
    break;
  }
  transform_error("identity insertion at position " + std::to_string(position) +
                  " does not follow a ReLU; its input may be negative and would not be preserved");
}

std::vector<LayerSpec> identity_block(LayerSpec trainable, std::optional<float> dropout) {
  std::vector<LayerSpec> block{std::move(trainable), Relu{}};
  if (dropout) block.emplace_back(Dropout{*dropout});
  return block;
}

ModelArch insert_block(const ModelArch& arch, std::size_t position, std::vector<LayerSpec> block) {
  ModelArch out = arch;
  out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(position), block.begin(), block.end());
  return out;
}

ModelArch widen_structural(const ModelArch& arch, std::size_t layer, std::size_t width) {
  if (layer >= arch.layers.size() || !is_trainable(arch.layers[layer])) {
    throw StructuralError("layer " + std::to_string(layer) + " is not a conv or dense layer");
  }
  if (classifier_index(arch) == layer) {
    transform_error("cannot widen the final classification layer " + std::to_string(layer));
  }
  const std::size_t current = *output_width(arch.layers[layer]);
  if (width < current) {
    transform_error("layer " + std::to_string(layer) + " cannot shrink from " + std::to_string(current) + " to " +
                    std::to_string(width));
  }
  const NextLayer next = next_trainable(arch, layer);
  const auto shapes = infer_shapes(arch);
  ModelArch out = arch;
  if (auto* conv = std::get_if<Conv2D>(&out.layers[layer])) {
    conv->kernel.o = width;
  } else {
    std::get<Dense>(out.layers[layer]).out = width;
  }
  LayerSpec& consumer = out.layers[next.index];
  if (auto* conv = std::get_if<Conv2D>(&consumer)) {
    conv->kernel.i = width;
  } else {
    auto& dense = std::get<Dense>(consumer);
    if (next.through_flatten) {
      const FeatureShape& s = shapes[next.index];
      dense.in = s.size() / current * width;
    } else {
      dense.in = width;
    }
  }
  infer_shapes(out);
  return out;
}

bool widens_to(const LayerSpec& from, const LayerSpec& to, bool is_classifier) {
  if (from.index() != to.index()) return false;
  if (const auto* a = std::get_if<Conv2D>(&from)) {
    const auto& b = std::get<Conv2D>(to);
    return a->kernel.w == b.kernel.w && a->kernel.h == b.kernel.h && a->padding == b.padding &&
           a->stride == b.stride && b.kernel.i >= a->kernel.i &&
           (is_classifier ? b.kernel.o == a->kernel.o : b.kernel.o >= a->kernel.o);
  }
  if (const auto* a = std::get_if<Dense>(&from)) {
    const auto& b = std::get<Dense>(to);
    return b.in >= a->in && (is_classifier ? b.out == a->out : b.out >= a->out);
  }
  return from == to;
}

// Length of an identity-insertable block starting at b[j]: 2 (trainable, relu)
// or 3 (with dropout). Returns candidate lengths, longest first.
std::vector<std::size_t> insertable_lengths(const ModelArch& b, std::size_t j) {
  std::vector<std::size_t> lengths;
  if (j + 1 >= b.layers.size() || !std::holds_alternative<Relu>(b.layers[j + 1])) return lengths;
  if (const auto* conv = std::get_if<Conv2D>(&b.layers[j])) {
    const bool ok = conv->kernel.w == conv->kernel.h && conv->kernel.w % 2 == 1 && conv->padding == Padding::same &&
                    conv->stride == 1;
    if (!ok) return lengths;
  } else if (!std::holds_alternative<Dense>(b.layers[j])) {
    return lengths;
  }
  if (j + 2 < b.layers.size() && std::holds_alternative<Dropout>(b.layers[j + 2])) lengths.push_back(3);
  lengths.push_back(2);
  return lengths;
}

struct PendingInsert {
  std::size_t position;  // in post-split coordinates
  std::size_t b_begin;
  std::size_t length;
};

struct Alignment {
  std::vector<SplitPool> splits;
  std::vector<PendingInsert> inserts;
};

struct Mismatch {
  std::size_t a_index;
  std::size_t b_index;
};

// Backtracking alignment of `cur` (with splits applied as discovered) against b.
std::optional<Alignment> align(const ModelArch& cur, std::size_t i, const ModelArch& b, std::size_t j,
                               std::size_t classifier, Alignment acc, Mismatch& furthest) {
  if (i == cur.layers.size() && j == b.layers.size()) return acc;
  if (j > furthest.b_index || (j == furthest.b_index && i > furthest.a_index)) furthest = {i, j};
  if (i < cur.layers.size() && j < b.layers.size()) {
    if (widens_to(cur.layers[i], b.layers[j], i == classifier)) {
      if (auto done = align(cur, i + 1, b, j + 1, classifier, acc, furthest)) return done;
    }
    const auto* pa = std::get_if<MaxPool>(&cur.layers[i]);
    const auto* pb = std::get_if<MaxPool>(&b.layers[j]);
    if (pa && pb && pa->stride == pa->window && pb->stride == pb->window && pb->window < pa->window &&
        pa->window % pb->window == 0) {
      try {
        const SplitPool split{i, pb->window};
        ModelArch next = apply_structural(cur, split);
        Alignment with = acc;
        with.splits.push_back(split);
        const std::size_t shift = 1;
        const std::size_t cls = classifier > i ? classifier + shift : classifier;
        if (auto done = align(next, i, b, j, cls, with, furthest)) return done;
      } catch (const Error&) {
      }
    }
  }
  if (j < b.layers.size()) {
    for (std::size_t length : insertable_lengths(b, j)) {
      Alignment with = acc;
      with.inserts.push_back({i, j, length});
      if (auto done = align(cur, i, b, j + length, classifier, with, furthest)) return done;
    }
  }
  return std::nullopt;
}

std::string layer_at(const ModelArch& arch, std::size_t index) {
  if (index >= arch.layers.size()) return "<end>";
  return "layer " + std::to_string(index) + " " + describe(arch.layers[index]);
}

// --- json helpers ---------------------------------------------------------------

std::string padding_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding padding_from(const std::string& name) {
  if (name == "same") return Padding::same;
  if (name == "valid") return Padding::valid;
  throw ConfigError("unknown padding '" + name + "' (expected same or valid)");
}

}  // namespace

DatasetDefaults dataset_defaults(const std::string& dataset) {
  if (dataset == "emnist") return {dataset, 0.035f, 35, {0.08, 0.04, 0.02, 0.01, 0.005}};
  if (dataset == "cifar10") return {dataset, 0.05f, 10, {0.12, 0.11, 0.10, 0.09, 0.08}};
  if (dataset == "mnist") return {dataset, 0.015f, 10, {0.04, 0.02, 0.01, 0.005, 0.0025}};
  throw ConfigError("unknown dataset '" + dataset + "' (expected emnist, mnist or cifar10)");
}

GrowthSchedule builtin_schedule(const std::string& dataset, float dropout_rate) {
  const DatasetDefaults defaults = dataset_defaults(dataset);
  GrowthSchedule schedule;
  schedule.dataset = dataset;
  schedule.thresholds = defaults.thresholds;
  if (dataset == "emnist") {
    schedule.models = digit_models(62, {512, 512, 512, 512, 1024, 2048}, dropout_rate);
  } else if (dataset == "mnist") {
    schedule.models = digit_models(10, {128, 128, 128, 128, 256, 512}, dropout_rate);
  } else {
    schedule.models = cifar_models(dropout_rate);
  }
  return schedule;
}

std::string describe(const TransformStep& step) {
  std::ostringstream out;
  std::visit(Overloaded{[&](const WidenConv& s) { out << "widen-conv(layer " << s.layer << ", " << s.channels << ")"; },
                        [&](const WidenDense& s) { out << "widen-dense(layer " << s.layer << ", " << s.units << ")"; },
                        [&](const InsertConvIdentity& s) {
                          out << "insert-conv-identity(position " << s.position << ", " << s.channels << " channels, "
                              << s.kernel << "x" << s.kernel << ")";
                        },
                        [&](const InsertDenseIdentity& s) {
                          out << "insert-dense-identity(position " << s.position << ", " << s.units << " units)";
                        },
                        [&](const SplitPool& s) {
                          out << "split-pool(position " << s.position << ", factor " << s.factor << ")";
                        }},
             step);
  return out.str();
}

std::string describe(const ModelDiff& diff) {
  if (diff.steps.empty()) return "(no change)";
  std::string out;
  for (const auto& step : diff.steps) {
    if (!out.empty()) out += "; ";
    out += describe(step);
  }
  return out;
}

NextLayer next_trainable(const ModelArch& arch, std::size_t layer) {
  NextLayer next{0};
  for (std::size_t i = layer + 1; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (std::holds_alternative<Relu>(l) || std::holds_alternative<Dropout>(l) || std::holds_alternative<MaxPool>(l)) {
      if (std::holds_alternative<MaxPool>(l) && (next.through_flatten || next.through_gap)) break;
      continue;
    }
    if (std::holds_alternative<Flatten>(l)) {
      if (next.through_flatten || next.through_gap) break;
      next.through_flatten = true;
      continue;
    }
    if (std::holds_alternative<GlobalAvgPool>(l)) {
      if (next.through_flatten || next.through_gap) break;
      next.through_gap = true;
      continue;
    }
    if (std::holds_alternative<Conv2D>(l) && !next.through_flatten && !next.through_gap) {
      next.index = i;
      return next;
    }
    if (std::holds_alternative<Dense>(l)) {
      next.index = i;
      return next;
    }
    break;
  }
  throw StructuralError("layer " + std::to_string(layer) + " has no unambiguous trainable consumer");
}

ModelArch apply_structural(const ModelArch& arch, const TransformStep& step) {
  const auto shapes = infer_shapes(arch);
  return std::visit(
      Overloaded{
          [&](const WidenConv& s) {
            if (s.layer >= arch.layers.size() || !std::holds_alternative<Conv2D>(arch.layers[s.layer])) {
              throw StructuralError("widen-conv target " + std::to_string(s.layer) + " is not a conv layer");
            }
            return widen_structural(arch, s.layer, s.channels);
          },
          [&](const WidenDense& s) {
            if (s.layer >= arch.layers.size() || !std::holds_alternative<Dense>(arch.layers[s.layer])) {
              throw StructuralError("widen-dense target " + std::to_string(s.layer) + " is not a dense layer");
            }
            return widen_structural(arch, s.layer, s.units);
          },
          [&](const InsertConvIdentity& s) {
            if (s.position > arch.layers.size()) {
              throw StructuralError("insertion position " + std::to_string(s.position) + " out of range");
            }
            const FeatureShape& in = shapes[s.position];
            if (in.flat) transform_error("conv insertion at position " + std::to_string(s.position) + " on a flat input");
            if (s.channels != in.c) {
              transform_error("conv insertion expects " + std::to_string(in.c) + " channels, got " +
                              std::to_string(s.channels));
            }
            if (s.kernel % 2 == 0 || s.kernel == 0) transform_error("identity conv kernel must be odd");
            require_after_relu(arch, s.position);
            return insert_block(arch, s.position,
                                identity_block(Conv2D{KernelShape{s.kernel, s.kernel, s.channels, s.channels}},
                                               s.dropout));
          },
          [&](const InsertDenseIdentity& s) {
            if (s.position > arch.layers.size()) {
              throw StructuralError("insertion position " + std::to_string(s.position) + " out of range");
            }
            const FeatureShape& in = shapes[s.position];
            if (!in.flat) transform_error("dense insertion at position " + std::to_string(s.position) + " on a spatial input");
            if (s.units != in.c) {
              transform_error("dense insertion expects " + std::to_string(in.c) + " units, got " +
                              std::to_string(s.units));
            }
            require_after_relu(arch, s.position);
            return insert_block(arch, s.position, identity_block(Dense{s.units, s.units}, s.dropout));
          },
          [&](const SplitPool& s) {
            if (s.position >= arch.layers.size() || !std::holds_alternative<MaxPool>(arch.layers[s.position])) {
              throw StructuralError("split-pool target " + std::to_string(s.position) + " is not a maxpool layer");
            }
            const auto& pool = std::get<MaxPool>(arch.layers[s.position]);
            if (pool.stride != pool.window) transform_error("only non-overlapping pools can be split");
            if (s.factor < 2 || pool.window % s.factor != 0 || pool.window == s.factor) {
              transform_error("pool window " + std::to_string(pool.window) + " cannot be split by factor " +
                              std::to_string(s.factor));
            }
            const FeatureShape& in = shapes[s.position];
            if (in.h % pool.window != 0 || in.w % pool.window != 0) {
              transform_error("pool input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                              " is not divisible by the window " + std::to_string(pool.window));
            }
            ModelArch out = arch;
            const std::size_t rest = pool.window / s.factor;
            out.layers[s.position] = MaxPool{s.factor, s.factor};
            out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(s.position) + 1, MaxPool{rest, rest});
            return out;
          }},
      step);
}

ModelArch apply_structural(const ModelArch& arch, const ModelDiff& diff) {
  ModelArch out = arch;
  for (const auto& step : diff.steps) out = apply_structural(out, step);
  return out;
}

ModelDiff diff_models(const ModelArch& from, const ModelArch& to) {
  infer_shapes(from);
  infer_shapes(to);
  if (from.input != to.input) throw ScheduleError("models have different input shapes");
  const auto classifier = classifier_index(from);
  if (!classifier) throw ScheduleError("source model has no trainable layer");

  Mismatch furthest{0, 0};
  const auto alignment = align(from, 0, to, 0, *classifier, Alignment{}, furthest);
  if (!alignment) {
    throw ScheduleError("models are not related by supported transforms; first incompatible layer: " +
                        layer_at(to, furthest.b_index) + " (source " + layer_at(from, furthest.a_index) + ")");
  }

  ModelDiff diff;
  ModelArch cur = from;
  try {
    for (const SplitPool& split : alignment->splits) {
      diff.steps.emplace_back(split);
      cur = apply_structural(cur, split);
    }
    std::size_t offset = 0;
    for (const PendingInsert& ins : alignment->inserts) {
      const std::size_t position = ins.position + offset;
      const FeatureShape in = infer_shapes(cur)[position];
      std::optional<float> dropout;
      if (ins.length == 3) dropout = std::get<Dropout>(to.layers[ins.b_begin + 2]).rate;
      TransformStep step;
      if (const auto* conv = std::get_if<Conv2D>(&to.layers[ins.b_begin])) {
        step = InsertConvIdentity{position, in.c, conv->kernel.w, dropout};
      } else {
        step = InsertDenseIdentity{position, in.c, dropout};
      }
      cur = apply_structural(cur, step);
      diff.steps.push_back(step);
      offset += ins.length;
    }
    if (cur.layers.size() != to.layers.size()) {
      throw ScheduleError("layer counts differ after insertions");
    }
    for (std::size_t t : trainable_indices(cur)) {
      const std::size_t have = *output_width(cur.layers[t]);
      const auto want = output_width(to.layers[t]);
      if (!want || *want < have) {
        throw ScheduleError("first incompatible layer: " + layer_at(to, t));
      }
      if (*want == have) continue;
      TransformStep step = std::holds_alternative<Conv2D>(cur.layers[t]) ? TransformStep{WidenConv{t, *want}}
                                                                         : TransformStep{WidenDense{t, *want}};
      cur = apply_structural(cur, step);
      diff.steps.push_back(step);
    }
  } catch (const ScheduleError&) {
    throw;
  } catch (const Error& e) {
    throw ScheduleError(std::string("models are not related by supported transforms: ") + e.what());
  }
  if (!(cur == to)) {
    for (std::size_t i = 0; i < to.layers.size(); ++i) {
      if (!(cur.layers[i] == to.layers[i])) {
        throw ScheduleError("first incompatible layer: " + layer_at(to, i) + " (replay produced " +
                            describe(cur.layers[i]) + ")");
      }
    }
  }
  return diff;
}

std::string ValidationReport::message() const {
  std::string out;
  for (const auto& p : problems) {
    if (!out.empty()) out += "\n";
    out += p;
  }
  return out;
}

ValidationReport validate_schedule(const GrowthSchedule& schedule) {
  ValidationReport report;
  if (schedule.models.empty()) {
    report.problems.push_back("schedule has no models");
    return report;
  }
  if (schedule.thresholds.size() + 1 != schedule.models.size()) {
    report.problems.push_back("threshold arity: " + std::to_string(schedule.models.size()) + " models need " +
                              std::to_string(schedule.models.size() - 1) + " thresholds, got " +
                              std::to_string(schedule.thresholds.size()));
  }
  for (std::size_t k = 0; k < schedule.thresholds.size(); ++k) {
    if (!(schedule.thresholds[k] > 0.0) || !std::isfinite(schedule.thresholds[k])) {
      report.problems.push_back("threshold " + std::to_string(k) + " must be a positive number");
    }
  }
  std::vector<bool> well_formed(schedule.models.size(), true);
  for (std::size_t k = 0; k < schedule.models.size(); ++k) {
    try {
      infer_shapes(schedule.models[k]);
    } catch (const Error& e) {
      well_formed[k] = false;
      report.problems.push_back("model " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  for (std::size_t k = 0; k + 1 < schedule.models.size(); ++k) {
    if (!well_formed[k] || !well_formed[k + 1]) continue;
    const std::size_t a = count_params(schedule.models[k]);
    const std::size_t b = count_params(schedule.models[k + 1]);
    if (b <= a) {
      report.problems.push_back("non-increasing parameter count from model " + std::to_string(k + 1) + " (" +
                                std::to_string(a) + ") to model " + std::to_string(k + 2) + " (" +
                                std::to_string(b) + ")");
    }
    try {
      diff_models(schedule.models[k], schedule.models[k + 1]);
    } catch (const Error& e) {
      report.problems.push_back("model " + std::to_string(k + 1) + " -> " + std::to_string(k + 2) + ": " + e.what());
    }
  }
  return report;
}

void require_valid(const GrowthSchedule& schedule) {
  const ValidationReport report = validate_schedule(schedule);
  if (!report.ok()) throw ScheduleError("invalid schedule:\n" + report.message());
}

nlohmann::json arch_to_json(const ModelArch& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : arch.layers) {
    std::visit(Overloaded{[&](const Conv2D& c) {
                            nlohmann::json j{{"type", "conv2d"}, {"filters", c.kernel.o}};
                            if (c.kernel.w == c.kernel.h) {
                              j["kernel"] = c.kernel.w;
                            } else {
                              j["kernel"] = {c.kernel.h, c.kernel.w};
                            }
                            j["padding"] = padding_name(c.padding);
                            if (c.stride != 1) j["stride"] = c.stride;
                            layers.push_back(j);
                          },
                          [&](const Dense& d) { layers.push_back({{"type", "dense"}, {"units", d.out}}); },
                          [&](const MaxPool& p) {
                            nlohmann::json j{{"type", "maxpool"}, {"window", p.window}};
                            if (p.stride != p.window) j["stride"] = p.stride;
                            layers.push_back(j);
                          },
                          [&](const GlobalAvgPool&) { layers.push_back({{"type", "gap"}}); },
                          [&](const Dropout& d) { layers.push_back({{"type", "dropout"}, {"rate", d.rate}}); },
                          [&](const Relu&) { layers.push_back({{"type", "relu"}}); },
                          [&](const Softmax&) { layers.push_back({{"type", "softmax"}}); },
                          [&](const Flatten&) { layers.push_back({{"type", "flatten"}}); }},
               layer);
  }
  return {{"input", {arch.input.h, arch.input.w, arch.input.c}}, {"layers", layers}};
}

ModelArch arch_from_json(const nlohmann::json& j) {
  ModelArch arch;
  const auto& input = j.at("input");
  if (input.size() == 3) {
    arch.input = FeatureShape{input[0].get<std::size_t>(), input[1].get<std::size_t>(), input[2].get<std::size_t>(),
                              false};
  } else if (input.size() == 1) {
    arch.input = FeatureShape{1, 1, input[0].get<std::size_t>(), true};
  } else {
    throw ConfigError("model input must be [h, w, c] or [units]");
  }
  std::size_t index = 0;
  for (const auto& l : j.at("layers")) {
    const std::string type = l.at("type").get<std::string>();
    const FeatureShape in = infer_shapes(arch).back();
    if (type == "conv2d") {
      std::size_t kh = 0, kw = 0;
      if (l.at("kernel").is_array()) {
        kh = l.at("kernel")[0].get<std::size_t>();
        kw = l.at("kernel")[1].get<std::size_t>();
      } else {
        kh = kw = l.at("kernel").get<std::size_t>();
      }
      arch.layers.emplace_back(Conv2D{KernelShape{kw, kh, in.c, l.at("filters").get<std::size_t>()},
                                      padding_from(l.value("padding", std::string("same"))),
                                      l.value("stride", std::size_t{1})});
    } else if (type == "dense") {
      arch.layers.emplace_back(Dense{in.c, l.at("units").get<std::size_t>()});
    } else if (type == "maxpool") {
      const auto window = l.at("window").get<std::size_t>();
      arch.layers.emplace_back(MaxPool{window, l.value("stride", window)});
    } else if (type == "gap" || type == "global-average-pool") {
      arch.layers.emplace_back(GlobalAvgPool{});
    } else if (type == "dropout") {
      arch.layers.emplace_back(Dropout{l.at("rate").get<float>()});
    } else if (type == "relu") {
      arch.layers.emplace_back(Relu{});
    } else if (type == "softmax") {
      arch.layers.emplace_back(Softmax{});
    } else if (type == "flatten") {
      arch.layers.emplace_back(Flatten{});
    } else {
      throw ConfigError("layer " + std::to_string(index) + ": unknown type '" + type + "'");
    }
    ++index;
  }
  infer_shapes(arch);
  return arch;
}

nlohmann::json schedule_to_json(const GrowthSchedule& schedule) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : schedule.models) models.push_back(arch_to_json(m));
  return {{"dataset", schedule.dataset}, {"thresholds", schedule.thresholds}, {"models", models}};
}

GrowthSchedule schedule_from_json(const nlohmann::json& j) {
  GrowthSchedule schedule;
  schedule.dataset = j.at("dataset").get<std::string>();
  schedule.thresholds = j.at("thresholds").get<std::vector<double>>();
  const nlohmann::json* shared_input = j.contains("input") ? &j.at("input") : nullptr;
  std::size_t k = 0;
  for (const auto& m : j.at("models")) {
    nlohmann::json model = m;
    if (!model.contains("input")) {
      if (shared_input == nullptr) throw ConfigError("model " + std::to_string(k + 1) + " has no input shape");
      model["input"] = *shared_input;
    }
    try {
      schedule.models.push_back(arch_from_json(model));
    } catch (const ConfigError& e) {
      throw ConfigError("model " + std::to_string(k + 1) + ": " + e.what());
    }
    ++k;
  }
  return schedule;
}

GrowthSchedule load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schedule file " + path.string());
  try {
    return schedule_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schedule file " + path.string() + ": " + e.what());
  }
}

void save_schedule(const GrowthSchedule& schedule, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write schedule file " + path.string());
  out << schedule_to_json(schedule).dump(2) << "\n";
}

GrowthSchedule resolve_schedule(const std::string& reference, float dropout_rate) {
  constexpr std::string_view prefix = "builtin:";
  if (reference.starts_with(prefix)) {
    return builtin_schedule(reference.substr(prefix.size()), dropout_rate);
  }
  return load_schedule(reference);
}

}  // namespace fedgrow
