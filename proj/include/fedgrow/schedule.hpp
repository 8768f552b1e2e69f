#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "fedgrow/layers.hpp"

namespace fedgrow {

/// Ordered model sequence with one switch threshold per transition:
/// thresholds[k] governs the switch from models[k] to models[k + 1].
struct GrowthSchedule {
  std::string dataset;
  std::vector<ModelArch> models;
  std::vector<double> thresholds;
  bool operator==(const GrowthSchedule&) const = default;
};

/// Reference hyperparameters for a dataset.
struct DatasetDefaults {
  std::string dataset;
  float learning_rate;
  std::size_t clients_per_round;
  std::vector<double> thresholds;
};

DatasetDefaults dataset_defaults(const std::string& dataset);

/// The six-model sequence for "emnist", "mnist", or "cifar10".
GrowthSchedule builtin_schedule(const std::string& dataset, float dropout_rate = 0.125f);

// --- transform steps -------------------------------------------------------

struct WidenConv {
  std::size_t layer;
  std::size_t channels;
  bool operator==(const WidenConv&) const = default;
};

struct WidenDense {
  std::size_t layer;
  std::size_t units;
  bool operator==(const WidenDense&) const = default;
};

/// Inserts conv -> relu [-> dropout] at `position`.
struct InsertConvIdentity {
  std::size_t position;
  std::size_t channels;
  std::size_t kernel;
  std::optional<float> dropout;
  bool operator==(const InsertConvIdentity&) const = default;
};

/// Inserts dense -> relu [-> dropout] at `position`.
struct InsertDenseIdentity {
  std::size_t position;
  std::size_t units;
  std::optional<float> dropout;
  bool operator==(const InsertDenseIdentity&) const = default;
};

/// Replaces maxpool(w) by maxpool(factor) followed by maxpool(w / factor).
struct SplitPool {
  std::size_t position;
  std::size_t factor;
  bool operator==(const SplitPool&) const = default;
};

using TransformStep = std::variant<WidenConv, WidenDense, InsertConvIdentity, InsertDenseIdentity, SplitPool>;

/// Steps are applied in order, each against the architecture produced by the
/// previous one: pool splits first, then insertions, then widenings.
struct ModelDiff {
  std::vector<TransformStep> steps;
  bool empty() const { return steps.empty(); }
  bool operator==(const ModelDiff&) const = default;
};

std::string describe(const TransformStep& step);
std::string describe(const ModelDiff& diff);

/// Where a widened layer's outputs are consumed.
struct NextLayer {
  std::size_t index;
  bool through_flatten = false;  ///< dense consumer reached via flatten
  bool through_gap = false;      ///< dense consumer reached via global average pooling
};

/// Locates the unique trainable consumer of `layer`, skipping relu, dropout,
/// maxpool, flatten and global average pooling. Throws StructuralError.
NextLayer next_trainable(const ModelArch& arch, std::size_t layer);

/// Applies one step to the architecture only, checking every precondition
/// that function preservation depends on. Throws TransformError or
/// StructuralError.
ModelArch apply_structural(const ModelArch& arch, const TransformStep& step);
ModelArch apply_structural(const ModelArch& arch, const ModelDiff& diff);

/// Derives the steps turning `from` into `to`; the result is verified by
/// structural replay. Throws ScheduleError naming the first incompatible layer.
ModelDiff diff_models(const ModelArch& from, const ModelArch& to);

struct ValidationReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
  std::string message() const;
};

ValidationReport validate_schedule(const GrowthSchedule& schedule);
/// Throws ScheduleError listing every problem.
void require_valid(const GrowthSchedule& schedule);

// --- schedule files ---------------------------------------------------------

nlohmann::json arch_to_json(const ModelArch& arch);
ModelArch arch_from_json(const nlohmann::json& j);
nlohmann::json schedule_to_json(const GrowthSchedule& schedule);
GrowthSchedule schedule_from_json(const nlohmann::json& j);
GrowthSchedule load_schedule(const std::filesystem::path& path);
void save_schedule(const GrowthSchedule& schedule, const std::filesystem::path& path);

/// "builtin:<dataset>" or a path to a schedule file.
GrowthSchedule resolve_schedule(const std::string& reference, float dropout_rate = 0.125f);

}  // namespace fedgrow
