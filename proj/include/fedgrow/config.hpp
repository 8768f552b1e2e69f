#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedgrow/dataset.hpp"
#include "fedgrow/federated.hpp"
#include "fedgrow/model.hpp"
#include "fedgrow/partition.hpp"
#include "json.hpp"

namespace fedgrow {

/// Where the samples come from: an IDX directory or generated Gaussian blobs.
struct DataSource {
  std::string kind = "idx";
  std::string path;
  SyntheticSpec synthetic;
  bool operator==(const DataSource&) const = default;
};

struct ExperimentConfig {
  std::string dataset = "mnist";
  DataSource data;
  Method method = Method::fnn;
  std::size_t rounds = 1500;
  std::size_t clients_per_round = 10;
  TrainConfig train;
  PartitionSpec partition;
  /// "builtin:<dataset>" or a schedule file path.
  std::string schedule = "builtin:mnist";
  std::size_t window = 100;
  std::size_t lag = 300;
  std::optional<std::vector<double>> thresholds;
  double fd_keep_fraction = 0.875;
  std::size_t fd_exempt_models = 2;
  std::size_t eval_every = 50;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Config with the per-dataset defaults (learning rate, clients per round).
ExperimentConfig default_config(const std::string& dataset);

/// Missing keys take the defaults of the config's "dataset". Relative paths
/// are resolved against base_dir when one is given.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Every problem with the config, empty when it is runnable.
std::vector<std::string> config_problems(const ExperimentConfig& cfg);
/// Throws ConfigError listing all problems.
void validate_config(const ExperimentConfig& cfg);

/// The schedule the config refers to, with any threshold override applied.
GrowthSchedule config_schedule(const ExperimentConfig& cfg);

FederatedConfig federated_config(const ExperimentConfig& cfg);

/// 64-bit FNV-1a over the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace fedgrow
