#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedgrow/config.hpp"
#include "fedgrow/federated.hpp"

namespace fedgrow {

const char* code_version();

/// Loads the data the config names and splits it into train/test.
TrainTest load_data(const ExperimentConfig& cfg);

struct RunSummary {
  std::filesystem::path output_dir;
  std::size_t rounds = 0;
  std::size_t final_model = 0;
  std::optional<double> final_accuracy;
  std::vector<SwitchRecord> switches;
  std::uint64_t cumulative_bytes = 0;
};

/// Validates, trains, and writes metrics.csv, ledger.csv and manifest.json
/// into cfg.output_dir. metrics.csv is streamed and flushed every round.
RunSummary run(const ExperimentConfig& cfg, const RoundCallback& on_round = {});

/// One parsed metrics.csv row.
struct MetricsRow {
  std::size_t round = 0;
  std::size_t model_index = 0;
  double weighted_loss = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> signal;
  bool switched = false;
  std::uint64_t download_bytes = 0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t flops_per_client = 0;
};

std::string metrics_header();
std::string format_metrics_row(const RoundMetrics& m);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& csv);

struct RunRecord {
  std::filesystem::path dir;
  std::string dataset;
  std::string method;
  std::vector<MetricsRow> metrics;
};

RunRecord read_run(const std::filesystem::path& dir);

struct Reduction {
  double accuracy_level = 0.0;
  std::string run;
  std::string baseline;
  std::size_t run_round = 0;
  std::size_t baseline_round = 0;
  std::uint64_t run_round_bytes = 0;
  std::uint64_t baseline_round_bytes = 0;
  std::uint64_t run_cumulative_bytes = 0;
  std::uint64_t baseline_cumulative_bytes = 0;
  double per_round_reduction = 0.0;  ///< 1 - run / baseline
  double cumulative_reduction = 0.0;
};

/// Reductions of `run` relative to `baseline` at every accuracy level
/// (multiples of `step`) that both runs reach.
std::vector<Reduction> reductions(const RunRecord& run, const RunRecord& baseline, double step = 0.01);

/// Compares every run against the first; writes reductions.csv and
/// ledger_summary.csv into out_dir. Throws ConfigError on dataset mismatch.
std::vector<Reduction> compare(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir,
                               double step = 0.01);

}  // namespace fedgrow
