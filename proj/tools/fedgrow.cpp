#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedgrow/config.hpp"
#include "fedgrow/error.hpp"
#include "fedgrow/runner.hpp"
#include "fedgrow/schedule.hpp"

namespace {

using namespace fedgrow;

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::optional<std::string>& out, const std::optional<std::size_t>& rounds,
            const std::optional<std::string>& method, bool quiet) {
  ExperimentConfig cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (out) cfg.output_dir = *out;
  if (rounds) cfg.rounds = *rounds;
  if (method) cfg.method = method_from(*method);

  std::cerr << "run: " << to_string(cfg.method) << " on " << cfg.dataset << ", " << cfg.rounds << " rounds, seed "
            << cfg.seed << " -> " << cfg.output_dir << "\n";
  const RunSummary summary = run(cfg, [&](const RoundMetrics& m) {
    if (quiet) return;
    if (m.switched) {
      std::fprintf(stderr, "round %zu: switched to model %zu (S_t %.6g)\n", m.round, m.model_index + 2,
                   m.signal.value_or(0.0));
    }
    if (m.test_accuracy) {
      std::fprintf(stderr, "round %zu: model %zu loss %.4f accuracy %.4f bytes %llu\n", m.round, m.model_index + 1,
                   m.weighted_loss, *m.test_accuracy, static_cast<unsigned long long>(m.cumulative_bytes));
    }
  });
  std::printf("rounds %zu, final model %zu, switches %zu, cumulative bytes %llu", summary.rounds,
              summary.final_model + 1, summary.switches.size(),
              static_cast<unsigned long long>(summary.cumulative_bytes));
  if (summary.final_accuracy) std::printf(", final accuracy %.4f", *summary.final_accuracy);
  std::printf("\n");
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out, double step) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const auto rows = compare(paths, out, step);
  std::printf("%zu reduction rows written to %s\n", rows.size(), (std::filesystem::path(out) / "reductions.csv").c_str());
  for (const auto& r : rows) {
    std::printf("  acc >= %.2f  %s vs %s: per-round %.2f%%, cumulative %.2f%%\n", r.accuracy_level, r.run.c_str(),
                r.baseline.c_str(), 100.0 * r.per_round_reduction, 100.0 * r.cumulative_reduction);
  }
  return 0;
}

int cmd_validate_schedule(const std::string& builtin, const std::string& file) {
  const GrowthSchedule schedule = builtin.empty() ? load_schedule(file) : builtin_schedule(builtin);
  const ValidationReport report = validate_schedule(schedule);
  std::printf("dataset %s, %zu models\n", schedule.dataset.c_str(), schedule.models.size());
  for (std::size_t k = 0; k < schedule.models.size(); ++k) {
    try {
      std::printf("model %zu: %zu parameters\n  %s\n", k + 1, count_params(schedule.models[k]),
                  describe(schedule.models[k]).c_str());
    } catch (const Error& e) {
      std::printf("model %zu: %s\n", k + 1, e.what());
    }
    if (report.ok() && k + 1 < schedule.models.size()) {
      std::printf("  -> threshold %g, %s\n", schedule.thresholds[k],
                  describe(diff_models(schedule.models[k], schedule.models[k + 1])).c_str());
    }
  }
  if (!report.ok()) {
    std::fprintf(stderr, "%s\n", report.message().c_str());
    return 1;
  }
  std::printf("schedule is valid\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated training with growing networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedgrow::code_version());

  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> rounds;
  std::optional<std::string> method;
  bool quiet = false;
  run->add_option("-c,--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("-o,--out", out, "Override the output directory");
  run->add_option("--rounds", rounds, "Override the number of rounds");
  run->add_option("--method", method, "Override the method (fedavg, fd, fnn, fnn-fd)");
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* cmp = app.add_subcommand("compare", "Communication reductions of runs against the first one");
  std::vector<std::string> dirs;
  std::string cmp_out = "compare";
  double step = 0.01;
  cmp->add_option("dirs", dirs, "Run directories; the first is the baseline")->required()->expected(2, -1);
  cmp->add_option("-o,--out", cmp_out, "Output directory");
  cmp->add_option("--step", step, "Accuracy level spacing")->check(CLI::PositiveNumber);

  auto* val = app.add_subcommand("validate-schedule", "Check a model schedule and print its transforms");
  std::string builtin, file;
  auto* b = val->add_option("--builtin", builtin, "emnist, mnist or cifar10");
  auto* f = val->add_option("--file", file, "Schedule JSON file")->check(CLI::ExistingFile);
  b->excludes(f);
  f->excludes(b);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, seed, out, rounds, method, quiet);
    if (*cmp) return cmd_compare(dirs, cmp_out, step);
    if (*val) {
      if (builtin.empty() && file.empty()) {
        std::fprintf(stderr, "validate-schedule needs --builtin or --file\n");
        return 2;
      }
      return cmd_validate_schedule(builtin, file);
    }
  } catch (const fedgrow::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
