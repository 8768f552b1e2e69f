#include "fedgrow/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedgrow/error.hpp"
#include "fedgrow/schedule.hpp"

#ifndef FEDGROW_VERSION
#define FEDGROW_VERSION "unknown"
#endif

namespace fedgrow {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

json switches_json(const std::vector<SwitchRecord>& switches) {
  json out = json::array();
  for (const auto& s : switches) {
    out.push_back({{"round", s.event.round},
                   {"from_model", s.event.from_model},
                   {"to_model", s.event.to_model},
                   {"signal", s.event.signal},
                   {"accuracy_before", opt_json(s.accuracy_before)},
                   {"accuracy_after", opt_json(s.accuracy_after)}});
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_ledger(const fs::path& path, const CommLedger& ledger) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "round,model_index,clients,download_bytes,upload_bytes,cumulative_bytes,flops_per_client\n";
  for (const auto& r : ledger.rows()) {
    out << r.round << ',' << r.model_index << ',' << r.clients << ',' << r.download_bytes << ',' << r.upload_bytes
        << ',' << r.cumulative_bytes << ',' << r.flops_per_client << '\n';
  }
}

}  // namespace

const char* code_version() { return FEDGROW_VERSION; }

TrainTest load_data(const ExperimentConfig& cfg) {
  if (cfg.data.kind == "idx") return load_idx_dataset(cfg.data.path);
  if (cfg.data.kind == "synthetic") return make_synthetic(cfg.data.synthetic);
  throw ConfigError("unknown data kind '" + cfg.data.kind + "'");
}

std::string metrics_header() {
  return "round,model_index,weighted_loss,test_accuracy,S_t,switch_flag,download_bytes,upload_bytes,"
         "cumulative_bytes,flops_per_client";
}

std::string format_metrics_row(const RoundMetrics& m) {
  std::ostringstream out;
  out << m.round << ',' << m.model_index << ',' << num(m.weighted_loss) << ',' << opt_num(m.test_accuracy) << ','
      << opt_num(m.signal) << ',' << (m.switched ? 1 : 0) << ',' << m.download_bytes << ',' << m.upload_bytes << ','
      << m.cumulative_bytes << ',' << m.flops_per_client;
  return out.str();
}

std::vector<MetricsRow> read_metrics(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw FormatError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) {
    throw FormatError(csv.string() + ": unexpected header");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": expected 10 fields");
    try {
      MetricsRow r;
      r.round = std::stoull(f[0]);
      r.model_index = std::stoull(f[1]);
      r.weighted_loss = std::stod(f[2]);
      r.test_accuracy = parse_opt(f[3]);
      r.signal = parse_opt(f[4]);
      r.switched = f[5] == "1";
      r.download_bytes = std::stoull(f[6]);
      r.upload_bytes = std::stoull(f[7]);
      r.cumulative_bytes = std::stoull(f[8]);
      r.flops_per_client = std::stoull(f[9]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

RunSummary run(const ExperimentConfig& cfg, const RoundCallback& on_round) {
  validate_config(cfg);
  const GrowthSchedule schedule = config_schedule(cfg);
  const TrainTest data = load_data(cfg);
  const FeatureShape& in = schedule.models.front().input;
  const Shape& got = data.train.samples.shape();
  if (got.size() != 4 || got[1] != in.h || got[2] != in.w || got[3] != in.c) {
    throw ConfigError("training samples have shape " + shape_string(got) + " but the schedule expects (n, " +
                      std::to_string(in.h) + ", " + std::to_string(in.w) + ", " + std::to_string(in.c) + ")");
  }
  if (data.train.classes > class_count(schedule.models.front())) {
    throw ConfigError("data has " + std::to_string(data.train.classes) + " classes but the classifier has " +
                      std::to_string(class_count(schedule.models.front())) + " units");
  }
  const auto clients = partition(data.train, cfg.partition);

  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  json manifest = {{"config", config_to_json(cfg)},
                   {"config_hash", config_hash(cfg)},
                   {"seed", cfg.seed},
                   {"code_version", code_version()},
                   {"dataset", cfg.dataset},
                   {"method", to_string(cfg.method)},
                   {"schedule", schedule_to_json(schedule)},
                   {"train_samples", data.train.size()},
                   {"test_samples", data.test.size()},
                   {"switches", json::array()},
                   {"status", "running"}};
  write_json(out_dir / "manifest.json", manifest);

  std::ofstream metrics(out_dir / "metrics.csv");
  if (!metrics) throw ConfigError("cannot write " + (out_dir / "metrics.csv").string());
  metrics << metrics_header() << '\n';
  auto stream = [&](const RoundMetrics& m) {
    metrics << format_metrics_row(m) << '\n';
    metrics.flush();
    if (on_round) on_round(m);
  };

  ExperimentResult result;
  try {
    result = run_experiment(federated_config(cfg), schedule, clients, &data.test, stream);
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_json(out_dir / "manifest.json", manifest);
    throw;
  }
  write_ledger(out_dir / "ledger.csv", result.ledger);

  RunSummary summary;
  summary.output_dir = out_dir;
  summary.rounds = result.metrics.size();
  summary.final_model = result.final_model;
  summary.switches = result.switches;
  summary.cumulative_bytes = result.ledger.cumulative_bytes();
  if (!result.metrics.empty()) summary.final_accuracy = result.metrics.back().test_accuracy;

  manifest["status"] = "completed";
  manifest["rounds_completed"] = summary.rounds;
  manifest["final_model"] = summary.final_model;
  manifest["final_accuracy"] = opt_json(summary.final_accuracy);
  manifest["cumulative_bytes"] = summary.cumulative_bytes;
  manifest["switches"] = switches_json(result.switches);
  write_json(out_dir / "manifest.json", manifest);
  return summary;
}

RunRecord read_run(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("status", "") != "completed") {
    throw ConfigError("run in " + dir.string() + " has not completed");
  }
  RunRecord r;
  r.dir = dir.lexically_normal();
  if (r.dir.filename().empty()) r.dir = r.dir.parent_path();
  r.dataset = manifest.at("dataset").get<std::string>();
  r.method = manifest.at("method").get<std::string>();
  r.metrics = read_metrics(dir / "metrics.csv");
  return r;
}

std::vector<Reduction> reductions(const RunRecord& run, const RunRecord& baseline, double step) {
  if (!(step > 0.0)) throw ConfigError("accuracy step must be positive");
  auto best = [](const RunRecord& r) {
    double top = -1.0;
    for (const auto& m : r.metrics) {
      if (m.test_accuracy) top = std::max(top, *m.test_accuracy);
    }
    return top;
  };
  auto first_reaching = [](const RunRecord& r, double level) -> const MetricsRow& {
    for (const auto& m : r.metrics) {
      if (m.test_accuracy && *m.test_accuracy >= level) return m;
    }
    throw ConfigError("internal: accuracy level not reached");
  };
  const double ceiling = std::min(best(run), best(baseline));
  std::vector<Reduction> out;
  for (std::size_t k = 1;; ++k) {
    const double level = static_cast<double>(k) * step;
    if (level > ceiling || level > 1.0) break;
    const MetricsRow& a = first_reaching(run, level);
    const MetricsRow& b = first_reaching(baseline, level);
    Reduction red;
    red.accuracy_level = level;
    red.run = run.dir.filename().string();
    red.baseline = baseline.dir.filename().string();
    red.run_round = a.round;
    red.baseline_round = b.round;
    red.run_round_bytes = a.download_bytes + a.upload_bytes;
    red.baseline_round_bytes = b.download_bytes + b.upload_bytes;
    red.run_cumulative_bytes = a.cumulative_bytes;
    red.baseline_cumulative_bytes = b.cumulative_bytes;
    red.per_round_reduction =
        1.0 - static_cast<double>(red.run_round_bytes) / static_cast<double>(red.baseline_round_bytes);
    red.cumulative_reduction =
        1.0 - static_cast<double>(red.run_cumulative_bytes) / static_cast<double>(red.baseline_cumulative_bytes);
    out.push_back(red);
  }
  return out;
}

std::vector<Reduction> compare(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, double step) {
  if (run_dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
  std::vector<RunRecord> runs;
  for (const auto& dir : run_dirs) runs.push_back(read_run(dir));
  for (const auto& r : runs) {
    if (r.dataset != runs.front().dataset) {
      throw ConfigError("dataset mismatch: " + runs.front().dir.string() + " is " + runs.front().dataset + " but " +
                        r.dir.string() + " is " + r.dataset);
    }
  }
  std::vector<Reduction> all;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    auto part = reductions(runs[i], runs.front(), step);
    all.insert(all.end(), part.begin(), part.end());
  }

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "reductions.csv");
    if (!out) throw ConfigError("cannot write " + (out_dir / "reductions.csv").string());
    out << "accuracy_level,run,baseline,run_round,baseline_round,run_round_bytes,baseline_round_bytes,"
           "per_round_reduction_pct,run_cumulative_bytes,baseline_cumulative_bytes,cumulative_reduction_pct\n";
    for (const auto& r : all) {
      out << num(r.accuracy_level) << ',' << r.run << ',' << r.baseline << ',' << r.run_round << ','
          << r.baseline_round << ',' << r.run_round_bytes << ',' << r.baseline_round_bytes << ','
          << num(100.0 * r.per_round_reduction) << ',' << r.run_cumulative_bytes << ','
          << r.baseline_cumulative_bytes << ',' << num(100.0 * r.cumulative_reduction) << '\n';
    }
  }
  {
    std::ofstream out(out_dir / "ledger_summary.csv");
    if (!out) throw ConfigError("cannot write " + (out_dir / "ledger_summary.csv").string());
    out << "method,run,rounds,download_bytes,upload_bytes,cumulative_bytes,mean_bytes_per_round,final_model_index,"
           "final_accuracy,flops_per_client_total\n";
    for (const auto& r : runs) {
      std::uint64_t down = 0, up = 0, flops = 0;
      std::optional<double> final_acc;
      for (const auto& m : r.metrics) {
        down += m.download_bytes;
        up += m.upload_bytes;
        flops += m.flops_per_client;
        if (m.test_accuracy) final_acc = m.test_accuracy;
      }
      const std::size_t rounds = r.metrics.size();
      out << r.method << ',' << r.dir.filename().string() << ',' << rounds << ',' << down << ',' << up << ','
          << (rounds ? r.metrics.back().cumulative_bytes : 0) << ','
          << num(rounds ? static_cast<double>(down + up) / static_cast<double>(rounds) : 0.0) << ','
          << (rounds ? r.metrics.back().model_index : 0) << ',' << opt_num(final_acc) << ',' << flops << '\n';
    }
  }
  return all;
}

}  // namespace fedgrow
