#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedgrow/config.hpp"
#include "fedgrow/error.hpp"
#include "fedgrow/runner.hpp"
#include "fedgrow/schedule.hpp"

using namespace fedgrow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelArch tiny(std::size_t filters, std::size_t hidden) {
  ModelArch a;
  a.input = {8, 8, 1, false};
  a.layers = {Conv2D{{3, 3, 1, filters}}, Relu{}, Dropout{0.125f}, MaxPool{2, 2}, Flatten{},
              Dense{16 * filters, hidden},  Relu{}, Dropout{0.125f}, Dense{hidden, 4},  Softmax{}};
  return a;
}

// A small synthetic experiment whose schedule switches every 15 rounds.
ExperimentConfig tiny_config(const fs::path& dir, const std::string& name, Method method) {
  GrowthSchedule s;
  s.dataset = "mnist";
  s.models = {tiny(4, 16), tiny(8, 16), tiny(8, 32)};
  s.thresholds = {10.0, 10.0};
  save_schedule(s, dir / "tiny_schedule.json");

  ExperimentConfig cfg = default_config("mnist");
  cfg.data.kind = "synthetic";
  cfg.data.synthetic.classes = 4;
  cfg.data.synthetic.height = cfg.data.synthetic.width = 8;
  cfg.data.synthetic.per_class = 40;
  cfg.data.synthetic.test_per_class = 10;
  cfg.data.synthetic.separation = 5.0;
  cfg.method = method;
  cfg.rounds = 40;
  cfg.clients_per_round = 4;
  cfg.partition.clients = 8;
  cfg.schedule = (dir / "tiny_schedule.json").string();
  cfg.window = 5;
  cfg.lag = 10;
  cfg.eval_every = 5;
  cfg.fd_exempt_models = 1;
  cfg.output_dir = (dir / name).string();
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("config defaults follow the dataset") {
  const auto mnist = default_config("mnist");
  CHECK(mnist.train.learning_rate == 0.015f);
  CHECK(mnist.clients_per_round == 10);
  CHECK(mnist.train.batch_size == 10);
  CHECK(mnist.train.local_epochs == 1);
  CHECK(mnist.train.dropout_rate == 0.125f);
  CHECK(mnist.window == 100);
  CHECK(mnist.lag == 300);
  CHECK(mnist.schedule == "builtin:mnist");
  const auto emnist = config_from_json({{"dataset", "emnist"}});
  CHECK(emnist.train.learning_rate == 0.035f);
  CHECK(emnist.clients_per_round == 35);
  CHECK(config_from_json({{"dataset", "cifar10"}}).train.learning_rate == 0.05f);
}

TEST_CASE("config round-trips through JSON") {
  TempDir dir("fedgrow_cfg_rt");
  ExperimentConfig cfg = tiny_config(dir.path, "out", Method::fnn_fd);
  cfg.thresholds = std::vector<double>{0.5, 0.25};
  cfg.partition.scheme = PartitionScheme::label_shard;
  cfg.partition.shards_per_client = 3;
  cfg.train.local_epochs = 2;
  cfg.fd_keep_fraction = 0.75;
  CHECK(config_from_json(config_to_json(cfg)) == cfg);
  save_config(cfg, dir.path / "cfg.json");
  CHECK(load_config(dir.path / "cfg.json") == cfg);
  CHECK(config_hash(load_config(dir.path / "cfg.json")) == config_hash(cfg));
  cfg.seed = 6;
  CHECK(config_hash(load_config(dir.path / "cfg.json")) != config_hash(cfg));
}

TEST_CASE("config files resolve relative paths against their directory") {
  TempDir dir("fedgrow_cfg_rel");
  {
    std::ofstream out(dir.path / "c.json");
    out << R"({"dataset": "mnist", "data": {"kind": "idx", "path": "digits"}, "output_dir": "runs/a",
               "schedule": "s.json"})";
  }
  const auto cfg = load_config(dir.path / "c.json");
  CHECK(fs::path(cfg.data.path) == (dir.path / "digits").lexically_normal());
  CHECK(fs::path(cfg.output_dir) == (dir.path / "runs/a").lexically_normal());
  CHECK(fs::path(cfg.schedule) == (dir.path / "s.json").lexically_normal());
}

TEST_CASE("config parsing rejects unknown keys and wrong types") {
  CHECK_THROWS_AS(config_from_json({{"rounds", 10}, {"round", 5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"rounds", -1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"train", {{"learning_rate", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"method", "sgd"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "svhn"}}), ConfigError);
}

TEST_CASE("validation lists every problem before any compute") {
  TempDir dir("fedgrow_cfg_val");
  ExperimentConfig cfg = tiny_config(dir.path, "never", Method::fnn);
  CHECK(config_problems(cfg).empty());
  cfg.thresholds = std::vector<double>{0.1};
  const auto arity = config_problems(cfg);
  REQUIRE(arity.size() == 1);
  CHECK(arity[0].find("arity") != std::string::npos);

  cfg.clients_per_round = 20;
  cfg.fd_keep_fraction = 0.0;
  cfg.train.learning_rate = -1.0f;
  cfg.data.kind = "idx";
  cfg.data.path = (dir.path / "nowhere").string();
  const auto many = config_problems(cfg);
  CHECK(many.size() == 5);
  try {
    run(cfg);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("5 problems") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir.path / "never"));

  ExperimentConfig other = tiny_config(dir.path, "x", Method::fnn);
  other.data.synthetic.height = 9;
  CHECK(config_problems(other).size() == 1);
  other = tiny_config(dir.path, "x", Method::fnn);
  other.schedule = "builtin:cifar10";
  CHECK_FALSE(config_problems(other).empty());
}

TEST_CASE("run writes metrics, ledger and a complete manifest") {
  TempDir dir("fedgrow_run");
  const ExperimentConfig cfg = tiny_config(dir.path, "fnn", Method::fnn);
  std::size_t streamed = 0;
  const RunSummary summary = run(cfg, [&](const RoundMetrics&) { ++streamed; });
  CHECK(streamed == 40);
  CHECK(summary.rounds == 40);
  CHECK(summary.final_model == 2);

  const auto rows = read_metrics(dir.path / "fnn" / "metrics.csv");
  REQUIRE(rows.size() == 40);
  std::vector<std::size_t> switch_rounds;
  std::uint64_t cumulative = 0;
  for (const auto& r : rows) {
    if (r.switched) switch_rounds.push_back(r.round);
    CHECK(r.test_accuracy.has_value() == ((r.round + 1) % 5 == 0));
    CHECK(r.signal.has_value() == (r.round == 14 || r.round == 29));
    cumulative += r.download_bytes + r.upload_bytes;
    CHECK(r.cumulative_bytes == cumulative);
  }
  CHECK(switch_rounds == std::vector<std::size_t>{14, 29});

  std::ifstream in(dir.path / "fnn" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  CHECK(manifest.at("status") == "completed");
  CHECK(manifest.at("seed") == 5);
  CHECK(manifest.at("config_hash") == config_hash(cfg));
  CHECK(manifest.at("code_version") == code_version());
  CHECK(schedule_from_json(manifest.at("schedule")).models.size() == 3);
  std::vector<std::size_t> manifest_rounds;
  for (const auto& s : manifest.at("switches")) {
    manifest_rounds.push_back(s.at("round").get<std::size_t>());
    CHECK(std::abs(s.at("accuracy_before").get<double>() - s.at("accuracy_after").get<double>()) < 1e-5);
  }
  CHECK(manifest_rounds == switch_rounds);

  std::ifstream ledger(dir.path / "fnn" / "ledger.csv");
  std::string line;
  std::getline(ledger, line);
  std::size_t n = 0;
  while (std::getline(ledger, line)) ++n;
  CHECK(n == 40);
}

TEST_CASE("run is byte-for-byte reproducible") {
  TempDir dir("fedgrow_det");
  run(tiny_config(dir.path, "a", Method::fnn_fd));
  run(tiny_config(dir.path, "b", Method::fnn_fd));
  const std::string a = slurp(dir.path / "a" / "metrics.csv");
  CHECK(!a.empty());
  CHECK(a == slurp(dir.path / "b" / "metrics.csv"));
  CHECK(slurp(dir.path / "a" / "ledger.csv") == slurp(dir.path / "b" / "ledger.csv"));
}

TEST_CASE("compare: identity, antisymmetry and dataset checks") {
  TempDir dir("fedgrow_cmp");
  run(tiny_config(dir.path, "fedavg", Method::fedavg));
  run(tiny_config(dir.path, "fnn", Method::fnn));
  run(tiny_config(dir.path, "fedavg_copy", Method::fedavg));

  for (const auto& r : compare({dir.path / "fedavg", dir.path / "fedavg_copy"}, dir.path / "same")) {
    CHECK(r.per_round_reduction == 0.0);
    CHECK(r.cumulative_reduction == 0.0);
  }

  const auto ab = reductions(read_run(dir.path / "fnn"), read_run(dir.path / "fedavg"));
  const auto ba = reductions(read_run(dir.path / "fedavg"), read_run(dir.path / "fnn"));
  REQUIRE(ab.size() == ba.size());
  CHECK(!ab.empty());
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab[i].accuracy_level == ba[i].accuracy_level);
    CHECK(std::abs(ab[i].per_round_reduction - (-ba[i].per_round_reduction / (1.0 - ba[i].per_round_reduction))) <
          1e-12);
    CHECK(std::abs(ab[i].cumulative_reduction -
                   (-ba[i].cumulative_reduction / (1.0 - ba[i].cumulative_reduction))) < 1e-12);
  }

  const auto rows = compare({dir.path / "fedavg", dir.path / "fnn"}, dir.path / "cmp");
  CHECK(rows.size() == ab.size());
  CHECK(fs::exists(dir.path / "cmp" / "reductions.csv"));
  CHECK(slurp(dir.path / "cmp" / "ledger_summary.csv").find("fnn,fnn,40,") != std::string::npos);

  auto manifest_path = dir.path / "fnn" / "manifest.json";
  nlohmann::json m;
  {
    std::ifstream in(manifest_path);
    m = nlohmann::json::parse(in);
  }
  m["dataset"] = "cifar10";
  {
    std::ofstream out(manifest_path);
    out << m.dump();
  }
  CHECK_THROWS_AS(compare({dir.path / "fedavg", dir.path / "fnn"}, dir.path / "bad"), ConfigError);
  CHECK_THROWS_AS(compare({dir.path / "fedavg"}, dir.path / "bad"), ConfigError);
}

TEST_CASE("bundled configs are valid") {
  for (const char* name : {"mnist_desk.json", "synthetic_ci.json"}) {
    CAPTURE(name);
    const auto cfg = load_config(fs::path(FEDGROW_SOURCE_DIR) / "configs" / name);
    CHECK(config_problems(cfg).empty());
  }
}
