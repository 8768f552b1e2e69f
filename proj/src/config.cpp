#include "fedgrow/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "fedgrow/error.hpp"
#include "fedgrow/schedule.hpp"

namespace fedgrow {

using nlohmann::json;

namespace {

const std::set<std::string> kConfigKeys = {
    "dataset", "data",   "method",      "rounds", "clients_per_round", "train",      "partition",
    "schedule", "window", "lag",        "thresholds", "fd_keep_fraction", "fd_exempt_models", "eval_every",
    "output_dir", "seed"};

void reject_unknown(const json& j, const std::set<std::string>& keys, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type: " + j.at(key).dump());
  }
}

std::size_t read_count(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

std::string resolve_path(const std::string& path, const std::filesystem::path& base_dir) {
  if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (base_dir / path).lexically_normal().string();
}

std::string resolve_schedule_ref(const std::string& ref, const std::filesystem::path& base_dir) {
  if (ref.rfind("builtin:", 0) == 0) return ref;
  return resolve_path(ref, base_dir);
}

}  // namespace

ExperimentConfig default_config(const std::string& dataset) {
  const DatasetDefaults d = dataset_defaults(dataset);
  ExperimentConfig cfg;
  cfg.dataset = dataset;
  cfg.train.learning_rate = d.learning_rate;
  cfg.clients_per_round = d.clients_per_round;
  cfg.schedule = "builtin:" + dataset;
  return cfg;
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, kConfigKeys, "config");
  std::string dataset = "mnist";
  read(j, "dataset", dataset, "config");
  ExperimentConfig cfg = default_config(dataset);

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"kind", "path", "synthetic"}, "config.data");
    read(d, "kind", cfg.data.kind, "data");
    read(d, "path", cfg.data.path, "data");
    cfg.data.path = resolve_path(cfg.data.path, base_dir);
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      reject_unknown(s,
                     {"classes", "height", "width", "channels", "per_class", "test_per_class", "separation", "seed"},
                     "config.data.synthetic");
      SyntheticSpec& syn = cfg.data.synthetic;
      syn.classes = read_count(s, "classes", syn.classes, "synthetic");
      syn.height = read_count(s, "height", syn.height, "synthetic");
      syn.width = read_count(s, "width", syn.width, "synthetic");
      syn.channels = read_count(s, "channels", syn.channels, "synthetic");
      syn.per_class = read_count(s, "per_class", syn.per_class, "synthetic");
      syn.test_per_class = read_count(s, "test_per_class", syn.test_per_class, "synthetic");
      read(s, "separation", syn.separation, "synthetic");
      read(s, "seed", syn.seed, "synthetic");
    }
  }
  if (j.contains("method")) {
    std::string method;
    read(j, "method", method, "config");
    cfg.method = method_from(method);
  }
  cfg.rounds = read_count(j, "rounds", cfg.rounds, "config");
  cfg.clients_per_round = read_count(j, "clients_per_round", cfg.clients_per_round, "config");
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"learning_rate", "batch_size", "local_epochs", "dropout_rate", "seed"}, "config.train");
    read(t, "learning_rate", cfg.train.learning_rate, "train");
    cfg.train.batch_size = read_count(t, "batch_size", cfg.train.batch_size, "train");
    cfg.train.local_epochs = read_count(t, "local_epochs", cfg.train.local_epochs, "train");
    read(t, "dropout_rate", cfg.train.dropout_rate, "train");
    read(t, "seed", cfg.train.seed, "train");
  }
  if (j.contains("partition")) {
    const json& p = j.at("partition");
    reject_unknown(p, {"scheme", "clients", "shards_per_client", "seed"}, "config.partition");
    if (p.contains("scheme")) {
      std::string scheme;
      read(p, "scheme", scheme, "partition");
      cfg.partition.scheme = partition_scheme_from(scheme);
    }
    cfg.partition.clients = read_count(p, "clients", cfg.partition.clients, "partition");
    cfg.partition.shards_per_client = read_count(p, "shards_per_client", cfg.partition.shards_per_client, "partition");
    read(p, "seed", cfg.partition.seed, "partition");
  }
  read(j, "schedule", cfg.schedule, "config");
  cfg.schedule = resolve_schedule_ref(cfg.schedule, base_dir);
  cfg.window = read_count(j, "window", cfg.window, "config");
  cfg.lag = read_count(j, "lag", cfg.lag, "config");
  if (j.contains("thresholds") && !j.at("thresholds").is_null()) {
    std::vector<double> thresholds;
    read(j, "thresholds", thresholds, "config");
    cfg.thresholds = thresholds;
  }
  read(j, "fd_keep_fraction", cfg.fd_keep_fraction, "config");
  cfg.fd_exempt_models = read_count(j, "fd_exempt_models", cfg.fd_exempt_models, "config");
  cfg.eval_every = read_count(j, "eval_every", cfg.eval_every, "config");
  read(j, "output_dir", cfg.output_dir, "config");
  cfg.output_dir = resolve_path(cfg.output_dir, base_dir);
  read(j, "seed", cfg.seed, "config");
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const SyntheticSpec& s = cfg.data.synthetic;
  json j;
  j["dataset"] = cfg.dataset;
  j["data"] = {{"kind", cfg.data.kind},
               {"path", cfg.data.path},
               {"synthetic",
                {{"classes", s.classes},
                 {"height", s.height},
                 {"width", s.width},
                 {"channels", s.channels},
                 {"per_class", s.per_class},
                 {"test_per_class", s.test_per_class},
                 {"separation", s.separation},
                 {"seed", s.seed}}}};
  j["method"] = to_string(cfg.method);
  j["rounds"] = cfg.rounds;
  j["clients_per_round"] = cfg.clients_per_round;
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"local_epochs", cfg.train.local_epochs},
                {"dropout_rate", cfg.train.dropout_rate},
                {"seed", cfg.train.seed}};
  j["partition"] = {{"scheme", to_string(cfg.partition.scheme)},
                    {"clients", cfg.partition.clients},
                    {"shards_per_client", cfg.partition.shards_per_client},
                    {"seed", cfg.partition.seed}};
  j["schedule"] = cfg.schedule;
  j["window"] = cfg.window;
  j["lag"] = cfg.lag;
  j["thresholds"] = cfg.thresholds ? json(*cfg.thresholds) : json(nullptr);
  j["fd_keep_fraction"] = cfg.fd_keep_fraction;
  j["fd_exempt_models"] = cfg.fd_exempt_models;
  j["eval_every"] = cfg.eval_every;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

GrowthSchedule config_schedule(const ExperimentConfig& cfg) {
  GrowthSchedule schedule = resolve_schedule(cfg.schedule, cfg.train.dropout_rate);
  if (cfg.thresholds) schedule.thresholds = *cfg.thresholds;
  return schedule;
}

std::vector<std::string> config_problems(const ExperimentConfig& cfg) {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
  };
  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  };

  guarded([&] { dataset_defaults(cfg.dataset); });
  check(cfg.clients_per_round >= 1, "clients_per_round must be at least 1");
  check(cfg.partition.clients >= 1, "partition.clients must be at least 1");
  check(cfg.clients_per_round <= cfg.partition.clients,
        "clients_per_round (" + std::to_string(cfg.clients_per_round) + ") exceeds partition.clients (" +
            std::to_string(cfg.partition.clients) + ")");
  check(cfg.partition.scheme != PartitionScheme::label_shard || cfg.partition.shards_per_client >= 1,
        "partition.shards_per_client must be at least 1");
  guarded([&] { cfg.train.validate(); });
  check(cfg.window >= 1, "window must be at least 1");
  check(cfg.fd_keep_fraction > 0.0 && cfg.fd_keep_fraction <= 1.0, "fd_keep_fraction must lie in (0, 1]");
  check(cfg.eval_every >= 1, "eval_every must be at least 1");
  check(!cfg.output_dir.empty(), "output_dir must not be empty");

  std::optional<GrowthSchedule> schedule;
  guarded([&] { schedule = resolve_schedule(cfg.schedule, cfg.train.dropout_rate); });
  if (schedule) {
    check(schedule->dataset == cfg.dataset,
          "schedule is for dataset '" + schedule->dataset + "' but the config says '" + cfg.dataset + "'");
    if (cfg.thresholds) schedule->thresholds = *cfg.thresholds;
    for (const auto& p : validate_schedule(*schedule).problems) problems.push_back("schedule: " + p);
  }

  if (cfg.data.kind == "idx") {
    if (cfg.data.path.empty()) {
      problems.push_back("data.path is required for idx data");
    } else if (!std::filesystem::is_directory(cfg.data.path)) {
      problems.push_back("data.path " + cfg.data.path + " is not a directory");
    } else {
      for (const char* stem : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                               "t10k-labels-idx1-ubyte"}) {
        const auto base = std::filesystem::path(cfg.data.path) / stem;
        check(std::filesystem::exists(base) || std::filesystem::exists(base.string() + ".gz"),
              "data.path is missing " + std::string(stem) + "[.gz]");
      }
    }
  } else if (cfg.data.kind == "synthetic") {
    const SyntheticSpec& s = cfg.data.synthetic;
    check(s.classes >= 2, "data.synthetic.classes must be at least 2");
    check(s.per_class >= 1, "data.synthetic.per_class must be at least 1");
    check(s.height * s.width * s.channels >= s.classes, "data.synthetic sample size must be at least the class count");
    check(s.per_class * s.classes >= cfg.partition.clients, "synthetic training set has fewer samples than clients");
    if (schedule && !schedule->models.empty()) {
      const FeatureShape& in = schedule->models.front().input;
      check(in.h == s.height && in.w == s.width && in.c == s.channels,
            "synthetic samples are " + std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
                std::to_string(s.channels) + " but the schedule expects " + std::to_string(in.h) + "x" +
                std::to_string(in.w) + "x" + std::to_string(in.c));
      guarded([&] {
        check(class_count(schedule->models.front()) == s.classes,
              "synthetic class count differs from the schedule's classifier width");
      });
    }
  } else {
    problems.push_back("data.kind must be 'idx' or 'synthetic', got '" + cfg.data.kind + "'");
  }
  return problems;
}

void validate_config(const ExperimentConfig& cfg) {
  const auto problems = config_problems(cfg);
  if (problems.empty()) return;
  std::string message = "invalid config (" + std::to_string(problems.size()) + " problem" +
                        (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) message += "\n  - " + p;
  throw ConfigError(message);
}

FederatedConfig federated_config(const ExperimentConfig& cfg) {
  FederatedConfig f;
  f.method = cfg.method;
  f.rounds = cfg.rounds;
  f.clients_per_round = cfg.clients_per_round;
  f.train = cfg.train;
  f.window = cfg.window;
  f.lag = cfg.lag;
  f.fd_keep_fraction = cfg.fd_keep_fraction;
  f.fd_exempt_models = cfg.fd_exempt_models;
  f.eval_every = cfg.eval_every;
  f.seed = cfg.seed;
  return f;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedgrow
