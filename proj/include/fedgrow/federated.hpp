#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedgrow/dataset.hpp"
#include "fedgrow/ledger.hpp"
#include "fedgrow/model.hpp"
#include "fedgrow/partition.hpp"
#include "fedgrow/schedule.hpp"
#include "fedgrow/switching.hpp"

namespace fedgrow {

// Stream tags for derive_seed.
enum class Stream : std::uint64_t { init = 1, select = 2, client = 3, fd_mask = 4, growth = 5 };

/// Uniform sample of m distinct client ids without replacement, sorted.
/// Depends only on (seed, round) so every method sees the same clients.
std::vector<std::size_t> select_clients(std::uint64_t seed, std::size_t round, std::size_t m, std::size_t population);

struct LocalResult {
  ModelParams params;
  double loss = 0.0;  ///< mean minibatch loss over the local run
  std::size_t n = 0;
};

/// Minibatch SGD over the shard for cfg.local_epochs epochs, reshuffling each epoch.
LocalResult local_train(const ModelArch& arch, const ModelParams& params, const ClientShard& shard,
                        const TrainConfig& cfg, Rng& rng);

struct ClientUpdate {
  ModelParams params;
  std::size_t n = 0;
};

/// Sample-count weighted mean of client parameters.
ModelParams aggregate(std::span<const ClientUpdate> updates);

/// Kept output units/filters of every hidden conv or dense layer, keyed by
/// layer index. The classifier is never masked.
struct DropoutMask {
  std::map<std::size_t, std::vector<std::size_t>> kept;
  double keep_fraction = 1.0;
};

struct SubModel {
  ModelArch arch;
  ModelParams params;
  DropoutMask mask;
};

/// Number of units kept out of `width` at the given fraction (floor).
std::size_t kept_units(std::size_t width, double keep_fraction);

DropoutMask make_dropout_mask(const ModelArch& arch, double keep_fraction, Rng& rng);

/// Crops the model to the units/filters in the mask.
SubModel fd_extract(const ModelArch& arch, const ModelParams& params, const DropoutMask& mask);
/// Draws a fresh mask and crops the model.
SubModel fd_extract(const ModelArch& arch, const ModelParams& params, double keep_fraction, Rng& rng);

struct SubUpdate {
  ModelParams params;
  DropoutMask mask;
  std::size_t n = 0;
};

/// Folds sub-model updates into the global model: each covered scalar becomes
/// the n-weighted mean of the clients covering it, the rest keep their value.
ModelParams fd_merge(const ModelArch& arch, const ModelParams& global, std::span<const SubUpdate> updates);

enum class Method { fedavg, fd, fnn, fnn_fd };

std::string to_string(Method method);
Method method_from(const std::string& name);
bool grows(Method method);

struct FederatedConfig {
  Method method = Method::fnn;
  std::size_t rounds = 0;
  std::size_t clients_per_round = 10;
  TrainConfig train;
  InitConfig init;
  std::size_t window = 100;
  std::size_t lag = 300;
  double fd_keep_fraction = 0.875;
  /// Growing methods broadcast the first this-many models without dropout.
  std::size_t fd_exempt_models = 2;
  std::size_t eval_every = 50;
  std::uint64_t seed = 0;
};

struct RoundMetrics {
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

struct SwitchRecord {
  SwitchEvent event;
  std::optional<double> accuracy_before;
  std::optional<double> accuracy_after;
};

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  CommLedger ledger;
  std::vector<SwitchRecord> switches;
  std::size_t final_model = 0;
  ModelArch final_arch;
  ModelParams final_params;
};

using RoundCallback = std::function<void(const RoundMetrics&)>;

/// Synchronous federated training. fedavg and fd train the last model of the
/// schedule throughout; fnn and fnn-fd start from the first model and grow it
/// with function-preserving transforms whenever the switching policy fires.
/// on_round sees every completed round before the next one starts.
ExperimentResult run_experiment(const FederatedConfig& cfg, const GrowthSchedule& schedule,
                                std::span<const ClientShard> clients, const Dataset* test,
                                const RoundCallback& on_round = {});

}  // namespace fedgrow
