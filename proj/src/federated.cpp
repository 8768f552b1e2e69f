#include "fedgrow/federated.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "fedgrow/error.hpp"
#include "fedgrow/net2net.hpp"

namespace fedgrow {

namespace {

std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

// Which global rows/columns of one trainable layer a sub-model keeps.
struct LayerCrop {
  std::size_t spatial = 1;  // kh * kw for conv, 1 for dense
  std::size_t in_global = 0;
  std::size_t out_global = 0;
  std::vector<std::size_t> in_ids;
  std::vector<std::size_t> out_ids;
};

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

void check_mask(const ModelArch& arch, const DropoutMask& mask) {
  const auto trainable = trainable_indices(arch);
  const auto classifier = classifier_index(arch);
  for (const auto& [layer, ids] : mask.kept) {
    if (std::find(trainable.begin(), trainable.end(), layer) == trainable.end() || layer == classifier) {
      throw ConfigError("dropout mask names layer " + std::to_string(layer) + ", which is not a hidden trainable layer");
    }
    const std::size_t width = *output_width(arch.layers[layer]);
    if (ids.empty()) throw ConfigError("dropout mask keeps no units of layer " + std::to_string(layer));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= width || (i > 0 && ids[i] <= ids[i - 1])) {
        throw ConfigError("dropout mask for layer " + std::to_string(layer) +
                          " must hold strictly increasing unit ids below " + std::to_string(width));
      }
    }
  }
}

std::map<std::size_t, LayerCrop> crops_for(const ModelArch& arch, const DropoutMask& mask) {
  check_mask(arch, mask);
  std::map<std::size_t, LayerCrop> crops;
  std::optional<std::size_t> producer;
  for (std::size_t t : trainable_indices(arch)) {
    LayerCrop crop;
    std::size_t out_width = 0;
    if (const auto* conv = std::get_if<Conv2D>(&arch.layers[t])) {
      crop.spatial = conv->kernel.h * conv->kernel.w;
      crop.in_global = conv->kernel.i;
      out_width = conv->kernel.o;
    } else {
      const auto& dense = std::get<Dense>(arch.layers[t]);
      crop.in_global = dense.in;
      out_width = dense.out;
    }
    crop.out_global = out_width;
    const auto kept = mask.kept.find(t);
    crop.out_ids = kept != mask.kept.end() ? kept->second : all_ids(out_width);

    if (producer && mask.kept.count(*producer)) {
      const auto& prev = crops.at(*producer);
      const std::size_t channels = prev.out_global;
      const std::size_t positions = crop.in_global / channels;
      for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t q : prev.out_ids) crop.in_ids.push_back(p * channels + q);
      }
    } else {
      crop.in_ids = all_ids(crop.in_global);
    }
    crops.emplace(t, std::move(crop));
    producer = t;
  }
  return crops;
}

// Index of (s, in_ids[a], out_ids[b]) in the global weight tensor.
std::size_t global_weight_index(const LayerCrop& c, std::size_t s, std::size_t a, std::size_t b) {
  return (s * c.in_global + c.in_ids[a]) * c.out_global + c.out_ids[b];
}

ModelArch crop_arch(const ModelArch& arch, const std::map<std::size_t, LayerCrop>& crops) {
  ModelArch sub = arch;
  for (const auto& [t, crop] : crops) {
    if (auto* conv = std::get_if<Conv2D>(&sub.layers[t])) {
      conv->kernel.i = crop.in_ids.size();
      conv->kernel.o = crop.out_ids.size();
    } else {
      auto& dense = std::get<Dense>(sub.layers[t]);
      dense.in = crop.in_ids.size();
      dense.out = crop.out_ids.size();
    }
  }
  infer_shapes(sub);
  return sub;
}

void check_same_structure(const ModelParams& a, const ModelParams& b, const char* what) {
  if (a.layers.size() != b.layers.size()) throw ConfigError(std::string(what) + ": parameter sets differ in layers");
  auto ia = a.layers.begin();
  for (auto ib = b.layers.begin(); ib != b.layers.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.weight.shape() != ib->second.weight.shape() ||
        ia->second.bias.shape() != ib->second.bias.shape()) {
      throw ConfigError(std::string(what) + ": parameter shapes differ at layer " + std::to_string(ib->first));
    }
  }
}

}  // namespace

std::vector<std::size_t> select_clients(std::uint64_t seed, std::size_t round, std::size_t m, std::size_t population) {
  if (m == 0 || m > population) {
    throw ConfigError("cannot select " + std::to_string(m) + " clients out of " + std::to_string(population));
  }
  Rng rng(derive_seed(seed, {tag(Stream::select), round}));
  std::vector<std::size_t> ids = all_ids(population);
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + rng.index(population - i)]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

LocalResult local_train(const ModelArch& arch, const ModelParams& params, const ClientShard& shard,
                        const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = shard.n();
  if (n == 0) throw ConfigError("client " + std::to_string(shard.id) + " has no samples");
  LocalResult result{params, 0.0, n};
  std::vector<std::size_t> order = all_ids(n);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor batch = gather_rows(shard.samples, rows);
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (std::size_t r : rows) labels.push_back(shard.labels[r]);
      float loss = 0.0f;
      try {
        loss = sgd_step(arch, result.params, batch, labels, cfg.learning_rate, rng);
      } catch (const NumericalError& e) {
        throw NumericalError("client " + std::to_string(shard.id) + ", epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(begin / cfg.batch_size) + ": " + e.what());
      }
      loss_sum += loss;
      ++batches;
    }
  }
  result.loss = loss_sum / static_cast<double>(batches);
  return result;
}

ModelParams aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ConfigError("cannot aggregate zero client updates");
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.n == 0) throw ConfigError("client update with zero samples");
    check_same_structure(updates.front().params, u.params, "aggregate");
    total += static_cast<double>(u.n);
  }
  ModelParams out = updates.front().params;
  for (auto& [layer, lp] : out.layers) {
    for (Tensor LayerParams::*member : {&LayerParams::weight, &LayerParams::bias}) {
      Tensor& dst = lp.*member;
      std::vector<double> acc(dst.size(), 0.0);
      for (const auto& u : updates) {
        const Tensor& src = u.params.layers.at(layer).*member;
        const double w = static_cast<double>(u.n);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(src[i]) * w;
      }
      for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i] / total);
    }
  }
  return out;
}

std::size_t kept_units(std::size_t width, double keep_fraction) {
  return static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(width) + 1e-9));
}

DropoutMask make_dropout_mask(const ModelArch& arch, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
  DropoutMask mask;
  mask.keep_fraction = keep_fraction;
  const auto classifier = classifier_index(arch);
  for (std::size_t t : trainable_indices(arch)) {
    if (t == classifier) continue;
    const std::size_t width = *output_width(arch.layers[t]);
    const std::size_t k = kept_units(width, keep_fraction);
    if (k == 0) {
      throw ConfigError("keep fraction " + std::to_string(keep_fraction) + " leaves no units of layer " +
                        std::to_string(t) + " (width " + std::to_string(width) + ")");
    }
    std::vector<std::size_t> ids = all_ids(width);
    if (k < width) {
      for (std::size_t i = 0; i < k; ++i) std::swap(ids[i], ids[i + rng.index(width - i)]);
      ids.resize(k);
      std::sort(ids.begin(), ids.end());
    }
    mask.kept.emplace(t, std::move(ids));
  }
  return mask;
}

SubModel fd_extract(const ModelArch& arch, const ModelParams& params, const DropoutMask& mask) {
  check_params(arch, params);
  const auto crops = crops_for(arch, mask);
  SubModel sub{crop_arch(arch, crops), ModelParams{}, mask};
  for (const auto& [t, c] : crops) {
    const LayerParams& g = params.layers.at(t);
    LayerParams lp;
    Shape wshape = g.weight.shape();
    wshape[wshape.size() - 2] = c.in_ids.size();
    wshape.back() = c.out_ids.size();
    lp.weight = Tensor(wshape);
    lp.bias = Tensor({c.out_ids.size()});
    std::size_t k = 0;
    for (std::size_t s = 0; s < c.spatial; ++s) {
      for (std::size_t a = 0; a < c.in_ids.size(); ++a) {
        for (std::size_t b = 0; b < c.out_ids.size(); ++b) lp.weight[k++] = g.weight[global_weight_index(c, s, a, b)];
      }
    }
    for (std::size_t b = 0; b < c.out_ids.size(); ++b) lp.bias[b] = g.bias[c.out_ids[b]];
    sub.params.layers.emplace(t, std::move(lp));
  }
  return sub;
}

SubModel fd_extract(const ModelArch& arch, const ModelParams& params, double keep_fraction, Rng& rng) {
  return fd_extract(arch, params, make_dropout_mask(arch, keep_fraction, rng));
}

ModelParams fd_merge(const ModelArch& arch, const ModelParams& global, std::span<const SubUpdate> updates) {
  check_params(arch, global);
  if (updates.empty()) throw ConfigError("cannot merge zero sub-model updates");
  struct Acc {
    std::vector<double> weight, bias, weight_n, bias_n;
  };
  std::map<std::size_t, Acc> acc;
  for (const auto& [t, lp] : global.layers) {
    acc[t] = Acc{std::vector<double>(lp.weight.size(), 0.0), std::vector<double>(lp.bias.size(), 0.0),
                 std::vector<double>(lp.weight.size(), 0.0), std::vector<double>(lp.bias.size(), 0.0)};
  }
  for (const auto& u : updates) {
    if (u.n == 0) throw ConfigError("sub-model update with zero samples");
    const auto crops = crops_for(arch, u.mask);
    try {
      check_params(crop_arch(arch, crops), u.params);
    } catch (const Error& e) {
      throw ConfigError(std::string("sub-model update does not match its mask: ") + e.what());
    }
    const double n = static_cast<double>(u.n);
    for (const auto& [t, c] : crops) {
      const LayerParams& lp = u.params.layers.at(t);
      Acc& a = acc.at(t);
      std::size_t k = 0;
      for (std::size_t s = 0; s < c.spatial; ++s) {
        for (std::size_t i = 0; i < c.in_ids.size(); ++i) {
          for (std::size_t o = 0; o < c.out_ids.size(); ++o) {
            const std::size_t g = global_weight_index(c, s, i, o);
            a.weight[g] += static_cast<double>(lp.weight[k++]) * n;
            a.weight_n[g] += n;
          }
        }
      }
      for (std::size_t o = 0; o < c.out_ids.size(); ++o) {
        a.bias[c.out_ids[o]] += static_cast<double>(lp.bias[o]) * n;
        a.bias_n[c.out_ids[o]] += n;
      }
    }
  }
  ModelParams out = global;
  for (auto& [t, lp] : out.layers) {
    const Acc& a = acc.at(t);
    for (std::size_t i = 0; i < lp.weight.size(); ++i) {
      if (a.weight_n[i] > 0.0) lp.weight[i] = static_cast<float>(a.weight[i] / a.weight_n[i]);
    }
    for (std::size_t i = 0; i < lp.bias.size(); ++i) {
      if (a.bias_n[i] > 0.0) lp.bias[i] = static_cast<float>(a.bias[i] / a.bias_n[i]);
    }
  }
  return out;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::fedavg: return "fedavg";
    case Method::fd: return "fd";
    case Method::fnn: return "fnn";
    case Method::fnn_fd: return "fnn-fd";
  }
  return "?";
}

Method method_from(const std::string& name) {
  if (name == "fedavg") return Method::fedavg;
  if (name == "fd") return Method::fd;
  if (name == "fnn") return Method::fnn;
  if (name == "fnn-fd" || name == "fnn_fd") return Method::fnn_fd;
  throw ConfigError("unknown method '" + name + "' (expected fedavg, fd, fnn or fnn-fd)");
}

bool grows(Method method) { return method == Method::fnn || method == Method::fnn_fd; }

namespace {

bool uses_fd(const FederatedConfig& cfg, std::size_t model_index) {
  return cfg.method == Method::fd || (cfg.method == Method::fnn_fd && model_index >= cfg.fd_exempt_models);
}

void check_config(const FederatedConfig& cfg, std::span<const ClientShard> clients) {
  cfg.train.validate();
  if (clients.empty()) throw ConfigError("no clients");
  if (cfg.clients_per_round == 0 || cfg.clients_per_round > clients.size()) {
    throw ConfigError("clients per round must lie in [1, " + std::to_string(clients.size()) + "], got " +
                      std::to_string(cfg.clients_per_round));
  }
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].n() == 0) throw ConfigError("client " + std::to_string(i) + " has no samples");
  }
  if (cfg.window == 0) throw ConfigError("switching window must be positive");
  if (!(cfg.fd_keep_fraction > 0.0 && cfg.fd_keep_fraction <= 1.0)) {
    throw ConfigError("fd keep fraction must lie in (0, 1]");
  }
  if (cfg.eval_every == 0) throw ConfigError("eval_every must be positive");
}

}  // namespace

ExperimentResult run_experiment(const FederatedConfig& cfg, const GrowthSchedule& schedule,
                                std::span<const ClientShard> clients, const Dataset* test,
                                const RoundCallback& on_round) {
  check_config(cfg, clients);
  require_valid(schedule);
  const bool growing = grows(cfg.method);
  const std::vector<ModelArch> models =
      growing ? schedule.models : std::vector<ModelArch>{schedule.models.back()};
  const std::vector<double> thresholds = growing ? schedule.thresholds : std::vector<double>{};
  const std::size_t m = cfg.clients_per_round;

  auto evaluate = [&](const ModelArch& arch, const ModelParams& params) -> std::optional<double> {
    if (test == nullptr || test->size() == 0) return std::nullopt;
    return accuracy(arch, params, test->samples, test->labels);
  };

  ExperimentResult res;
  res.final_arch = models.front();
  {
    Rng init_rng(derive_seed(cfg.seed, {tag(Stream::init)}));
    res.final_params = init_params(res.final_arch, init_rng, cfg.init);
  }
  ModelArch& arch = res.final_arch;
  ModelParams& params = res.final_params;
  SwitchPolicy policy(cfg.window, cfg.lag);

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const std::size_t model_index = policy.model_index();
    try {
      const auto ids = select_clients(cfg.seed, r, m, clients.size());
      const bool fd = uses_fd(cfg, model_index);
      SubModel sent;
      if (fd) {
        Rng mask_rng(derive_seed(cfg.seed, {tag(Stream::fd_mask), r}));
        sent = fd_extract(arch, params, cfg.fd_keep_fraction, mask_rng);
      } else {
        sent = SubModel{arch, params, DropoutMask{}};
      }

      std::vector<LocalResult> local(m);
      std::vector<std::exception_ptr> errors(m);
#pragma omp parallel for schedule(dynamic, 1) if (m > 1)
      for (std::size_t i = 0; i < m; ++i) {
        try {
          Rng rng(derive_seed(cfg.seed, {tag(Stream::client), r, ids[i]}));
          local[i] = local_train(sent.arch, sent.params, clients[ids[i]], cfg.train, rng);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }

      std::vector<ClientLoss> losses;
      double samples = 0.0;
      for (const auto& l : local) {
        losses.push_back({l.loss, l.n});
        samples += static_cast<double>(l.n);
      }
      if (fd) {
        std::vector<SubUpdate> updates;
        updates.reserve(m);
        for (auto& l : local) updates.push_back({std::move(l.params), sent.mask, l.n});
        params = fd_merge(arch, params, updates);
      } else {
        std::vector<ClientUpdate> updates;
        updates.reserve(m);
        for (auto& l : local) updates.push_back({std::move(l.params), l.n});
        params = aggregate(updates);
      }

      const std::uint64_t scalars = sent.params.scalar_count();
      const std::uint64_t flops =
          training_flops(forward_macs(sent.arch), samples / static_cast<double>(m) * cfg.train.local_epochs);
      const LedgerRow& row = res.ledger.record(r, model_index, m, scalars, scalars, flops);

      RoundMetrics metrics;
      metrics.round = r;
      metrics.model_index = model_index;
      metrics.weighted_loss = weighted_round_loss(losses);
      metrics.download_bytes = row.download_bytes;
      metrics.upload_bytes = row.upload_bytes;
      metrics.cumulative_bytes = row.cumulative_bytes;
      metrics.flops_per_client = row.flops_per_client;

      policy.record_round_loss(metrics.weighted_loss);
      metrics.signal = policy.progress_signal();
      if ((r + 1) % cfg.eval_every == 0 || r + 1 == cfg.rounds) metrics.test_accuracy = evaluate(arch, params);

      if (growing) {
        if (const auto event = policy.decide(r, thresholds)) {
          SwitchRecord record{*event, metrics.test_accuracy ? metrics.test_accuracy : evaluate(arch, params),
                              std::nullopt};
          const ModelDiff diff = diff_models(models[event->from_model], models[event->to_model]);
          Rng growth_rng(derive_seed(cfg.seed, {tag(Stream::growth), event->to_model}));
          Transformed grown = apply_diff(diff, arch, params, growth_rng);
          if (!(grown.arch == models[event->to_model])) {
            throw StructuralError("growth to model " + std::to_string(event->to_model + 1) +
                                  " produced an architecture different from the schedule");
          }
          arch = std::move(grown.arch);
          params = std::move(grown.params);
          record.accuracy_after = evaluate(arch, params);
          res.switches.push_back(record);
          metrics.switched = true;
        }
      }
      res.metrics.push_back(metrics);
      if (on_round) on_round(res.metrics.back());
    } catch (const NumericalError& e) {
      throw NumericalError("round " + std::to_string(r) + " (model " + std::to_string(model_index + 1) +
                           "): " + e.what());
    } catch (const Error& e) {
      throw Error("round " + std::to_string(r) + " (model " + std::to_string(model_index + 1) + "): " + e.what());
    }
  }
  res.final_model = policy.model_index();
  return res;
}

}  // namespace fedgrow
