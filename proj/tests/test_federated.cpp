#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "fedgrow/error.hpp"
#include "fedgrow/federated.hpp"
#include "fedgrow/net2net.hpp"
#include "test_util.hpp"

using namespace fedgrow;
using namespace testutil;

namespace {

ModelArch tiny(std::size_t filters, std::size_t hidden, std::size_t classes = 4) {
  ModelArch a;
  a.input = {8, 8, 1, false};
  a.layers = {Conv2D{{3, 3, 1, filters}}, Relu{}, Dropout{0.125f}, MaxPool{2, 2}, Flatten{},
              Dense{16 * filters, hidden},  Relu{}, Dropout{0.125f}, Dense{hidden, classes}, Softmax{}};
  return a;
}

GrowthSchedule tiny_schedule() {
  GrowthSchedule s;
  s.dataset = "mnist";
  s.models = {tiny(4, 16), tiny(8, 16), tiny(8, 32)};
  s.thresholds = {10.0, 10.0};
  return s;
}

std::vector<ClientShard> tiny_clients(std::size_t count, std::size_t per_client, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.height = spec.width = 8;
  spec.per_class = count * per_client / 4;
  spec.test_per_class = 0;
  spec.separation = 5.0;
  spec.seed = seed;
  PartitionSpec p;
  p.clients = count;
  p.seed = seed;
  return partition(make_synthetic(spec).train, p);
}

Dataset tiny_test(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.height = spec.width = 8;
  spec.per_class = 1;
  spec.test_per_class = 25;
  spec.separation = 5.0;
  spec.seed = seed;
  return make_synthetic(spec).test;
}

FederatedConfig tiny_config(Method method, std::size_t rounds) {
  FederatedConfig cfg;
  cfg.method = method;
  cfg.rounds = rounds;
  cfg.clients_per_round = 4;
  cfg.train.learning_rate = 0.05f;
  cfg.window = 5;
  cfg.lag = 10;
  cfg.eval_every = 5;
  cfg.fd_exempt_models = 1;
  cfg.seed = 77;
  return cfg;
}

ModelParams random_like(const ModelParams& shape, Rng& rng) {
  ModelParams out = shape;
  for (auto& [i, lp] : out.layers) {
    for (float& v : lp.weight.values()) v = 2.0f * rng.uniform() - 1.0f;
    for (float& v : lp.bias.values()) v = 2.0f * rng.uniform() - 1.0f;
  }
  return out;
}

// The full model with every dropped unit silenced: its outgoing activations
// are relu(0) = 0, so it computes the same function as the cropped sub-model.
ModelParams silence_dropped(const ModelArch& arch, ModelParams p, const DropoutMask& mask) {
  for (const auto& [layer, kept] : mask.kept) {
    const std::size_t width = *output_width(arch.layers[layer]);
    std::set<std::size_t> keep(kept.begin(), kept.end());
    LayerParams& lp = p.layers.at(layer);
    for (std::size_t o = 0; o < width; ++o) {
      if (keep.count(o)) continue;
      lp.bias[o] = 0.0f;
      for (std::size_t r = 0; r < lp.weight.size() / width; ++r) lp.weight[r * width + o] = 0.0f;
    }
  }
  return p;
}

}  // namespace

TEST_CASE("client selection") {
  const auto all = select_clients(1, 0, 10, 10);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  for (std::size_t r = 0; r < 50; ++r) {
    const auto s = select_clients(3, r, 10, 100);
    CHECK(s.size() == 10);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s.back() < 100);
    CHECK(s == select_clients(3, r, 10, 100));
  }
  CHECK(select_clients(3, 0, 10, 100) != select_clients(3, 1, 10, 100));
  CHECK_THROWS_AS(select_clients(3, 0, 11, 10), ConfigError);

  std::vector<std::size_t> hits(20, 0);
  for (std::size_t r = 0; r < 4000; ++r) {
    for (std::size_t id : select_clients(9, r, 5, 20)) ++hits[id];
  }
  for (std::size_t h : hits) CHECK(std::abs(static_cast<double>(h) - 1000.0) < 150.0);
}

TEST_CASE("local training") {
  const ModelArch arch = tiny(4, 16);
  const auto clients = tiny_clients(2, 40, 1);
  Rng rng(2);
  const ModelParams p = init_params(arch, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.0f;
  const LocalResult still = local_train(arch, p, clients[0], cfg, rng);
  CHECK(still.params == p);
  CHECK(still.n == clients[0].n());

  cfg.learning_rate = 0.05f;
  cfg.dropout_rate = 0.0f;
  ModelParams q = p;
  std::vector<double> losses;
  for (int epoch = 0; epoch < 60; ++epoch) {
    LocalResult r = local_train(arch, q, clients[0], cfg, rng);
    losses.push_back(r.loss);
    q = std::move(r.params);
  }
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("aggregate: hand cases") {
  ModelArch arch;
  arch.input = {1, 1, 1, true};
  arch.layers = {Dense{1, 1}, Softmax{}};
  ModelParams a = zero_params(arch), b = zero_params(arch);
  b.layers[0].weight[0] = 4.0f;
  const std::vector<ClientUpdate> two{{a, 1}, {b, 3}};
  CHECK(aggregate(two).layers.at(0).weight[0] == 3.0f);

  Rng rng(3);
  const ModelParams r = random_like(zero_params(tiny(4, 16)), rng);
  const std::vector<ClientUpdate> one{{r, 17}};
  CHECK(aggregate(one) == r);
  const std::vector<ClientUpdate> same{{r, 3}, {r, 5}, {r, 11}};
  CHECK(aggregate(same) == r);

  const std::vector<ClientUpdate> mismatch{{r, 1}, {zero_params(tiny(8, 16)), 1}};
  CHECK_THROWS_AS(aggregate(mismatch), ConfigError);
  CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{}), ConfigError);
}

TEST_CASE("aggregate: brute-force weighted mean on random instances") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelArch arch = tiny(1 + rng.index(4), 1 + rng.index(8), 2 + rng.index(3));
    const ModelParams shape = zero_params(arch);
    std::vector<ClientUpdate> ups;
    const std::size_t k = 1 + rng.index(8);
    for (std::size_t c = 0; c < k; ++c) ups.push_back({random_like(shape, rng), 1 + rng.index(100)});
    const ModelParams got = aggregate(ups);
    double total = 0.0;
    for (const auto& u : ups) total += static_cast<double>(u.n);
    for (const auto& [layer, lp] : got.layers) {
      for (std::size_t i = 0; i < lp.weight.size(); ++i) {
        double want = 0.0;
        for (const auto& u : ups) want += u.params.layers.at(layer).weight[i] * static_cast<double>(u.n) / total;
        CHECK(std::abs(lp.weight[i] - want) < 1e-6);
      }
    }
  }
}

TEST_CASE("fd: unit counts and the full-keep case") {
  CHECK(kept_units(512, 0.875) == 448);
  CHECK(kept_units(16, 0.875) == 14);
  CHECK(kept_units(10, 0.9) == 9);
  const ModelArch arch = tiny(8, 16);
  Rng rng(5);
  const ModelParams p = trained_like(arch, rng);
  const SubModel full = fd_extract(arch, p, 1.0, rng);
  CHECK(full.arch == arch);
  CHECK(full.params == p);
  for (const auto& [layer, kept] : full.mask.kept) CHECK(kept.size() == *output_width(arch.layers[layer]));
  CHECK(full.mask.kept.count(8) == 0);

  ModelArch narrow = tiny(1, 16);
  CHECK_THROWS_AS(make_dropout_mask(narrow, 0.5, rng), ConfigError);
  CHECK_THROWS_AS(make_dropout_mask(arch, 0.0, rng), ConfigError);
}

TEST_CASE("fd: sub-model computes the full model with dropped units silenced") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const ModelArch arch = tiny(8, 24);
    const ModelParams p = trained_like(arch, rng);
    const SubModel sub = fd_extract(arch, p, 0.75, rng);
    CHECK(std::get<Conv2D>(sub.arch.layers[0]).kernel.o == 6);
    CHECK(std::get<Dense>(sub.arch.layers[5]).in == 16 * 6);
    CHECK(std::get<Dense>(sub.arch.layers[5]).out == 18);
    CHECK(sub.params.scalar_count() == count_params(sub.arch));
    const Tensor x = random_tensor({6, 8, 8, 1}, rng);
    CHECK(max_abs_diff(forward_eval(sub.arch, sub.params, x),
                       forward_eval(arch, silence_dropped(arch, p, sub.mask), x)) < 1e-5f);
  }
}

TEST_CASE("fd: merge semantics") {
  const ModelArch arch = tiny(8, 16);
  Rng rng(6);
  const ModelParams global = trained_like(arch, rng);
  const SubModel sub = fd_extract(arch, global, 0.5, rng);

  const std::vector<SubUpdate> untouched{{sub.params, sub.mask, 5}};
  CHECK(fd_merge(arch, global, untouched) == global);

  // Shared mask: the masked region equals the plain aggregate of the
  // sub-models, the rest keeps the global value.
  std::vector<SubUpdate> shared;
  std::vector<ClientUpdate> plain;
  for (std::size_t c = 0; c < 3; ++c) {
    const ModelParams upd = random_like(sub.params, rng);
    shared.push_back({upd, sub.mask, 2 + c});
    plain.push_back({upd, 2 + c});
  }
  const ModelParams merged = fd_merge(arch, global, shared);
  const ModelParams agg = aggregate(plain);
  const SubModel cropped = fd_extract(arch, merged, sub.mask);
  CHECK(cropped.params == agg);
  // Writing the global values back into the kept region restores the global
  // model, so nothing outside that region moved.
  const std::vector<SubUpdate> restore{{fd_extract(arch, global, sub.mask).params, sub.mask, 1}};
  CHECK(fd_merge(arch, merged, restore) == global);
  std::size_t changed = 0;
  for (const auto& [layer, lp] : merged.layers) {
    for (std::size_t i = 0; i < lp.weight.size(); ++i) changed += lp.weight[i] != global.layers.at(layer).weight[i];
    for (std::size_t i = 0; i < lp.bias.size(); ++i) changed += lp.bias[i] != global.layers.at(layer).bias[i];
  }
  CHECK(changed == sub.params.scalar_count());

  // Disjoint masks: each region takes its sole contributor's value.
  DropoutMask left, right;
  left.kept = {{0, {0, 1, 2, 3}}, {5, {0, 1, 2, 3, 4, 5, 6, 7}}};
  right.kept = {{0, {4, 5, 6, 7}}, {5, {8, 9, 10, 11, 12, 13, 14, 15}}};
  const SubModel ls = fd_extract(arch, global, left);
  const SubModel rs = fd_extract(arch, global, right);
  const ModelParams lu = random_like(ls.params, rng), ru = random_like(rs.params, rng);
  const std::vector<SubUpdate> disjoint{{lu, left, 3}, {ru, right, 9}};
  const ModelParams m2 = fd_merge(arch, global, disjoint);
  CHECK(fd_extract(arch, m2, left).params.layers.at(0) == lu.layers.at(0));
  CHECK(fd_extract(arch, m2, right).params.layers.at(0) == ru.layers.at(0));
  // Dense layer 5: block (kept input rows of left, left units) is left's alone.
  CHECK(fd_extract(arch, m2, left).params.layers.at(5) == lu.layers.at(5));
  // Rows feeding from channel 0 into unit 8 are covered by nobody.
  CHECK(m2.layers.at(5).weight[0 * 16 + 8] == global.layers.at(5).weight[0 * 16 + 8]);

  std::vector<SubUpdate> bad{{lu, right, 1}};
  bad[0].params.layers.at(0).weight = Tensor({3, 3, 1, 5});
  CHECK_THROWS_AS(fd_merge(arch, global, bad), ConfigError);
}

TEST_CASE("ledger accounting") {
  CommLedger ledger;
  const LedgerRow& r = ledger.record(0, 0, 35, 434142, 434142, 10);
  CHECK(r.download_bytes == 434142ull * 4 * 35);
  CHECK(r.cumulative_bytes == 2 * 434142ull * 4 * 35);
  ledger.record(1, 0, 35, 10, 20, 10);
  CHECK(ledger.cumulative_bytes() == 2 * 434142ull * 4 * 35 + 30 * 4 * 35);
  CHECK(training_flops(100, 60.0) == 18000);
}

TEST_CASE("experiment: zero rounds") {
  const auto clients = tiny_clients(8, 20, 7);
  const auto res = run_experiment(tiny_config(Method::fnn, 0), tiny_schedule(), clients, nullptr);
  CHECK(res.metrics.empty());
  CHECK(res.ledger.empty());
  CHECK(res.ledger.cumulative_bytes() == 0);
  CHECK(res.final_arch == tiny_schedule().models.front());
}

TEST_CASE("experiment: fedavg traffic is constant, fnn traffic grows at switches") {
  const auto clients = tiny_clients(8, 20, 8);
  const Dataset test = tiny_test(8);
  const auto schedule = tiny_schedule();
  const auto fedavg = run_experiment(tiny_config(Method::fedavg, 20), schedule, clients, &test);
  for (const auto& m : fedavg.metrics) {
    CHECK(m.download_bytes == count_params(schedule.models.back()) * 4 * 4);
    CHECK(m.model_index == 0);
  }

  const auto fnn = run_experiment(tiny_config(Method::fnn, 50), schedule, clients, &test);
  REQUIRE(fnn.switches.size() == 2);
  CHECK(fnn.final_model == 2);
  CHECK(fnn.final_arch == schedule.models.back());
  std::uint64_t cumulative = 0;
  for (std::size_t r = 0; r < fnn.metrics.size(); ++r) {
    const auto& m = fnn.metrics[r];
    CHECK(m.download_bytes == count_params(schedule.models[m.model_index]) * 4 * 4);
    CHECK(m.upload_bytes == m.download_bytes);
    cumulative += m.download_bytes + m.upload_bytes;
    CHECK(m.cumulative_bytes == cumulative);
    if (r > 0) {
      CHECK(m.download_bytes >= fnn.metrics[r - 1].download_bytes);
      if (fnn.metrics[r - 1].switched) CHECK(m.download_bytes > fnn.metrics[r - 1].download_bytes);
    }
    CHECK(m.test_accuracy.has_value() == ((r + 1) % 5 == 0 || r + 1 == 50));
  }
  for (const auto& s : fnn.switches) {
    REQUIRE(s.accuracy_before.has_value());
    REQUIRE(s.accuracy_after.has_value());
    CHECK(std::abs(*s.accuracy_before - *s.accuracy_after) < 1e-5);
    CHECK(fnn.metrics[s.event.round].switched);
  }
  CHECK(fnn.switches[0].event.round == 14);
  CHECK(fnn.switches[1].event.round == 29);
}

TEST_CASE("experiment: determinism and paired client selection") {
  const auto clients = tiny_clients(8, 20, 9);
  const Dataset test = tiny_test(9);
  const auto a = run_experiment(tiny_config(Method::fnn_fd, 40), tiny_schedule(), clients, &test);
  const auto b = run_experiment(tiny_config(Method::fnn_fd, 40), tiny_schedule(), clients, &test);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t r = 0; r < a.metrics.size(); ++r) {
    CHECK(a.metrics[r].weighted_loss == b.metrics[r].weighted_loss);
    CHECK(a.metrics[r].test_accuracy == b.metrics[r].test_accuracy);
    CHECK(a.metrics[r].cumulative_bytes == b.metrics[r].cumulative_bytes);
  }
  CHECK(a.final_params == b.final_params);
  // Exempt first model: full traffic; later models send cropped sub-models.
  const auto schedule = tiny_schedule();
  for (const auto& m : a.metrics) {
    const std::uint64_t full = count_params(schedule.models[m.model_index]) * 4 * 4;
    if (m.model_index == 0) {
      CHECK(m.download_bytes == full);
    } else {
      CHECK(m.download_bytes < full);
    }
  }
}

TEST_CASE("experiment: fd with keep fraction 1 is exactly fedavg") {
  const auto clients = tiny_clients(8, 20, 10);
  const Dataset test = tiny_test(10);
  auto cfg = tiny_config(Method::fd, 12);
  cfg.fd_keep_fraction = 1.0;
  const auto fd = run_experiment(cfg, tiny_schedule(), clients, &test);
  const auto avg = run_experiment(tiny_config(Method::fedavg, 12), tiny_schedule(), clients, &test);
  CHECK(fd.final_params == avg.final_params);
  for (std::size_t r = 0; r < 12; ++r) {
    CHECK(fd.metrics[r].weighted_loss == avg.metrics[r].weighted_loss);
    CHECK(fd.metrics[r].cumulative_bytes == avg.metrics[r].cumulative_bytes);
  }
}

TEST_CASE("experiment: errors carry round context") {
  auto clients = tiny_clients(8, 20, 11);
  for (auto& c : clients) c.samples[0] = std::numeric_limits<float>::infinity();
  try {
    run_experiment(tiny_config(Method::fedavg, 3), tiny_schedule(), clients, nullptr);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("round 0") != std::string::npos);
  }
  auto cfg = tiny_config(Method::fnn, 3);
  cfg.clients_per_round = 9;
  CHECK_THROWS_AS(run_experiment(cfg, tiny_schedule(), tiny_clients(8, 20, 11), nullptr), ConfigError);
  auto bad = tiny_schedule();
  bad.thresholds.pop_back();
  CHECK_THROWS_AS(run_experiment(tiny_config(Method::fnn, 3), bad, tiny_clients(8, 20, 11), nullptr), ScheduleError);
}
