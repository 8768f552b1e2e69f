#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "fedgrow/error.hpp"
#include "fedgrow/schedule.hpp"
#include "param_oracle.hpp"

using namespace fedgrow;

namespace {

std::size_t dense_units_before_classifier(const ModelArch& arch) {
  const auto t = trainable_indices(arch);
  return std::get<Dense>(arch.layers[t[t.size() - 2]]).out;
}

}  // namespace

TEST_CASE("builtin schedules: thresholds and defaults") {
  CHECK(builtin_schedule("emnist").thresholds == std::vector<double>{0.08, 0.04, 0.02, 0.01, 0.005});
  CHECK(builtin_schedule("cifar10").thresholds == std::vector<double>{0.12, 0.11, 0.10, 0.09, 0.08});
  CHECK(builtin_schedule("mnist").thresholds == std::vector<double>{0.04, 0.02, 0.01, 0.005, 0.0025});
  CHECK(dataset_defaults("emnist").learning_rate == 0.035f);
  CHECK(dataset_defaults("emnist").clients_per_round == 35);
  CHECK(dataset_defaults("cifar10").learning_rate == 0.05f);
  CHECK(dataset_defaults("mnist").learning_rate == 0.015f);
  CHECK(dataset_defaults("mnist").clients_per_round == 10);
  CHECK_THROWS_AS(builtin_schedule("imagenet"), ConfigError);
}

TEST_CASE("builtin schedules: architectures") {
  for (const char* name : {"emnist", "mnist", "cifar10"}) {
    const auto s = builtin_schedule(name);
    CHECK(s.models.size() == 6);
    CHECK(validate_schedule(s).ok());
  }
  const auto mnist = builtin_schedule("mnist");
  CHECK(class_count(mnist.models[0]) == 10);
  CHECK(dense_units_before_classifier(mnist.models[3]) == 128);
  CHECK(dense_units_before_classifier(mnist.models[4]) == 256);
  CHECK(dense_units_before_classifier(mnist.models[5]) == 512);
  CHECK(class_count(builtin_schedule("emnist").models[0]) == 62);

  const auto cifar = builtin_schedule("cifar10");
  const auto& last = cifar.models.back();
  std::vector<std::size_t> kernels;
  for (std::size_t t : trainable_indices(last)) {
    if (const auto* c = std::get_if<Conv2D>(&last.layers[t])) kernels.push_back(c->kernel.w);
  }
  REQUIRE(kernels.size() == 7);
  CHECK(kernels[5] == 1);
  CHECK(kernels[6] == 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(kernels[i] == 3);
}

TEST_CASE("parameter counts: closed-form oracle and printed table values") {
  const auto emnist = builtin_schedule("emnist");
  const auto mnist = builtin_schedule("mnist");
  const auto cifar = builtin_schedule("cifar10");
  const auto e = oracle::emnist_counts();
  const auto m = oracle::mnist_counts();
  const auto c = oracle::cifar_counts();
  const auto ep = oracle::emnist_printed();
  const auto cp = oracle::cifar_printed();
  CHECK(e[0] == 434142);
  for (std::size_t k = 0; k < 6; ++k) {
    CAPTURE(k);
    CHECK(count_params(emnist.models[k]) == e[k]);
    CHECK(count_params(mnist.models[k]) == m[k]);
    CHECK(count_params(cifar.models[k]) == c[k]);
    CHECK(oracle::matches_printed(e[k], ep[k]));
    CHECK(oracle::matches_printed(c[k], cp[k]));
    if (k > 0) {
      CHECK(count_params(emnist.models[k]) > count_params(emnist.models[k - 1]));
      CHECK(count_params(mnist.models[k]) > count_params(mnist.models[k - 1]));
      CHECK(count_params(cifar.models[k]) > count_params(cifar.models[k - 1]));
    }
  }
}

TEST_CASE("diff: widening the first conv of the digit models") {
  const auto s = builtin_schedule("emnist");
  const ModelDiff d = diff_models(s.models[0], s.models[1]);
  REQUIRE(d.steps.size() == 1);
  CHECK(d.steps[0] == TransformStep{WidenConv{0, 32}});
}

TEST_CASE("diff: pool split followed by a conv identity insertion") {
  const auto s = builtin_schedule("emnist");
  const ModelDiff d = diff_models(s.models[1], s.models[2]);
  REQUIRE(d.steps.size() == 2);
  const auto* split = std::get_if<SplitPool>(&d.steps[0]);
  REQUIRE(split != nullptr);
  CHECK(split->factor == 2);
  CHECK(std::get<MaxPool>(s.models[1].layers[split->position]).window == 4);
  const auto* ins = std::get_if<InsertConvIdentity>(&d.steps[1]);
  REQUIRE(ins != nullptr);
  CHECK(ins->channels == 32);
  CHECK(ins->kernel == 5);
}

TEST_CASE("diff: identical architectures give an empty diff") {
  for (const auto& m : builtin_schedule("cifar10").models) CHECK(diff_models(m, m).empty());
}

TEST_CASE("diff: structural replay reproduces every target") {
  for (const char* name : {"emnist", "mnist", "cifar10"}) {
    const auto s = builtin_schedule(name);
    for (std::size_t k = 0; k + 1 < s.models.size(); ++k) {
      const ModelDiff d = diff_models(s.models[k], s.models[k + 1]);
      CHECK(apply_structural(s.models[k], d) == s.models[k + 1]);
      // Order: splits, then insertions, then widenings.
      int phase = 0;
      for (const auto& step : d.steps) {
        const int p = std::holds_alternative<SplitPool>(step)                                        ? 0
                      : std::holds_alternative<InsertConvIdentity>(step) ||
                              std::holds_alternative<InsertDenseIdentity>(step)                        ? 1
                                                                                                       : 2;
        CHECK(p >= phase);
        phase = p;
      }
    }
  }
}

TEST_CASE("diff: unreachable pairs are rejected") {
  const auto s = builtin_schedule("emnist");
  CHECK_THROWS_AS(diff_models(s.models[2], s.models[0]), ScheduleError);
  CHECK_THROWS_AS(diff_models(s.models[0], builtin_schedule("mnist").models[1]), ScheduleError);
  CHECK_THROWS_AS(diff_models(s.models[0], builtin_schedule("cifar10").models[0]), ScheduleError);
}

TEST_CASE("validation reports every violation") {
  auto s = builtin_schedule("emnist");
  std::swap(s.models[1], s.models[4]);
  const auto shuffled = validate_schedule(s);
  CHECK_FALSE(shuffled.ok());
  CHECK(shuffled.message().find("parameter") != std::string::npos);

  auto t = builtin_schedule("emnist");
  t.thresholds.pop_back();
  const auto arity = validate_schedule(t);
  CHECK_FALSE(arity.ok());
  CHECK(arity.message().find("arity") != std::string::npos);
  CHECK_THROWS_AS(require_valid(t), ScheduleError);

  auto both = builtin_schedule("emnist");
  std::swap(both.models[1], both.models[4]);
  both.thresholds = {0.1, -0.2};
  CHECK(validate_schedule(both).problems.size() >= 3);
}

TEST_CASE("schedule files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "fedgrow_test_growth";
  std::filesystem::create_directories(dir);
  for (const char* name : {"emnist", "cifar10"}) {
    const auto s = builtin_schedule(name);
    const auto path = dir / (std::string(name) + ".json");
    save_schedule(s, path);
    const auto back = load_schedule(path);
    CHECK(back.dataset == s.dataset);
    CHECK(back.thresholds == s.thresholds);
    CHECK(back.models == s.models);
    CHECK(resolve_schedule(path.string()).models == s.models);
  }
  CHECK(resolve_schedule("builtin:mnist").models == builtin_schedule("mnist").models);
  CHECK_THROWS(load_schedule(dir / "missing.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("the example eight-model schedule is valid") {
  const auto s = load_schedule(std::filesystem::path(FEDGROW_SOURCE_DIR) / "configs" / "schedule_mnist_fnn8.json");
  CHECK(s.models.size() == 8);
  CHECK(validate_schedule(s).ok());
}
