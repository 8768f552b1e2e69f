#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <utility>

namespace fedgrow {

/// Mixes a master seed with a list of tags into an independent stream seed.
/// Streams are keyed by purpose, round, and client so results never depend on
/// the order in which work is scheduled.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// Seeded generator with platform-independent sampling helpers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 24 bits of resolution.
  float uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Normal with the given stddev, resampled until within two stddevs.
  double truncated_normal(double stddev);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedgrow
