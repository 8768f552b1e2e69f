#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedgrow/schedule.hpp"

namespace fedgrow {

struct SwitchEvent {
  std::size_t round = 0;
  std::size_t from_model = 0;
  std::size_t to_model = 0;
  double signal = 0.0;
};

/// Windowed-loss switching policy.
///
/// The progress signal compares the mean loss of the most recent `window`
/// rounds with the mean of an equally sized window `lag` rounds earlier:
///
///   S_t = mean(loss[t-N-L .. t-1-L]) - mean(loss[t-N .. t-1])
///
/// It is only defined once the current model has seen window + lag rounds.
/// The history restarts whenever the model changes so that windows never mix
/// losses of two different models. S_t is in loss units, so thresholds depend
/// on the scale of the loss.
class SwitchPolicy {
 public:
  SwitchPolicy(std::size_t window = 100, std::size_t lag = 300);

  /// Appends one round's sample-weighted loss. Throws NumericalError if it is
  /// not finite.
  void record_round_loss(double loss);

  std::optional<double> progress_signal() const;

  /// True when the signal is ready, at or below thresholds[model_index], and a
  /// larger model exists.
  bool should_switch(std::span<const double> thresholds) const;
  bool should_switch(const GrowthSchedule& schedule) const { return should_switch(schedule.thresholds); }

  /// Moves to the next model and clears the history.
  void advance_model();

  /// Decision for the round just recorded; advances the model on a switch.
  std::optional<SwitchEvent> decide(std::size_t round, std::span<const double> thresholds);

  std::size_t window() const { return window_; }
  std::size_t lag() const { return lag_; }
  std::size_t model_index() const { return model_index_; }
  std::size_t rounds_since_switch() const { return history_.size(); }
  const std::vector<double>& history() const { return history_; }

 private:
  std::size_t window_;
  std::size_t lag_;
  std::size_t model_index_ = 0;
  std::vector<double> history_;
};

struct ClientLoss {
  double loss;
  std::size_t n;
};

/// Sample-count weighted mean of client losses.
double weighted_round_loss(std::span<const ClientLoss> losses);

}  // namespace fedgrow
