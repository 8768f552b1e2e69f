#include "fedgrow/switching.hpp"

#include <cmath>

#include "fedgrow/error.hpp"

namespace fedgrow {

SwitchPolicy::SwitchPolicy(std::size_t window, std::size_t lag) : window_(window), lag_(lag) {
  if (window == 0) throw ConfigError("switching window must be positive");
  if (lag == 0) throw ConfigError("switching lag must be positive");
}

void SwitchPolicy::record_round_loss(double loss) {
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite round loss after " + std::to_string(history_.size()) + " rounds on model " +
                         std::to_string(model_index_));
  }
  history_.push_back(loss);
}

std::optional<double> SwitchPolicy::progress_signal() const {
  const std::size_t t = history_.size();
  if (t < window_ + lag_) return std::nullopt;
  double earlier = 0.0;
  double recent = 0.0;
  for (std::size_t i = 1; i <= window_; ++i) {
    earlier += history_[t - i - lag_];
    recent += history_[t - i];
  }
  const auto n = static_cast<double>(window_);
  return earlier / n - recent / n;
}

bool SwitchPolicy::should_switch(std::span<const double> thresholds) const {
  if (model_index_ >= thresholds.size()) return false;
  const auto signal = progress_signal();
  return signal && *signal <= thresholds[model_index_];
}

void SwitchPolicy::advance_model() {
  ++model_index_;
  history_.clear();
}

std::optional<SwitchEvent> SwitchPolicy::decide(std::size_t round, std::span<const double> thresholds) {
  if (!should_switch(thresholds)) return std::nullopt;
  SwitchEvent event{round, model_index_, model_index_ + 1, *progress_signal()};
  advance_model();
  return event;
}

double weighted_round_loss(std::span<const ClientLoss> losses) {
  double total = 0.0;
  double weight = 0.0;
  for (const auto& l : losses) {
    total += l.loss * static_cast<double>(l.n);
    weight += static_cast<double>(l.n);
  }
  if (weight <= 0.0) throw ConfigError("round loss needs at least one sample");
  return total / weight;
}

}  // namespace fedgrow
