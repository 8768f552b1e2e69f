#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fedgrow {

/// Every transmitted scalar is a 32-bit float.
inline constexpr std::uint64_t kBytesPerScalar = 4;

struct LedgerRow {
  std::size_t round = 0;
  std::size_t model_index = 0;
  std::size_t clients = 0;
  std::uint64_t download_bytes = 0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  /// Estimated forward+backward FLOPs of one selected client in this round.
  std::uint64_t flops_per_client = 0;
};

/// Append-only record of communication per round.
class CommLedger {
 public:
  /// Records one round; download/upload are per-client scalar counts.
  const LedgerRow& record(std::size_t round, std::size_t model_index, std::size_t clients,
                          std::uint64_t download_scalars_per_client, std::uint64_t upload_scalars_per_client,
                          std::uint64_t flops_per_client);

  const std::vector<LedgerRow>& rows() const { return rows_; }
  std::uint64_t cumulative_bytes() const { return rows_.empty() ? 0 : rows_.back().cumulative_bytes; }
  bool empty() const { return rows_.empty(); }

 private:
  std::vector<LedgerRow> rows_;
};

/// Forward+backward estimate: three times the forward multiply-accumulates.
std::uint64_t training_flops(std::uint64_t forward_macs_per_sample, double samples);

}  // namespace fedgrow
