#include "fedgrow/ledger.hpp"

#include <cmath>

namespace fedgrow {

const LedgerRow& CommLedger::record(std::size_t round, std::size_t model_index, std::size_t clients,
                                    std::uint64_t download_scalars_per_client,
                                    std::uint64_t upload_scalars_per_client, std::uint64_t flops_per_client) {
  LedgerRow row;
  row.round = round;
  row.model_index = model_index;
  row.clients = clients;
  row.download_bytes = download_scalars_per_client * clients * kBytesPerScalar;
  row.upload_bytes = upload_scalars_per_client * clients * kBytesPerScalar;
  row.cumulative_bytes = cumulative_bytes() + row.download_bytes + row.upload_bytes;
  row.flops_per_client = flops_per_client;
  rows_.push_back(row);
  return rows_.back();
}

std::uint64_t training_flops(std::uint64_t forward_macs_per_sample, double samples) {
  return static_cast<std::uint64_t>(std::llround(3.0 * static_cast<double>(forward_macs_per_sample) * samples));
}

}  // namespace fedgrow
