#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedgrow/dataset.hpp"
#include "fedgrow/tensor.hpp"

namespace fedgrow {

/// One client's private data. n() is its FedAvg weight.
struct ClientShard {
  std::size_t id = 0;
  Tensor samples;
  std::vector<int> labels;

  std::size_t n() const { return labels.size(); }
};

enum class PartitionScheme { iid_uniform, label_shard };

std::string to_string(PartitionScheme scheme);
PartitionScheme partition_scheme_from(const std::string& name);

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::iid_uniform;
  std::size_t clients = 100;
  /// Label shards per client for the non-IID scheme.
  std::size_t shards_per_client = 2;
  std::uint64_t seed = 0;
  bool operator==(const PartitionSpec&) const = default;
};

/// Splits the dataset into disjoint client shards covering every sample.
///
/// iid-uniform shuffles and deals near-equal contiguous chunks. label-shard
/// sorts by label, cuts clients * shards_per_client single-label shards
/// (allotted to labels in proportion to their frequency), and gives each
/// client shards_per_client of them at random.
std::vector<ClientShard> partition(const Dataset& data, const PartitionSpec& spec);

}  // namespace fedgrow
