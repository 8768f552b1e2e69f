#include "fedgrow/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedgrow/error.hpp"
#include "fedgrow/model.hpp"
#include "fedgrow/rng.hpp"

namespace fedgrow {

namespace {

ClientShard make_shard(const Dataset& data, std::size_t id, std::span<const std::size_t> rows) {
  ClientShard shard;
  shard.id = id;
  shard.samples = gather_rows(data.samples, rows);
  shard.labels.reserve(rows.size());
  for (std::size_t r : rows) shard.labels.push_back(data.labels[r]);
  return shard;
}

// Shards per label, proportional to label frequency, at least one each and
// never more than the label has samples.
std::vector<std::size_t> allot_shards(const std::vector<std::size_t>& counts, std::size_t total_shards,
                                      std::size_t total_samples) {
  const std::size_t labels = counts.size();
  std::vector<double> quota(labels);
  std::vector<std::size_t> allot(labels);
  for (std::size_t l = 0; l < labels; ++l) {
    quota[l] = static_cast<double>(total_shards) * static_cast<double>(counts[l]) / static_cast<double>(total_samples);
    allot[l] = std::min(counts[l], std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(quota[l]))));
  }
  std::size_t sum = std::accumulate(allot.begin(), allot.end(), std::size_t{0});
  while (sum < total_shards) {
    std::size_t best = labels;
    for (std::size_t l = 0; l < labels; ++l) {
      if (allot[l] < counts[l] && (best == labels || quota[l] - allot[l] > quota[best] - allot[best])) best = l;
    }
    ++allot[best];
    ++sum;
  }
  while (sum > total_shards) {
    std::size_t best = labels;
    for (std::size_t l = 0; l < labels; ++l) {
      if (allot[l] > 1 && (best == labels || quota[l] - allot[l] < quota[best] - allot[best])) best = l;
    }
    --allot[best];
    --sum;
  }
  return allot;
}

}  // namespace

std::string to_string(PartitionScheme scheme) {
  return scheme == PartitionScheme::iid_uniform ? "iid-uniform" : "label-shard";
}

PartitionScheme partition_scheme_from(const std::string& name) {
  if (name == "iid-uniform" || name == "iid") return PartitionScheme::iid_uniform;
  if (name == "label-shard" || name == "label-shard-non-iid" || name == "non-iid") return PartitionScheme::label_shard;
  throw ConfigError("unknown partition scheme '" + name + "' (expected iid-uniform or label-shard)");
}

std::vector<ClientShard> partition(const Dataset& data, const PartitionSpec& spec) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("cannot partition an empty dataset");
  if (spec.clients == 0) throw ConfigError("client count must be positive");
  if (spec.clients > n) {
    throw ConfigError("more clients (" + std::to_string(spec.clients) + ") than samples (" + std::to_string(n) + ")");
  }
  Rng rng(derive_seed(spec.seed, {0x9a, 1}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<ClientShard> shards;
  shards.reserve(spec.clients);
  if (spec.scheme == PartitionScheme::iid_uniform) {
    const std::size_t base = n / spec.clients;
    const std::size_t extra = n % spec.clients;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < spec.clients; ++c) {
      const std::size_t size = base + (c < extra ? 1 : 0);
      shards.push_back(make_shard(data, c, std::span<const std::size_t>(order).subspan(begin, size)));
      begin += size;
    }
    return shards;
  }

  if (spec.shards_per_client == 0) throw ConfigError("shards per client must be positive");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data.labels[a] < data.labels[b]; });
  std::vector<std::size_t> label_begin;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || data.labels[order[i]] != data.labels[order[i - 1]]) {
      label_begin.push_back(i);
      counts.push_back(0);
    }
    ++counts.back();
  }
  const std::size_t total_shards = spec.clients * spec.shards_per_client;
  if (total_shards < counts.size()) {
    throw ConfigError("label-shard partition needs at least " + std::to_string(counts.size()) +
                      " shards (one per label), got " + std::to_string(total_shards));
  }
  if (total_shards > n) {
    throw ConfigError("label-shard partition asks for " + std::to_string(total_shards) + " shards from " +
                      std::to_string(n) + " samples");
  }
  const auto allot = allot_shards(counts, total_shards, n);

  struct Range {
    std::size_t begin, size;
  };
  std::vector<Range> pieces;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    const std::size_t base = counts[l] / allot[l];
    const std::size_t extra = counts[l] % allot[l];
    std::size_t begin = label_begin[l];
    for (std::size_t s = 0; s < allot[l]; ++s) {
      const std::size_t size = base + (s < extra ? 1 : 0);
      pieces.push_back({begin, size});
      begin += size;
    }
  }
  rng.shuffle(std::span<Range>(pieces));
  for (std::size_t c = 0; c < spec.clients; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t s = 0; s < spec.shards_per_client; ++s) {
      const Range& r = pieces[c * spec.shards_per_client + s];
      rows.insert(rows.end(), order.begin() + static_cast<std::ptrdiff_t>(r.begin),
                  order.begin() + static_cast<std::ptrdiff_t>(r.begin + r.size));
    }
    shards.push_back(make_shard(data, c, rows));
  }
  return shards;
}

}  // namespace fedgrow
