#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fedgrow/layers.hpp"
#include "fedgrow/params.hpp"
#include "fedgrow/rng.hpp"
#include "fedgrow/schedule.hpp"

namespace fedgrow {

/// Index map of a widened layer: output channel j of the wide layer copies
/// channel mapping[j] of the narrow one. counts[q] is how many wide channels
/// copy narrow channel q.
struct WidenMapping {
  std::size_t layer = 0;
  std::vector<std::size_t> mapping;
  std::vector<std::size_t> counts;
};

/// Identity for the first old_width channels, uniform draws for the rest.
WidenMapping make_widen_mapping(std::size_t layer, std::size_t old_width, std::size_t new_width, Rng& rng);

/// Builds a mapping from an explicit index list, validating that the first
/// old_width entries are the identity.
WidenMapping widen_mapping_from(std::size_t layer, std::size_t old_width, std::vector<std::size_t> mapping);

struct Transformed {
  ModelArch arch;
  ModelParams params;
};

struct Widened {
  ModelArch arch;
  ModelParams params;
  WidenMapping mapping;
};

/// Widens a hidden conv or dense layer. Its outputs are copied through the
/// mapping and the consumer's incoming weights are divided by the replication
/// counts, so the eval-mode function is unchanged. Dispatches to
/// widen_through_flatten when the consumer sits behind a flatten.
Widened widen(const ModelArch& arch, const ModelParams& params, std::size_t layer, std::size_t new_width, Rng& rng);
Widened widen(const ModelArch& arch, const ModelParams& params, const WidenMapping& mapping);

/// Widening of a conv whose consumer is a dense layer behind flatten (and
/// possibly pooling): each dense row for spatial position p and channel q is
/// replicated to every widened channel mapped to q.
Widened widen_through_flatten(const ModelArch& arch, const ModelParams& params, std::size_t conv_layer,
                              std::size_t new_channels, Rng& rng);
Widened widen_through_flatten(const ModelArch& arch, const ModelParams& params, const WidenMapping& mapping);

/// Inserts an identity-initialised conv -> relu [-> dropout] block.
Transformed deepen_conv(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t channels,
                        std::size_t kernel, std::optional<float> dropout = std::nullopt);

/// Inserts an identity-initialised dense -> relu [-> dropout] block.
Transformed deepen_dense(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t units,
                         std::optional<float> dropout = std::nullopt);

/// Replaces maxpool(w) by maxpool(factor) then maxpool(w / factor).
Transformed split_pool(const ModelArch& arch, const ModelParams& params, std::size_t position, std::size_t factor);

Transformed apply_step(const ModelArch& arch, const ModelParams& params, const TransformStep& step, Rng& rng);

/// Applies every step of the diff in order.
Transformed apply_diff(const ModelDiff& diff, const ModelArch& arch, const ModelParams& params, Rng& rng);

}  // namespace fedgrow
