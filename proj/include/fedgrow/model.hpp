#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedgrow/layers.hpp"
#include "fedgrow/params.hpp"
#include "fedgrow/rng.hpp"
#include "fedgrow/tensor.hpp"

namespace fedgrow {

enum class Mode { train, eval };

/// Local optimisation settings. Defaults follow the reference setup
/// (batch 10, one epoch, dropout 0.125); the learning rate is per dataset.
struct TrainConfig {
  float learning_rate = 0.015f;
  std::size_t batch_size = 10;
  std::size_t local_epochs = 1;
  float dropout_rate = 0.125f;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Runs the network on an NHWC batch. The result is the output of the last
/// layer (class probabilities when it is a softmax). In eval mode dropout is
/// the identity and the rng is not touched.
Tensor forward(const ModelArch& arch, const ModelParams& params, const Tensor& batch, Mode mode,
               Rng& rng);

Tensor forward_eval(const ModelArch& arch, const ModelParams& params, const Tensor& batch);

/// Mean sparse categorical cross-entropy over the batch and the gradient of
/// every trainable tensor. The architecture must end in a softmax.
/// input_grad, when non-null, receives d(loss)/d(batch).
float loss_and_gradients(const ModelArch& arch, const ModelParams& params, const Tensor& batch,
                         std::span<const int> labels, Mode mode, Rng& rng, ModelParams& grads,
                         Tensor* input_grad = nullptr);

struct StepResult {
  ModelParams params;
  float loss = 0.0f;  ///< mean loss before the step
};

/// One SGD step on a minibatch.
StepResult backward_and_step(const ModelArch& arch, const ModelParams& params, const Tensor& batch,
                             std::span<const int> labels, const TrainConfig& cfg, Rng& rng);

/// In-place variant used by the training loops.
float sgd_step(const ModelArch& arch, ModelParams& params, const Tensor& batch,
               std::span<const int> labels, float learning_rate, Rng& rng);

/// Mean cross-entropy of already computed probabilities.
float cross_entropy(const Tensor& probs, std::span<const int> labels);

/// Rows [begin, end) of an NHWC or 2-D tensor.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Gathers the given rows of a tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

/// Fraction of correctly classified samples in eval mode.
double accuracy(const ModelArch& arch, const ModelParams& params, const Tensor& images,
                std::span<const int> labels, std::size_t batch_size = 250);

}  // namespace fedgrow
