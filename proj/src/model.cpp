#include "fedgrow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fedgrow/error.hpp"
#include "fedgrow/kernels.hpp"

namespace fedgrow {

namespace {

struct LayerCache {
  std::vector<float> input;  // dense input
  std::vector<float> cols;   // conv im2col buffer
  std::vector<std::size_t> argmax;
  std::vector<float> mask;   // dropout scale, or relu output
};

struct Pass {
  std::size_t batch = 0;
  std::vector<FeatureShape> shapes;
  std::vector<LayerCache> caches;
  std::vector<float> logits;  // input of a final softmax
  std::vector<float> output;
};

Shape batch_shape(std::size_t n, const FeatureShape& s) {
  if (s.flat) return {n, s.c};
  return {n, s.h, s.w, s.c};
}

void check_batch(const ModelArch& arch, const Tensor& batch) {
  const FeatureShape& in = arch.input;
  const bool ok = batch.rank() >= 2 && batch.dim(0) > 0 &&
                  (batch.rank() == 4 ? Shape(batch.shape().begin() + 1, batch.shape().end()) ==
                                           Shape{in.h, in.w, in.c}
                                     : batch.size() / batch.dim(0) == in.size() && batch.rank() == 2 && in.flat);
  if (!ok) {
    throw ConfigError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                      shape_string(batch_shape(1, in)) + " (first extent is the batch)");
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, const float* in, float* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = in + r * cols;
    float* y = out + r * cols;
    const float peak = *std::max_element(x, x + cols);
    float total = 0.0f;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
}

Pass run_forward(const ModelArch& arch, const ModelParams& params, const Tensor& batch, Mode mode, Rng& rng,
                 bool keep_cache) {
  check_batch(arch, batch);
  Pass pass;
  pass.batch = batch.dim(0);
  pass.shapes = infer_shapes(arch);
  check_params(arch, params);
  if (keep_cache) pass.caches.resize(arch.layers.size());

  const std::size_t n = pass.batch;
  std::vector<float> act(batch.values().begin(), batch.values().end());
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    const FeatureShape& in = pass.shapes[i];
    const FeatureShape& out_shape = pass.shapes[i + 1];
    std::vector<float> next;
    if (const auto* conv = std::get_if<Conv2D>(&layer)) {
      const ConvGeometry g = conv_geometry(*conv, in);
      const LayerParams& p = params.layers.at(i);
      std::vector<float> cols(n * g.out_h * g.out_w * g.k_h * g.k_w * g.in_c);
      next.resize(n * out_shape.size());
      kernels::conv2d_forward(g, n, act.data(), p.weight.data(), p.bias.data(), cols.data(), next.data());
      if (keep_cache) pass.caches[i].cols = std::move(cols);
    } else if (const auto* dense = std::get_if<Dense>(&layer)) {
      const LayerParams& p = params.layers.at(i);
      next.resize(n * dense->out);
      kernels::dense_forward(n, dense->in, dense->out, act.data(), p.weight.data(), p.bias.data(), next.data());
      if (keep_cache) pass.caches[i].input = act;
    } else if (const auto* pool = std::get_if<MaxPool>(&layer)) {
      const auto g = kernels::pool_geometry(*pool, in);
      next.resize(n * out_shape.size());
      std::vector<std::size_t> argmax(keep_cache ? next.size() : 0);
      kernels::maxpool_forward(g, n, act.data(), next.data(), keep_cache ? argmax.data() : nullptr);
      if (keep_cache) pass.caches[i].argmax = std::move(argmax);
    } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
      next.resize(n * in.c);
      kernels::global_avg_pool_forward(n, in.h, in.w, in.c, act.data(), next.data());
    } else if (const auto* dropout = std::get_if<Dropout>(&layer)) {
      next = std::move(act);
      if (mode == Mode::train && dropout->rate > 0.0f) {
        const float keep_scale = 1.0f / (1.0f - dropout->rate);
        std::vector<float> mask(next.size());
        for (std::size_t k = 0; k < next.size(); ++k) {
          mask[k] = rng.uniform() >= dropout->rate ? keep_scale : 0.0f;
          next[k] *= mask[k];
        }
        if (keep_cache) pass.caches[i].mask = std::move(mask);
      }
    } else if (std::holds_alternative<Relu>(layer)) {
      next = std::move(act);
      for (float& v : next) v = v < 0.0f ? 0.0f : v;
      if (keep_cache) pass.caches[i].mask = next;
    } else if (std::holds_alternative<Softmax>(layer)) {
      next.resize(act.size());
      softmax_rows(n, in.c, act.data(), next.data());
      if (keep_cache && i + 1 == arch.layers.size()) pass.logits = act;
    } else {
      next = std::move(act);  // flatten: NHWC is already (h, w, c) row-major per sample
    }
    act = std::move(next);
  }
  pass.output = std::move(act);
  return pass;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (local_epochs == 0) throw ConfigError("local epochs must be positive");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ConfigError("dropout rate must be in [0, 1)");
}

Tensor forward(const ModelArch& arch, const ModelParams& params, const Tensor& batch, Mode mode, Rng& rng) {
  Pass pass = run_forward(arch, params, batch, mode, rng, false);
  return Tensor(batch_shape(pass.batch, pass.shapes.back()), std::move(pass.output));
}

Tensor forward_eval(const ModelArch& arch, const ModelParams& params, const Tensor& batch) {
  Rng unused(0);
  return forward(arch, params, batch, Mode::eval, unused);
}

float loss_and_gradients(const ModelArch& arch, const ModelParams& params, const Tensor& batch,
                         std::span<const int> labels, Mode mode, Rng& rng, ModelParams& grads, Tensor* input_grad) {
  if (arch.layers.empty() || !std::holds_alternative<Softmax>(arch.layers.back())) {
    throw ConfigError("cross-entropy training requires the model to end in a softmax layer");
  }
  Pass pass = run_forward(arch, params, batch, mode, rng, true);
  const std::size_t n = pass.batch;
  const std::size_t classes = pass.shapes.back().c;
  if (labels.size() != n) {
    throw ConfigError("got " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(n));
  }

  double total = 0.0;
  std::vector<float> grad(n * classes);
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ConfigError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const float* z = pass.logits.data() + r * classes;
    const float peak = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c] - peak));
    total += std::log(sum) - static_cast<double>(z[label] - peak);
    for (std::size_t c = 0; c < classes; ++c) {
      const float target = static_cast<std::size_t>(label) == c ? 1.0f : 0.0f;
      grad[r * classes + c] = (pass.output[r * classes + c] - target) * inv_n;
    }
  }
  const auto loss = static_cast<float>(total / static_cast<double>(n));
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite loss");
  }

  grads = zero_params(arch);
  for (std::size_t i = arch.layers.size() - 1; i-- > 0;) {
    const LayerSpec& layer = arch.layers[i];
    const FeatureShape& in = pass.shapes[i];
    LayerCache& cache = pass.caches[i];
    const bool need_input_grad = i > 0 || input_grad != nullptr;
    std::vector<float> prev;
    if (const auto* conv = std::get_if<Conv2D>(&layer)) {
      const ConvGeometry g = conv_geometry(*conv, in);
      LayerParams& gp = grads.layers.at(i);
      if (need_input_grad) prev.resize(n * in.size());
      kernels::conv2d_backward(g, n, cache.cols.data(), params.layers.at(i).weight.data(), grad.data(),
                               gp.weight.data(), gp.bias.data(), need_input_grad ? prev.data() : nullptr);
    } else if (const auto* dense = std::get_if<Dense>(&layer)) {
      LayerParams& gp = grads.layers.at(i);
      if (need_input_grad) prev.resize(n * dense->in);
      kernels::dense_backward(n, dense->in, dense->out, cache.input.data(), params.layers.at(i).weight.data(),
                              grad.data(), gp.weight.data(), gp.bias.data(), need_input_grad ? prev.data() : nullptr);
    } else if (const auto* pool = std::get_if<MaxPool>(&layer)) {
      prev.resize(n * in.size());
      kernels::maxpool_backward(kernels::pool_geometry(*pool, in), n, grad.data(), cache.argmax.data(), prev.data());
    } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
      prev.resize(n * in.size());
      kernels::global_avg_pool_backward(n, in.h, in.w, in.c, grad.data(), prev.data());
    } else if (std::holds_alternative<Dropout>(layer)) {
      prev = std::move(grad);
      if (!cache.mask.empty()) {
        for (std::size_t k = 0; k < prev.size(); ++k) prev[k] *= cache.mask[k];
      }
    } else if (std::holds_alternative<Relu>(layer)) {
      prev = std::move(grad);
      for (std::size_t k = 0; k < prev.size(); ++k) {
        if (!(cache.mask[k] > 0.0f)) prev[k] = 0.0f;
      }
    } else if (std::holds_alternative<Softmax>(layer)) {
      throw ConfigError("layer " + std::to_string(i) + " (softmax): only a final softmax is supported in training");
    } else {
      prev = std::move(grad);
    }
    grad = std::move(prev);
  }
  if (input_grad != nullptr) {
    *input_grad = Tensor(batch.shape(), std::move(grad));
  }
  return loss;
}

float sgd_step(const ModelArch& arch, ModelParams& params, const Tensor& batch, std::span<const int> labels,
               float learning_rate, Rng& rng) {
  ModelParams grads;
  const float loss = loss_and_gradients(arch, params, batch, labels, Mode::train, rng, grads);
  if (learning_rate != 0.0f) {
    for_each_tensor_pair(params, grads, [learning_rate](Tensor& p, const Tensor& g) {
      float* w = p.data();
      const float* d = g.data();
      for (std::size_t k = 0; k < p.size(); ++k) w[k] -= learning_rate * d[k];
    });
  }
  return loss;
}

StepResult backward_and_step(const ModelArch& arch, const ModelParams& params, const Tensor& batch,
                             std::span<const int> labels, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  StepResult result{params, 0.0f};
  result.loss = sgd_step(arch, result.params, batch, labels, cfg.learning_rate, rng);
  return result;
}

float cross_entropy(const Tensor& probs, std::span<const int> labels) {
  const std::size_t n = probs.dim(0);
  const std::size_t classes = probs.size() / n;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const float p = probs[r * classes + static_cast<std::size_t>(labels[r])];
    total -= std::log(std::max(static_cast<double>(p), 1e-30));
  }
  return static_cast<float>(total / static_cast<double>(n));
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t row = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<float> values(t.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                            t.values().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(values));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t row = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::memcpy(out.data() + r * row, t.data() + rows[r] * row, row * sizeof(float));
  }
  return out;
}

double accuracy(const ModelArch& arch, const ModelParams& params, const Tensor& images, std::span<const int> labels,
                std::size_t batch_size) {
  const std::size_t n = images.dim(0);
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    const Tensor probs = forward_eval(arch, params, slice_rows(images, begin, end));
    const std::size_t classes = probs.size() / probs.dim(0);
    for (std::size_t r = 0; r < end - begin; ++r) {
      const float* row = probs.data() + r * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      if (best == labels[begin + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace fedgrow
