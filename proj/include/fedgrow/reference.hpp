#pragma once

// Straightforward serial kernels. They define the expected numerics for the
// optimized kernels in kernels.hpp and serve as the baseline in benchmarks.

#include <cstddef>

#include "fedgrow/kernels.hpp"
#include "fedgrow/layers.hpp"

namespace fedgrow::reference {

void matmul(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

/// Direct nested-loop convolution over NHWC input and (kh, kw, in, out) weights.
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                    const float* bias, float* out);

void conv2d_backward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                     const float* out_grad, float* weight_grad, float* bias_grad, float* input_grad);

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const float* input,
                   const float* weight, const float* bias, float* output);

void maxpool_forward(const kernels::PoolGeometry& g, std::size_t batch, const float* input, float* out);

}  // namespace fedgrow::reference
