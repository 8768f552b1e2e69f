#pragma once

// OpenMP-parallel compute kernels. Every kernel partitions output elements
// across threads, never a reduction axis, so results are bitwise independent
// of the thread count. Serial counterparts live in reference.hpp.

#include <cstddef>
#include <span>

#include "fedgrow/layers.hpp"

namespace fedgrow::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n], all row-major.
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
          bool accumulate);

/// C[m x n] (+)= A^T * B with A stored as [k x m].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);

/// C[m x n] (+)= A * B^T with B stored as [n x k].
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);

/// Unfolds an NHWC batch into rows of (kh, kw, c) patches:
/// cols is [batch * out_h * out_w, k_h * k_w * in_c].
void im2col(const ConvGeometry& g, std::size_t batch, const float* input, float* cols);

/// Adds patch gradients back into an NHWC input gradient (which it zeroes first).
void col2im(const ConvGeometry& g, std::size_t batch, const float* cols, float* input_grad);

/// out[batch, out_h, out_w, out_c] = conv(input) + bias; cols is scratch of im2col size.
void conv2d_forward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                    const float* bias, float* cols, float* out);

/// Gradients of a convolution given the im2col buffer from the forward pass.
/// input_grad may be null when not needed.
void conv2d_backward(const ConvGeometry& g, std::size_t batch, const float* cols, const float* weight,
                     const float* out_grad, float* weight_grad, float* bias_grad, float* input_grad);

/// out[batch, out] = input[batch, in] * weight[in, out] + bias.
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const float* input,
                   const float* weight, const float* bias, float* output);

void dense_backward(std::size_t batch, std::size_t in, std::size_t out, const float* input,
                    const float* weight, const float* out_grad, float* weight_grad, float* bias_grad,
                    float* input_grad);

struct PoolGeometry {
  std::size_t in_h, in_w, c;
  std::size_t window, stride;
  std::size_t out_h, out_w;
};

PoolGeometry pool_geometry(const MaxPool& pool, const FeatureShape& input);

/// argmax receives the flat input offset (within the sample) of each maximum.
void maxpool_forward(const PoolGeometry& g, std::size_t batch, const float* input, float* out,
                     std::size_t* argmax);

void maxpool_backward(const PoolGeometry& g, std::size_t batch, const float* out_grad,
                      const std::size_t* argmax, float* input_grad);

void global_avg_pool_forward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c,
                             const float* input, float* out);

void global_avg_pool_backward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c,
                              const float* out_grad, float* input_grad);

}  // namespace fedgrow::kernels
