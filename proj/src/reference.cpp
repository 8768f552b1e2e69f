#include "fedgrow/reference.hpp"

#include <algorithm>
#include <limits>

namespace fedgrow::reference {

namespace {

bool in_bounds(std::ptrdiff_t v, std::size_t extent) { return v >= 0 && v < static_cast<std::ptrdiff_t>(extent); }

}  // namespace

void matmul(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float sum = 0.0f;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                    const float* bias, float* out) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
          float sum = bias[o];
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
            if (!in_bounds(iy, g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
              if (!in_bounds(ix, g.in_w)) continue;
              for (std::size_t c = 0; c < g.in_c; ++c) {
                const float x = input[((n * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                       static_cast<std::size_t>(ix)) * g.in_c + c];
                sum += x * weight[((ky * g.k_w + kx) * g.in_c + c) * g.out_c + o];
              }
            }
          }
          out[((n * g.out_h + oy) * g.out_w + ox) * g.out_c + o] = sum;
        }
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                     const float* out_grad, float* weight_grad, float* bias_grad, float* input_grad) {
  std::fill(weight_grad, weight_grad + g.k_h * g.k_w * g.in_c * g.out_c, 0.0f);
  std::fill(bias_grad, bias_grad + g.out_c, 0.0f);
  if (input_grad != nullptr) std::fill(input_grad, input_grad + batch * g.in_h * g.in_w * g.in_c, 0.0f);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        for (std::size_t o = 0; o < g.out_c; ++o) {
          const float d = out_grad[((n * g.out_h + oy) * g.out_w + ox) * g.out_c + o];
          bias_grad[o] += d;
          for (std::size_t ky = 0; ky < g.k_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
            if (!in_bounds(iy, g.in_h)) continue;
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
              if (!in_bounds(ix, g.in_w)) continue;
              for (std::size_t c = 0; c < g.in_c; ++c) {
                const std::size_t xi = ((n * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                        static_cast<std::size_t>(ix)) * g.in_c + c;
                const std::size_t wi = ((ky * g.k_w + kx) * g.in_c + c) * g.out_c + o;
                weight_grad[wi] += d * input[xi];
                if (input_grad != nullptr) input_grad[xi] += d * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const float* input, const float* weight,
                   const float* bias, float* output) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      float sum = bias[o];
      for (std::size_t i = 0; i < in; ++i) sum += input[b * in + i] * weight[i * out + o];
      output[b * out + o] = sum;
    }
  }
}

void maxpool_forward(const kernels::PoolGeometry& g, std::size_t batch, const float* input, float* out) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        for (std::size_t c = 0; c < g.c; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          for (std::size_t ky = 0; ky < g.window; ++ky) {
            for (std::size_t kx = 0; kx < g.window; ++kx) {
              best = std::max(best, input[((n * g.in_h + oy * g.stride + ky) * g.in_w + ox * g.stride + kx) * g.c + c]);
            }
          }
          out[((n * g.out_h + oy) * g.out_w + ox) * g.c + c] = best;
        }
      }
    }
  }
}

}  // namespace fedgrow::reference
