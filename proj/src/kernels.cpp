#include "fedgrow/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedgrow::kernels {

namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

bool worth_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelWork && !omp_in_parallel();
#else
  (void)work;
  return false;
#endif
}

// acc = A[rows x k] * B[k x cols] for one register tile, then C += acc.
inline void gemm_tile(std::size_t rows, std::size_t cols, std::size_t k, const float* a, std::size_t lda,
                      const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  float acc[kTileRows][kTileCols] = {};
  if (rows == kTileRows && cols == kTileCols) {
    const float* a0 = a;
    const float* a1 = a + lda;
    const float* a2 = a + 2 * lda;
    const float* a3 = a + 3 * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = b + p * ldb;
      const float x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
#pragma omp simd
      for (std::size_t j = 0; j < kTileCols; ++j) {
        acc[0][j] += x0 * brow[j];
        acc[1][j] += x1 * brow[j];
        acc[2][j] += x2 * brow[j];
        acc[3][j] += x3 * brow[j];
      }
    }
  } else {
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = b + p * ldb;
      for (std::size_t r = 0; r < rows; ++r) {
        const float x = a[r * lda + p];
        for (std::size_t j = 0; j < cols; ++j) {
          acc[r][j] += x * brow[j];
        }
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      c[r * ldc + j] += acc[r][j];
    }
  }
}

std::vector<float> transposed(std::size_t rows, std::size_t cols, const float* src) {
  std::vector<float> out(rows * cols);
  constexpr std::size_t block = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += block) {
    for (std::size_t j0 = 0; j0 < cols; j0 += block) {
      const std::size_t i1 = std::min(rows, i0 + block);
      const std::size_t j1 = std::min(cols, j0 + block);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) {
          out[j * rows + i] = src[i * cols + j];
        }
      }
    }
  }
  return out;
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  if (m == 0 || n == 0 || k == 0) return;
  const auto tiles = static_cast<std::ptrdiff_t>((m + kTileRows - 1) / kTileRows);
#pragma omp parallel for schedule(static) if (worth_parallel(m * n * k))
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kTileRows;
    const std::size_t rows = std::min(kTileRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
      gemm_tile(rows, std::min(kTileCols, n - j0), k, a + i0 * k, k, b + j0, n, c + i0 * n + j0, n);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const std::vector<float> at = transposed(k, m, a);
  gemm(m, n, k, at.data(), b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
  const std::vector<float> bt = transposed(n, k, b);
  gemm(m, n, k, a, bt.data(), c, accumulate);
}

void im2col(const ConvGeometry& g, std::size_t batch, const float* input, float* cols) {
  const std::size_t patch = g.k_h * g.k_w * g.in_c;
  const auto lines = static_cast<std::ptrdiff_t>(batch * g.out_h);
#pragma omp parallel for schedule(static) if (worth_parallel(batch * g.out_h * g.out_w * patch))
  for (std::ptrdiff_t line = 0; line < lines; ++line) {
    const std::size_t n = static_cast<std::size_t>(line) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(line) % g.out_h;
    const float* sample = input + n * g.in_h * g.in_w * g.in_c;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      float* row = cols + ((n * g.out_h + oy) * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
          float* dst = row + (ky * g.k_w + kx) * g.in_c;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
              ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill(dst, dst + g.in_c, 0.0f);
          } else {
            std::memcpy(dst, sample + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c,
                        g.in_c * sizeof(float));
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::size_t batch, const float* cols, float* input_grad) {
  const std::size_t patch = g.k_h * g.k_w * g.in_c;
  const std::size_t sample_size = g.in_h * g.in_w * g.in_c;
  std::fill(input_grad, input_grad + batch * sample_size, 0.0f);
#pragma omp parallel for schedule(static) if (worth_parallel(batch * g.out_h * g.out_w * patch))
  for (std::ptrdiff_t sn = 0; sn < static_cast<std::ptrdiff_t>(batch); ++sn) {
    const auto n = static_cast<std::size_t>(sn);
    float* sample = input_grad + n * sample_size;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const float* row = cols + ((n * g.out_h + oy) * g.out_w + ox) * patch;
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const float* src = row + (ky * g.k_w + kx) * g.in_c;
            float* dst = sample + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::size_t batch, const float* input, const float* weight,
                    const float* bias, float* cols, float* out) {
  const std::size_t rows = batch * g.out_h * g.out_w;
  const std::size_t patch = g.k_h * g.k_w * g.in_c;
  im2col(g, batch, input, cols);
  gemm(rows, g.out_c, patch, cols, weight, out, false);
  for (std::size_t r = 0; r < rows; ++r) {
    float* o = out + r * g.out_c;
    for (std::size_t c = 0; c < g.out_c; ++c) o[c] += bias[c];
  }
}

void conv2d_backward(const ConvGeometry& g, std::size_t batch, const float* cols, const float* weight,
                     const float* out_grad, float* weight_grad, float* bias_grad, float* input_grad) {
  const std::size_t rows = batch * g.out_h * g.out_w;
  const std::size_t patch = g.k_h * g.k_w * g.in_c;
  gemm_tn(patch, g.out_c, rows, cols, out_grad, weight_grad, false);
  std::fill(bias_grad, bias_grad + g.out_c, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* d = out_grad + r * g.out_c;
    for (std::size_t c = 0; c < g.out_c; ++c) bias_grad[c] += d[c];
  }
  if (input_grad != nullptr) {
    std::vector<float> col_grad(rows * patch);
    gemm_nt(rows, patch, g.out_c, out_grad, weight, col_grad.data(), false);
    col2im(g, batch, col_grad.data(), input_grad);
  }
}

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const float* input, const float* weight,
                   const float* bias, float* output) {
  gemm(batch, out, in, input, weight, output, false);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) output[b * out + o] += bias[o];
  }
}

void dense_backward(std::size_t batch, std::size_t in, std::size_t out, const float* input, const float* weight,
                    const float* out_grad, float* weight_grad, float* bias_grad, float* input_grad) {
  gemm_tn(in, out, batch, input, out_grad, weight_grad, false);
  std::fill(bias_grad, bias_grad + out, 0.0f);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) bias_grad[o] += out_grad[b * out + o];
  }
  if (input_grad != nullptr) {
    gemm_nt(batch, in, out, out_grad, weight, input_grad, false);
  }
}

PoolGeometry pool_geometry(const MaxPool& pool, const FeatureShape& input) {
  return PoolGeometry{input.h,
                      input.w,
                      input.c,
                      pool.window,
                      pool.stride,
                      (input.h - pool.window) / pool.stride + 1,
                      (input.w - pool.window) / pool.stride + 1};
}

void maxpool_forward(const PoolGeometry& g, std::size_t batch, const float* input, float* out, std::size_t* argmax) {
  const std::size_t in_size = g.in_h * g.in_w * g.c;
  const std::size_t out_size = g.out_h * g.out_w * g.c;
  const auto lines = static_cast<std::ptrdiff_t>(batch * g.out_h);
#pragma omp parallel for schedule(static) if (worth_parallel(batch * out_size * g.window * g.window))
  for (std::ptrdiff_t line = 0; line < lines; ++line) {
    const std::size_t n = static_cast<std::size_t>(line) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(line) % g.out_h;
    const float* sample = input + n * in_size;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t c = 0; c < g.c; ++c) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_at = 0;
        for (std::size_t ky = 0; ky < g.window; ++ky) {
          for (std::size_t kx = 0; kx < g.window; ++kx) {
            const std::size_t at = ((oy * g.stride + ky) * g.in_w + ox * g.stride + kx) * g.c + c;
            if (sample[at] > best || (ky == 0 && kx == 0)) {
              best = sample[at];
              best_at = at;
            }
          }
        }
        const std::size_t o = n * out_size + (oy * g.out_w + ox) * g.c + c;
        out[o] = best;
        if (argmax != nullptr) argmax[o] = best_at;
      }
    }
  }
}

void maxpool_backward(const PoolGeometry& g, std::size_t batch, const float* out_grad, const std::size_t* argmax,
                      float* input_grad) {
  const std::size_t in_size = g.in_h * g.in_w * g.c;
  const std::size_t out_size = g.out_h * g.out_w * g.c;
  std::fill(input_grad, input_grad + batch * in_size, 0.0f);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_size; ++o) {
      input_grad[n * in_size + argmax[n * out_size + o]] += out_grad[n * out_size + o];
    }
  }
}

void global_avg_pool_forward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, const float* input,
                             float* out) {
  const float scale = 1.0f / static_cast<float>(h * w);
  for (std::size_t n = 0; n < batch; ++n) {
    float* o = out + n * c;
    std::fill(o, o + c, 0.0f);
    const float* sample = input + n * h * w * c;
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] += sample[p * c + ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= scale;
  }
}

void global_avg_pool_backward(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, const float* out_grad,
                              float* input_grad) {
  const float scale = 1.0f / static_cast<float>(h * w);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        input_grad[(n * h * w + p) * c + ch] = out_grad[n * c + ch] * scale;
      }
    }
  }
}

}  // namespace fedgrow::kernels
