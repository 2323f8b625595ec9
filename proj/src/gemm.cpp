#include "cnnic/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace cnnic::kernels {
namespace {

constexpr std::size_t kRegisterBytes = 64;
constexpr std::size_t kMr = 8;
constexpr std::size_t kKc = 384;
constexpr std::size_t kMc = 128;
constexpr std::size_t kNc = 1024;

template <typename T>
struct Traits {
  static constexpr std::size_t lanes = kRegisterBytes / sizeof(T);
  static constexpr std::size_t nr = 2 * lanes;
  typedef T vec __attribute__((vector_size(kRegisterBytes), aligned(sizeof(T))));
};

// Packs op(A)[i0:i0+mc, k0:k0+kc] into kMr-row slivers, zero padded.
template <typename T>
void pack_a(bool trans, const T* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t k0, std::size_t kc, T* out) {
  for (std::size_t i = 0; i < mc; i += kMr) {
    const std::size_t rows = std::min(kMr, mc - i);
    for (std::size_t p = 0; p < kc; ++p) {
      T* dst = out + p * kMr;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t row = i0 + i + r;
        const std::size_t col = k0 + p;
        dst[r] = trans ? a[col * lda + row] : a[row * lda + col];
      }
      for (std::size_t r = rows; r < kMr; ++r) dst[r] = T(0);
    }
    out += kc * kMr;
  }
}

// Packs op(B)[k0:k0+kc, j0:j0+nc] into nr-column slivers, zero padded.
template <typename T>
void pack_b(bool trans, const T* b, std::size_t ldb, std::size_t k0, std::size_t kc,
            std::size_t j0, std::size_t nc, T* out) {
  constexpr std::size_t nr = Traits<T>::nr;
  for (std::size_t j = 0; j < nc; j += nr) {
    const std::size_t cols = std::min(nr, nc - j);
    if (!trans) {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = b + (k0 + p) * ldb + j0 + j;
        T* dst = out + p * nr;
        std::memcpy(dst, src, cols * sizeof(T));
        for (std::size_t c = cols; c < nr; ++c) dst[c] = T(0);
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        T* dst = out + p * nr;
        for (std::size_t c = 0; c < cols; ++c) dst[c] = b[(j0 + j + c) * ldb + k0 + p];
        for (std::size_t c = cols; c < nr; ++c) dst[c] = T(0);
      }
    }
    out += kc * nr;
  }
}

// tile[kMr][nr] = sum_p a_sliver[p][r] * b_sliver[p][c]
template <typename T>
void micro_kernel(std::size_t kc, const T* a, const T* b, T* tile) {
  using V = typename Traits<T>::vec;
  constexpr std::size_t lanes = Traits<T>::lanes;
  static_assert(kMr == 8);
  V c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
  V c40{}, c41{}, c50{}, c51{}, c60{}, c61{}, c70{}, c71{};
  for (std::size_t p = 0; p < kc; ++p) {
    const V b0 = *reinterpret_cast<const V*>(b);
    const V b1 = *reinterpret_cast<const V*>(b + lanes);
    c00 += a[0] * b0;
    c01 += a[0] * b1;
    c10 += a[1] * b0;
    c11 += a[1] * b1;
    c20 += a[2] * b0;
    c21 += a[2] * b1;
    c30 += a[3] * b0;
    c31 += a[3] * b1;
    c40 += a[4] * b0;
    c41 += a[4] * b1;
    c50 += a[5] * b0;
    c51 += a[5] * b1;
    c60 += a[6] * b0;
    c61 += a[6] * b1;
    c70 += a[7] * b0;
    c71 += a[7] * b1;
    a += kMr;
    b += 2 * lanes;
  }
  V* out = reinterpret_cast<V*>(tile);
  out[0] = c00;
  out[1] = c01;
  out[2] = c10;
  out[3] = c11;
  out[4] = c20;
  out[5] = c21;
  out[6] = c30;
  out[7] = c31;
  out[8] = c40;
  out[9] = c41;
  out[10] = c50;
  out[11] = c51;
  out[12] = c60;
  out[13] = c61;
  out[14] = c70;
  out[15] = c71;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t nr = Traits<T>::nr;
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T(0));
  }
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<T> packed_a(kMc * kKc);
  std::vector<T> packed_b(((std::min(n, kNc) + nr - 1) / nr) * nr * kKc);
  alignas(64) T tile[kMr * nr];

  for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
    const std::size_t nc = std::min(kNc, n - j0);
    for (std::size_t k0 = 0; k0 < k; k0 += kKc) {
      const std::size_t kc = std::min(kKc, k - k0);
      pack_b(trans_b, b, ldb, k0, kc, j0, nc, packed_b.data());
      for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
        const std::size_t mc = std::min(kMc, m - i0);
        pack_a(trans_a, a, lda, i0, mc, k0, kc, packed_a.data());
        for (std::size_t j = 0; j < nc; j += nr) {
          const std::size_t cols = std::min(nr, nc - j);
          const T* bp = packed_b.data() + (j / nr) * kc * nr;
          for (std::size_t i = 0; i < mc; i += kMr) {
            const std::size_t rows = std::min(kMr, mc - i);
            micro_kernel(kc, packed_a.data() + (i / kMr) * kc * kMr, bp, tile);
            for (std::size_t r = 0; r < rows; ++r) {
              T* dst = c + (i0 + i + r) * ldc + j0 + j;
              const T* src = tile + r * nr;
              for (std::size_t q = 0; q < cols; ++q) dst[q] += src[q];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, T* cols) {
  const std::size_t out_h = (height - kh) / stride + 1;
  const std::size_t out_w = (width - kw) / stride + 1;
  const std::size_t row_len = channels * kh * kw;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      T* row = cols + (oy * out_w + ox) * row_len;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const T* plane = x + ch * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const T* src = plane + (oy * stride + ky) * width + ox * stride;
          std::copy_n(src, kw, row);
          row += kw;
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kh, std::size_t kw, std::size_t stride, T* x) {
  const std::size_t out_h = (height - kh) / stride + 1;
  const std::size_t out_w = (width - kw) / stride + 1;
  const std::size_t row_len = channels * kh * kw;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const T* row = cols + (oy * out_w + ox) * row_len;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        T* plane = x + ch * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          T* dst = plane + (oy * stride + ky) * width + ox * stride;
          for (std::size_t kx = 0; kx < kw; ++kx) dst[kx] += row[kx];
          row += kw;
        }
      }
    }
  }
}

#define CNNIC_INSTANTIATE(T)                                                                 \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,        \
                        std::size_t, const T*, std::size_t, T*, std::size_t, bool);         \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,     \
                          std::size_t, std::size_t, T*);                                    \
  template void col2im_add<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, \
                              std::size_t, std::size_t, T*);
CNNIC_INSTANTIATE(float)
CNNIC_INSTANTIATE(double)
#undef CNNIC_INSTANTIATE

}  // namespace cnnic::kernels
