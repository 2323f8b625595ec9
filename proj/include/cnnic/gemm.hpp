#pragma once

#include <cstddef>

// Raw-buffer kernels behind matmul and the convolution layers.
namespace cnnic::kernels {

/// C = op(A) * op(B) (+ C when accumulate), all row-major.
/// op(A) is [m,k]: A itself when !trans_a (lda >= k), else A is stored [k,m].
/// op(B) is [k,n]: B itself when !trans_b (ldb >= n), else B is stored [n,k].
/// Blocking is fixed, so the summation order for a given shape never varies.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate);

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, T* cols);

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kh, std::size_t kw, std::size_t stride, T* x);

}  // namespace cnnic::kernels
