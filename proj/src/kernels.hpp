#pragma once

#include <cstddef>

// Raw dense kernels behind the tensor ops. All matrices are row-major.
// Parallel variants split only across independent output elements, and every
// element's reduction order is fixed, so results do not depend on the worker
// count. Reductions that cross the parallel axis (gemm_tn, col_sum) use a
// fixed slab count with an ordered final fold for the same reason.
namespace nesr::kern {

enum class Act { None, Relu, LeakyRelu };

// C[M x N] = A[M x K] * B[K x N], then + bias (optional, length N), then act.
template <class T>
void gemm_nn(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
             std::size_t n, Act act, T slope);

// C[M x N] = A[M x K] * B^T, B stored [N x K].
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// C[M x N] = A^T * B, A stored [K x M], B stored [K x N].
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// Serial single-call variants for small batched products; callers provide
// their own outer parallelism.
template <class T>
void gemm_nn_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

template <class T>
void gemm_nt_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

template <class T>
void gemm_tn_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// out[j] = sum_i a[i x n] over rows.
template <class T>
void col_sum(const T* a, T* out, std::size_t rows, std::size_t n);

template <class T>
void act_forward(const T* x, T* y, std::size_t n, Act act, T slope);

// gpre = g * act'(post); act' evaluated from post-activation values.
template <class T>
void act_backward(const T* g, const T* post, T* gpre, std::size_t n, Act act, T slope);

// Convolution, cross-correlation convention, zero padding, stride 1.
// Shapes: in [ci x d x h x w], kernels [co x ci x kd x kh x kw],
// out [co x d x h x w], pads (kd-1)/2, (kh-1)/2, (kw-1)/2. Rank-2 maps to
// d = 1, kd = 1.
template <class T>
void conv_forward(const T* in, const T* ker, const T* bias, T* out, std::size_t ci,
                  std::size_t co, std::size_t d, std::size_t h, std::size_t w, std::size_t kd,
                  std::size_t kh, std::size_t kw);

template <class T>
void conv_backward_input(const T* gout, const T* ker, T* gin, std::size_t ci, std::size_t co,
                         std::size_t d, std::size_t h, std::size_t w, std::size_t kd,
                         std::size_t kh, std::size_t kw);

template <class T>
void conv_backward_kernel(const T* in, const T* gout, T* gker, T* gbias, std::size_t ci,
                          std::size_t co, std::size_t d, std::size_t h, std::size_t w,
                          std::size_t kd, std::size_t kh, std::size_t kw);

}  // namespace nesr::kern
