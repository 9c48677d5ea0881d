#pragma once

#include <vector>

#include "nesr/tape.hpp"
#include "nesr/tensor.hpp"

// Differentiable tensor operations. Every op is a pure function of its
// inputs; when an input is tracked on a tape the op records a node whose
// backward rule distributes the output gradient to the inputs. Mixing inputs
// from two different tapes is a usage error.
namespace nesr {

enum class Act { None, Relu, LeakyRelu };

enum class SpiOrientation { Vertical, Horizontal };

// When enabled, every op verifies its output is finite and throws DomainError
// otherwise. Meant for tests; off by default.
void set_check_finite(bool on);
bool check_finite_enabled();

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Matrix product. Rank 2 x 2 gives the plain product; rank 3 x 3 with equal
// leading extents multiplies batch-wise.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a^T * b for 2-d a [K x M], b [K x N].
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// Batch-wise a * b^T for a [B x M x K], b [B x N x K].
template <class T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b);

// y = act(x * w + bias) for x [N x In], w [In x Out], bias [Out].
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Act act = Act::None, T slope = T(0));

template <class T>
Tensor<T> transpose(const Tensor<T>& a);

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> shape);

// (A x B x C) -> (B x A x C).
template <class T>
Tensor<T> permute_102(const Tensor<T>& a);

// [N x Ca] ++ [N x Cb] -> [N x (Ca+Cb)].
template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

// Two equal-shape tensors -> one with a new leading axis of extent 2.
template <class T>
Tensor<T> stack_pair(const Tensor<T>& a, const Tensor<T>& b);

// x -> n copies along a new leading axis.
template <class T>
Tensor<T> repeat_leading(const Tensor<T>& a, std::size_t n);

// Cross-correlation with zero padding that preserves spatial extents.
// rank 2: input [Ci x H x W], kernels [Co x Ci x k x k];
// rank 3: input [Ci x D x H x W], kernels [Co x Ci x k x k x k].
// The kernel extent must be odd and padding must equal (k-1)/2.
template <class T>
Tensor<T> convolve(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                   int rank, std::size_t padding);

// Per-row linear interpolation of [S x Lin] onto target_len samples with the
// endpoints-aligned convention: output j reads source position
// j*(Lin-1)/(target_len-1); target_len == 1 reads index 0.
template <class T>
Tensor<T> resize_linear(const Tensor<T>& profile, std::size_t target_len);

// Per-row linear sample of [S x Lin] at arbitrary positions in [0, Lin-1].
template <class T>
Tensor<T> profile_sample(const Tensor<T>& profile, const std::vector<double>& positions);

// One SPI branch: for each spectral profile slice of m_in [F x H x W]
// (columns for Vertical, rows for Horizontal), linearly resamples the
// F-profile of every pixel at `positions` and reassembles [L x H x W].
// Both orientations produce identical values; they are kept separate because
// the construction is slice-wise.
template <class T>
Tensor<T> spi_branch(const Tensor<T>& m_in, const std::vector<double>& positions,
                     SpiOrientation orientation);

// Softmax over the last axis with max-subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits);

template <class T>
Tensor<T> activate(const Tensor<T>& x, Act act, T slope = T(0.01));

template <class T>
Tensor<T> sum(const Tensor<T>& x);

template <class T>
Tensor<T> mean(const Tensor<T>& x);

// Mean relative absolute error mean(|pred - target| / (target + eps)).
// target is a constant; the gradient flows to pred only, with subgradient 0
// at pred == target.
template <class T>
Tensor<T> mrae(const Tensor<T>& pred, const Tensor<T>& target, T eps);

// Uniform interpolation positions for resize_linear semantics.
std::vector<double> uniform_positions(std::size_t source_len, std::size_t target_len);

}  // namespace nesr
