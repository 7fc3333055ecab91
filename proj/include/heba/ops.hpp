#pragma once

#include <vector>

#include "heba/tensor.hpp"

namespace heba {

// Differentiable free functions over Tensor. All of them validate shapes up
// front and throw ShapeError naming the offending shapes. Results carry a
// backward closure that accumulates into the inputs' gradients.

// Elementwise a + b. b may also be a trailing-suffix broadcast of a (e.g.
// [B,N,D] + [N,D] or [B,N,D] + [D]); its gradient is then summed over the
// broadcast leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape only
Tensor scale(const Tensor& x, double factor);

// [m,k] x [k,n] -> [m,n]. Backward: dA = G B^T, dB = A^T G.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched: [G,m,k] x [G,k,n] -> [G,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // rank-2 convenience for permute

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor slice(const Tensor& x, int axis, Index start, Index length);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Stacks `times` copies of x along a new leading axis; backward sums them.
Tensor tile0(const Tensor& x, Index times);

// Row lookup: out[i,...] = table[ids[i],...]; ids indexes the first axis.
Tensor embedding(const Tensor& table, const std::vector<Index>& ids, Shape id_shape);
// Per-row gather on a [B,K] matrix: out[i,j] = x[i, idx[i*k+j]].
Tensor take_per_row(const Tensor& x, const std::vector<Index>& idx, Index k);

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

// Exact erf-based GELU x * Phi(x); backward uses Phi(x) + x * phi(x).
Tensor gelu(const Tensor& x);
// Standardizes over the last axis (biased variance) then applies the affine
// transform. gamma/beta have shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// Max-subtracted softmax / log-softmax along the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Depthwise 3x3 convolution with zero padding 1 ("same" size), one kernel
// per channel: x [B,C,H,W], k [C,3,3].
Tensor conv2d_depthwise(const Tensor& x, const Tensor& k);
// 1x1 convolution mixing channels only: x [B,C_in,H,W], w [C_out,C_in].
Tensor conv2d_pointwise(const Tensor& x, const Tensor& w);

// Scales each row (last axis) to unit L2 norm.
Tensor l2_normalize(const Tensor& x);

}  // namespace heba
