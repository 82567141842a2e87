#pragma once

#include <array>
#include <vector>

#include "hquic/autograd.hpp"
#include "hquic/rng.hpp"
#include "hquic/tensor.hpp"

// Differentiable building blocks. All feature ops take NCHW tensors unless
// stated otherwise; scalar results are shape {1}.
namespace hquic::ad {

VarId add(Graph& g, VarId a, VarId b);
VarId sub(Graph& g, VarId a, VarId b);
VarId mul(Graph& g, VarId a, VarId b);
VarId scale(Graph& g, VarId a, double s);
// a + constant tensor (no gradient into the constant)
VarId add_const(Graph& g, VarId a, const Tensor& c);

VarId leaky_relu(Graph& g, VarId x, double slope = 0.01);
VarId sigmoid(Graph& g, VarId x);
VarId sqrt_op(Graph& g, VarId x);
VarId square(Graph& g, VarId x);
VarId log_op(Graph& g, VarId x);  // natural log; inputs must be positive
VarId mean_all(Graph& g, VarId x);
VarId sum_all(Graph& g, VarId x);
// mean((s*(a-b))^2)
VarId mse_scaled(Graph& g, VarId a, VarId b, double s);

// x: (N,C,H,W), w: (O,C,k,k), b: (O)
VarId conv2d(Graph& g, VarId x, VarId w, VarId b, int stride, int pad);
// transposed conv, stride 2, kernel 3, pad 1, output pad 1 (exact 2x upsample)
// w: (C_in, O, 3, 3), b: (O)
VarId deconv2d_s2(Graph& g, VarId x, VarId w, VarId b);

// (N,C,H,W) -> (N,C)
VarId global_avg_pool(Graph& g, VarId x);
// x: (N,F), w: (O,F), b: (O) -> (N,O)
VarId linear(Graph& g, VarId x, VarId w, VarId b);
VarId softmax_lastdim(Graph& g, VarId x);

// orthonormal single-level Haar transform; bands ordered LL, LH, HL, HH
std::array<VarId, 4> haar_dwt(Graph& g, VarId x);
VarId haar_idwt(Graph& g, const std::array<VarId, 4>& bands);

// zero-pad bottom/right to (H+py, W+px); crop undoes it
VarId pad_spatial(Graph& g, VarId x, int py, int px);
VarId crop_spatial(Graph& g, VarId x, int h, int w);
VarId concat_channels(Graph& g, const std::vector<VarId>& xs);

// (N,C,H,W) with H,W multiples of win -> (N*nW, win*win, C)
VarId window_partition(Graph& g, VarId x, int win);
// inverse; (B,T,C) -> (N,C,H,W)
VarId window_merge(Graph& g, VarId x, int win, int n, int c, int h, int w);
// (B,T,C) -> (B*heads, T, C/heads) and back
VarId split_heads(Graph& g, VarId x, int heads);
VarId merge_heads(Graph& g, VarId x, int heads);
// tokenwise linear: x (B,T,C), w (O,C), b (O) -> (B,T,O)
VarId linear_tokens(Graph& g, VarId x, VarId w, VarId b);
// batched matmul: (B,M,K) x (B,K,N) -> (B,M,N)
VarId bmm_nn(Graph& g, VarId a, VarId b);
// (B,M,K) x (B,N,K)^T -> (B,M,N)
VarId bmm_nt(Graph& g, VarId a, VarId b);

// broadcast per-channel vector a (N,C) over x (N,C,H,W): x * a
VarId mul_channel(Graph& g, VarId x, VarId a);

// per-element trimmed mean over all elements of x (sort ascending, drop
// floor(aL*K) lowest / floor(aR*K) highest, mean of the rest)
VarId trimmed_mean_op(Graph& g, VarId x, double alpha_l, double alpha_r);

// (x - A*(1-t)) / t and A*(1-t) + x*t; A is (N,3), x,t are (N,3,H,W)
// per (n,c) plane: average each s x s block and broadcast the mean back
VarId block_avg_op(Graph& g, VarId x, int s);
VarId altc_correct_op(Graph& g, VarId x, VarId a, VarId t);
VarId altc_restore_op(Graph& g, VarId x, VarId a, VarId t);

// parameter initializers
Tensor randn(std::vector<int> shape, Rng& rng, double stddev);
Tensor zeros(std::vector<int> shape);
Tensor full(std::vector<int> shape, double v);

}  // namespace hquic::ad
