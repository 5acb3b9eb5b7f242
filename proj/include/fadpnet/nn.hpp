#pragma once

#include <cstdint>
#include <vector>

#include "fadpnet/graph.hpp"
#include "fadpnet/tensor.hpp"

namespace fadp {

enum class PadMode { Zero, Reflect };

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int groups = 1;
  PadMode pad_mode = PadMode::Zero;
};

inline int64_t conv_out_dim(int64_t in, int k, int stride, int pad) {
  return (in + 2 * static_cast<int64_t>(pad) - k) / stride + 1;
}

// ---- elementwise ----
template <typename T> Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Tape<T>& tp, Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Tape<T>& tp, Var<T> a, T s);
template <typename T> Var<T> mul_scalar(Tape<T>& tp, Var<T> a, T s);
template <typename T> Var<T> sigmoid(Tape<T>& tp, Var<T> a);
template <typename T> Var<T> gelu(Tape<T>& tp, Var<T> a);
template <typename T> Var<T> relu(Tape<T>& tp, Var<T> a);
template <typename T> Var<T> softplus(Tape<T>& tp, Var<T> a);
template <typename T> Var<T> detach(Tape<T>& tp, Var<T> a);
// Multiply by a 1-element tensor (learnable scalar), broadcast over a.
template <typename T> Var<T> scale_by(Tape<T>& tp, Var<T> a, Var<T> scalar);

// ---- shape ----
template <typename T> Var<T> reshape(Tape<T>& tp, Var<T> a, Shape s);
template <typename T> Var<T> concat_channels(Tape<T>& tp, const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(Tape<T>& tp, Var<T> x, int64_t c0, int64_t c1);
// (B,C,H,W) -> (B,H*W,C) and back.
template <typename T> Var<T> to_tokens(Tape<T>& tp, Var<T> x);
template <typename T> Var<T> from_tokens(Tape<T>& tp, Var<T> x, int64_t h, int64_t w);
template <typename T> Var<T> transpose_last2(Tape<T>& tp, Var<T> x);

// ---- linear algebra ----
// x (N,in) * w (out,in)^T + b (out) -> (N,out); also accepts 3-d x (B,L,in).
template <typename T> Var<T> linear(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> matmul(Tape<T>& tp, Var<T> a, Var<T> b);
// (G,n,k) x (G,k,m) -> (G,n,m)
template <typename T> Var<T> bmm(Tape<T>& tp, Var<T> a, Var<T> b);

// ---- reductions / normalization ----
template <typename T> Var<T> global_avg_pool(Tape<T>& tp, Var<T> x);                  // (B,C,H,W)->(B,C)
template <typename T> Var<T> scale_channels(Tape<T>& tp, Var<T> x, Var<T> s);         // x*(B,C) broadcast
template <typename T> Var<T> layer_norm_channels(Tape<T>& tp, Var<T> x, Var<T> gamma, Var<T> beta, T eps);
template <typename T> Var<T> log_softmax_lastdim(Tape<T>& tp, Var<T> x);
template <typename T> Var<T> softmax_lastdim(Tape<T>& tp, Var<T> x);
template <typename T> Var<T> l2_normalize_lastdim(Tape<T>& tp, Var<T> x, T eps);
template <typename T> Var<T> mean_abs_diff(Tape<T>& tp, Var<T> a, Var<T> b);           // L1, scalar
template <typename T> Var<T> sum_all(Tape<T>& tp, Var<T> a);                           // scalar

// ---- convolution ----
// x (B,Cin,H,W), w (Cout,Cin/groups,k,k), b (Cout) or undefined Var for no bias.
template <typename T> Var<T> conv2d(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec);

// ---- resampling ----
template <typename T> Var<T> upsample_nearest2x(Tape<T>& tp, Var<T> x);
// Bilinear warp: offsets (B,2,H,W) with channel 0 = dx (width), 1 = dy (height),
// in pixel units. Samples are border-clamped.
template <typename T> Var<T> warp_bilinear(Tape<T>& tp, Var<T> x, Var<T> offsets);

// ---- sequence ----
// Per-batch row gather: out[b,j,:] = x[b, idx[b][j], :].
template <typename T>
Var<T> gather_tokens(Tape<T>& tp, Var<T> x, const std::vector<std::vector<int64_t>>& idx);

// Selective state-space scan.
//   x, delta: (B,L,C); a_neg: (C,d) negative transition; b_in, c_out, prompts: (B,L,d);
//   skip: (C).  h_i = exp(delta*a) * h_{i-1} + delta*b*x;  y_i = (c+p).h_i + skip*x_i.
// Throws NumericalError naming the step if the state goes nonfinite.
template <typename T>
Var<T> sse_scan(Tape<T>& tp, Var<T> x, Var<T> delta, Var<T> a_neg, Var<T> b_in, Var<T> c_out,
                Var<T> prompts, Var<T> skip);

// ---- non-differentiable helpers ----
template <typename T>
std::vector<std::vector<int64_t>> argmax_lastdim(const Tensor<T>& x);  // (B,L,T) -> per-batch indices

}  // namespace fadp
