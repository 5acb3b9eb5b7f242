#pragma once

#include <utility>
#include <vector>

#include "fadpnet/modules.hpp"

namespace fadp {

// Prompt machinery of the attentive state-space block: a low-rank prompt pool
// (shared basis x block-specific factor) and per-token routing weights.
struct PromptConfig {
  int pool_size = 16;   // T: number of prompts
  int rank = 4;         // r: inner rank, r <= min(T,d)/2
  int state_dim = 16;   // d: hidden states per channel
  double tau = 1.0;     // gumbel temperature

  void validate() const {
    if (!(tau > 0)) throw ConfigError("prompt tau must be > 0");
    if (rank < 1 || rank > std::min(pool_size, state_dim) / 2)
      throw ConfigError("prompt rank must satisfy 1 <= r <= min(T,d)/2");
  }
};

enum class AssbVariant { Full, NoRouting, NoReorder, NoPromptPool, NoLowRank };

// Token order produced by semantic-guided neighboring: forward_index is the
// stable sort of raster positions by routed prompt index; inverse_index undoes it.
struct SemanticPermutation {
  std::vector<int64_t> forward_index;
  std::vector<int64_t> inverse_index;
};

SemanticPermutation make_semantic_permutation(const std::vector<int64_t>& index_keys);

// Gumbel-softmax over log-softmax logits. Hard mode emits straight-through
// one-hot rows; rng == nullptr disables the noise (deterministic argmax path).
template <typename T>
Var<T> gumbel_softmax_routing(Tape<T>& tp, Var<T> logits, T tau, bool hard, RandomEngine* rng);

template <typename T>
struct AssbBlock {
  int channels = 0;
  PromptConfig prompt;
  AssbVariant variant = AssbVariant::Full;

  Conv2dLayer<T> gate_pw;    // 1x1
  Conv2dLayer<T> gate_dw;    // 3x3 depthwise
  LinearLayer<T> route_w;    // C -> T
  Param<T>* pool_a = nullptr;     // (T,r)
  Param<T>* pool_b = nullptr;     // (r,d)
  Param<T>* pool_full = nullptr;  // (T,d), NoLowRank variant only
  LinearLayer<T> dt_proj;    // C -> C
  LinearLayer<T> b_proj;     // C -> d
  LinearLayer<T> c_proj;     // C -> d
  Param<T>* a_raw = nullptr;      // (C,d); transition = -softplus(a_raw)
  Param<T>* skip_d = nullptr;     // (C)
  Conv2dLayer<T> out_proj;   // 1x1

  AssbBlock() = default;
  AssbBlock(ParamRegistry<T>& reg, const std::string& name, int channels, const PromptConfig& pc,
            AssbVariant variant, RandomEngine& rng);

  // Positional gate: F2 = F1 * sigmoid(DWConv3x3(Conv1x1(F1))).
  Var<T> positional_gate(Tape<T>& tp, Var<T> f1) const;

  // Routing: returns (P_m (B,L,T), P (B,L,d)).
  std::pair<Var<T>, Var<T>> route_prompts(Tape<T>& tp, Var<T> tokens, const ForwardCtx<T>& ctx) const;

  Var<T> forward(Tape<T>& tp, Var<T> f1, const ForwardCtx<T>& ctx) const;

  int64_t flops(int64_t h, int64_t w) const;
};

// Gather of (B,L,C) rows along per-batch forward indices.
template <typename T>
Var<T> sgn_unfold(Tape<T>& tp, Var<T> tokens, const std::vector<SemanticPermutation>& perms);

// Inverse scatter back to raster order.
template <typename T>
Var<T> sgn_fold(Tape<T>& tp, Var<T> tokens, const std::vector<SemanticPermutation>& perms);

template <typename T>
struct SebBlock {
  int channels = 0;
  int reduction = 4;
  LinearLayer<T> fc1;
  LinearLayer<T> fc2;

  SebBlock() = default;
  SebBlock(ParamRegistry<T>& reg, const std::string& name, int channels, int reduction,
           RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x) const;
  int64_t flops(int64_t h, int64_t w) const;
};

// Low-frequency enhancement block: LN -> (ASSB, SEB) scaled fusion -> FFN.
template <typename T>
struct LfebBlock {
  int channels = 0;
  LayerNorm2d<T> ln1;
  AssbBlock<T> assb;
  SebBlock<T> seb;
  bool use_seb = true;
  Param<T>* fuse_s1 = nullptr;
  Param<T>* fuse_s2 = nullptr;
  LayerNorm2d<T> ln2;
  Conv2dLayer<T> ffn_expand;
  Conv2dLayer<T> ffn_reduce;

  LfebBlock() = default;
  LfebBlock(ParamRegistry<T>& reg, const std::string& name, int channels, const PromptConfig& pc,
            AssbVariant variant, int seb_reduction, bool use_seb, RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x, const ForwardCtx<T>& ctx) const;
  int64_t flops(int64_t h, int64_t w) const;
};

}  // namespace fadp
