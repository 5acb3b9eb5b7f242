#pragma once

#include "fadpnet/modules.hpp"

namespace fadp {

struct HfrConfig {
  int cycles = 2;          // recurrence count, shared weights
  int shuffle_groups = 2;  // must divide the working channel count
  int kernel1 = 7;         // parallel depthwise kernel sizes
  int kernel2 = 5;
  bool use_shuffle = true;

  void validate() const {
    if (cycles < 1) throw ConfigError("hfr: cycles must be >= 1");
    if (shuffle_groups < 2) throw ConfigError("hfr: shuffle_groups must be >= 2");
    if (kernel1 % 2 == 0 || kernel2 % 2 == 0) throw ConfigError("hfr: kernels must be odd");
  }
};

struct DpaConfig {
  int heads = 4;
  int temp_hidden = 0;  // 0 = channels/2
  bool fixed_temp = false;
  bool use_pos = true;

  void validate() const {
    if (heads < 1) throw ConfigError("dpa: heads must be >= 1");
  }
};

// Fixed channel permutation: view channels as groups x (C/groups), transpose,
// flatten. Values untouched.
template <typename T>
Var<T> channel_shuffle(Tape<T>& tp, Var<T> x, int groups);

// Recurrent multi-kernel depthwise refinement. One cycle: parallel 7x7/5x5
// depthwise convs, concat, 1x1 expand, channel shuffle, 1x1 reduce. Cycles
// share weights, so cycles=k is the k-fold composition of the cycles=1 map.
template <typename T>
struct HfrModule {
  int channels = 0;
  HfrConfig cfg;
  Conv2dLayer<T> dw_a;    // kernel1 depthwise
  Conv2dLayer<T> dw_b;    // kernel2 depthwise
  Conv2dLayer<T> expand;  // 2C -> 2C
  Conv2dLayer<T> reduce;  // 2C -> C

  HfrModule() = default;
  HfrModule(ParamRegistry<T>& reg, const std::string& name, int channels, HfrConfig cfg,
            RandomEngine& rng);

  Var<T> forward_cycle(Tape<T>& tp, Var<T> x) const;
  Var<T> forward(Tape<T>& tp, Var<T> x) const;
  int64_t flops(int64_t h, int64_t w) const;
};

// Depthwise position-aware attention: transposed (channel) attention per head
// with a learned per-head temperature and a sigmoid-gated positional branch.
template <typename T>
struct DpaModule {
  int channels = 0;
  DpaConfig cfg;
  Conv2dLayer<T> qkv_pw;   // 1x1 C -> 3C
  Conv2dLayer<T> qkv_dw;   // 3x3 depthwise on 3C
  LinearLayer<T> temp_fc1;
  LinearLayer<T> temp_fc2;
  Param<T>* temp_const = nullptr;  // fixed-temperature variant
  Conv2dLayer<T> pos_pw1;
  Conv2dLayer<T> pos_pw2;
  Conv2dLayer<T> proj;

  DpaModule() = default;
  DpaModule(ParamRegistry<T>& reg, const std::string& name, int channels, DpaConfig cfg,
            RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x) const;
  int64_t flops(int64_t h, int64_t w) const;
};

template <typename T>
struct ResidualBlock {
  int channels = 0;
  Conv2dLayer<T> conv1;
  Conv2dLayer<T> conv2;

  ResidualBlock() = default;
  ResidualBlock(ParamRegistry<T>& reg, const std::string& name, int channels, RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x) const;
  int64_t flops(int64_t h, int64_t w) const;
};

// High-frequency enhancement block: 1x1 channel reduce, RB -> DPA -> RB trunk
// with an HFR side path added before the 1x1 expand, outer residual.
template <typename T>
struct HfebBlock {
  int channels = 0;  // block width C (trunk runs at C/2)
  bool use_hfr = true;
  bool use_dpa = true;
  Conv2dLayer<T> reduce;
  ResidualBlock<T> rb1;
  DpaModule<T> dpa;
  ResidualBlock<T> rb2;
  HfrModule<T> hfr;
  Conv2dLayer<T> expand;

  HfebBlock() = default;
  HfebBlock(ParamRegistry<T>& reg, const std::string& name, int channels, const HfrConfig& hc,
            const DpaConfig& dc, bool use_hfr, bool use_dpa, RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x) const;
  int64_t flops(int64_t h, int64_t w) const;
};

}  // namespace fadp
