#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fadpnet/freqsep.hpp"
#include "fadpnet/hfeb.hpp"
#include "fadpnet/lfeb.hpp"

namespace fadp {

enum class OffsetMode { Learned, None, ZeroWarp, FixedWarp, ConvAlign };

struct ModelConfig {
  int base_channels = 32;
  int levels = 3;
  std::vector<int> lfeb_per_level = {2, 2, 2};
  std::vector<int> hfeb_per_level = {2, 3, 4};
  PromptConfig prompt;
  int seb_reduction = 4;
  HfrConfig hfr;
  DpaConfig dpa;
  LowPassSpec lowpass;

  // ablations
  bool no_hfr = false;
  bool no_dpa = false;
  bool no_seb = false;
  bool swap_branches = false;
  OffsetMode offset_mode = OffsetMode::Learned;
  AssbVariant assb_variant = AssbVariant::Full;
  int hfr_kernel1 = 7;  // Table-style kernel studies: (7,5) default
  int hfr_kernel2 = 5;
  bool hfr_shuffle = true;

  void validate() const;
  int width_at(int level) const { return base_channels << level; }
};

// One dual-path stage: frequency split, LFEB stack on the low part, HFEB
// stack on the high part, additive merge + 1x1 mix.
template <typename T>
struct DualPathStage {
  std::string name;
  int channels = 0;
  bool swap_branches = false;
  LowPassSpec lowpass;
  std::vector<LfebBlock<T>> lfebs;
  std::vector<HfebBlock<T>> hfebs;
  Conv2dLayer<T> merge;

  DualPathStage() = default;
  DualPathStage(ParamRegistry<T>& reg, const std::string& name, int channels, int n_lfeb,
                int n_hfeb, const ModelConfig& cfg, RandomEngine& rng);

  Var<T> forward(Tape<T>& tp, Var<T> x, const ForwardCtx<T>& ctx) const;
  int64_t flops(int64_t h, int64_t w) const;
};

template <typename T>
class FadpNet {
 public:
  FadpNet(const ModelConfig& cfg, uint64_t seed);

  // I_in is the degraded image already upsampled to target resolution,
  // (B,3,H,W) with H, W multiples of 4. Output has the same shape.
  Var<T> forward(Tape<T>& tp, Var<T> image, const ForwardCtx<T>& ctx) const;

  Var<T> predict_offsets(Tape<T>& tp, Var<T> f1) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }
  int64_t param_count() const { return reg_.total_elems(); }
  int64_t flops(int64_t h, int64_t w) const;
  // Per-module FLOPs breakdown at (h, w), batch 1.
  std::vector<std::pair<std::string, int64_t>> flops_breakdown(int64_t h, int64_t w) const;

 private:
  ModelConfig cfg_;
  ParamRegistry<T> reg_;
  Conv2dLayer<T> shallow_;
  DualPathStage<T> enc0_, enc1_, bottleneck_, dec1_, dec0_;
  Conv2dLayer<T> down0_, down1_;
  Conv2dLayer<T> up1_, up0_;        // conv after nearest-2x
  Conv2dLayer<T> skip1_, skip0_;    // 1x1 reduce after skip concat
  Conv2dLayer<T> fusion_;           // 1x1 over concatenated decoder levels
  Conv2dLayer<T> off1_, off2_;      // offset predictor (Learned mode)
  Conv2dLayer<T> align_conv_;       // ConvAlign mode
  Conv2dLayer<T> recon_;
};

// Returns a copy of `cfg` with the named ablation applied. Known flags:
//   baseline, no_hfr, hfr_no_shuffle, hfr_only5, hfr_only7, no_dpa,
//   dpa_fixed_temp, dpa_no_pos, no_seb, swap_branches, no_offsets,
//   offset_zero_warp, offset_fixed_warp, offset_conv_align,
//   assb_no_routing, assb_no_reorder, assb_no_prompt_pool, assb_no_lowrank
ModelConfig make_variant(const ModelConfig& cfg, const std::string& flag);

const std::vector<std::string>& known_ablation_flags();

}  // namespace fadp
