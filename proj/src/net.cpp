#include "fadpnet/net.hpp"

#include <algorithm>

namespace fadp {

namespace {
// Unit-gain init for the connective convolutions that chain across the whole
// graph; keeps activation variance flat through the encoder/decoder cascade.
constexpr double kUnitGain = 0.70710678118654752;
}  // namespace

void ModelConfig::validate() const {
  if (levels != 3) throw ConfigError("model: exactly 3 levels are supported");
  if (base_channels < 4 || base_channels % 2 != 0)
    throw ConfigError("model: base_channels must be even and >= 4");
  if (static_cast<int>(lfeb_per_level.size()) != levels ||
      static_cast<int>(hfeb_per_level.size()) != levels)
    throw ConfigError("model: per-level block counts must have one entry per level");
  for (int n : lfeb_per_level)
    if (n < 1) throw ConfigError("model: lfeb_per_level entries must be >= 1");
  for (int n : hfeb_per_level)
    if (n < 1) throw ConfigError("model: hfeb_per_level entries must be >= 1");
  prompt.validate();
  hfr.validate();
  dpa.validate();
  lowpass.validate();
  for (int l = 0; l < levels; ++l) {
    const int w = width_at(l);
    const int trunk = w / 2;
    if (trunk % dpa.heads != 0)
      throw ConfigError("model: dpa heads must divide the trunk width at every level");
    if ((2 * trunk) % hfr.shuffle_groups != 0)
      throw ConfigError("model: hfr shuffle_groups must divide the trunk concat width");
    if (seb_reduction >= w || w % seb_reduction != 0)
      throw ConfigError("model: seb reduction must divide and be smaller than every level width");
  }
}

// -------------------------------------------------------------------- stage

template <typename T>
DualPathStage<T>::DualPathStage(ParamRegistry<T>& reg, const std::string& nm, int ch, int n_lfeb,
                                int n_hfeb, const ModelConfig& cfg, RandomEngine& rng)
    : name(nm), channels(ch), swap_branches(cfg.swap_branches), lowpass(cfg.lowpass) {
  HfrConfig hc = cfg.hfr;
  hc.kernel1 = cfg.hfr_kernel1;
  hc.kernel2 = cfg.hfr_kernel2;
  hc.use_shuffle = cfg.hfr_shuffle;
  for (int i = 0; i < n_lfeb; ++i)
    lfebs.emplace_back(reg, nm + ".lfeb" + std::to_string(i), ch, cfg.prompt, cfg.assb_variant,
                       cfg.seb_reduction, !cfg.no_seb, rng);
  for (int i = 0; i < n_hfeb; ++i)
    hfebs.emplace_back(reg, nm + ".hfeb" + std::to_string(i), ch, hc, cfg.dpa, !cfg.no_hfr,
                       !cfg.no_dpa, rng);
  ConvSpec pw;
  merge = Conv2dLayer<T>(reg, nm + ".merge", ch, ch, 1, pw, rng, kUnitGain);
}

template <typename T>
Var<T> DualPathStage<T>::forward(Tape<T>& tp, Var<T> x, const ForwardCtx<T>& ctx) const {
  auto [f_low, f_high] = split_frequency(tp, x, lowpass);
  Var<T> a = swap_branches ? f_high : f_low;
  Var<T> b = swap_branches ? f_low : f_high;
  for (const auto& blk : lfebs) a = blk.forward(tp, a, ctx);
  for (const auto& blk : hfebs) b = blk.forward(tp, b);
  ctx.maybe_capture(name + ".lfeb_out", a.val());
  ctx.maybe_capture(name + ".hfeb_out", b.val());
  return merge.forward(tp, add(tp, a, b));
}

template <typename T>
int64_t DualPathStage<T>::flops(int64_t h, int64_t w) const {
  // split: one depthwise k x k pass plus the subtraction (counted as conv only)
  int64_t f = 2LL * channels * lowpass.kernel_size * lowpass.kernel_size * h * w;
  for (const auto& blk : lfebs) f += blk.flops(h, w);
  for (const auto& blk : hfebs) f += blk.flops(h, w);
  f += merge.flops(h, w);
  return f;
}

// ---------------------------------------------------------------- network

template <typename T>
FadpNet<T>::FadpNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RandomEngine rng(RandomEngine::mix(seed, 0x6d6f64656c));
  const int c = cfg_.base_channels;
  ConvSpec c3;
  c3.pad = 1;
  ConvSpec pw;
  ConvSpec down;
  down.pad = 1;
  down.stride = 2;

  shallow_ = Conv2dLayer<T>(reg_, "shallow", 3, c, 3, c3, rng, kUnitGain);
  enc0_ = DualPathStage<T>(reg_, "enc0", c, cfg_.lfeb_per_level[0], cfg_.hfeb_per_level[0], cfg_, rng);
  down0_ = Conv2dLayer<T>(reg_, "down0", c, 2 * c, 3, down, rng, kUnitGain);
  enc1_ = DualPathStage<T>(reg_, "enc1", 2 * c, cfg_.lfeb_per_level[1], cfg_.hfeb_per_level[1], cfg_, rng);
  down1_ = Conv2dLayer<T>(reg_, "down1", 2 * c, 4 * c, 3, down, rng, kUnitGain);
  bottleneck_ = DualPathStage<T>(reg_, "bottleneck", 4 * c, cfg_.lfeb_per_level[2],
                                 cfg_.hfeb_per_level[2], cfg_, rng);
  up1_ = Conv2dLayer<T>(reg_, "up1", 4 * c, 2 * c, 3, c3, rng, kUnitGain);
  skip1_ = Conv2dLayer<T>(reg_, "skip1", 4 * c, 2 * c, 1, pw, rng, kUnitGain);
  dec1_ = DualPathStage<T>(reg_, "dec1", 2 * c, cfg_.lfeb_per_level[1], cfg_.hfeb_per_level[1], cfg_, rng);
  up0_ = Conv2dLayer<T>(reg_, "up0", 2 * c, c, 3, c3, rng, kUnitGain);
  skip0_ = Conv2dLayer<T>(reg_, "skip0", 2 * c, c, 1, pw, rng, kUnitGain);
  dec0_ = DualPathStage<T>(reg_, "dec0", c, cfg_.lfeb_per_level[0], cfg_.hfeb_per_level[0], cfg_, rng);
  fusion_ = Conv2dLayer<T>(reg_, "fusion", 7 * c, c, 1, pw, rng, kUnitGain);
  if (cfg_.offset_mode == OffsetMode::Learned) {
    off1_ = Conv2dLayer<T>(reg_, "offsets.conv1", c, c, 3, c3, rng);
    // Zero-initialized head: the offset field starts identically zero.
    off2_ = Conv2dLayer<T>(reg_, "offsets.conv2", c, 2, 3, c3, rng, 0.0);
  } else if (cfg_.offset_mode == OffsetMode::ConvAlign) {
    align_conv_ = Conv2dLayer<T>(reg_, "align_conv", c, c, 3, c3, rng);
  }
  recon_ = Conv2dLayer<T>(reg_, "recon", c, 3, 3, c3, rng, kUnitGain);
}

template <typename T>
Var<T> FadpNet<T>::predict_offsets(Tape<T>& tp, Var<T> f1) const {
  FADP_CHECK_SHAPE(cfg_.offset_mode == OffsetMode::Learned,
                   "predict_offsets: offsets disabled in this configuration");
  return off2_.forward(tp, gelu(tp, off1_.forward(tp, f1)));
}

template <typename T>
Var<T> FadpNet<T>::forward(Tape<T>& tp, Var<T> image, const ForwardCtx<T>& ctx) const {
  const auto& s = image.shape();
  FADP_CHECK_SHAPE(s.size() == 4 && s[1] == 3, "forward: input must be (B,3,H,W)");
  FADP_CHECK_SHAPE(s[2] % 4 == 0 && s[3] % 4 == 0 && s[2] >= 8 && s[3] >= 8,
                   "forward: H and W must be multiples of 4 and >= 8");

  Var<T> f1 = shallow_.forward(tp, image);
  Var<T> e0 = enc0_.forward(tp, f1, ctx);
  Var<T> e1 = enc1_.forward(tp, down0_.forward(tp, e0), ctx);
  Var<T> bt = bottleneck_.forward(tp, down1_.forward(tp, e1), ctx);

  Var<T> u1 = up1_.forward(tp, upsample_nearest2x(tp, bt));
  Var<T> d1 = dec1_.forward(tp, skip1_.forward(tp, concat_channels(tp, {u1, e1})), ctx);
  Var<T> u0 = up0_.forward(tp, upsample_nearest2x(tp, d1));
  Var<T> d0 = dec0_.forward(tp, skip0_.forward(tp, concat_channels(tp, {u0, e0})), ctx);

  Var<T> d1_full = upsample_nearest2x(tp, d1);
  Var<T> bt_full = upsample_nearest2x(tp, upsample_nearest2x(tp, bt));
  Var<T> f2 = fusion_.forward(tp, concat_channels(tp, {d0, d1_full, bt_full}));

  Var<T> f3;
  switch (cfg_.offset_mode) {
    case OffsetMode::Learned:
      f3 = warp_bilinear(tp, f2, predict_offsets(tp, f1));
      break;
    case OffsetMode::None:
      f3 = f2;
      break;
    case OffsetMode::ZeroWarp:
      f3 = warp_bilinear(tp, f2, tp.constant(Tensor<T>({s[0], 2, s[2], s[3]})));
      break;
    case OffsetMode::FixedWarp:
      f3 = warp_bilinear(tp, f2, tp.constant(Tensor<T>({s[0], 2, s[2], s[3]}, T(0.5))));
      break;
    case OffsetMode::ConvAlign:
      f3 = align_conv_.forward(tp, f2);
      break;
  }
  return recon_.forward(tp, add(tp, f1, f3));
}

template <typename T>
std::vector<std::pair<std::string, int64_t>> FadpNet<T>::flops_breakdown(int64_t h, int64_t w) const {
  FADP_CHECK_SHAPE(h % 4 == 0 && w % 4 == 0, "flops: H and W must be multiples of 4");
  const int64_t h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
  std::vector<std::pair<std::string, int64_t>> out;
  out.emplace_back("shallow", shallow_.flops(h, w));
  out.emplace_back("enc0", enc0_.flops(h, w));
  out.emplace_back("down0", down0_.flops(h, w));
  out.emplace_back("enc1", enc1_.flops(h2, w2));
  out.emplace_back("down1", down1_.flops(h2, w2));
  out.emplace_back("bottleneck", bottleneck_.flops(h4, w4));
  out.emplace_back("up1", up1_.flops(h2, w2));
  out.emplace_back("skip1", skip1_.flops(h2, w2));
  out.emplace_back("dec1", dec1_.flops(h2, w2));
  out.emplace_back("up0", up0_.flops(h, w));
  out.emplace_back("skip0", skip0_.flops(h, w));
  out.emplace_back("dec0", dec0_.flops(h, w));
  out.emplace_back("fusion", fusion_.flops(h, w));
  if (cfg_.offset_mode == OffsetMode::Learned)
    out.emplace_back("offsets", off1_.flops(h, w) + off2_.flops(h, w));
  else if (cfg_.offset_mode == OffsetMode::ConvAlign)
    out.emplace_back("align_conv", align_conv_.flops(h, w));
  out.emplace_back("recon", recon_.flops(h, w));
  return out;
}

template <typename T>
int64_t FadpNet<T>::flops(int64_t h, int64_t w) const {
  int64_t total = 0;
  for (const auto& [name, f] : flops_breakdown(h, w)) total += f;
  return total;
}

// ------------------------------------------------------------------ variants

const std::vector<std::string>& known_ablation_flags() {
  static const std::vector<std::string> flags = {
      "baseline",        "no_hfr",           "hfr_no_shuffle",      "hfr_only5",
      "hfr_only7",       "no_dpa",           "dpa_fixed_temp",      "dpa_no_pos",
      "no_seb",          "swap_branches",    "no_offsets",          "offset_zero_warp",
      "offset_fixed_warp", "offset_conv_align", "assb_no_routing",  "assb_no_reorder",
      "assb_no_prompt_pool", "assb_no_lowrank"};
  return flags;
}

ModelConfig make_variant(const ModelConfig& cfg, const std::string& flag) {
  ModelConfig v = cfg;
  if (flag == "baseline") return v;
  if (flag == "no_hfr") {
    v.no_hfr = true;
  } else if (flag == "hfr_no_shuffle") {
    v.hfr_shuffle = false;
  } else if (flag == "hfr_only5") {
    v.hfr_kernel1 = 5;
    v.hfr_kernel2 = 5;
  } else if (flag == "hfr_only7") {
    v.hfr_kernel1 = 7;
    v.hfr_kernel2 = 7;
  } else if (flag == "no_dpa") {
    v.no_dpa = true;
  } else if (flag == "dpa_fixed_temp") {
    v.dpa.fixed_temp = true;
  } else if (flag == "dpa_no_pos") {
    v.dpa.use_pos = false;
  } else if (flag == "no_seb") {
    v.no_seb = true;
  } else if (flag == "swap_branches") {
    v.swap_branches = true;
  } else if (flag == "no_offsets") {
    v.offset_mode = OffsetMode::None;
  } else if (flag == "offset_zero_warp") {
    v.offset_mode = OffsetMode::ZeroWarp;
  } else if (flag == "offset_fixed_warp") {
    v.offset_mode = OffsetMode::FixedWarp;
  } else if (flag == "offset_conv_align") {
    v.offset_mode = OffsetMode::ConvAlign;
  } else if (flag == "assb_no_routing") {
    v.assb_variant = AssbVariant::NoRouting;
  } else if (flag == "assb_no_reorder") {
    v.assb_variant = AssbVariant::NoReorder;
  } else if (flag == "assb_no_prompt_pool") {
    v.assb_variant = AssbVariant::NoPromptPool;
  } else if (flag == "assb_no_lowrank") {
    v.assb_variant = AssbVariant::NoLowRank;
  } else {
    throw ConfigError("unknown ablation flag: " + flag);
  }
  return v;
}

template struct DualPathStage<float>;
template struct DualPathStage<double>;
template class FadpNet<float>;
template class FadpNet<double>;

}  // namespace fadp
