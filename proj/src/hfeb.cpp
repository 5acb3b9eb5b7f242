#include "fadpnet/hfeb.hpp"

#include <cmath>

namespace fadp {

namespace {
constexpr double kResidualInitScale = 0.1;
}

template <typename T>
Var<T> channel_shuffle(Tape<T>& tp, Var<T> x, int groups) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "channel_shuffle: rank-4 expected");
  const int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  if (groups == 1) return x;
  FADP_CHECK_SHAPE(c % groups == 0, "channel_shuffle: groups must divide channels");
  const int64_t per = c / groups;
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < c; ++i) {
      const int64_t gi = i / per, wi = i % per;
      const int64_t j = wi * groups + gi;
      std::copy(px + (bi * c + i) * hw, px + (bi * c + i + 1) * hw, po + (bi * c + j) * hw);
    }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, per, hw, groups] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < c; ++i) {
          const int64_t gi = i / per, wi = i % per;
          const int64_t j = wi * groups + gi;
          const T* src = g + (bi * c + j) * hw;
          T* dst = gx + (bi * c + i) * hw;
          for (int64_t k = 0; k < hw; ++k) dst[k] += src[k];
        }
    };
  }
  return Var<T>{nd};
}

// -------------------------------------------------------------------- HFR

template <typename T>
HfrModule<T>::HfrModule(ParamRegistry<T>& reg, const std::string& name, int ch, HfrConfig c,
                        RandomEngine& rng)
    : channels(ch), cfg(c) {
  cfg.validate();
  if ((2 * ch) % cfg.shuffle_groups != 0)
    throw ConfigError("hfr: shuffle_groups must divide the concatenated width");
  ConvSpec da;
  da.pad = cfg.kernel1 / 2;
  da.groups = ch;
  ConvSpec db;
  db.pad = cfg.kernel2 / 2;
  db.groups = ch;
  ConvSpec pw;
  dw_a = Conv2dLayer<T>(reg, name + ".dw_a", ch, ch, cfg.kernel1, da, rng);
  dw_b = Conv2dLayer<T>(reg, name + ".dw_b", ch, ch, cfg.kernel2, db, rng);
  expand = Conv2dLayer<T>(reg, name + ".expand", 2 * ch, 2 * ch, 1, pw, rng);
  reduce = Conv2dLayer<T>(reg, name + ".reduce", 2 * ch, ch, 1, pw, rng, kResidualInitScale);
}

template <typename T>
Var<T> HfrModule<T>::forward_cycle(Tape<T>& tp, Var<T> x) const {
  Var<T> x1 = dw_a.forward(tp, x);
  Var<T> x2 = dw_b.forward(tp, x);
  Var<T> cat = concat_channels(tp, {x1, x2});
  Var<T> e = expand.forward(tp, cat);
  Var<T> sh = cfg.use_shuffle ? channel_shuffle(tp, e, cfg.shuffle_groups) : e;
  return reduce.forward(tp, sh);
}

template <typename T>
Var<T> HfrModule<T>::forward(Tape<T>& tp, Var<T> x) const {
  Var<T> y = x;
  for (int i = 0; i < cfg.cycles; ++i) y = forward_cycle(tp, y);
  return y;
}

template <typename T>
int64_t HfrModule<T>::flops(int64_t h, int64_t w) const {
  const int64_t per_cycle = dw_a.flops(h, w) + dw_b.flops(h, w) + expand.flops(h, w) + reduce.flops(h, w);
  return per_cycle * cfg.cycles;
}

// -------------------------------------------------------------------- DPA

template <typename T>
DpaModule<T>::DpaModule(ParamRegistry<T>& reg, const std::string& name, int ch, DpaConfig c,
                        RandomEngine& rng)
    : channels(ch), cfg(c) {
  cfg.validate();
  if (ch % cfg.heads != 0) throw ConfigError("dpa: heads must divide channels");
  if (cfg.temp_hidden <= 0) cfg.temp_hidden = std::max(4, ch / 2);
  ConvSpec pw;
  ConvSpec dw;
  dw.pad = 1;
  dw.groups = 3 * ch;
  qkv_pw = Conv2dLayer<T>(reg, name + ".qkv_pw", ch, 3 * ch, 1, pw, rng);
  qkv_dw = Conv2dLayer<T>(reg, name + ".qkv_dw", 3 * ch, 3 * ch, 3, dw, rng);
  if (cfg.fixed_temp) {
    temp_const = reg.create(name + ".temp_const", {1});
    temp_const->value.fill(T(1));
  } else {
    temp_fc1 = LinearLayer<T>(reg, name + ".temp_fc1", ch, cfg.temp_hidden, rng);
    temp_fc2 = LinearLayer<T>(reg, name + ".temp_fc2", cfg.temp_hidden, cfg.heads, rng);
    temp_fc2.b->value.fill(T(1));  // attention active from the start
  }
  if (cfg.use_pos) {
    pos_pw1 = Conv2dLayer<T>(reg, name + ".pos_pw1", ch, ch, 1, pw, rng);
    pos_pw2 = Conv2dLayer<T>(reg, name + ".pos_pw2", ch, ch, 1, pw, rng);
  }
  proj = Conv2dLayer<T>(reg, name + ".proj", ch, ch, 1, pw, rng, kResidualInitScale);
}

template <typename T>
Var<T> DpaModule<T>::forward(Tape<T>& tp, Var<T> x) const {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s[1] == channels, "dpa: channel mismatch");
  const int64_t b = s[0], h = s[2], w = s[3], hw = h * w;
  const int64_t heads = cfg.heads, m = channels / heads;

  Var<T> qkv = qkv_dw.forward(tp, qkv_pw.forward(tp, x));
  // Channel attention over tokens; q/k rows are unit-normalized so the score
  // scale is independent of the spatial extent and set by temp alone.
  Var<T> q = l2_normalize_lastdim(
      tp, reshape(tp, slice_channels(tp, qkv, 0, channels), {b * heads, m, hw}), T(1e-12));
  Var<T> k = l2_normalize_lastdim(
      tp, reshape(tp, slice_channels(tp, qkv, channels, 2 * channels), {b * heads, m, hw}),
      T(1e-12));
  Var<T> v = reshape(tp, slice_channels(tp, qkv, 2 * channels, 3 * channels), {b * heads, m, hw});

  Var<T> scores = bmm(tp, q, transpose_last2(tp, k));  // (B*h, m, m)
  {
    const Tensor<T>& sv = scores.val();
    for (int64_t i = 0; i < sv.numel(); ++i)
      if (!std::isfinite(sv[i]))
        throw NumericalError("dpa: nonfinite attention scores in head " +
                             std::to_string((i / (m * m)) % heads));
  }
  Var<T> temp;
  if (cfg.fixed_temp) {
    Var<T> scored = scale_by(tp, scores, tp.param(*temp_const));
    scores = scored;
  } else {
    Var<T> pooled = global_avg_pool(tp, x);  // (B,C)
    temp = temp_fc2.forward(tp, gelu(tp, temp_fc1.forward(tp, pooled)));  // (B,heads)
    Var<T> s4 = reshape(tp, scores, {b, heads, m, m});
    scores = reshape(tp, scale_channels(tp, s4, temp), {b * heads, m, m});
  }
  Var<T> attn = relu(tp, scores);
  Var<T> out = reshape(tp, bmm(tp, attn, v), {b, channels, h, w});
  if (cfg.use_pos) {
    Var<T> pos = pos_pw2.forward(tp, gelu(tp, pos_pw1.forward(tp, x)));
    out = add(tp, out, sigmoid(tp, pos));
  }
  return proj.forward(tp, out);
}

template <typename T>
int64_t DpaModule<T>::flops(int64_t h, int64_t w) const {
  const int64_t hw = h * w;
  const int64_t m = channels / cfg.heads;
  int64_t f = qkv_pw.flops(h, w) + qkv_dw.flops(h, w);
  f += cfg.heads * (2 * m * m * hw) * 2;  // QK^T and attn.V per head
  if (cfg.fixed_temp) {
    // scalar scale, ignored like other elementwise work
  } else {
    f += temp_fc1.flops(1) + temp_fc2.flops(1);
  }
  if (cfg.use_pos) f += pos_pw1.flops(h, w) + pos_pw2.flops(h, w);
  f += proj.flops(h, w);
  return f;
}

// ---------------------------------------------------------- residual block

template <typename T>
ResidualBlock<T>::ResidualBlock(ParamRegistry<T>& reg, const std::string& name, int ch,
                                RandomEngine& rng)
    : channels(ch) {
  ConvSpec c3;
  c3.pad = 1;
  conv1 = Conv2dLayer<T>(reg, name + ".conv1", ch, ch, 3, c3, rng);
  conv2 = Conv2dLayer<T>(reg, name + ".conv2", ch, ch, 3, c3, rng, kResidualInitScale);
}

template <typename T>
Var<T> ResidualBlock<T>::forward(Tape<T>& tp, Var<T> x) const {
  return add(tp, x, conv2.forward(tp, gelu(tp, conv1.forward(tp, x))));
}

template <typename T>
int64_t ResidualBlock<T>::flops(int64_t h, int64_t w) const {
  return conv1.flops(h, w) + conv2.flops(h, w);
}

// ------------------------------------------------------------------- HFEB

template <typename T>
HfebBlock<T>::HfebBlock(ParamRegistry<T>& reg, const std::string& name, int ch,
                        const HfrConfig& hc, const DpaConfig& dc, bool with_hfr, bool with_dpa,
                        RandomEngine& rng)
    : channels(ch), use_hfr(with_hfr), use_dpa(with_dpa) {
  if (ch % 2 != 0) throw ConfigError("hfeb: channel count must be even");
  const int half = ch / 2;
  ConvSpec pw;
  reduce = Conv2dLayer<T>(reg, name + ".reduce", ch, half, 1, pw, rng);
  rb1 = ResidualBlock<T>(reg, name + ".rb1", half, rng);
  if (use_dpa) dpa = DpaModule<T>(reg, name + ".dpa", half, dc, rng);
  rb2 = ResidualBlock<T>(reg, name + ".rb2", half, rng);
  if (use_hfr) hfr = HfrModule<T>(reg, name + ".hfr", half, hc, rng);
  expand = Conv2dLayer<T>(reg, name + ".expand", half, ch, 1, pw, rng, kResidualInitScale);
}

template <typename T>
Var<T> HfebBlock<T>::forward(Tape<T>& tp, Var<T> x) const {
  FADP_CHECK_SHAPE(x.shape()[1] == channels, "hfeb: channel mismatch");
  Var<T> red = reduce.forward(tp, x);
  Var<T> t = rb1.forward(tp, red);
  if (use_dpa) t = add(tp, t, dpa.forward(tp, t));
  t = rb2.forward(tp, t);
  if (use_hfr) t = add(tp, t, hfr.forward(tp, red));
  return add(tp, x, expand.forward(tp, t));
}

template <typename T>
int64_t HfebBlock<T>::flops(int64_t h, int64_t w) const {
  int64_t f = reduce.flops(h, w) + rb1.flops(h, w) + rb2.flops(h, w) + expand.flops(h, w);
  if (use_dpa) f += dpa.flops(h, w);
  if (use_hfr) f += hfr.flops(h, w);
  return f;
}

#define FADP_INSTANTIATE_HFEB(T)                              \
  template Var<T> channel_shuffle(Tape<T>&, Var<T>, int);     \
  template struct HfrModule<T>;                               \
  template struct DpaModule<T>;                               \
  template struct ResidualBlock<T>;                           \
  template struct HfebBlock<T>;

FADP_INSTANTIATE_HFEB(float)
FADP_INSTANTIATE_HFEB(double)

}  // namespace fadp
