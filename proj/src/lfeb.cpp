#include "fadpnet/lfeb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fadp {

namespace {
// Output projections that feed residual sums start small so a fresh stack is
// near-identity yet every parameter still sees gradient.
constexpr double kResidualInitScale = 0.1;
}  // namespace

SemanticPermutation make_semantic_permutation(const std::vector<int64_t>& keys) {
  const int64_t l = static_cast<int64_t>(keys.size());
  SemanticPermutation perm;
  perm.forward_index.resize(keys.size());
  std::iota(perm.forward_index.begin(), perm.forward_index.end(), 0);
  std::stable_sort(perm.forward_index.begin(), perm.forward_index.end(),
                   [&keys](int64_t a, int64_t b) { return keys[a] < keys[b]; });
  perm.inverse_index.resize(keys.size());
  for (int64_t j = 0; j < l; ++j) perm.inverse_index[perm.forward_index[j]] = j;
  return perm;
}

template <typename T>
Var<T> gumbel_softmax_routing(Tape<T>& tp, Var<T> logits, T tau, bool hard, RandomEngine* rng) {
  if (!(tau > T(0))) throw ConfigError("gumbel_softmax: tau must be > 0");
  Var<T> noisy = logits;
  if (rng) {
    Tensor<T> g(logits.shape());
    for (auto& v : g.data) v = static_cast<T>(rng->gumbel());
    noisy = add(tp, logits, tp.constant(std::move(g)));
  }
  Var<T> soft = softmax_lastdim(tp, mul_scalar(tp, noisy, T(1) / tau));
  if (!hard) return soft;
  // Straight-through: forward value is one-hot, gradient is the soft path's.
  auto idx = argmax_lastdim(soft.val());
  Tensor<T> onehot(soft.shape());
  const int64_t b = soft.shape()[0], l = soft.shape()[1], t = soft.shape()[2];
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < l; ++j) onehot[(bi * l + j) * t + idx[bi][j]] = T(1);
  return add(tp, tp.constant(std::move(onehot)), sub(tp, soft, detach(tp, soft)));
}

template <typename T>
Var<T> sgn_unfold(Tape<T>& tp, Var<T> tokens, const std::vector<SemanticPermutation>& perms) {
  std::vector<std::vector<int64_t>> idx;
  idx.reserve(perms.size());
  for (const auto& p : perms) idx.push_back(p.forward_index);
  return gather_tokens(tp, tokens, idx);
}

template <typename T>
Var<T> sgn_fold(Tape<T>& tp, Var<T> tokens, const std::vector<SemanticPermutation>& perms) {
  std::vector<std::vector<int64_t>> idx;
  idx.reserve(perms.size());
  for (const auto& p : perms) idx.push_back(p.inverse_index);
  return gather_tokens(tp, tokens, idx);
}

// ------------------------------------------------------------------- ASSB

template <typename T>
AssbBlock<T>::AssbBlock(ParamRegistry<T>& reg, const std::string& name, int ch,
                        const PromptConfig& pc, AssbVariant var, RandomEngine& rng)
    : channels(ch), prompt(pc), variant(var) {
  prompt.validate();
  ConvSpec pw;
  pw.pad = 0;
  ConvSpec dw;
  dw.pad = 1;
  dw.groups = ch;
  gate_pw = Conv2dLayer<T>(reg, name + ".gate_pw", ch, ch, 1, pw, rng);
  gate_dw = Conv2dLayer<T>(reg, name + ".gate_dw", ch, ch, 3, dw, rng);
  route_w = LinearLayer<T>(reg, name + ".route", ch, pc.pool_size, rng);
  if (variant == AssbVariant::NoLowRank) {
    pool_full = reg.create(name + ".pool_full", {pc.pool_size, pc.state_dim});
    init_normal(pool_full, rng, 0.02);
  } else {
    pool_a = reg.create(name + ".pool_a", {pc.pool_size, pc.rank});
    pool_b = reg.create(name + ".pool_b", {pc.rank, pc.state_dim});
    init_normal(pool_a, rng, 0.02);
    init_normal(pool_b, rng, 0.02);
  }
  dt_proj = LinearLayer<T>(reg, name + ".dt_proj", ch, ch, rng, 0.1);
  // Bias so softplus(bias) lands in a stable step-size range at init.
  for (int i = 0; i < ch; ++i) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    dt_proj.b->value[i] = static_cast<T>(std::log(std::expm1(dt)));
  }
  b_proj = LinearLayer<T>(reg, name + ".b_proj", ch, pc.state_dim, rng);
  c_proj = LinearLayer<T>(reg, name + ".c_proj", ch, pc.state_dim, rng);
  a_raw = reg.create(name + ".a_raw", {ch, pc.state_dim});
  // softplus(a_raw) spans 1..d, the usual real-valued transition ladder.
  for (int c = 0; c < ch; ++c)
    for (int n = 0; n < pc.state_dim; ++n)
      a_raw->value[static_cast<int64_t>(c) * pc.state_dim + n] =
          static_cast<T>(std::log(std::expm1(static_cast<double>(n + 1))));
  skip_d = reg.create(name + ".skip_d", {ch});
  skip_d->value.fill(T(1));
  out_proj = Conv2dLayer<T>(reg, name + ".proj", ch, ch, 1, pw, rng, kResidualInitScale);
}

template <typename T>
Var<T> AssbBlock<T>::positional_gate(Tape<T>& tp, Var<T> f1) const {
  FADP_CHECK_SHAPE(f1.shape()[1] == channels, "positional_gate: channel mismatch");
  Var<T> g = sigmoid(tp, gate_dw.forward(tp, gate_pw.forward(tp, f1)));
  return mul(tp, f1, g);
}

template <typename T>
std::pair<Var<T>, Var<T>> AssbBlock<T>::route_prompts(Tape<T>& tp, Var<T> tokens,
                                                      const ForwardCtx<T>& ctx) const {
  const int64_t b = tokens.shape()[0], l = tokens.shape()[1];
  const int64_t t = prompt.pool_size, d = prompt.state_dim;
  Var<T> pm;
  if (variant == AssbVariant::NoRouting) {
    pm = tp.constant(Tensor<T>({b, l, t}, T(1) / static_cast<T>(t)));
  } else {
    Var<T> logits = log_softmax_lastdim(tp, route_w.forward(tp, tokens));
    pm = gumbel_softmax_routing(tp, logits, static_cast<T>(prompt.tau), ctx.hard_routing, ctx.rng);
  }
  if (variant == AssbVariant::NoPromptPool) {
    return {pm, tp.constant(Tensor<T>({b, l, d}))};
  }
  Var<T> pool = pool_full ? tp.param(*pool_full)
                          : matmul(tp, tp.param(*pool_a), tp.param(*pool_b));  // (T,d)
  Var<T> p = matmul(tp, reshape(tp, pm, {b * l, t}), pool);
  return {pm, reshape(tp, p, {b, l, d})};
}

template <typename T>
Var<T> AssbBlock<T>::forward(Tape<T>& tp, Var<T> f1, const ForwardCtx<T>& ctx) const {
  const int64_t h = f1.shape()[2], w = f1.shape()[3];
  Var<T> f2 = positional_gate(tp, f1);
  Var<T> tokens = to_tokens(tp, f2);  // (B,L,C)
  auto [pm, p] = route_prompts(tp, tokens, ctx);

  const int64_t b = tokens.shape()[0], l = tokens.shape()[1];
  std::vector<SemanticPermutation> perms;
  perms.reserve(static_cast<size_t>(b));
  if (variant == AssbVariant::NoReorder) {
    SemanticPermutation id;
    id.forward_index.resize(static_cast<size_t>(l));
    std::iota(id.forward_index.begin(), id.forward_index.end(), 0);
    id.inverse_index = id.forward_index;
    perms.assign(static_cast<size_t>(b), id);
  } else {
    auto keys = argmax_lastdim(pm.val());
    for (int64_t bi = 0; bi < b; ++bi) perms.push_back(make_semantic_permutation(keys[bi]));
  }

  Var<T> xs = sgn_unfold(tp, tokens, perms);
  Var<T> ps = sgn_unfold(tp, p, perms);
  Var<T> dt = softplus(tp, dt_proj.forward(tp, xs));
  Var<T> bm = b_proj.forward(tp, xs);
  Var<T> cm = c_proj.forward(tp, xs);
  Var<T> a_neg = mul_scalar(tp, softplus(tp, tp.param(*a_raw)), T(-1));
  Var<T> y = sse_scan(tp, xs, dt, a_neg, bm, cm, ps, tp.param(*skip_d));
  Var<T> folded = sgn_fold(tp, y, perms);
  return out_proj.forward(tp, from_tokens(tp, folded, h, w));
}

template <typename T>
int64_t AssbBlock<T>::flops(int64_t h, int64_t w) const {
  const int64_t l = h * w;
  int64_t f = gate_pw.flops(h, w) + gate_dw.flops(h, w);
  if (variant != AssbVariant::NoRouting) f += route_w.flops(l);
  if (variant != AssbVariant::NoPromptPool) {
    if (!pool_full) f += 2LL * prompt.pool_size * prompt.rank * prompt.state_dim;
    f += 2LL * l * prompt.pool_size * prompt.state_dim;  // P_m . pool
  }
  f += dt_proj.flops(l) + b_proj.flops(l) + c_proj.flops(l);
  // recurrence: ~6 ops per (token, channel, state) plus the skip path
  f += 6LL * l * channels * prompt.state_dim + 2LL * l * channels;
  f += out_proj.flops(h, w);
  return f;
}

// -------------------------------------------------------------------- SEB

template <typename T>
SebBlock<T>::SebBlock(ParamRegistry<T>& reg, const std::string& name, int ch, int red,
                      RandomEngine& rng)
    : channels(ch), reduction(red) {
  if (red >= ch) throw ConfigError("seb: reduction must be < channels");
  if (ch % red != 0) throw ConfigError("seb: channels must be divisible by reduction");
  fc1 = LinearLayer<T>(reg, name + ".fc1", ch, ch / red, rng);
  fc2 = LinearLayer<T>(reg, name + ".fc2", ch / red, ch, rng);
}

template <typename T>
Var<T> SebBlock<T>::forward(Tape<T>& tp, Var<T> x) const {
  Var<T> s = global_avg_pool(tp, x);                       // (B,C)
  Var<T> z = sigmoid(tp, fc2.forward(tp, gelu(tp, fc1.forward(tp, s))));
  return scale_channels(tp, x, z);
}

template <typename T>
int64_t SebBlock<T>::flops(int64_t, int64_t) const {
  return fc1.flops(1) + fc2.flops(1);
}

// ------------------------------------------------------------------- LFEB

template <typename T>
LfebBlock<T>::LfebBlock(ParamRegistry<T>& reg, const std::string& name, int ch,
                        const PromptConfig& pc, AssbVariant variant, int seb_reduction,
                        bool with_seb, RandomEngine& rng)
    : channels(ch), use_seb(with_seb) {
  ln1 = LayerNorm2d<T>(reg, name + ".ln1", ch);
  assb = AssbBlock<T>(reg, name + ".assb", ch, pc, variant, rng);
  if (use_seb) seb = SebBlock<T>(reg, name + ".seb", ch, seb_reduction, rng);
  fuse_s1 = reg.create(name + ".fuse_s1", {1});
  fuse_s1->value.fill(T(1));
  fuse_s2 = reg.create(name + ".fuse_s2", {1});
  fuse_s2->value.fill(T(1));
  ln2 = LayerNorm2d<T>(reg, name + ".ln2", ch);
  ConvSpec pw;
  ffn_expand = Conv2dLayer<T>(reg, name + ".ffn_expand", ch, 2 * ch, 1, pw, rng);
  ffn_reduce = Conv2dLayer<T>(reg, name + ".ffn_reduce", 2 * ch, ch, 1, pw, rng,
                              kResidualInitScale);
}

template <typename T>
Var<T> LfebBlock<T>::forward(Tape<T>& tp, Var<T> x, const ForwardCtx<T>& ctx) const {
  FADP_CHECK_SHAPE(x.shape()[1] == channels, "lfeb: channel mismatch");
  Var<T> u = ln1.forward(tp, x);
  Var<T> mid = add(tp, x, scale_by(tp, assb.forward(tp, u, ctx), tp.param(*fuse_s1)));
  if (use_seb) mid = add(tp, mid, scale_by(tp, seb.forward(tp, u), tp.param(*fuse_s2)));
  Var<T> f = ffn_reduce.forward(tp, gelu(tp, ffn_expand.forward(tp, ln2.forward(tp, mid))));
  return add(tp, mid, f);
}

template <typename T>
int64_t LfebBlock<T>::flops(int64_t h, int64_t w) const {
  int64_t f = assb.flops(h, w);
  if (use_seb) f += seb.flops(h, w);
  f += ffn_expand.flops(h, w) + ffn_reduce.flops(h, w);
  return f;
}

#define FADP_INSTANTIATE_LFEB(T)                                                              \
  template Var<T> gumbel_softmax_routing(Tape<T>&, Var<T>, T, bool, RandomEngine*);           \
  template Var<T> sgn_unfold(Tape<T>&, Var<T>, const std::vector<SemanticPermutation>&);     \
  template Var<T> sgn_fold(Tape<T>&, Var<T>, const std::vector<SemanticPermutation>&);       \
  template struct AssbBlock<T>;                                                               \
  template struct SebBlock<T>;                                                                \
  template struct LfebBlock<T>;

FADP_INSTANTIATE_LFEB(float)
FADP_INSTANTIATE_LFEB(double)

}  // namespace fadp
