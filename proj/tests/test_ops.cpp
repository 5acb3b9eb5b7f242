#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fadpnet/nn.hpp"
#include "testutil.hpp"

using namespace fadp;
using testutil::conv2d_oracle;
using testutil::random_tensor;

namespace {

// Scalar loss over an output Var so every op can be driven through backward.
template <typename T>
Var<T> weighted_sum(Tape<T>& tp, Var<T> x, const Tensor<T>& weights) {
  return sum_all(tp, mul(tp, x, tp.constant(weights)));
}

}  // namespace

TEST_CASE("conv2d matches a dense oracle across configs") {
  RandomEngine rng(11);
  struct Cfg {
    int cin, cout, k, stride, pad, groups;
    bool reflect;
  };
  const Cfg cases[] = {
      {3, 5, 3, 1, 1, 1, false}, {4, 4, 3, 1, 1, 4, false}, {4, 8, 3, 2, 1, 1, false},
      {6, 6, 5, 1, 2, 2, false}, {2, 2, 3, 1, 1, 1, true},  {4, 6, 1, 1, 0, 1, false},
      {2, 2, 7, 1, 3, 2, false},
  };
  for (const auto& c : cases) {
    CAPTURE(c.cin);
    CAPTURE(c.k);
    CAPTURE(c.stride);
    Tensor<double> x = random_tensor(rng, {2, c.cin, 9, 8});
    Tensor<double> w = random_tensor(rng, {c.cout, c.cin / c.groups, c.k, c.k});
    Tensor<double> b = random_tensor(rng, {c.cout});
    std::vector<double> bias(b.data.begin(), b.data.end());

    Tape<double> tp(false);
    ConvSpec spec;
    spec.stride = c.stride;
    spec.pad = c.pad;
    spec.groups = c.groups;
    spec.pad_mode = c.reflect ? PadMode::Reflect : PadMode::Zero;
    Var<double> out = conv2d(tp, tp.constant(x), tp.constant(w), tp.constant(b), spec);
    Tensor<double> expect = conv2d_oracle(x, w, bias, c.stride, c.pad, c.groups, c.reflect);
    REQUIRE(shape_eq(out.shape(), expect.shape));
    for (int64_t i = 0; i < expect.numel(); ++i)
      CHECK(out.val()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects undersized inputs with a shape error") {
  Tape<double> tp;
  Tensor<double> x({1, 1, 2, 2});
  Tensor<double> w({1, 1, 3, 3});
  ConvSpec spec;  // pad 0: 2x2 input under a 3x3 kernel
  CHECK_THROWS_AS(conv2d(tp, tp.constant(x), tp.constant(w), Var<double>{}, spec), ShapeError);
}

TEST_CASE("conv2d gradients pass central finite differences") {
  RandomEngine rng(21);
  for (const bool reflect : {false, true}) {
    CAPTURE(reflect);
    ParamRegistry<double> reg;
    Param<double>* w = reg.create("w", {3, 2, 3, 3});
    Param<double>* b = reg.create("b", {3});
    Param<double>* xin = reg.create("x", {2, 2, 6, 5});
    for (auto* p : reg.params())
      for (auto& v : p->value.data) v = rng.uniform(-1, 1);
    Tensor<double> lossw = random_tensor(rng, {2, 3, 6, 5});

    ConvSpec spec;
    spec.pad = 1;
    spec.pad_mode = reflect ? PadMode::Reflect : PadMode::Zero;
    auto loss_value = [&] {
      Tape<double> tp(false);
      Var<double> out = conv2d(tp, tp.constant(xin->value), tp.constant(w->value),
                               tp.constant(b->value), spec);
      return weighted_sum(tp, out, lossw).val()[0];
    };
    auto backward = [&] {
      Tape<double> tp;
      Var<double> out = conv2d(tp, tp.param(*xin), tp.param(*w), tp.param(*b), spec);
      tp.backward(weighted_sum(tp, out, lossw));
    };
    auto rep = testutil::check_gradients(reg, loss_value, backward);
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("elementwise and activation gradients pass finite differences") {
  RandomEngine rng(31);
  ParamRegistry<double> reg;
  Param<double>* a = reg.create("a", {4, 7});
  Param<double>* b = reg.create("b", {4, 7});
  for (auto* p : reg.params())
    for (auto& v : p->value.data) v = rng.uniform(-2, 2);
  Tensor<double> lw = random_tensor(rng, {4, 7});

  auto build = [&](Tape<double>& tp, Var<double> va, Var<double> vb) {
    Var<double> t = add(tp, mul(tp, sigmoid(tp, va), gelu(tp, vb)), softplus(tp, sub(tp, va, vb)));
    t = add(tp, t, relu(tp, mul_scalar(tp, va, 0.7)));
    return weighted_sum(tp, t, lw);
  };
  auto loss_value = [&] {
    Tape<double> tp(false);
    return build(tp, tp.constant(a->value), tp.constant(b->value)).val()[0];
  };
  auto backward = [&] {
    Tape<double> tp;
    tp.backward(build(tp, tp.param(*a), tp.param(*b)));
  };
  auto rep = testutil::check_gradients(reg, loss_value, backward);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("linear, matmul, bmm, softmax gradients pass finite differences") {
  RandomEngine rng(41);
  ParamRegistry<double> reg;
  Param<double>* x = reg.create("x", {3, 5});
  Param<double>* w = reg.create("w", {4, 5});
  Param<double>* b = reg.create("b", {4});
  Param<double>* m = reg.create("m", {4, 6});
  Param<double>* bm = reg.create("bm", {2, 3, 4});
  Param<double>* bn = reg.create("bn", {2, 4, 3});
  for (auto* p : reg.params())
    for (auto& v : p->value.data) v = rng.uniform(-1, 1);
  Tensor<double> lw1 = random_tensor(rng, {3, 6});
  Tensor<double> lw2 = random_tensor(rng, {2, 3, 3});

  auto build = [&](Tape<double>& tp, bool params) {
    auto P = [&](Param<double>& p) { return params ? tp.param(p) : tp.constant(p.value); };
    Var<double> lin = linear(tp, P(*x), P(*w), P(*b));          // (3,4)
    Var<double> sm = softmax_lastdim(tp, log_softmax_lastdim(tp, lin));
    Var<double> mm = matmul(tp, sm, P(*m));                     // (3,6)
    Var<double> bb = bmm(tp, P(*bm), P(*bn));                   // (2,3,3)
    return add(tp, weighted_sum(tp, mm, lw1), weighted_sum(tp, bb, lw2));
  };
  auto loss_value = [&] {
    Tape<double> tp(false);
    return build(tp, false).val()[0];
  };
  auto backward = [&] {
    Tape<double> tp;
    tp.backward(build(tp, true));
  };
  auto rep = testutil::check_gradients(reg, loss_value, backward);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("layer norm, pooling, channel scaling gradients pass finite differences") {
  RandomEngine rng(51);
  ParamRegistry<double> reg;
  Param<double>* x = reg.create("x", {2, 6, 3, 4});
  Param<double>* g = reg.create("g", {6});
  Param<double>* be = reg.create("be", {6});
  for (auto* p : reg.params())
    for (auto& v : p->value.data) v = rng.uniform(-1, 1);
  g->value.fill(1.2);
  Tensor<double> lw = random_tensor(rng, {2, 6, 3, 4});

  auto build = [&](Tape<double>& tp, bool params) {
    auto P = [&](Param<double>& p) { return params ? tp.param(p) : tp.constant(p.value); };
    Var<double> ln = layer_norm_channels(tp, P(*x), P(*g), P(*be), 1e-6);
    Var<double> pooled = sigmoid(tp, global_avg_pool(tp, ln));  // (2,6)
    Var<double> scaled = scale_channels(tp, ln, pooled);
    return weighted_sum(tp, scaled, lw);
  };
  auto loss_value = [&] {
    Tape<double> tp(false);
    return build(tp, false).val()[0];
  };
  auto backward = [&] {
    Tape<double> tp;
    tp.backward(build(tp, true));
  };
  auto rep = testutil::check_gradients(reg, loss_value, backward);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("sse_scan matches a hand recurrence and passes finite differences") {
  // Hand oracle: d=1, C=1, L=4, fixed values, float64 loop.
  SUBCASE("scalar toy sequence") {
    Tape<double> tp(false);
    Tensor<double> x({1, 4, 1});
    x.data = {0.5, -1.0, 2.0, 0.25};
    Tensor<double> dt({1, 4, 1});
    dt.data = {0.1, 0.2, 0.3, 0.4};
    Tensor<double> a({1, 1});
    a[0] = -1.5;
    Tensor<double> bm({1, 4, 1});
    bm.data = {1.0, 0.5, -0.5, 2.0};
    Tensor<double> cm({1, 4, 1});
    cm.data = {1.0, 1.0, -1.0, 0.5};
    Tensor<double> pm({1, 4, 1});  // prompts = 0
    Tensor<double> d({1});
    d[0] = 0.7;

    Var<double> y = sse_scan(tp, tp.constant(x), tp.constant(dt), tp.constant(a), tp.constant(bm),
                             tp.constant(cm), tp.constant(pm), tp.constant(d));
    double h = 0;
    for (int i = 0; i < 4; ++i) {
      const double abar = std::exp(dt.data[i] * a[0]);
      h = abar * h + dt.data[i] * bm.data[i] * x.data[i];
      const double expect = cm.data[i] * h + d[0] * x.data[i];
      CHECK(y.val()[i] == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  SUBCASE("skip-only when b is zero") {
    RandomEngine rng(61);
    Tape<double> tp(false);
    Tensor<double> x = random_tensor(rng, {2, 5, 3});
    Tensor<double> dt = random_tensor(rng, {2, 5, 3}, 0.01, 0.5);
    Tensor<double> a = random_tensor(rng, {3, 4}, -2, -0.1);
    Tensor<double> bm({2, 5, 4});  // zero: state never charges
    Tensor<double> cm = random_tensor(rng, {2, 5, 4});
    Tensor<double> pm = random_tensor(rng, {2, 5, 4});
    Tensor<double> d = random_tensor(rng, {3});
    Var<double> y = sse_scan(tp, tp.constant(x), tp.constant(dt), tp.constant(a), tp.constant(bm),
                             tp.constant(cm), tp.constant(pm), tp.constant(d));
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t i = 0; i < 5; ++i)
        for (int64_t c = 0; c < 3; ++c)
          CHECK(y.val().at3(b, i, c) == doctest::Approx(d[c] * x.at3(b, i, c)).epsilon(1e-14));
  }

  SUBCASE("finite differences over all scan inputs") {
    RandomEngine rng(71);
    ParamRegistry<double> reg;
    Param<double>* x = reg.create("x", {2, 6, 3});
    Param<double>* dt = reg.create("dt", {2, 6, 3});
    Param<double>* a = reg.create("a", {3, 4});
    Param<double>* bm = reg.create("bm", {2, 6, 4});
    Param<double>* cm = reg.create("cm", {2, 6, 4});
    Param<double>* pm = reg.create("pm", {2, 6, 4});
    Param<double>* d = reg.create("d", {3});
    for (auto* p : reg.params())
      for (auto& v : p->value.data) v = rng.uniform(-1, 1);
    for (auto& v : dt->value.data) v = rng.uniform(0.05, 0.6);
    for (auto& v : a->value.data) v = rng.uniform(-2.0, -0.2);
    Tensor<double> lw = random_tensor(rng, {2, 6, 3});

    auto build = [&](Tape<double>& tp, bool params) {
      auto P = [&](Param<double>& p) { return params ? tp.param(p) : tp.constant(p.value); };
      Var<double> y = sse_scan(tp, P(*x), P(*dt), P(*a), P(*bm), P(*cm), P(*pm), P(*d));
      return weighted_sum(tp, y, lw);
    };
    auto loss_value = [&] {
      Tape<double> tp(false);
      return build(tp, false).val()[0];
    };
    auto backward = [&] {
      Tape<double> tp;
      tp.backward(build(tp, true));
    };
    auto rep = testutil::check_gradients(reg, loss_value, backward);
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 2e-6);
  }

  SUBCASE("nonfinite state names the offending step") {
    Tape<double> tp(false);
    Tensor<double> x({1, 3, 1}, 1.0);
    x.data[1] = 1e308;
    Tensor<double> dt({1, 3, 1}, 1e6);
    Tensor<double> a({1, 1});
    a[0] = -1e-9;
    Tensor<double> bm({1, 3, 1}, 1e308);
    Tensor<double> cm({1, 3, 1}, 1.0);
    Tensor<double> pm({1, 3, 1});
    Tensor<double> d({1});
    CHECK_THROWS_WITH_AS(sse_scan(tp, tp.constant(x), tp.constant(dt), tp.constant(a),
                                  tp.constant(bm), tp.constant(cm), tp.constant(pm),
                                  tp.constant(d)),
                         doctest::Contains("step"), NumericalError);
  }
}

TEST_CASE("warp_bilinear identities and gradients") {
  RandomEngine rng(81);
  SUBCASE("zero offsets are a bit-exact identity") {
    Tensor<double> x = random_tensor(rng, {2, 3, 5, 6});
    Tape<double> tp(false);
    Var<double> out = warp_bilinear(tp, tp.constant(x), tp.constant(Tensor<double>({2, 2, 5, 6})));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.val()[i] == x[i]);
  }
  SUBCASE("integer +1 shift with clamped edge") {
    // ramp along x; dx=+1 shifts left neighbor in, last column clamps
    Tensor<double> x({1, 1, 2, 4});
    for (int64_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i % 4);
    Tensor<double> off({1, 2, 2, 4});
    for (int64_t i = 0; i < 8; ++i) off[i] = 1.0;  // dx channel
    Tape<double> tp(false);
    Var<double> out = warp_bilinear(tp, tp.constant(x), tp.constant(off));
    for (int64_t r = 0; r < 2; ++r) {
      CHECK(out.val().at4(0, 0, r, 0) == 1.0);
      CHECK(out.val().at4(0, 0, r, 1) == 2.0);
      CHECK(out.val().at4(0, 0, r, 2) == 3.0);
      CHECK(out.val().at4(0, 0, r, 3) == 3.0);  // clamped
    }
  }
  SUBCASE("linearity in the source for fixed offsets") {
    Tensor<double> f = random_tensor(rng, {1, 2, 6, 6});
    Tensor<double> g = random_tensor(rng, {1, 2, 6, 6});
    Tensor<double> off = random_tensor(rng, {1, 2, 6, 6}, -1.5, 1.5);
    auto warp_of = [&](const Tensor<double>& src) {
      Tape<double> tp(false);
      return warp_bilinear(tp, tp.constant(src), tp.constant(off)).val();
    };
    Tensor<double> combo(f.shape);
    for (int64_t i = 0; i < f.numel(); ++i) combo[i] = 2.0 * f[i] - 0.5 * g[i];
    const Tensor<double> wf = warp_of(f), wg = warp_of(g), wc = warp_of(combo);
    for (int64_t i = 0; i < f.numel(); ++i)
      CHECK(wc[i] == doctest::Approx(2.0 * wf[i] - 0.5 * wg[i]).epsilon(1e-9));
  }
  SUBCASE("gradients to source and offsets at off-grid positions") {
    ParamRegistry<double> reg;
    Param<double>* x = reg.create("x", {1, 2, 5, 5});
    Param<double>* off = reg.create("off", {1, 2, 5, 5});
    for (auto& v : x->value.data) v = rng.uniform(-1, 1);
    for (auto& v : off->value.data) v = rng.uniform(0.1, 0.4);  // keep off integer grid
    Tensor<double> lw = random_tensor(rng, {1, 2, 5, 5});
    auto build = [&](Tape<double>& tp, bool params) {
      auto P = [&](Param<double>& p) { return params ? tp.param(p) : tp.constant(p.value); };
      return weighted_sum(tp, warp_bilinear(tp, P(*x), P(*off)), lw);
    };
    auto loss_value = [&] {
      Tape<double> tp(false);
      return build(tp, false).val()[0];
    };
    auto backward = [&] {
      Tape<double> tp;
      tp.backward(build(tp, true));
    };
    auto rep = testutil::check_gradients(reg, loss_value, backward);
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("structural ops: tokens, gather, concat, slice, shuffle-ready transpose") {
  RandomEngine rng(91);
  Tensor<double> x = random_tensor(rng, {2, 3, 4, 5});
  Tape<double> tp(false);
  Var<double> vx = tp.constant(x);

  SUBCASE("to_tokens and from_tokens invert each other") {
    Var<double> tok = to_tokens(tp, vx);
    Var<double> back = from_tokens(tp, tok, 4, 5);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.val()[i] == x[i]);
  }
  SUBCASE("gather by a permutation then its inverse restores the input") {
    Var<double> tok = to_tokens(tp, vx);
    std::vector<std::vector<int64_t>> fwd(2), inv(2);
    for (int b = 0; b < 2; ++b) {
      fwd[b].resize(20);
      inv[b].resize(20);
      for (int64_t i = 0; i < 20; ++i) fwd[b][i] = i;
      for (int64_t i = 19; i > 0; --i) std::swap(fwd[b][i], fwd[b][rng.randint(i + 1)]);
      for (int64_t i = 0; i < 20; ++i) inv[b][fwd[b][i]] = i;
    }
    Var<double> g1 = gather_tokens(tp, tok, fwd);
    Var<double> g2 = gather_tokens(tp, g1, inv);
    for (int64_t i = 0; i < tok.val().numel(); ++i) CHECK(g2.val()[i] == tok.val()[i]);
  }
  SUBCASE("concat then slice restores the parts") {
    Tensor<double> y = random_tensor(rng, {2, 2, 4, 5});
    Var<double> vy = tp.constant(y);
    Var<double> cat = concat_channels(tp, {vx, vy});
    Var<double> sx = slice_channels(tp, cat, 0, 3);
    Var<double> sy = slice_channels(tp, cat, 3, 5);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(sx.val()[i] == x[i]);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(sy.val()[i] == y[i]);
  }
  SUBCASE("upsample_nearest2x repeats pixels and its backward sums") {
    Var<double> up = upsample_nearest2x(tp, vx);
    CHECK(up.shape() == Shape({2, 3, 8, 10}));
    CHECK(up.val().at4(1, 2, 7, 9) == x.at4(1, 2, 3, 4));
    CHECK(up.val().at4(1, 2, 6, 8) == x.at4(1, 2, 3, 4));
  }
}
