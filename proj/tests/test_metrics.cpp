#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "fadpnet/metrics.hpp"
#include "fadpnet/profiler.hpp"
#include "testutil.hpp"

using namespace fadp;
using testutil::random_tensor;

namespace {

Tensor<double> random_image(RandomEngine& rng, int64_t h, int64_t w) {
  Tensor<double> img({3, h, w});
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

// closed-form parameter arithmetic, written as a spreadsheet would be
int64_t conv_p(int64_t cin, int64_t cout, int64_t k) { return cin * cout * k * k + cout; }
int64_t dw_p(int64_t c, int64_t k) { return c * k * k + c; }
int64_t lin_p(int64_t i, int64_t o) { return i * o + o; }

int64_t expected_params(const ModelConfig& cfg) {
  const int64_t T = cfg.prompt.pool_size, r = cfg.prompt.rank, d = cfg.prompt.state_dim;
  auto assb = [&](int64_t c) {
    return conv_p(c, c, 1) + dw_p(c, 3) + lin_p(c, T) + T * r + r * d + lin_p(c, c) +
           lin_p(c, d) + lin_p(c, d) + c * d + c + conv_p(c, c, 1);
  };
  auto lfeb = [&](int64_t c) {
    const int64_t seb = lin_p(c, c / cfg.seb_reduction) + lin_p(c / cfg.seb_reduction, c);
    return 2 * c + assb(c) + seb + 1 + 1 + 2 * c + conv_p(c, 2 * c, 1) + conv_p(2 * c, c, 1);
  };
  auto hfeb = [&](int64_t c) {
    const int64_t w = c / 2;
    const int64_t th = w / 2;
    const int64_t rb = 2 * conv_p(w, w, 3);
    const int64_t dpa = conv_p(w, 3 * w, 1) + dw_p(3 * w, 3) + lin_p(w, th) +
                        lin_p(th, cfg.dpa.heads) + 2 * conv_p(w, w, 1) + conv_p(w, w, 1);
    const int64_t hfr = dw_p(w, cfg.hfr_kernel1) + dw_p(w, cfg.hfr_kernel2) +
                        conv_p(2 * w, 2 * w, 1) + conv_p(2 * w, w, 1);
    return conv_p(c, w, 1) + 2 * rb + dpa + hfr + conv_p(w, c, 1);
  };
  auto stage = [&](int64_t c, int nl, int nh) {
    return nl * lfeb(c) + nh * hfeb(c) + conv_p(c, c, 1);
  };
  const int64_t c = cfg.base_channels;
  int64_t total = conv_p(3, c, 3);                                         // shallow
  total += 2 * stage(c, cfg.lfeb_per_level[0], cfg.hfeb_per_level[0]);     // enc0 + dec0
  total += 2 * stage(2 * c, cfg.lfeb_per_level[1], cfg.hfeb_per_level[1]); // enc1 + dec1
  total += stage(4 * c, cfg.lfeb_per_level[2], cfg.hfeb_per_level[2]);     // bottleneck
  total += conv_p(c, 2 * c, 3) + conv_p(2 * c, 4 * c, 3);                  // down convs
  total += conv_p(4 * c, 2 * c, 3) + conv_p(4 * c, 2 * c, 1);              // up1 + skip1
  total += conv_p(2 * c, c, 3) + conv_p(2 * c, c, 1);                      // up0 + skip0
  total += conv_p(7 * c, c, 1);                                            // fusion
  total += conv_p(c, c, 3) + conv_p(c, 2, 3);                              // offsets
  total += conv_p(c, 3, 3);                                                // recon
  return total;
}

}  // namespace

TEST_CASE("l1 loss") {
  RandomEngine rng(51);
  Tensor<double> a = random_image(rng, 12, 12);
  CHECK(l1_loss(a, a) == 0.0);
  Tensor<double> b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK(l1_loss(a, b) == doctest::Approx(0.1).epsilon(1e-12));
  Tensor<double> c = random_image(rng, 12, 12);
  double hand = 0;
  for (int64_t i = 0; i < a.numel(); ++i) hand += std::abs(a[i] - c[i]);
  hand /= static_cast<double>(a.numel());
  CHECK(l1_loss(a, c) == doctest::Approx(hand).epsilon(1e-14));
}

TEST_CASE("psnr closed-form cases") {
  RandomEngine rng(52);
  Tensor<double> a = random_image(rng, 16, 16);
  CHECK(std::isinf(psnr(a, a)));
  Tensor<double> b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  // monotone decreasing in the constant perturbation size
  double prev = 1e99;
  for (const double eps : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Tensor<double> p = a;
    for (auto& v : p.data) v += eps;
    const double cur = psnr(a, p);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("ssim") {
  RandomEngine rng(53);
  SUBCASE("identical images score 1") {
    Tensor<double> a = random_image(rng, 16, 16);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("an image and its negative about mid-gray anticorrelate") {
    Tensor<double> a = random_image(rng, 24, 24);
    Tensor<double> b = a;
    for (auto& v : b.data) v = 1.0 - v;
    CHECK(ssim(a, b) < 0.0);
  }
  SUBCASE("matches the per-window oracle to 1e-6 on 32 random pairs") {
    for (int t = 0; t < 32; ++t) {
      const int64_t h = 11 + rng.randint(14), w = 11 + rng.randint(14);
      Tensor<double> a = random_image(rng, h, w);
      Tensor<double> b = random_image(rng, h, w);
      const Tensor<double> la = luminance_bt601(a), lb = luminance_bt601(b);
      const double oracle = testutil::ssim_plane_oracle(
          std::vector<double>(la.data.begin(), la.data.end()),
          std::vector<double>(lb.data.begin(), lb.data.end()), h, w);
      CHECK(ssim(a, b) == doctest::Approx(oracle).epsilon(1e-6));
    }
  }
  SUBCASE("symmetric in its arguments to 1e-9") {
    for (int t = 0; t < 8; ++t) {
      Tensor<double> a = random_image(rng, 20, 20);
      Tensor<double> b = random_image(rng, 20, 20);
      CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
    }
  }
  SUBCASE("undersized inputs are rejected") {
    Tensor<double> a = random_image(rng, 8, 20);
    CHECK_THROWS_AS(ssim(a, a), ShapeError);
  }
}

TEST_CASE("count_params") {
  RandomEngine rng(54);
  SUBCASE("a single 3x3 conv 3->32 with bias holds 896 parameters") {
    ParamRegistry<float> reg;
    ConvSpec c3;
    c3.pad = 1;
    Conv2dLayer<float> conv(reg, "c", 3, 32, 3, c3, rng);
    CHECK(reg.total_elems() == 896);
  }
  SUBCASE("toy config matches the closed-form layer arithmetic") {
    ModelConfig cfg;
    cfg.base_channels = 16;
    cfg.lfeb_per_level = {1, 1, 1};
    cfg.hfeb_per_level = {1, 1, 2};
    FadpNet<float> net(cfg, 0);
    CHECK(net.param_count() == expected_params(cfg));
  }
  SUBCASE("default config matches the closed-form layer arithmetic") {
    ModelConfig cfg;  // C=32, [2,2,2]/[2,3,4]
    FadpNet<float> net(cfg, 0);
    CHECK(net.param_count() == expected_params(cfg));
  }
  SUBCASE("count is invariant under forward passes") {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.lfeb_per_level = {1, 1, 1};
    cfg.hfeb_per_level = {1, 1, 1};
    cfg.prompt.pool_size = 8;
    cfg.prompt.rank = 2;
    cfg.prompt.state_dim = 8;
    cfg.dpa.heads = 2;
    FadpNet<float> net(cfg, 0);
    const int64_t before = net.param_count();
    Tensor<float> img({1, 3, 16, 16}, 0.5f);
    ForwardCtx<float> ctx;
    Tape<float> tp(false);
    net.forward(tp, tp.constant(img), ctx);
    CHECK(net.param_count() == before);
  }
}

TEST_CASE("flops estimation") {
  RandomEngine rng(55);
  SUBCASE("3x3 conv 3->32 on 128x128 counts 28,311,552") {
    ParamRegistry<float> reg;
    ConvSpec c3;
    c3.pad = 1;
    Conv2dLayer<float> conv(reg, "c", 3, 32, 3, c3, rng);
    CHECK(conv.flops(128, 128) == 28311552);
  }
  SUBCASE("doubling H and W quadruples conv flops") {
    ParamRegistry<float> reg;
    ConvSpec c3;
    c3.pad = 1;
    Conv2dLayer<float> conv(reg, "c", 16, 16, 3, c3, rng);
    CHECK(conv.flops(64, 64) * 4 == conv.flops(128, 128));
  }
  SUBCASE("estimate is additive over the module breakdown") {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.lfeb_per_level = {1, 1, 1};
    cfg.hfeb_per_level = {1, 1, 1};
    cfg.prompt.pool_size = 8;
    cfg.prompt.rank = 2;
    cfg.prompt.state_dim = 8;
    cfg.dpa.heads = 2;
    int64_t sum = 0;
    for (const auto& [name, f] : estimate_flops_breakdown(cfg, 32, 32)) sum += f;
    CHECK(sum == estimate_flops(cfg, 32, 32));
  }
}

TEST_CASE("latency protocol") {
  SUBCASE("n_runs < 1 is rejected") {
    CHECK_THROWS_AS(mean_forward_ms([] {}, 0), ConfigError);
  }
  SUBCASE("a constant-delay stub is timed within scheduler jitter") {
    const double ms = mean_forward_ms(
        [] { std::this_thread::sleep_for(std::chrono::milliseconds(5)); }, 4);
    CHECK(ms >= 4.5);
    CHECK(ms <= 30.0);  // generous jitter bound for a loaded machine
  }
  SUBCASE("report carries protocol fields and a single run returns that timing") {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.lfeb_per_level = {1, 1, 1};
    cfg.hfeb_per_level = {1, 1, 1};
    cfg.prompt.pool_size = 8;
    cfg.prompt.rank = 2;
    cfg.prompt.state_dim = 8;
    cfg.dpa.heads = 2;
    FadpNet<float> model(cfg, 0);
    ProfileReport rep = measure_latency(model, 1, 1, 16, 16);
    CHECK(rep.n_runs == 1);
    CHECK(rep.batch == 1);
    CHECK(rep.precision == "fp32");
    CHECK(rep.latency_ms_mean > 0.0);
    const std::string text = rep.to_text();
    CHECK(text.find("precision: fp32") != std::string::npos);
    CHECK(text.find("batch: 1") != std::string::npos);
    CHECK(text.find("notes: ") != std::string::npos);
  }
}
