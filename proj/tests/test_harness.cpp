#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "fadpnet/harness.hpp"
#include "fadpnet/metrics.hpp"

using namespace fadp;

namespace {

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.lfeb_per_level = {1, 1, 1};
  cfg.hfeb_per_level = {1, 1, 1};
  cfg.prompt.pool_size = 8;
  cfg.prompt.rank = 2;
  cfg.prompt.state_dim = 8;
  cfg.dpa.heads = 2;
  return cfg;
}

TrainConfig toy_train(uint64_t seed = 1) {
  TrainConfig tc;
  tc.batch = 4;
  tc.epochs = 1;
  tc.max_steps = 0;
  tc.seed = seed;
  tc.checkpoint_every = 0;
  tc.eval_every = 0;
  tc.out_dir = (std::filesystem::temp_directory_path() / "fadp_harness_test").string();
  return tc;
}

DataConfig toy_data() {
  DataConfig dc;
  dc.hr_size = 16;
  dc.scale = 4;
  dc.synthetic_count = 8;
  return dc;
}

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fadp_harness_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("kv config parsing and overrides") {
  KvConfig kv = KvConfig::parse("a.b = 3\n# comment\nc = hello  # trailing\n\nd.e = 1.5\n");
  CHECK(kv.get_int("a.b", 0) == 3);
  CHECK(kv.get_str("c", "") == "hello");
  CHECK(kv.get_double("d.e", 0) == doctest::Approx(1.5));
  kv.apply_override("a.b=7");
  CHECK(kv.get_int("a.b", 0) == 7);
  CHECK_THROWS_AS(kv.apply_override("nonsense"), ConfigError);
  CHECK_THROWS_AS(KvConfig::parse("key_without_equals\n"), ConfigError);
  CHECK_THROWS_AS(kv.get_int("c", 0), ConfigError);
}

TEST_CASE("model and train configs round-trip through kv form") {
  ModelConfig mc = toy_model();
  mc.swap_branches = true;
  mc.assb_variant = AssbVariant::NoReorder;
  mc.offset_mode = OffsetMode::ConvAlign;
  KvConfig kv;
  model_config_to_kv(mc, kv);
  ModelConfig back = model_config_from(kv);
  CHECK(back.base_channels == mc.base_channels);
  CHECK(back.swap_branches == mc.swap_branches);
  CHECK(back.assb_variant == mc.assb_variant);
  CHECK(back.offset_mode == mc.offset_mode);
  CHECK(back.lfeb_per_level == mc.lfeb_per_level);

  TrainConfig tc = toy_train(17);
  KvConfig kt;
  train_config_to_kv(tc, kt);
  TrainConfig tback = train_config_from(kt);
  CHECK(tback.seed == tc.seed);
  CHECK(tback.batch == tc.batch);
  CHECK(tback.lr == doctest::Approx(tc.lr));
}

TEST_CASE("step-0 loss with a zeroed reconstruction head equals mean |I_HR|") {
  SyntheticSource source(8, 2, 2, 16, 4, 7);
  TrainConfig tc = toy_train(3);
  tc.augment = false;
  Trainer trainer(toy_model(), tc, toy_data(), source);
  for (const char* name : {"recon.weight", "recon.bias"}) {
    Param<float>* p = trainer.model().registry().find(name);
    REQUIRE(p != nullptr);
    p->value.fill(0.0f);
  }
  // hand-compute mean |hr| over the exact step-0 batch
  const auto order = epoch_order(8, tc.seed, 0);
  double expect = 0;
  int64_t count = 0;
  for (int i = 0; i < tc.batch; ++i) {
    SRSample s = source.get(Split::Train, order[static_cast<size_t>(i)]);
    for (const float v : s.hr.data) expect += std::abs(static_cast<double>(v));
    count += s.hr.numel();
  }
  expect /= static_cast<double>(count);
  const double loss = trainer.train_step();
  CHECK(loss == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("checkpoint round trip restores bit-identical forward behavior") {
  SyntheticSource source(8, 2, 2, 16, 4, 7);
  Trainer trainer(toy_model(), toy_train(5), toy_data(), source);
  for (int i = 0; i < 2; ++i) trainer.train_step();

  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, trainer.make_checkpoint());
  Checkpoint ck = load_checkpoint(path);
  Trainer restored(ck, source);

  // identical parameters, bit for bit
  for (auto* p : trainer.model().registry().params()) {
    Param<float>* q = restored.model().registry().find(p->name);
    REQUIRE(q != nullptr);
    REQUIRE(shape_eq(p->value.shape, q->value.shape));
    for (int64_t i = 0; i < p->value.numel(); ++i) CHECK(p->value[i] == q->value[i]);
  }
  // identical forward outputs
  SRSample s = source.get(Split::Val, 0);
  Tensor<float> x({1, 3, 16, 16});
  std::copy(s.lr_up.data.begin(), s.lr_up.data.end(), x.data.begin());
  ForwardCtx<float> ctx;
  Tape<float> t1(false), t2(false);
  Var<float> a = trainer.model().forward(t1, t1.constant(x), ctx);
  Var<float> b = restored.model().forward(t2, t2.constant(x), ctx);
  for (int64_t i = 0; i < a.val().numel(); ++i) CHECK(a.val()[i] == b.val()[i]);
}

TEST_CASE("resuming from a checkpoint continues bit-identically") {
  SyntheticSource source(8, 2, 2, 16, 4, 7);
  Trainer full(toy_model(), toy_train(9), toy_data(), source);
  for (int i = 0; i < 6; ++i) full.train_step();

  Trainer half(toy_model(), toy_train(9), toy_data(), source);
  for (int i = 0; i < 3; ++i) half.train_step();
  const std::string path = temp_path("resume.ckpt");
  save_checkpoint(path, half.make_checkpoint());
  Trainer resumed(load_checkpoint(path), source);
  CHECK(resumed.step() == 3);
  for (int i = 0; i < 3; ++i) resumed.train_step();

  for (auto* p : full.model().registry().params()) {
    Param<float>* q = resumed.model().registry().find(p->name);
    REQUIRE(q != nullptr);
    for (int64_t i = 0; i < p->value.numel(); ++i) CHECK(p->value[i] == q->value[i]);
  }
}

TEST_CASE("evaluation is deterministic and rejects empty splits") {
  SyntheticSource source(8, 2, 0, 16, 4, 7);
  Trainer trainer(toy_model(), toy_train(11), toy_data(), source);
  std::ostringstream csv1, csv2;
  const EvalSummary s1 = trainer.evaluate(Split::Val, &csv1);
  const EvalSummary s2 = trainer.evaluate(Split::Val, &csv2);
  CHECK(csv1.str() == csv2.str());
  CHECK(csv1.str().rfind("image_id,psnr,ssim\n", 0) == 0);
  CHECK(s1.mean_psnr_rgb == s2.mean_psnr_rgb);
  CHECK(s1.n == 2);
  CHECK_THROWS_AS(trainer.evaluate(Split::Test), DataError);
}

TEST_CASE("nonfinite loss halts with a diagnostic naming the step") {
  SyntheticSource source(8, 2, 2, 16, 4, 7);
  Trainer trainer(toy_model(), toy_train(13), toy_data(), source);
  Param<float>* p = trainer.model().registry().find("recon.weight");
  REQUIRE(p != nullptr);
  p->value.fill(std::numeric_limits<float>::infinity());
  CHECK_THROWS_WITH_AS(trainer.train_step(), doctest::Contains("step"), NumericalError);
}

TEST_CASE("spectrum report is well-formed and rejects unknown levels") {
  SyntheticSource source(4, 2, 2, 16, 4, 7);
  Trainer trainer(toy_model(), toy_train(15), toy_data(), source);
  std::ostringstream out;
  BandSpec bands;
  spectrum_report(trainer.model(), source, Split::Val, 1, bands, out);
  std::istringstream lines(out.str());
  std::string header, row1, row2;
  std::getline(lines, header);
  std::getline(lines, row1);
  std::getline(lines, row2);
  CHECK(header == "source,band_low,band_mid,band_high");
  CHECK(row1.rfind("lfeb_level1,", 0) == 0);
  CHECK(row2.rfind("hfeb_level1,", 0) == 0);
  for (const std::string& row : {row1, row2}) {
    double a, b, c;
    const auto p1 = row.find(','), p2 = row.find(',', p1 + 1), p3 = row.find(',', p2 + 1);
    a = std::stod(row.substr(p1 + 1, p2 - p1 - 1));
    b = std::stod(row.substr(p2 + 1, p3 - p2 - 1));
    c = std::stod(row.substr(p3 + 1));
    CHECK(a + b + c == doctest::Approx(1.0).epsilon(2e-6));
  }
  CHECK_THROWS_AS(spectrum_report(trainer.model(), source, Split::Val, 7, bands, out),
                  ConfigError);
}

TEST_CASE("ablation runner emits one row per flag plus the baseline") {
  SyntheticSource source(4, 2, 2, 16, 4, 7);
  ModelConfig mc = toy_model();
  TrainConfig tc = toy_train(17);
  DataConfig dc = toy_data();
  dc.synthetic_count = 4;

  SUBCASE("unknown flags are rejected before any training") {
    std::ostringstream out;
    CHECK_THROWS_AS(ablate(mc, {"no_hfr", "bogus_flag"}, tc, dc, source, 1, out), ConfigError);
    CHECK(out.str().empty());
  }
  SUBCASE("table rows carry params matching a fresh count") {
    std::ostringstream out;
    ablate(mc, {"no_hfr", "swap_branches"}, tc, dc, source, 1, out);
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "flag,params,flops,psnr,ssim");
    int rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const std::string flag = line.substr(0, c1);
      const int64_t params = std::stoll(line.substr(c1 + 1, c2 - c1 - 1));
      FadpNet<float> probe(make_variant(mc, flag), 0);
      CHECK(params == probe.param_count());
    }
    CHECK(rows == 3);  // baseline + 2 flags
  }
}

TEST_CASE("cli exit codes follow the documented contract") {
#ifdef FADPNET_CLI_PATH
  auto run = [](const std::string& args) {
    const std::string cmd = std::string(FADPNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(run("profile -c /nonexistent.conf") == 2);
  CHECK(run("eval --checkpoint /nonexistent.ckpt") == 3);
  CHECK(run("profile --set model.base_channels=9") == 2);  // odd width rejected
  const std::string out = temp_path("cli_data");
  CHECK(run("make-data --out " + out + " --count 4 --size 16") == 0);
#else
  MESSAGE("FADPNET_CLI_PATH not defined; cli exit-code check skipped");
#endif
}
