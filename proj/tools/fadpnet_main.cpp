// Command-line front end: train / eval / infer / profile / spectrum / ablate,
// plus a synthetic-dataset generator for smoke runs.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fadpnet/harness.hpp"
#include "fadpnet/image_io.hpp"
#include "fadpnet/metrics.hpp"
#include "fadpnet/profiler.hpp"

namespace {

fadp::KvConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  fadp::KvConfig kv;
  if (!path.empty()) kv = fadp::KvConfig::load(path);
  for (const auto& o : overrides) kv.apply_override(o);
  return kv;
}

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw fadp::DataError("cannot write output file: " + path);
  return file;
}

int run(int argc, char** argv) {
  CLI::App app{"fadpnet: frequency-aware dual-path face super-resolution"};
  app.require_subcommand(1);
  // let -c/--set appear after the subcommand name
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "config file (key = value lines)");
  app.add_option("--set", overrides, "override a dotted config key, e.g. --set model.base_channels=16");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string resume_path;
  train->add_option("--resume", resume_path, "resume from a checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_split = "test", eval_csv;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--split", eval_split, "train|val|test");
  eval->add_option("--out", eval_csv, "per-image metrics CSV ('-' for stdout)");

  // infer
  auto* infer = app.add_subcommand("infer", "run super-resolution on image files");
  std::string infer_ckpt, infer_out = "sr_out";
  bool infer_degrade = false;
  std::vector<std::string> infer_paths;
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint path")->required();
  infer->add_option("--out", infer_out, "output directory");
  infer->add_flag("--degrade", infer_degrade, "apply the bicubic degradation before inference");
  infer->add_option("images", infer_paths, "input images (PNG)")->required();

  // profile
  auto* profile = app.add_subcommand("profile", "parameters, FLOPs and latency");
  int prof_runs = 10;
  int64_t prof_h = 128, prof_w = 128;
  profile->add_option("--runs", prof_runs, "number of timed forward passes");
  profile->add_option("--height", prof_h, "input height");
  profile->add_option("--width", prof_w, "input width");

  // spectrum
  auto* spectrum = app.add_subcommand("spectrum", "band-energy report of branch outputs");
  std::string spec_ckpt, spec_split = "val", spec_out;
  int spec_level = 1;
  double cut_low = 1.0 / 6.0, cut_mid = 1.0 / 3.0;
  spectrum->add_option("--checkpoint", spec_ckpt, "checkpoint path")->required();
  spectrum->add_option("--level", spec_level, "u-shape level (0,1,2)");
  spectrum->add_option("--split", spec_split, "train|val|test");
  spectrum->add_option("--cut-low", cut_low, "low/mid boundary (fraction of Nyquist)");
  spectrum->add_option("--cut-mid", cut_mid, "mid/high boundary (fraction of Nyquist)");
  spectrum->add_option("--out", spec_out, "CSV output ('-' for stdout)");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "train each ablation variant briefly and compare");
  std::vector<std::string> ablate_flags;
  int64_t ablate_steps = 1;
  std::string ablate_out;
  ablate_cmd->add_option("--flags", ablate_flags, "ablation flags (default: all known)");
  ablate_cmd->add_option("--steps", ablate_steps, "training steps per variant");
  ablate_cmd->add_option("--out", ablate_out, "CSV output ('-' for stdout)");

  // make-data
  auto* mkdata = app.add_subcommand("make-data", "write synthetic face PNGs and a manifest");
  std::string mk_dir = "synthetic_data";
  int mk_count = 24, mk_size = 128;
  uint64_t mk_seed = 7;
  mkdata->add_option("--out", mk_dir, "output directory");
  mkdata->add_option("--count", mk_count, "total images (7/8 train, rest split val/test)");
  mkdata->add_option("--size", mk_size, "image side length");
  mkdata->add_option("--seed", mk_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);
  fadp::KvConfig kv = load_config(config_path, overrides);

  if (train->parsed()) {
    std::unique_ptr<fadp::Trainer> trainer;
    std::unique_ptr<fadp::SampleSource> source;
    if (!resume_path.empty()) {
      fadp::Checkpoint ck = fadp::load_checkpoint(resume_path);
      for (const auto& o : overrides) ck.train_kv.apply_override(o);
      source = fadp::make_sample_source(fadp::data_config_from(ck.data_kv));
      trainer = std::make_unique<fadp::Trainer>(ck, *source);
    } else {
      const auto mc = fadp::model_config_from(kv);
      const auto tc = fadp::train_config_from(kv);
      const auto dc = fadp::data_config_from(kv);
      source = fadp::make_sample_source(dc);
      trainer = std::make_unique<fadp::Trainer>(mc, tc, dc, *source);
    }
    const auto result = fadp::run_training(*trainer, std::cout);
    std::cout << "# done steps=" << result.steps << " loss=" << result.last_loss
              << " checkpoint=" << result.checkpoint_path << "\n";
    return 0;
  }

  if (eval->parsed()) {
    fadp::Checkpoint ck = fadp::load_checkpoint(eval_ckpt);
    auto source = fadp::make_sample_source(fadp::data_config_from(ck.data_kv));
    fadp::Trainer trainer(ck, *source);
    std::ofstream file;
    std::ostream& out = open_or_stdout(file, eval_csv);
    const auto s = trainer.evaluate(fadp::parse_split(eval_split), &out);
    std::cout << "split=" << eval_split << " n=" << s.n
              << " psnr_rgb=" << fadp::format_psnr(s.mean_psnr_rgb)
              << " psnr_luma=" << fadp::format_psnr(s.mean_psnr_luma) << " ssim=" << s.mean_ssim
              << " exact=" << s.inf_count << "\n";
    return 0;
  }

  if (infer->parsed()) {
    fadp::Checkpoint ck = fadp::load_checkpoint(infer_ckpt);
    const int failures = fadp::infer_files(ck, infer_paths, infer_out, infer_degrade, std::cout);
    return failures == 0 ? 0 : 3;
  }

  if (profile->parsed()) {
    const auto mc = fadp::model_config_from(kv);
    const auto rep = fadp::profile_model(mc, prof_h, prof_w, prof_runs);
    std::cout << rep.to_text();
    return 0;
  }

  if (spectrum->parsed()) {
    fadp::Checkpoint ck = fadp::load_checkpoint(spec_ckpt);
    auto source = fadp::make_sample_source(fadp::data_config_from(ck.data_kv));
    fadp::Trainer trainer(ck, *source);
    fadp::BandSpec bands;
    bands.cut_low = cut_low;
    bands.cut_mid = cut_mid;
    std::ofstream file;
    std::ostream& out = open_or_stdout(file, spec_out);
    fadp::spectrum_report(trainer.model(), *source, fadp::parse_split(spec_split), spec_level,
                          bands, out);
    return 0;
  }

  if (ablate_cmd->parsed()) {
    const auto mc = fadp::model_config_from(kv);
    const auto tc = fadp::train_config_from(kv);
    const auto dc = fadp::data_config_from(kv);
    auto source = fadp::make_sample_source(dc);
    std::vector<std::string> flags = ablate_flags;
    if (flags.empty()) flags = fadp::known_ablation_flags();
    std::ofstream file;
    std::ostream& out = open_or_stdout(file, ablate_out);
    fadp::ablate(mc, flags, tc, dc, *source, ablate_steps, out);
    return 0;
  }

  if (mkdata->parsed()) {
    std::filesystem::create_directories(mk_dir);
    std::ofstream manifest(mk_dir + "/manifest.csv");
    fadp::RandomEngine rng(mk_seed);
    for (int i = 0; i < mk_count; ++i) {
      const auto img = fadp::make_synthetic_face(rng, mk_size);
      char name[64];
      std::snprintf(name, sizeof(name), "face_%04d.png", i);
      fadp::write_png(mk_dir + "/" + name, img);
      const char* split = i < mk_count * 7 / 8 ? "train" : (i % 2 == 0 ? "val" : "test");
      manifest << name << "," << split << "\n";
    }
    std::cout << "wrote " << mk_count << " images and manifest.csv to " << mk_dir << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fadp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fadp::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fadp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const fadp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
