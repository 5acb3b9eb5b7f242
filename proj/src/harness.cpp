#include "fadpnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fadpnet/image_io.hpp"
#include "fadpnet/metrics.hpp"

namespace fadp {

namespace {
// Purpose tags for derived noise streams.
constexpr uint64_t kStreamRouting = 0x726f7574;
constexpr uint64_t kStreamAugment = 0x61756700;
constexpr uint64_t kStreamSynth = 0x73796e74;
}  // namespace

// ------------------------------------------------------------------- Adam

template <typename T>
AdamOptimizer<T>::AdamOptimizer(ParamRegistry<T>& reg, double lr, double beta1, double beta2,
                                double eps)
    : reg_(&reg), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : reg.params()) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

template <typename T>
void AdamOptimizer<T>::step() {
  ++t_;
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T bc1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T bc2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
  const auto& params = reg_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    Param<T>* p = params[i];
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    T* w = p->value.ptr();
    const T* g = p->grad.ptr();
    const int64_t n = p->value.numel();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void AdamOptimizer<T>::export_state(std::map<std::string, Tensor<float>>& arrays) const {
  const auto& params = reg_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    arrays["adam_m:" + params[i]->name] = tensor_cast<float>(m_[i]);
    arrays["adam_v:" + params[i]->name] = tensor_cast<float>(v_[i]);
  }
}

template <typename T>
void AdamOptimizer<T>::import_state(const std::map<std::string, Tensor<float>>& arrays,
                                    int64_t t) {
  t_ = t;
  const auto& params = reg_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto im = arrays.find("adam_m:" + params[i]->name);
    const auto iv = arrays.find("adam_v:" + params[i]->name);
    if (im == arrays.end() || iv == arrays.end())
      throw DataError("checkpoint is missing optimizer state for " + params[i]->name);
    FADP_CHECK_SHAPE(shape_eq(im->second.shape, params[i]->value.shape),
                     "optimizer state shape mismatch for " + params[i]->name);
    m_[i] = tensor_cast<T>(im->second);
    v_[i] = tensor_cast<T>(iv->second);
  }
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

// ----------------------------------------------------------------- sources

SyntheticSource::SyntheticSource(int n_train, int n_val, int n_test, int hr_size, int scale,
                                 uint64_t seed)
    : n_train_(n_train), n_val_(n_val), n_test_(n_test), hr_size_(hr_size), scale_(scale),
      seed_(seed) {}

int64_t SyntheticSource::size(Split split) const {
  switch (split) {
    case Split::Train: return n_train_;
    case Split::Val: return n_val_;
    default: return n_test_;
  }
}

SRSample SyntheticSource::get(Split split, int64_t idx) const {
  if (idx < 0 || idx >= size(split)) throw DataError("synthetic source: index out of range");
  const uint64_t tag = static_cast<uint64_t>(split) * 1000003ull + static_cast<uint64_t>(idx);
  RandomEngine rng(RandomEngine::mix(seed_, RandomEngine::mix(kStreamSynth, tag)));
  Tensor<float> img = make_synthetic_face(rng, hr_size_);
  SRSample s = prepare_pair(img, "synthetic_" + split_name(split) + "_" + std::to_string(idx),
                            split, hr_size_, scale_);
  return s;
}

ManifestSource::ManifestSource(DatasetManifest manifest, int hr_size, int scale)
    : manifest_(std::move(manifest)), hr_size_(hr_size), scale_(scale) {
  train_ = manifest_.indices(Split::Train);
  val_ = manifest_.indices(Split::Val);
  test_ = manifest_.indices(Split::Test);
}

int64_t ManifestSource::size(Split split) const {
  switch (split) {
    case Split::Train: return static_cast<int64_t>(train_.size());
    case Split::Val: return static_cast<int64_t>(val_.size());
    default: return static_cast<int64_t>(test_.size());
  }
}

SRSample ManifestSource::get(Split split, int64_t idx) const {
  const auto& list = split == Split::Train ? train_ : (split == Split::Val ? val_ : test_);
  if (idx < 0 || idx >= static_cast<int64_t>(list.size()))
    throw DataError("manifest source: index out of range");
  const auto& rec = manifest_.records[static_cast<size_t>(list[static_cast<size_t>(idx)])];
  const std::string full =
      manifest_.root.empty() ? rec.path : manifest_.root + "/" + rec.path;
  Tensor<float> img = read_png(full);
  return prepare_pair(img, rec.path, split, hr_size_, scale_);
}

std::unique_ptr<SampleSource> make_sample_source(const DataConfig& cfg) {
  if (cfg.synthetic_count > 0) {
    const int n_val = std::max(2, cfg.synthetic_count / 8);
    return std::make_unique<SyntheticSource>(cfg.synthetic_count, n_val, n_val, cfg.hr_size,
                                             cfg.scale, 7);
  }
  if (cfg.manifest.empty())
    throw ConfigError("data: either data.manifest or data.synthetic_count must be set");
  const std::string mpath = cfg.manifest.front() == '/' || cfg.root.empty()
                                ? cfg.manifest
                                : cfg.root + "/" + cfg.manifest;
  return std::make_unique<ManifestSource>(load_manifest(mpath, cfg.root), cfg.hr_size, cfg.scale);
}

// -------------------------------------------------------------- evaluation

EvalSummary evaluate_model(const FadpNet<float>& model, const SampleSource& source, Split split,
                           std::ostream* csv) {
  const int64_t n = source.size(split);
  if (n == 0) throw DataError("evaluate: split '" + split_name(split) + "' is empty");
  if (csv) (*csv) << "image_id,psnr,ssim\n";
  EvalSummary sum;
  ForwardCtx<float> ctx;  // eval: no routing noise, hard argmax routing
  for (int64_t i = 0; i < n; ++i) {
    SRSample s = source.get(split, i);
    const int64_t h = s.hr.dim(1), w = s.hr.dim(2);
    Tensor<float> x({1, 3, h, w});
    std::copy(s.lr_up.data.begin(), s.lr_up.data.end(), x.data.begin());
    Tape<float> tp(false);
    Var<float> out = model.forward(tp, tp.constant(std::move(x)), ctx);
    Tensor<float> sr({3, h, w});
    std::copy(out.val().data.begin(), out.val().data.end(), sr.data.begin());
    for (auto& v : sr.data) v = std::min(std::max(v, 0.0f), 1.0f);
    const double p = psnr(sr, s.hr);
    const double pl = psnr_luma(sr, s.hr);
    const double ss = ssim(sr, s.hr);
    if (std::isinf(p)) {
      ++sum.inf_count;
    } else {
      sum.mean_psnr_rgb += p;
      sum.mean_psnr_luma += pl;
    }
    sum.mean_ssim += ss;
    ++sum.n;
    if (csv) (*csv) << s.source_id << "," << format_psnr(p) << "," << ss << "\n";
  }
  const double denom = static_cast<double>(std::max<int64_t>(1, sum.n - sum.inf_count));
  sum.mean_psnr_rgb /= denom;
  sum.mean_psnr_luma /= denom;
  sum.mean_ssim /= static_cast<double>(sum.n);
  return sum;
}

// ----------------------------------------------------------------- trainer

Trainer::Trainer(const ModelConfig& mc, const TrainConfig& tc, const DataConfig& dc,
                 const SampleSource& source)
    : mc_(mc), tc_(tc), dc_(dc), source_(&source) {
  tc_.validate();
  init_from_configs();
}

Trainer::Trainer(const Checkpoint& ck, const SampleSource& source) : source_(&source) {
  mc_ = model_config_from(ck.model_kv);
  tc_ = train_config_from(ck.train_kv);
  dc_ = data_config_from(ck.data_kv);
  init_from_configs();
  step_ = ck.step;
  // restore parameters
  for (auto* p : model_->registry().params()) {
    const auto it = ck.arrays.find("param:" + p->name);
    if (it == ck.arrays.end()) throw DataError("checkpoint is missing parameter " + p->name);
    FADP_CHECK_SHAPE(shape_eq(it->second.shape, p->value.shape),
                     "checkpoint shape mismatch for " + p->name);
    p->value = tensor_cast<float>(it->second);
  }
  if (ck.adam_t > 0) adam_->import_state(ck.arrays, ck.adam_t);
}

void Trainer::init_from_configs() {
  model_ = std::make_unique<FadpNet<float>>(mc_, tc_.seed);
  adam_ = std::make_unique<AdamOptimizer<float>>(model_->registry(), tc_.lr, tc_.beta1, tc_.beta2,
                                                 tc_.eps);
}

int64_t Trainer::max_steps() const {
  if (tc_.max_steps > 0) return tc_.max_steps;
  const int64_t n = source_->size(Split::Train);
  const int64_t per_epoch = (n + tc_.batch - 1) / tc_.batch;
  return per_epoch * tc_.epochs;
}

double Trainer::current_lr() const {
  if (tc_.lr_schedule == "cosine") {
    const double total = static_cast<double>(std::max<int64_t>(1, max_steps()));
    const double t = std::min(1.0, static_cast<double>(step_) / total);
    return tc_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  return tc_.lr;
}

double Trainer::train_step() {
  const int64_t n = source_->size(Split::Train);
  if (n == 0) throw DataError("train: training split is empty");
  const int64_t per_epoch = (n + tc_.batch - 1) / tc_.batch;
  const int64_t epoch = step_ / per_epoch;
  const int64_t pos = step_ % per_epoch;
  if (epoch != cached_epoch_) {
    cached_order_ = epoch_order(n, tc_.seed, epoch);
    cached_epoch_ = epoch;
  }
  const int64_t begin = pos * tc_.batch;
  const int64_t end = std::min<int64_t>(n, begin + tc_.batch);
  const int64_t bs = end - begin;

  // assemble the batch
  std::vector<SRSample> samples;
  samples.reserve(static_cast<size_t>(bs));
  for (int64_t i = begin; i < end; ++i) {
    const int64_t idx = cached_order_[static_cast<size_t>(i)];
    SRSample s = source_->get(Split::Train, idx);
    if (tc_.augment) {
      RandomEngine arng(RandomEngine::mix(
          tc_.seed, RandomEngine::mix(kStreamAugment,
                                      static_cast<uint64_t>(epoch) * 1000003ull +
                                          static_cast<uint64_t>(idx))));
      s = augment(s, arng);
    }
    samples.push_back(std::move(s));
  }
  const int64_t h = samples[0].hr.dim(1), w = samples[0].hr.dim(2);
  Tensor<float> x({bs, 3, h, w}), y({bs, 3, h, w});
  for (int64_t b = 0; b < bs; ++b) {
    std::copy(samples[static_cast<size_t>(b)].lr_up.data.begin(),
              samples[static_cast<size_t>(b)].lr_up.data.end(), x.data.begin() + b * 3 * h * w);
    std::copy(samples[static_cast<size_t>(b)].hr.data.begin(),
              samples[static_cast<size_t>(b)].hr.data.end(), y.data.begin() + b * 3 * h * w);
  }

  RandomEngine route_rng(
      RandomEngine::mix(tc_.seed, RandomEngine::mix(kStreamRouting, static_cast<uint64_t>(step_))));
  ForwardCtx<float> ctx;
  ctx.rng = tc_.route_noise ? &route_rng : nullptr;
  ctx.hard_routing = true;

  Tape<float> tp;
  Var<float> pred = model_->forward(tp, tp.constant(std::move(x)), ctx);
  Var<float> loss = mean_abs_diff(tp, pred, tp.constant(std::move(y)));
  const double loss_v = loss.val()[0];
  if (!std::isfinite(loss_v)) {
    std::ostringstream os;
    os << "train: nonfinite loss at step " << step_ << "; parameter norm summary:";
    for (const auto* p : model_->registry().params()) {
      double mx = 0;
      for (const float v : p->value.data) mx = std::max(mx, std::abs(static_cast<double>(v)));
      if (mx > 1e3 || !std::isfinite(mx)) os << " " << p->name << "=" << mx;
    }
    throw NumericalError(os.str());
  }
  model_->registry().zero_grads();
  tp.backward(loss);
  adam_->set_lr(current_lr());
  adam_->step();
  ++step_;
  return loss_v;
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ck;
  model_config_to_kv(mc_, ck.model_kv);
  train_config_to_kv(tc_, ck.train_kv);
  data_config_to_kv(dc_, ck.data_kv);
  ck.step = step_;
  const int64_t n = source_->size(Split::Train);
  const int64_t per_epoch = (n + tc_.batch - 1) / tc_.batch;
  ck.epoch = per_epoch > 0 ? step_ / per_epoch : 0;
  ck.seed = tc_.seed;
  ck.adam_t = adam_->t();
  for (const auto* p : model_->registry().params()) ck.arrays["param:" + p->name] = p->value;
  adam_->export_state(ck.arrays);
  return ck;
}

EvalSummary Trainer::evaluate(Split split, std::ostream* csv) const {
  return evaluate_model(*model_, *source_, split, csv);
}

TrainLoopResult run_training(Trainer& trainer, std::ostream& log,
                             const std::function<bool(Trainer&)>& should_stop) {
  const TrainConfig& tc = trainer.train_config();
  std::filesystem::create_directories(tc.out_dir);
  const int64_t total = trainer.max_steps();
  TrainLoopResult result;
  log << "step,loss,lr,time_ms\n";
  while (trainer.step() < total) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_now = trainer.current_lr();
    const double loss = trainer.train_step();
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    char line[160];
    std::snprintf(line, sizeof(line), "%lld,%.6f,%.6g,%.1f",
                  static_cast<long long>(trainer.step()), loss, lr_now, ms);
    log << line << "\n";
    result.steps = trainer.step();
    result.last_loss = loss;
    if (tc.eval_every > 0 && trainer.step() % tc.eval_every == 0 &&
        trainer.model().config().base_channels > 0) {
      if (trainer.step() > 0) {
        try {
          EvalSummary s = trainer.evaluate(Split::Val);
          log << "# val step=" << trainer.step() << " psnr=" << format_psnr(s.mean_psnr_rgb)
              << " ssim=" << s.mean_ssim << "\n";
        } catch (const DataError&) {
          // no validation split; skip
        }
      }
    }
    if (tc.checkpoint_every > 0 && trainer.step() % tc.checkpoint_every == 0) {
      result.checkpoint_path = tc.out_dir + "/step_" + std::to_string(trainer.step()) + ".ckpt";
      save_checkpoint(result.checkpoint_path, trainer.make_checkpoint());
    }
    if (should_stop && should_stop(trainer)) break;
  }
  result.checkpoint_path = tc.out_dir + "/final.ckpt";
  save_checkpoint(result.checkpoint_path, trainer.make_checkpoint());
  return result;
}

// ----------------------------------------------------------------- reports

void spectrum_report(const FadpNet<float>& model, const SampleSource& source, Split split,
                     int level, const BandSpec& bands, std::ostream& out) {
  std::string stage;
  switch (level) {
    case 0: stage = "enc0"; break;
    case 1: stage = "enc1"; break;
    case 2: stage = "bottleneck"; break;
    default: throw ConfigError("spectrum: unknown level " + std::to_string(level));
  }
  const int64_t n = source.size(split);
  if (n == 0) throw DataError("spectrum: split '" + split_name(split) + "' is empty");
  BandRatios lf_acc, hf_acc;
  for (int64_t i = 0; i < n; ++i) {
    SRSample s = source.get(split, i);
    const int64_t h = s.hr.dim(1), w = s.hr.dim(2);
    Tensor<float> x({1, 3, h, w});
    std::copy(s.lr_up.data.begin(), s.lr_up.data.end(), x.data.begin());
    std::map<std::string, Tensor<float>> capture;
    ForwardCtx<float> ctx;
    ctx.capture = &capture;
    Tape<float> tp(false);
    model.forward(tp, tp.constant(std::move(x)), ctx);
    const BandRatios lf = band_energy_ratios(capture.at(stage + ".lfeb_out"), bands);
    const BandRatios hf = band_energy_ratios(capture.at(stage + ".hfeb_out"), bands);
    lf_acc.low += lf.low;
    lf_acc.mid += lf.mid;
    lf_acc.high += lf.high;
    hf_acc.low += hf.low;
    hf_acc.mid += hf.mid;
    hf_acc.high += hf.high;
  }
  const double dn = static_cast<double>(n);
  lf_acc.low /= dn;
  lf_acc.mid /= dn;
  lf_acc.high /= dn;
  hf_acc.low /= dn;
  hf_acc.mid /= dn;
  hf_acc.high /= dn;
  out << "source,band_low,band_mid,band_high\n";
  out << band_csv_row("lfeb_level" + std::to_string(level), lf_acc) << "\n";
  out << band_csv_row("hfeb_level" + std::to_string(level), hf_acc) << "\n";
}

void ablate(const ModelConfig& base, const std::vector<std::string>& flags, const TrainConfig& tc,
            const DataConfig& dc, const SampleSource& source, int64_t steps, std::ostream& out) {
  // Validate every flag before any training starts.
  std::vector<std::string> all = {"baseline"};
  for (const auto& f : flags)
    if (f != "baseline") all.push_back(f);
  std::vector<ModelConfig> variants;
  for (const auto& f : all) variants.push_back(make_variant(base, f));

  out << "flag,params,flops,psnr,ssim\n";
  for (size_t i = 0; i < all.size(); ++i) {
    TrainConfig vtc = tc;
    vtc.max_steps = steps;
    vtc.checkpoint_every = 0;
    vtc.eval_every = 0;
    Trainer tr(variants[i], vtc, dc, source);
    for (int64_t s = 0; s < steps; ++s) tr.train_step();
    EvalSummary es;
    try {
      es = tr.evaluate(Split::Val);
    } catch (const DataError&) {
      es = tr.evaluate(Split::Train);
    }
    const int64_t flops = tr.model().flops(dc.hr_size, dc.hr_size);
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%lld,%lld,%.4f,%.4f", all[i].c_str(),
                  static_cast<long long>(tr.model().param_count()),
                  static_cast<long long>(flops), es.mean_psnr_rgb, es.mean_ssim);
    out << line << "\n";
  }
}

int infer_files(const Checkpoint& ck, const std::vector<std::string>& paths,
                const std::string& out_dir, bool degrade, std::ostream& log) {
  const ModelConfig mc = model_config_from(ck.model_kv);
  const DataConfig dc = data_config_from(ck.data_kv);
  FadpNet<float> model(mc, ck.seed);
  for (auto* p : model.registry().params()) {
    const auto it = ck.arrays.find("param:" + p->name);
    if (it == ck.arrays.end()) throw DataError("checkpoint is missing parameter " + p->name);
    p->value = it->second;
  }
  std::filesystem::create_directories(out_dir);
  ForwardCtx<float> ctx;
  int failures = 0;
  for (const auto& path : paths) {
    try {
      Tensor<float> img = read_png(path);
      Tensor<float> input;
      if (degrade) {
        SRSample s = prepare_pair(img, path, Split::Test, dc.hr_size, dc.scale);
        input = s.lr_up;
      } else {
        input = clamp01(std::move(img));
      }
      const int64_t h = input.dim(1), w = input.dim(2);
      if (h % 4 != 0 || w % 4 != 0)
        throw DataError("input size must be a multiple of 4: " + path);
      Tensor<float> x({1, 3, h, w});
      std::copy(input.data.begin(), input.data.end(), x.data.begin());
      Tape<float> tp(false);
      Var<float> out = model.forward(tp, tp.constant(std::move(x)), ctx);
      Tensor<float> sr({3, h, w});
      std::copy(out.val().data.begin(), out.val().data.end(), sr.data.begin());
      sr = clamp01(std::move(sr));
      const std::string base = std::filesystem::path(path).stem().string();
      const std::string out_path = out_dir + "/" + base + "_sr.png";
      write_png(out_path, sr);
      log << path << " -> " << out_path << "\n";
    } catch (const DataError& e) {
      log << "error: " << e.what() << "\n";
      ++failures;
    }
  }
  return failures;
}

}  // namespace fadp
