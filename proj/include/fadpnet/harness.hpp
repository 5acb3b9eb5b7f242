#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>

#include "fadpnet/checkpoint.hpp"
#include "fadpnet/data.hpp"
#include "fadpnet/freqsep.hpp"
#include "fadpnet/net.hpp"

namespace fadp {

// Adam over a parameter registry. State arrays follow registry order and are
// checkpointed by parameter name.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamRegistry<T>& reg, double lr, double beta1, double beta2, double eps);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t t() const { return t_; }

  // checkpoint plumbing
  void export_state(std::map<std::string, Tensor<float>>& arrays) const;
  void import_state(const std::map<std::string, Tensor<float>>& arrays, int64_t t);

 private:
  ParamRegistry<T>* reg_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Uniform access to prepared samples, by split and index.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual int64_t size(Split split) const = 0;
  virtual SRSample get(Split split, int64_t idx) const = 0;
};

// Deterministic procedural faces; sample (split, idx) is a pure function of
// the seed.
class SyntheticSource : public SampleSource {
 public:
  SyntheticSource(int n_train, int n_val, int n_test, int hr_size, int scale, uint64_t seed);
  int64_t size(Split split) const override;
  SRSample get(Split split, int64_t idx) const override;

 private:
  int n_train_, n_val_, n_test_, hr_size_, scale_;
  uint64_t seed_;
};

// PNG-backed source; decodes and degrades on demand.
class ManifestSource : public SampleSource {
 public:
  ManifestSource(DatasetManifest manifest, int hr_size, int scale);
  int64_t size(Split split) const override;
  SRSample get(Split split, int64_t idx) const override;

 private:
  DatasetManifest manifest_;
  std::vector<int64_t> train_, val_, test_;
  int hr_size_, scale_;
};

std::unique_ptr<SampleSource> make_sample_source(const DataConfig& cfg);

struct EvalSummary {
  double mean_psnr_rgb = 0;
  double mean_psnr_luma = 0;
  double mean_ssim = 0;
  int64_t n = 0;
  int64_t inf_count = 0;  // images with exact reconstruction (MSE = 0)
};

// Deterministic evaluation (routing noise off). Writes per-image CSV rows
// `image_id,psnr,ssim` when csv is non-null. The +inf PSNR sentinel is
// excluded from the mean but counted in inf_count.
EvalSummary evaluate_model(const FadpNet<float>& model, const SampleSource& source, Split split,
                           std::ostream* csv);

class Trainer {
 public:
  Trainer(const ModelConfig& mc, const TrainConfig& tc, const DataConfig& dc,
          const SampleSource& source);
  Trainer(const Checkpoint& ck, const SampleSource& source);  // resume

  // One optimizer step; returns the training loss at that step.
  double train_step();

  int64_t step() const { return step_; }
  int64_t max_steps() const;
  double current_lr() const;
  FadpNet<float>& model() { return *model_; }
  const FadpNet<float>& model() const { return *model_; }
  const TrainConfig& train_config() const { return tc_; }
  const ModelConfig& model_config() const { return mc_; }

  Checkpoint make_checkpoint() const;
  EvalSummary evaluate(Split split, std::ostream* csv = nullptr) const;

 private:
  void init_from_configs();
  ModelConfig mc_;
  TrainConfig tc_;
  DataConfig dc_;
  const SampleSource* source_;
  std::unique_ptr<FadpNet<float>> model_;
  std::unique_ptr<AdamOptimizer<float>> adam_;
  int64_t step_ = 0;
  int64_t cached_epoch_ = -1;
  std::vector<int64_t> cached_order_;
};

// Full training loop with line-oriented logging `step,loss,lr,time_ms`,
// periodic validation and checkpointing. Returns the last checkpoint path.
struct TrainLoopResult {
  int64_t steps = 0;
  double last_loss = 0;
  std::string checkpoint_path;
};
TrainLoopResult run_training(Trainer& trainer, std::ostream& log,
                             const std::function<bool(Trainer&)>& should_stop = nullptr);

// Band-energy report of the LFEB/HFEB branch outputs at one level, averaged
// over a fold. Rows: `lfeb_level<k>` and `hfeb_level<k>`.
void spectrum_report(const FadpNet<float>& model, const SampleSource& source, Split split,
                     int level, const BandSpec& bands, std::ostream& out);

// Constructs every variant, trains `steps` steps under identical seeds, and
// emits a CSV comparison row per flag (plus the baseline first).
void ablate(const ModelConfig& base, const std::vector<std::string>& flags, const TrainConfig& tc,
            const DataConfig& dc, const SampleSource& source, int64_t steps, std::ostream& out);

// Runs inference over image files; optionally applies the degradation first.
// Unreadable inputs are reported and skipped.
int infer_files(const Checkpoint& ck, const std::vector<std::string>& paths,
                const std::string& out_dir, bool degrade, std::ostream& log);

}  // namespace fadp
