#include "fadpnet/profiler.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

namespace fadp {

std::string ProfileReport::to_text() const {
  std::ostringstream os;
  os << "param_count: " << param_count << "\n";
  os << "flops: " << flops << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", latency_ms_mean);
  os << "latency_ms_mean: " << buf << "\n";
  os << "n_runs: " << n_runs << "\n";
  os << "batch: " << batch << "\n";
  os << "input_h: " << input_h << "\n";
  os << "input_w: " << input_w << "\n";
  os << "precision: " << precision << "\n";
  os << "notes: " << notes << "\n";
  for (const auto& [name, f] : flops_by_module) os << "flops." << name << ": " << f << "\n";
  return os.str();
}

template <typename T>
int64_t count_params(const FadpNet<T>& model) {
  return model.param_count();
}

int64_t estimate_flops(const ModelConfig& cfg, int64_t h, int64_t w) {
  FadpNet<float> model(cfg, 0);
  return model.flops(h, w);
}

std::vector<std::pair<std::string, int64_t>> estimate_flops_breakdown(const ModelConfig& cfg,
                                                                      int64_t h, int64_t w) {
  FadpNet<float> model(cfg, 0);
  return model.flops_breakdown(h, w);
}

double mean_forward_ms(const std::function<void()>& forward_once, int n_runs) {
  if (n_runs < 1) throw ConfigError("measure_latency: n_runs must be >= 1");
  double total_ms = 0;
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    forward_once();
    const auto t1 = std::chrono::steady_clock::now();
    total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  return total_ms / n_runs;
}

ProfileReport measure_latency(const FadpNet<float>& model, int n_runs, int batch, int64_t h,
                              int64_t w) {
  if (n_runs < 1) throw ConfigError("measure_latency: n_runs must be >= 1");
  if (batch < 1) throw ConfigError("measure_latency: batch must be >= 1");
  ProfileReport rep;
  rep.param_count = model.param_count();
  rep.flops = model.flops(h, w);
  rep.n_runs = n_runs;
  rep.batch = batch;
  rep.input_h = h;
  rep.input_w = w;
  rep.precision = "fp32";
  rep.notes = "forward only, no warmup, exclusive run assumed, input pre-generated";

  // Inputs generated ahead of the timed region.
  RandomEngine rng(1234);
  Tensor<float> img({batch, 3, h, w});
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());

  ForwardCtx<float> ctx;  // eval mode: no routing noise
  rep.latency_ms_mean = mean_forward_ms(
      [&] {
        Tape<float> tp(false);
        Var<float> out = model.forward(tp, tp.constant(img), ctx);
        (void)out;
      },
      n_runs);
  return rep;
}

ProfileReport profile_model(const ModelConfig& cfg, int64_t h, int64_t w, int n_runs,
                            uint64_t seed) {
  FadpNet<float> model(cfg, seed);
  ProfileReport rep = measure_latency(model, n_runs, 1, h, w);
  rep.flops_by_module = model.flops_breakdown(h, w);
  return rep;
}

template int64_t count_params(const FadpNet<float>&);
template int64_t count_params(const FadpNet<double>&);

}  // namespace fadp
