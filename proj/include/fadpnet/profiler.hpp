#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fadpnet/net.hpp"

namespace fadp {

// Complexity measurement per the evaluation protocol: FP32, batch 1, no
// warmup, forward pass only, mean wall clock over n_runs.
struct ProfileReport {
  int64_t param_count = 0;
  int64_t flops = 0;  // multiply-accumulates x2 at (input_h, input_w), batch 1
  double latency_ms_mean = 0;
  int n_runs = 0;
  int batch = 1;
  int64_t input_h = 0, input_w = 0;
  std::string precision = "fp32";
  std::string notes;
  std::vector<std::pair<std::string, int64_t>> flops_by_module;

  std::string to_text() const;  // flat key-value block
};

template <typename T>
int64_t count_params(const FadpNet<T>& model);

// Analytic count (convs and linears as 2*MACs, scans as documented in the
// block implementations; activations and norms ignored).
int64_t estimate_flops(const ModelConfig& cfg, int64_t h, int64_t w);

std::vector<std::pair<std::string, int64_t>> estimate_flops_breakdown(const ModelConfig& cfg,
                                                                      int64_t h, int64_t w);

// Wall-clock forward latency; requires an otherwise idle machine (noted in
// the report). n_runs < 1 is rejected.
ProfileReport measure_latency(const FadpNet<float>& model, int n_runs, int batch, int64_t h,
                              int64_t w);

// Timing core: mean wall-clock milliseconds of `forward_once` over n_runs,
// no warmup. Exposed so the protocol can be exercised against a stub.
double mean_forward_ms(const std::function<void()>& forward_once, int n_runs);

ProfileReport profile_model(const ModelConfig& cfg, int64_t h, int64_t w, int n_runs,
                            uint64_t seed = 0);

}  // namespace fadp
