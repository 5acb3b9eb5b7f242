#pragma once

#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "fadpnet/nn.hpp"
#include "fadpnet/random.hpp"

namespace fadp {

// Owns every learnable tensor of a model. Creation order is the canonical
// parameter order (used by the optimizer and checkpoints), and is fixed by
// construction order, which is itself fixed by the config.
template <typename T>
class ParamRegistry {
 public:
  Param<T>* create(const std::string& name, Shape shape) {
    FADP_CHECK_SHAPE(by_name_.find(name) == by_name_.end(), "duplicate parameter name: " + name);
    store_.push_back(Param<T>{name, Tensor<T>(shape), Tensor<T>(shape)});
    Param<T>* p = &store_.back();
    order_.push_back(p);
    by_name_[name] = p;
    return p;
  }

  const std::vector<Param<T>*>& params() const { return order_; }

  Param<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  int64_t total_elems() const {
    int64_t n = 0;
    for (const auto* p : order_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto* p : order_) p->grad.fill(T(0));
  }

 private:
  std::deque<Param<T>> store_;
  std::vector<Param<T>*> order_;
  std::unordered_map<std::string, Param<T>*> by_name_;
};

// Per-forward context: routing noise source, routing mode, capture hooks.
template <typename T>
struct ForwardCtx {
  RandomEngine* rng = nullptr;  // nullptr disables gumbel noise (eval mode)
  bool hard_routing = true;
  std::map<std::string, Tensor<T>>* capture = nullptr;

  void maybe_capture(const std::string& key, const Tensor<T>& v) const {
    if (capture) (*capture)[key] = v;
  }
};

template <typename T>
void init_normal(Param<T>* p, RandomEngine& rng, double stddev) {
  for (auto& v : p->value.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

// Kaiming-style fan-in init; `scale` shrinks layers that feed residual sums.
template <typename T>
void init_he(Param<T>* p, RandomEngine& rng, int64_t fan_in, double scale = 1.0) {
  const double stddev = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  init_normal(p, rng, stddev);
}

template <typename T>
struct Conv2dLayer {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;
  ConvSpec spec;
  int in_ch = 0, out_ch = 0, k = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry<T>& reg, const std::string& name, int in, int out, int kernel,
              ConvSpec sp, RandomEngine& rng, double init_scale = 1.0, bool bias = true)
      : spec(sp), in_ch(in), out_ch(out), k(kernel) {
    w = reg.create(name + ".weight", {out, in / sp.groups, kernel, kernel});
    if (init_scale == 0.0)
      w->value.fill(T(0));
    else
      init_he(w, rng, static_cast<int64_t>(in / sp.groups) * kernel * kernel, init_scale);
    if (bias) b = reg.create(name + ".bias", {out});
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    Var<T> wb = tp.param(*w);
    Var<T> bb = b ? tp.param(*b) : Var<T>{};
    return conv2d(tp, x, wb, bb, spec);
  }

  int64_t flops(int64_t h, int64_t w_) const {
    const int64_t ho = conv_out_dim(h, k, spec.stride, spec.pad);
    const int64_t wo = conv_out_dim(w_, k, spec.stride, spec.pad);
    return 2LL * (in_ch / spec.groups) * out_ch * k * k * ho * wo;
  }
};

template <typename T>
struct LinearLayer {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;
  int in_dim = 0, out_dim = 0;

  LinearLayer() = default;
  LinearLayer(ParamRegistry<T>& reg, const std::string& name, int in, int out, RandomEngine& rng,
              double init_scale = 1.0, bool bias = true)
      : in_dim(in), out_dim(out) {
    w = reg.create(name + ".weight", {out, in});
    if (init_scale == 0.0)
      w->value.fill(T(0));
    else
      init_he(w, rng, in, init_scale);
    if (bias) b = reg.create(name + ".bias", {out});
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    Var<T> wb = tp.param(*w);
    Var<T> bb = b ? tp.param(*b) : Var<T>{};
    return linear(tp, x, wb, bb);
  }

  int64_t flops(int64_t rows) const { return 2LL * in_dim * out_dim * rows; }
};

template <typename T>
struct LayerNorm2d {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  T eps = T(1e-6);

  LayerNorm2d() = default;
  LayerNorm2d(ParamRegistry<T>& reg, const std::string& name, int channels) {
    gamma = reg.create(name + ".gamma", {channels});
    gamma->value.fill(T(1));
    beta = reg.create(name + ".beta", {channels});
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    return layer_norm_channels(tp, x, tp.param(*gamma), tp.param(*beta), eps);
  }
};

}  // namespace fadp
