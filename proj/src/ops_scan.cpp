#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>

#include "fadpnet/nn.hpp"

namespace fadp {

namespace {

// Vectorizable exp for the float path (pure arithmetic, ~1e-6 relative).
// The recurrence consumes the stored discretized transitions, so forward and
// backward stay mutually consistent regardless of the approximation.
inline float scan_exp(float x) {
  const float log2e = 1.442695040888963f;
  float t = x * log2e;
  if (t < -126.0f) t = -126.0f;
  if (t > 126.0f) t = 126.0f;
  const float fi = std::floor(t);
  const float f = t - fi;
  // 2^f, degree-7 Taylor in f*ln2
  const float c1 = 0.693147182f, c2 = 0.240226507f, c3 = 0.0555041086f, c4 = 0.00961812910f,
              c5 = 0.00133335581f, c6 = 1.54035304e-4f, c7 = 1.52527338e-5f;
  const float p =
      1.0f + f * (c1 + f * (c2 + f * (c3 + f * (c4 + f * (c5 + f * (c6 + f * c7))))));
  uint32_t bits = static_cast<uint32_t>(static_cast<int32_t>(fi) + 127) << 23;
  float scale;
  std::memcpy(&scale, &bits, sizeof(scale));
  return p * scale;
}

inline double scan_exp(double x) { return std::exp(x); }

}  // namespace

template <typename T>
Var<T> sse_scan(Tape<T>& tp, Var<T> x, Var<T> delta, Var<T> a_neg, Var<T> b_in, Var<T> c_out,
                Var<T> prompts, Var<T> skip) {
  const auto& xs = x.shape();
  FADP_CHECK_SHAPE(xs.size() == 3, "sse_scan: x must be (B,L,C)");
  const int64_t batch = xs[0], len = xs[1], ch = xs[2];
  const auto& as = a_neg.shape();
  FADP_CHECK_SHAPE(as.size() == 2 && as[0] == ch, "sse_scan: a_neg must be (C,d)");
  const int64_t d = as[1];
  FADP_CHECK_SHAPE(shape_eq(delta.shape(), xs), "sse_scan: delta must match x");
  FADP_CHECK_SHAPE(b_in.shape() == Shape({batch, len, d}), "sse_scan: b_in must be (B,L,d)");
  FADP_CHECK_SHAPE(c_out.shape() == Shape({batch, len, d}), "sse_scan: c_out must be (B,L,d)");
  FADP_CHECK_SHAPE(prompts.shape() == Shape({batch, len, d}),
                   "sse_scan: prompts row count must equal sequence length");
  FADP_CHECK_SHAPE(skip.val().numel() == ch, "sse_scan: skip must be (C)");

  const T* __restrict px = x.val().ptr();
  const T* __restrict pdt = delta.val().ptr();
  const T* __restrict pa = a_neg.val().ptr();
  const T* __restrict pb = b_in.val().ptr();
  const T* __restrict pc = c_out.val().ptr();
  const T* __restrict pp = prompts.val().ptr();
  const T* __restrict pd = skip.val().ptr();

  Tensor<T> out({batch, len, ch});
  // States and discretized transitions are kept for the backward sweep.
  Tensor<T> hstore({batch, len, ch, d});
  Tensor<T> abar_store({batch, len, ch, d});
  T* __restrict po = out.ptr();
  T* __restrict ph = hstore.ptr();
  T* __restrict pab = abar_store.ptr();

  // pass 1: discretized transitions for every (token, channel, state)
  for (int64_t tok = 0; tok < batch * len; ++tok) {
    const T* dtrow = pdt + tok * ch;
    T* abrow = pab + tok * ch * d;
    for (int64_t c = 0; c < ch; ++c) {
      const T dt = dtrow[c];
      const T* __restrict arow = pa + c * d;
      T* __restrict dst = abrow + c * d;
      for (int64_t n = 0; n < d; ++n) dst[n] = scan_exp(dt * arow[n]);
    }
  }

  // pass 2: left-to-right recurrence
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t i = 0; i < len; ++i) {
      const int64_t tok = bi * len + i;
      const T* __restrict brow = pb + tok * d;
      const T* __restrict crow = pc + tok * d;
      const T* __restrict prow = pp + tok * d;
      T* __restrict yrow = po + tok * ch;
      bool finite = true;
      for (int64_t c = 0; c < ch; ++c) {
        const T xv = px[tok * ch + c];
        const T dtx = pdt[tok * ch + c] * xv;
        const T* __restrict hprev = i > 0 ? ph + ((tok - 1) * ch + c) * d : nullptr;
        T* __restrict hrow = ph + (tok * ch + c) * d;
        const T* __restrict abrow = pab + (tok * ch + c) * d;
        T acc = T(0);
        if (hprev) {
          for (int64_t n = 0; n < d; ++n) {
            const T hv = abrow[n] * hprev[n] + dtx * brow[n];
            hrow[n] = hv;
            acc += (crow[n] + prow[n]) * hv;
          }
        } else {
          for (int64_t n = 0; n < d; ++n) {
            const T hv = dtx * brow[n];
            hrow[n] = hv;
            acc += (crow[n] + prow[n]) * hv;
          }
        }
        finite = finite && std::isfinite(acc);
        yrow[c] = acc + pd[c] * xv;
      }
      if (!finite) {
        // pin down the first offending state entry for the diagnostic
        for (int64_t c = 0; c < ch; ++c)
          for (int64_t n = 0; n < d; ++n)
            if (!std::isfinite(ph[(tok * ch + c) * d + n]))
              throw NumericalError("sse_scan: nonfinite state at step " + std::to_string(i) +
                                   " (batch " + std::to_string(bi) + ")");
        throw NumericalError("sse_scan: nonfinite output at step " + std::to_string(i) +
                             " (batch " + std::to_string(bi) + ")");
      }
    }
  }

  bool needs = x.needs_grad() || delta.needs_grad() || a_neg.needs_grad() || b_in.needs_grad() ||
               c_out.needs_grad() || prompts.needs_grad() || skip.needs_grad();
  Node<T>* nd = tp.alloc(std::move(out), needs);
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *ndt = delta.node, *na = a_neg.node, *nb = b_in.node, *nc = c_out.node,
            *np = prompts.node, *nsk = skip.node, *self = nd;
    auto hs = std::make_shared<Tensor<T>>(std::move(hstore));
    auto abs_ = std::make_shared<Tensor<T>>(std::move(abar_store));
    nd->backprop = [=] {
      const T* __restrict g = self->grad.ptr();
      const T* __restrict px = nx->value.ptr();
      const T* __restrict pdt = ndt->value.ptr();
      const T* __restrict pa = na->value.ptr();
      const T* __restrict pb = nb->value.ptr();
      const T* __restrict pc = nc->value.ptr();
      const T* __restrict pp = np->value.ptr();
      const T* __restrict pd = nsk->value.ptr();
      const T* __restrict ph = hs->ptr();
      const T* __restrict pab = abs_->ptr();

      T* gx = nx->needs_grad ? nx->ensure_grad().ptr() : nullptr;
      T* gdt = ndt->needs_grad ? ndt->ensure_grad().ptr() : nullptr;
      T* ga = na->needs_grad ? na->ensure_grad().ptr() : nullptr;
      T* gb = nb->needs_grad ? nb->ensure_grad().ptr() : nullptr;
      T* gc = nc->needs_grad ? nc->ensure_grad().ptr() : nullptr;
      T* gp = np->needs_grad ? np->ensure_grad().ptr() : nullptr;
      T* gsk = nsk->needs_grad ? nsk->ensure_grad().ptr() : nullptr;

      std::vector<T> ghcarry(static_cast<size_t>(ch * d));
      std::vector<T> gcp(static_cast<size_t>(d));
      for (int64_t bi = 0; bi < batch; ++bi) {
        std::fill(ghcarry.begin(), ghcarry.end(), T(0));
        for (int64_t i = len - 1; i >= 0; --i) {
          const int64_t tok = bi * len + i;
          const T* __restrict brow = pb + tok * d;
          const T* __restrict crow = pc + tok * d;
          const T* __restrict prow = pp + tok * d;
          const T* __restrict grow = g + tok * ch;
          std::fill(gcp.begin(), gcp.end(), T(0));
          for (int64_t c = 0; c < ch; ++c) {
            const T gy = grow[c];
            const T xv = px[tok * ch + c];
            const T dt = pdt[tok * ch + c];
            const T* __restrict arow = pa + c * d;
            const T* __restrict hrow = ph + (tok * ch + c) * d;
            const T* __restrict abrow = pab + (tok * ch + c) * d;
            const T* __restrict hprev = i > 0 ? ph + ((tok - 1) * ch + c) * d : nullptr;
            T* __restrict ghc = ghcarry.data() + c * d;
            T* __restrict garow = ga ? ga + c * d : nullptr;

            if (gsk) gsk[c] += gy * xv;
            T gx_acc = gx ? pd[c] * gy : T(0);
            T gdt_acc = T(0);
            if (hprev) {
              for (int64_t n = 0; n < d; ++n) {
                T gh = ghc[n] + (crow[n] + prow[n]) * gy;
                gcp[n] += gy * hrow[n];
                const T gab = gh * hprev[n];
                if (garow) garow[n] += gab * dt * abrow[n];
                gdt_acc += gab * arow[n] * abrow[n] + gh * brow[n] * xv;
                if (gb) gb[tok * d + n] += gh * dt * xv;
                gx_acc += gh * dt * brow[n];
                ghc[n] = gh * abrow[n];
              }
            } else {
              for (int64_t n = 0; n < d; ++n) {
                T gh = ghc[n] + (crow[n] + prow[n]) * gy;
                gcp[n] += gy * hrow[n];
                gdt_acc += gh * brow[n] * xv;
                if (gb) gb[tok * d + n] += gh * dt * xv;
                gx_acc += gh * dt * brow[n];
                ghc[n] = T(0);
              }
            }
            if (gx) gx[tok * ch + c] += gx_acc;
            if (gdt) gdt[tok * ch + c] += gdt_acc;
          }
          if (gc)
            for (int64_t n = 0; n < d; ++n) gc[tok * d + n] += gcp[n];
          if (gp)
            for (int64_t n = 0; n < d; ++n) gp[tok * d + n] += gcp[n];
        }
      }
    };
  }
  return Var<T>{nd};
}

template Var<float> sse_scan(Tape<float>&, Var<float>, Var<float>, Var<float>, Var<float>,
                             Var<float>, Var<float>, Var<float>);
template Var<double> sse_scan(Tape<double>&, Var<double>, Var<double>, Var<double>, Var<double>,
                              Var<double>, Var<double>, Var<double>);

}  // namespace fadp
