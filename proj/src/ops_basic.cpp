#include <algorithm>
#include <cmath>

#include "fadpnet/nn.hpp"

namespace fadp {

namespace {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  FADP_CHECK_SHAPE(shape_eq(a.shape(), b.shape()),
                   std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}

template <typename T>
void axpy(T* dst, const T* src, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

// -------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, n] {
      const T* g = self->grad.ptr();
      if (na->needs_grad) axpy(na->ensure_grad().ptr(), g, n);
      if (nb->needs_grad) axpy(nb->ensure_grad().ptr(), g, n);
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, n] {
      const T* g = self->grad.ptr();
      if (na->needs_grad) axpy(na->ensure_grad().ptr(), g, n);
      if (nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> mul(Tape<T>& tp, Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, n] {
      const T* g = self->grad.ptr();
      const T* va = na->value.ptr();
      const T* vb = nb->value.ptr();
      if (na->needs_grad) {
        T* ga = na->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
      }
      if (nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> add_scalar(Tape<T>& tp, Var<T> a, T s) {
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n] { axpy(na->ensure_grad().ptr(), self->grad.ptr(), n); };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> mul_scalar(Tape<T>& tp, Var<T> a, T s) {
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n, s] {
      const T* g = self->grad.ptr();
      T* ga = na->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> sigmoid(Tape<T>& tp, Var<T> a) {
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    T x = pa[i];
    po[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n] {
      const T* g = self->grad.ptr();
      const T* y = self->value.ptr();
      T* ga = na->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> gelu(Tape<T>& tp, Var<T> a) {
  // Exact erf form.
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  const T inv_sqrt2 = T(0.70710678118654752440084436210485);
  for (int64_t i = 0; i < n; ++i) {
    T x = pa[i];
    po[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n, inv_sqrt2] {
      const T* g = self->grad.ptr();
      const T* x = na->value.ptr();
      T* ga = na->ensure_grad().ptr();
      const T inv_sqrt2pi = T(0.39894228040143267793994605993438);
      for (int64_t i = 0; i < n; ++i) {
        T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        ga[i] += g[i] * (cdf + x[i] * pdf);
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> relu(Tape<T>& tp, Var<T> a) {
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n] {
      const T* g = self->grad.ptr();
      const T* x = na->value.ptr();
      T* ga = na->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i)
        if (x[i] > T(0)) ga[i] += g[i];
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> softplus(Tape<T>& tp, Var<T> a) {
  Tensor<T> out(a.shape());
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    T x = pa[i];
    if (x > T(20))
      po[i] = x;
    else if (x < T(-20))
      po[i] = std::exp(x);
    else
      po[i] = std::log1p(std::exp(x));
  }
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n] {
      const T* g = self->grad.ptr();
      const T* x = na->value.ptr();
      T* ga = na->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) {
        T s = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i]))
                           : std::exp(x[i]) / (T(1) + std::exp(x[i]));
        ga[i] += g[i] * s;
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> detach(Tape<T>& tp, Var<T> a) {
  return tp.constant(a.val());
}

template <typename T>
Var<T> scale_by(Tape<T>& tp, Var<T> a, Var<T> scalar) {
  FADP_CHECK_SHAPE(scalar.val().numel() == 1, "scale_by: scalar must have one element");
  Tensor<T> out(a.shape());
  const T s = scalar.val()[0];
  const T* pa = a.val().ptr();
  T* po = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || scalar.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *ns = scalar.node, *self = nd;
    nd->backprop = [na, ns, self, n, s] {
      const T* g = self->grad.ptr();
      if (na->needs_grad) {
        T* ga = na->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
      }
      if (ns->needs_grad) {
        const T* va = na->value.ptr();
        T acc = T(0);
        for (int64_t i = 0; i < n; ++i) acc += g[i] * va[i];
        ns->ensure_grad()[0] += acc;
      }
    };
  }
  return Var<T>{nd};
}

// -------------------------------------------------------------------- shape

template <typename T>
Var<T> reshape(Tape<T>& tp, Var<T> a, Shape s) {
  FADP_CHECK_SHAPE(shape_numel(s) == a.val().numel(), "reshape: element count mismatch");
  Tensor<T> out;
  out.shape = std::move(s);
  out.data = a.val().data;
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self] {
      axpy(na->ensure_grad().ptr(), self->grad.ptr(), self->grad.numel());
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> concat_channels(Tape<T>& tp, const std::vector<Var<T>>& parts) {
  FADP_CHECK_SHAPE(!parts.empty(), "concat_channels: empty input");
  const auto& s0 = parts[0].shape();
  FADP_CHECK_SHAPE(s0.size() == 4, "concat_channels: rank-4 expected");
  int64_t ctotal = 0;
  bool needs = false;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    FADP_CHECK_SHAPE(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                     "concat_channels: incompatible shapes");
    ctotal += s[1];
    needs = needs || p.needs_grad();
  }
  const int64_t b = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out({b, ctotal, s0[2], s0[3]});
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi) {
    int64_t coff = 0;
    for (const auto& p : parts) {
      const int64_t c = p.shape()[1];
      const T* src = p.val().ptr() + bi * c * hw;
      std::copy(src, src + c * hw, po + (bi * ctotal + coff) * hw);
      coff += c;
    }
  }
  Node<T>* nd = tp.alloc(std::move(out), needs);
  if (nd->needs_grad) {
    std::vector<Node<T>*> srcs;
    for (const auto& p : parts) srcs.push_back(p.node);
    Node<T>* self = nd;
    nd->backprop = [srcs, self, b, ctotal, hw] {
      const T* g = self->grad.ptr();
      for (int64_t bi = 0; bi < b; ++bi) {
        int64_t coff = 0;
        for (Node<T>* src : srcs) {
          const int64_t c = src->value.shape[1];
          if (src->needs_grad) {
            T* gs = src->ensure_grad().ptr() + bi * c * hw;
            const T* gsrc = g + (bi * ctotal + coff) * hw;
            for (int64_t i = 0; i < c * hw; ++i) gs[i] += gsrc[i];
          }
          coff += c;
        }
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> slice_channels(Tape<T>& tp, Var<T> x, int64_t c0, int64_t c1) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4 && c0 >= 0 && c1 <= s[1] && c0 < c1, "slice_channels: bad range");
  const int64_t b = s[0], c = s[1], hw = s[2] * s[3], cs = c1 - c0;
  Tensor<T> out({b, cs, s[2], s[3]});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    std::copy(px + (bi * c + c0) * hw, px + (bi * c + c1) * hw, po + bi * cs * hw);
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, c0, cs, hw] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bi = 0; bi < b; ++bi) {
        T* dst = gx + (bi * c + c0) * hw;
        const T* src = g + bi * cs * hw;
        for (int64_t i = 0; i < cs * hw; ++i) dst[i] += src[i];
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> to_tokens(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "to_tokens: rank-4 expected");
  const int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out({b, hw, c});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = px + (bi * c + ci) * hw;
      T* dst = po + bi * hw * c + ci;
      for (int64_t i = 0; i < hw; ++i) dst[i * c] = src[i];
    }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, hw] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
          T* dst = gx + (bi * c + ci) * hw;
          const T* src = g + bi * hw * c + ci;
          for (int64_t i = 0; i < hw; ++i) dst[i] += src[i * c];
        }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> from_tokens(Tape<T>& tp, Var<T> x, int64_t h, int64_t w) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 3 && s[1] == h * w, "from_tokens: token count mismatch");
  const int64_t b = s[0], hw = s[1], c = s[2];
  Tensor<T> out({b, c, h, w});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      T* dst = po + (bi * c + ci) * hw;
      const T* src = px + bi * hw * c + ci;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i * c];
    }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, hw] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
          const T* src = g + (bi * c + ci) * hw;
          T* dst = gx + bi * hw * c + ci;
          for (int64_t i = 0; i < hw; ++i) dst[i * c] += src[i];
        }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> transpose_last2(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() >= 2, "transpose_last2: rank >= 2 expected");
  Shape os = s;
  std::swap(os[s.size() - 1], os[s.size() - 2]);
  const int64_t r = s[s.size() - 2], c = s[s.size() - 1];
  const int64_t outer = x.val().numel() / (r * c);
  Tensor<T> out(os);
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) po[(o * c + j) * r + i] = px[(o * r + i) * c + j];
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, outer, r, c] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gx[(o * r + i) * c + j] += g[(o * c + j) * r + i];
    };
  }
  return Var<T>{nd};
}

// ----------------------------------------------------------- linear algebra

template <typename T>
Var<T> linear(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  FADP_CHECK_SHAPE(ws.size() == 2, "linear: weight must be (out,in)");
  const int64_t in = ws[1], out_dim = ws[0];
  FADP_CHECK_SHAPE(!xs.empty() && xs.back() == in, "linear: input feature dim mismatch");
  const int64_t rows = x.val().numel() / in;
  Shape os = xs;
  os.back() = out_dim;
  Tensor<T> out(os);
  const T* px = x.val().ptr();
  const T* pw = w.val().ptr();
  const T* pb = b.defined() ? b.val().ptr() : nullptr;
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * in;
    T* orow = po + r * out_dim;
    for (int64_t o = 0; o < out_dim; ++o) {
      const T* wr = pw + o * in;
      T acc = pb ? pb[o] : T(0);
      for (int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      orow[o] = acc;
    }
  }
  bool needs = x.needs_grad() || w.needs_grad() || (b.defined() && b.needs_grad());
  Node<T>* nd = tp.alloc(std::move(out), needs);
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *nw = w.node, *self = nd;
    Node<T>* nb = b.defined() ? b.node : nullptr;
    nd->backprop = [nx, nw, nb, self, rows, in, out_dim] {
      const T* g = self->grad.ptr();
      const T* px = nx->value.ptr();
      const T* pw = nw->value.ptr();
      if (nx->needs_grad) {
        T* gx = nx->ensure_grad().ptr();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * out_dim;
          T* gxr = gx + r * in;
          for (int64_t o = 0; o < out_dim; ++o) {
            const T gv = gr[o];
            const T* wr = pw + o * in;
            for (int64_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
          }
        }
      }
      if (nw->needs_grad) {
        T* gw = nw->ensure_grad().ptr();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * out_dim;
          const T* xr = px + r * in;
          for (int64_t o = 0; o < out_dim; ++o) {
            const T gv = gr[o];
            T* gwr = gw + o * in;
            for (int64_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
          }
        }
      }
      if (nb && nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * out_dim;
          for (int64_t o = 0; o < out_dim; ++o) gb[o] += gr[o];
        }
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> matmul(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  FADP_CHECK_SHAPE(as.size() == 2 && bs.size() == 2 && as[1] == bs[0], "matmul: shape mismatch");
  const int64_t n = as[0], k = as[1], m = bs[1];
  Tensor<T> out({n, m});
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      const T* brow = pb + kk * m;
      T* orow = po + i * m;
      for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, n, k, m] {
      const T* g = self->grad.ptr();
      const T* pa = na->value.ptr();
      const T* pb = nb->value.ptr();
      if (na->needs_grad) {
        T* ga = na->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const T* brow = pb + kk * m;
            const T* grow = g + i * m;
            T acc = T(0);
            for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
      }
      if (nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* grow = g + i * m;
            T* gbrow = gb + kk * m;
            for (int64_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
          }
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> bmm(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  FADP_CHECK_SHAPE(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1],
                   "bmm: shape mismatch");
  const int64_t g_ = as[0], n = as[1], k = as[2], m = bs[2];
  Tensor<T> out({g_, n, m});
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out.ptr();
  for (int64_t gi = 0; gi < g_; ++gi)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = pa[(gi * n + i) * k + kk];
        const T* brow = pb + (gi * k + kk) * m;
        T* orow = po + (gi * n + i) * m;
        for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, g_, n, k, m] {
      const T* g = self->grad.ptr();
      const T* pa = na->value.ptr();
      const T* pb = nb->value.ptr();
      if (na->needs_grad) {
        T* ga = na->ensure_grad().ptr();
        for (int64_t gi = 0; gi < g_; ++gi)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              const T* brow = pb + (gi * k + kk) * m;
              const T* grow = g + (gi * n + i) * m;
              T acc = T(0);
              for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              ga[(gi * n + i) * k + kk] += acc;
            }
      }
      if (nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t gi = 0; gi < g_; ++gi)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              const T av = pa[(gi * n + i) * k + kk];
              const T* grow = g + (gi * n + i) * m;
              T* gbrow = gb + (gi * k + kk) * m;
              for (int64_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
            }
      }
    };
  }
  return Var<T>{nd};
}

// -------------------------------------------------- reductions / normalization

template <typename T>
Var<T> global_avg_pool(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "global_avg_pool: rank-4 expected");
  const int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out({b, c});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < b * c; ++i) {
    const T* src = px + i * hw;
    T acc = T(0);
    for (int64_t j = 0; j < hw; ++j) acc += src[j];
    po[i] = acc / T(hw);
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, hw] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t i = 0; i < b * c; ++i) {
        const T gv = g[i] / T(hw);
        T* dst = gx + i * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] += gv;
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> scale_channels(Tape<T>& tp, Var<T> x, Var<T> sc) {
  const auto& xs = x.shape();
  const auto& ss = sc.shape();
  FADP_CHECK_SHAPE(xs.size() == 4 && ss.size() == 2 && ss[0] == xs[0] && ss[1] == xs[1],
                   "scale_channels: expected x (B,C,H,W) and s (B,C)");
  const int64_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> out(xs);
  const T* px = x.val().ptr();
  const T* ps = sc.val().ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < b * c; ++i) {
    const T sv = ps[i];
    const T* src = px + i * hw;
    T* dst = po + i * hw;
    for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] * sv;
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad() || sc.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *ns = sc.node, *self = nd;
    nd->backprop = [nx, ns, self, b, c, hw] {
      const T* g = self->grad.ptr();
      const T* px = nx->value.ptr();
      const T* ps = ns->value.ptr();
      if (nx->needs_grad) {
        T* gx = nx->ensure_grad().ptr();
        for (int64_t i = 0; i < b * c; ++i) {
          const T sv = ps[i];
          const T* src = g + i * hw;
          T* dst = gx + i * hw;
          for (int64_t j = 0; j < hw; ++j) dst[j] += src[j] * sv;
        }
      }
      if (ns->needs_grad) {
        T* gs = ns->ensure_grad().ptr();
        for (int64_t i = 0; i < b * c; ++i) {
          const T* gg = g + i * hw;
          const T* xx = px + i * hw;
          T acc = T(0);
          for (int64_t j = 0; j < hw; ++j) acc += gg[j] * xx[j];
          gs[i] += acc;
        }
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> layer_norm_channels(Tape<T>& tp, Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "layer_norm_channels: rank-4 expected");
  const int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  FADP_CHECK_SHAPE(gamma.val().numel() == c && beta.val().numel() == c,
                   "layer_norm_channels: affine size mismatch");
  Tensor<T> out(s);
  Tensor<T> xhat(s);       // saved for backward
  Tensor<T> inv_std({b, s[2], s[3]});
  const T* px = x.val().ptr();
  const T* pg = gamma.val().ptr();
  const T* pb = beta.val().ptr();
  T* po = out.ptr();
  T* ph = xhat.ptr();
  T* pi = inv_std.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < hw; ++j) {
      const T* base = px + bi * c * hw + j;
      T mean = T(0);
      for (int64_t ci = 0; ci < c; ++ci) mean += base[ci * hw];
      mean /= T(c);
      T var = T(0);
      for (int64_t ci = 0; ci < c; ++ci) {
        T d = base[ci * hw] - mean;
        var += d * d;
      }
      var /= T(c);
      const T istd = T(1) / std::sqrt(var + eps);
      pi[bi * hw + j] = istd;
      for (int64_t ci = 0; ci < c; ++ci) {
        T h = (base[ci * hw] - mean) * istd;
        ph[(bi * c + ci) * hw + j] = h;
        po[(bi * c + ci) * hw + j] = h * pg[ci] + pb[ci];
      }
    }
  bool needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  Node<T>* nd = tp.alloc(std::move(out), needs);
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *ng = gamma.node, *nb = beta.node, *self = nd;
    auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
    auto is = std::make_shared<Tensor<T>>(std::move(inv_std));
    nd->backprop = [nx, ng, nb, self, xh, is, b, c, hw] {
      const T* g = self->grad.ptr();
      const T* ph = xh->ptr();
      const T* pi = is->ptr();
      const T* pg = ng->value.ptr();
      if (ng->needs_grad || nb->needs_grad) {
        T* gg = ng->needs_grad ? ng->ensure_grad().ptr() : nullptr;
        T* gb = nb->needs_grad ? nb->ensure_grad().ptr() : nullptr;
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ci = 0; ci < c; ++ci) {
            const T* grow = g + (bi * c + ci) * hw;
            const T* hrow = ph + (bi * c + ci) * hw;
            T ag = T(0), ab = T(0);
            for (int64_t j = 0; j < hw; ++j) {
              ag += grow[j] * hrow[j];
              ab += grow[j];
            }
            if (gg) gg[ci] += ag;
            if (gb) gb[ci] += ab;
          }
      }
      if (nx->needs_grad) {
        T* gx = nx->ensure_grad().ptr();
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t j = 0; j < hw; ++j) {
            T sum_gh = T(0), sum_ghh = T(0);
            for (int64_t ci = 0; ci < c; ++ci) {
              const int64_t off = (bi * c + ci) * hw + j;
              const T gh = g[off] * pg[ci];
              sum_gh += gh;
              sum_ghh += gh * ph[off];
            }
            const T istd = pi[bi * hw + j];
            const T m1 = sum_gh / T(c);
            const T m2 = sum_ghh / T(c);
            for (int64_t ci = 0; ci < c; ++ci) {
              const int64_t off = (bi * c + ci) * hw + j;
              const T gh = g[off] * pg[ci];
              gx[off] += istd * (gh - m1 - ph[off] * m2);
            }
          }
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> log_softmax_lastdim(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(!s.empty(), "log_softmax: empty shape");
  const int64_t d = s.back();
  const int64_t rows = x.val().numel() / d;
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* orow = po + r * d;
    T mx = xr[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
    T acc = T(0);
    for (int64_t i = 0; i < d; ++i) acc += std::exp(xr[i] - mx);
    const T lse = mx + std::log(acc);
    for (int64_t i = 0; i < d; ++i) orow[i] = xr[i] - lse;
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, rows, d] {
      const T* g = self->grad.ptr();
      const T* y = self->value.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * d;
        const T* yr = y + r * d;
        T gsum = T(0);
        for (int64_t i = 0; i < d; ++i) gsum += gr[i];
        T* gxr = gx + r * d;
        for (int64_t i = 0; i < d; ++i) gxr[i] += gr[i] - std::exp(yr[i]) * gsum;
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> softmax_lastdim(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  const int64_t d = s.back();
  const int64_t rows = x.val().numel() / d;
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* orow = po + r * d;
    T mx = xr[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
    T acc = T(0);
    for (int64_t i = 0; i < d; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      acc += orow[i];
    }
    for (int64_t i = 0; i < d; ++i) orow[i] /= acc;
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, rows, d] {
      const T* g = self->grad.ptr();
      const T* y = self->value.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * d;
        const T* yr = y + r * d;
        T dot = T(0);
        for (int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
        T* gxr = gx + r * d;
        for (int64_t i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> l2_normalize_lastdim(Tape<T>& tp, Var<T> x, T eps) {
  const auto& s = x.shape();
  const int64_t d = s.back();
  const int64_t rows = x.val().numel() / d;
  Tensor<T> out(s);
  Tensor<T> inv_norm({rows});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T acc = eps;
    for (int64_t i = 0; i < d; ++i) acc += xr[i] * xr[i];
    const T inv = T(1) / std::sqrt(acc);
    inv_norm[r] = inv;
    T* orow = po + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = xr[i] * inv;
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    auto inv = std::make_shared<Tensor<T>>(std::move(inv_norm));
    nd->backprop = [nx, self, inv, rows, d] {
      const T* g = self->grad.ptr();
      const T* px = nx->value.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const T s_ = (*inv)[r];
        const T* gr = g + r * d;
        const T* xr = px + r * d;
        T dot = T(0);
        for (int64_t i = 0; i < d; ++i) dot += gr[i] * xr[i];
        const T s3dot = s_ * s_ * s_ * dot;
        T* gxr = gx + r * d;
        for (int64_t i = 0; i < d; ++i) gxr[i] += s_ * gr[i] - s3dot * xr[i];
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> mean_abs_diff(Tape<T>& tp, Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mean_abs_diff");
  const int64_t n = a.val().numel();
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += std::abs(pa[i] - pb[i]);
  Tensor<T> out({1});
  out[0] = acc / T(n);
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad() || b.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *nb = b.node, *self = nd;
    nd->backprop = [na, nb, self, n] {
      const T g = self->grad[0] / T(n);
      const T* pa = na->value.ptr();
      const T* pb = nb->value.ptr();
      T* ga = na->needs_grad ? na->ensure_grad().ptr() : nullptr;
      T* gb = nb->needs_grad ? nb->ensure_grad().ptr() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        const T d = pa[i] - pb[i];
        const T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
        if (ga) ga[i] += sg;
        if (gb) gb[i] -= sg;
      }
    };
  }
  return Var<T>{nd};
}

template <typename T>
Var<T> sum_all(Tape<T>& tp, Var<T> a) {
  const int64_t n = a.val().numel();
  const T* pa = a.val().ptr();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out({1});
  out[0] = acc;
  Node<T>* nd = tp.alloc(std::move(out), a.needs_grad());
  if (nd->needs_grad) {
    Node<T>*na = a.node, *self = nd;
    nd->backprop = [na, self, n] {
      const T g = self->grad[0];
      T* ga = na->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
  }
  return Var<T>{nd};
}

// ---------------------------------------------------------------- sequence

template <typename T>
Var<T> gather_tokens(Tape<T>& tp, Var<T> x, const std::vector<std::vector<int64_t>>& idx) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 3, "gather_tokens: rank-3 expected");
  const int64_t b = s[0], l = s[1], c = s[2];
  FADP_CHECK_SHAPE(static_cast<int64_t>(idx.size()) == b, "gather_tokens: batch mismatch");
  for (const auto& v : idx)
    FADP_CHECK_SHAPE(static_cast<int64_t>(v.size()) == l, "gather_tokens: row count mismatch");
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < l; ++j) {
      const T* src = px + (bi * l + idx[bi][j]) * c;
      T* dst = po + (bi * l + j) * c;
      std::copy(src, src + c, dst);
    }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    auto id = std::make_shared<std::vector<std::vector<int64_t>>>(idx);
    nd->backprop = [nx, self, id, b, l, c] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < l; ++j) {
          const T* src = g + (bi * l + j) * c;
          T* dst = gx + (bi * l + (*id)[bi][j]) * c;
          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
    };
  }
  return Var<T>{nd};
}

template <typename T>
std::vector<std::vector<int64_t>> argmax_lastdim(const Tensor<T>& x) {
  FADP_CHECK_SHAPE(x.rank() == 3, "argmax_lastdim: rank-3 expected");
  const int64_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(b));
  for (int64_t bi = 0; bi < b; ++bi) {
    out[static_cast<size_t>(bi)].resize(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) {
      const T* row = x.ptr() + (bi * l + j) * d;
      int64_t best = 0;
      for (int64_t i = 1; i < d; ++i)
        if (row[i] > row[best]) best = i;
      out[static_cast<size_t>(bi)][static_cast<size_t>(j)] = best;
    }
  }
  return out;
}

#define FADP_INSTANTIATE_BASIC(T)                                                             \
  template Var<T> add(Tape<T>&, Var<T>, Var<T>);                                              \
  template Var<T> sub(Tape<T>&, Var<T>, Var<T>);                                              \
  template Var<T> mul(Tape<T>&, Var<T>, Var<T>);                                              \
  template Var<T> add_scalar(Tape<T>&, Var<T>, T);                                            \
  template Var<T> mul_scalar(Tape<T>&, Var<T>, T);                                            \
  template Var<T> sigmoid(Tape<T>&, Var<T>);                                                  \
  template Var<T> gelu(Tape<T>&, Var<T>);                                                     \
  template Var<T> relu(Tape<T>&, Var<T>);                                                     \
  template Var<T> softplus(Tape<T>&, Var<T>);                                                 \
  template Var<T> detach(Tape<T>&, Var<T>);                                                   \
  template Var<T> scale_by(Tape<T>&, Var<T>, Var<T>);                                         \
  template Var<T> reshape(Tape<T>&, Var<T>, Shape);                                           \
  template Var<T> concat_channels(Tape<T>&, const std::vector<Var<T>>&);                      \
  template Var<T> slice_channels(Tape<T>&, Var<T>, int64_t, int64_t);                         \
  template Var<T> to_tokens(Tape<T>&, Var<T>);                                                \
  template Var<T> from_tokens(Tape<T>&, Var<T>, int64_t, int64_t);                            \
  template Var<T> transpose_last2(Tape<T>&, Var<T>);                                          \
  template Var<T> linear(Tape<T>&, Var<T>, Var<T>, Var<T>);                                   \
  template Var<T> matmul(Tape<T>&, Var<T>, Var<T>);                                           \
  template Var<T> bmm(Tape<T>&, Var<T>, Var<T>);                                              \
  template Var<T> global_avg_pool(Tape<T>&, Var<T>);                                          \
  template Var<T> scale_channels(Tape<T>&, Var<T>, Var<T>);                                   \
  template Var<T> layer_norm_channels(Tape<T>&, Var<T>, Var<T>, Var<T>, T);                   \
  template Var<T> log_softmax_lastdim(Tape<T>&, Var<T>);                                      \
  template Var<T> softmax_lastdim(Tape<T>&, Var<T>);                                          \
  template Var<T> l2_normalize_lastdim(Tape<T>&, Var<T>, T);                                  \
  template Var<T> mean_abs_diff(Tape<T>&, Var<T>, Var<T>);                                    \
  template Var<T> sum_all(Tape<T>&, Var<T>);                                                  \
  template Var<T> gather_tokens(Tape<T>&, Var<T>, const std::vector<std::vector<int64_t>>&); \
  template std::vector<std::vector<int64_t>> argmax_lastdim(const Tensor<T>&);

FADP_INSTANTIATE_BASIC(float)
FADP_INSTANTIATE_BASIC(double)

}  // namespace fadp
