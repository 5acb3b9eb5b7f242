#include <algorithm>
#include <memory>
#include <vector>

#include "fadpnet/nn.hpp"

namespace fadp {

namespace {

// ---- blocked GEMM kernels (row-major, single core) ----
// Register-tiled microkernel: C tile (MR x NR) (+)= A (MR x K) . B (K x NR).
// Fixed bounds let the compiler keep the whole tile in vector registers.
template <typename T, int MR, int NR>
inline void gemm_tile(int64_t k, const T* __restrict a, int64_t lda, const T* __restrict b,
                      int64_t ldb, T* __restrict c, int64_t ldc, bool accumulate) {
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = T(0);
  for (int64_t kk = 0; kk < k; ++kk) {
    const T* __restrict brow = b + kk * ldb;
    for (int i = 0; i < MR; ++i) {
      const T av = a[i * lda + kk];
      for (int j = 0; j < NR; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (int i = 0; i < MR; ++i) {
    T* crow = c + i * ldc;
    if (accumulate)
      for (int j = 0; j < NR; ++j) crow[j] += acc[i][j];
    else
      for (int j = 0; j < NR; ++j) crow[j] = acc[i][j];
  }
}

// C (MxN) = A (MxK) . B (KxN), optionally accumulating into C.
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c, bool accumulate) {
  constexpr int MR = 4;
  constexpr int NR = 64;  // spatial extents here are powers of two
  int64_t n0 = 0;
  for (; n0 + NR <= n; n0 += NR) {
    int64_t m0 = 0;
    for (; m0 + MR <= m; m0 += MR)
      gemm_tile<T, MR, NR>(k, a + m0 * k, k, b + n0, n, c + m0 * n + n0, n, accumulate);
    for (; m0 < m; ++m0)
      gemm_tile<T, 1, NR>(k, a + m0 * k, k, b + n0, n, c + m0 * n + n0, n, accumulate);
  }
  // column remainder
  if (n0 < n) {
    const int64_t nr = n - n0;
    for (int64_t m0 = 0; m0 < m; ++m0) {
      T* crow = c + m0 * n + n0;
      const T* arow = a + m0 * k;
      for (int64_t j = 0; j < nr; ++j) {
        T s = accumulate ? crow[j] : T(0);
        const T* __restrict bp = b + n0 + j;
        for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * bp[kk * n];
        crow[j] = s;
      }
    }
  }
}

// C (MxN) += A (MxK) . B^T where B is (NxK) row-major: batched dot products.
template <typename T>
void gemm_nt_acc(int64_t m, int64_t n, int64_t k, const T* __restrict a, const T* __restrict b,
                 T* __restrict c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* __restrict arow = a + i * k;
    int64_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const T* __restrict b0 = b + (j + 0) * k;
      const T* __restrict b1 = b + (j + 1) * k;
      const T* __restrict b2 = b + (j + 2) * k;
      const T* __restrict b3 = b + (j + 3) * k;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = arow[kk];
        s0 += av * b0[kk];
        s1 += av * b1[kk];
        s2 += av * b2[kk];
        s3 += av * b3[kk];
      }
      c[i * n + j + 0] += s0;
      c[i * n + j + 1] += s1;
      c[i * n + j + 2] += s2;
      c[i * n + j + 3] += s3;
    }
    for (; j < n; ++j) {
      const T* __restrict brow = b + j * k;
      T s = 0;
      for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      c[i * n + j] += s;
    }
  }
}

// ---- im2col with zero padding folded in ----
// col is (Cin*k*k) x (Ho*Wo), row-major.
template <typename T>
void im2col_zero(const T* x, int64_t cin, int64_t h, int64_t w, int64_t k, int stride, int pad,
                 int64_t ho, int64_t wo, T* col) {
  for (int64_t ic = 0; ic < cin; ++ic) {
    const T* plane = x + ic * h * w;
    for (int64_t kh = 0; kh < k; ++kh)
      for (int64_t kw = 0; kw < k; ++kw) {
        T* crow = col + ((ic * k + kh) * k + kw) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride + kh - pad;
          T* dst = crow + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* srow = plane + ih * w;
          if (stride == 1) {
            const int64_t iw0 = kw - pad;
            int64_t ow = 0;
            const int64_t lead = std::min(wo, std::max<int64_t>(0, -iw0));
            for (; ow < lead; ++ow) dst[ow] = T(0);
            const int64_t tail_start = std::min(wo, w - iw0);
            for (; ow < tail_start; ++ow) dst[ow] = srow[iw0 + ow];
            for (; ow < wo; ++ow) dst[ow] = T(0);
          } else {
            for (int64_t ow = 0; ow < wo; ++ow) {
              const int64_t iw = ow * stride + kw - pad;
              dst[ow] = (iw < 0 || iw >= w) ? T(0) : srow[iw];
            }
          }
        }
      }
  }
}

template <typename T>
void col2im_zero_acc(const T* col, int64_t cin, int64_t h, int64_t w, int64_t k, int stride,
                     int pad, int64_t ho, int64_t wo, T* gx) {
  for (int64_t ic = 0; ic < cin; ++ic) {
    T* plane = gx + ic * h * w;
    for (int64_t kh = 0; kh < k; ++kh)
      for (int64_t kw = 0; kw < k; ++kw) {
        const T* crow = col + ((ic * k + kh) * k + kw) * ho * wo;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= h) continue;
          const T* src = crow + oh * wo;
          T* drow = plane + ih * w;
          if (stride == 1) {
            const int64_t iw0 = kw - pad;
            const int64_t lead = std::min(wo, std::max<int64_t>(0, -iw0));
            const int64_t tail_start = std::min(wo, w - iw0);
            for (int64_t ow = lead; ow < tail_start; ++ow) drow[iw0 + ow] += src[ow];
          } else {
            for (int64_t ow = 0; ow < wo; ++ow) {
              const int64_t iw = ow * stride + kw - pad;
              if (iw >= 0 && iw < w) drow[iw] += src[ow];
            }
          }
        }
      }
  }
}

// ---- direct path for grouped / reflect-padded convolutions ----
template <typename T>
Tensor<T> pad_input(const Tensor<T>& x, int pad, PadMode mode) {
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (pad == 0) return x;
  FADP_CHECK_SHAPE(mode == PadMode::Zero || (pad < h && pad < w),
                   "reflect pad requires pad < spatial extent");
  const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  Tensor<T> out({b, c, hp, wp});
  const T* px = x.ptr();
  T* po = out.ptr();
  auto mirror = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* src = px + bc * h * w;
    T* dst = po + bc * hp * wp;
    for (int64_t ih = 0; ih < hp; ++ih) {
      const int64_t sh = ih - pad;
      if (mode == PadMode::Zero && (sh < 0 || sh >= h)) continue;
      const int64_t rh = mode == PadMode::Zero ? sh : mirror(sh, h);
      T* drow = dst + ih * wp;
      const T* srow = src + rh * w;
      if (mode == PadMode::Zero) {
        std::copy(srow, srow + w, drow + pad);
      } else {
        for (int64_t iw = 0; iw < wp; ++iw) drow[iw] = srow[mirror(iw - pad, w)];
      }
    }
  }
  return out;
}

template <typename T>
void unpad_accumulate(const Tensor<T>& gpad, Tensor<T>& gx, int pad, PadMode mode) {
  const int64_t b = gx.dim(0), c = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  if (pad == 0) {
    T* dst = gx.ptr();
    const T* src = gpad.ptr();
    for (int64_t i = 0; i < gx.numel(); ++i) dst[i] += src[i];
    return;
  }
  const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  auto mirror = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  const T* src = gpad.ptr();
  T* dst = gx.ptr();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* sp = src + bc * hp * wp;
    T* dp = dst + bc * h * w;
    for (int64_t ih = 0; ih < hp; ++ih) {
      const int64_t sh = ih - pad;
      if (mode == PadMode::Zero) {
        if (sh < 0 || sh >= h) continue;
        const T* srow = sp + ih * wp;
        T* drow = dp + sh * w;
        for (int64_t iw = 0; iw < w; ++iw) drow[iw] += srow[iw + pad];
      } else {
        const int64_t rh = mirror(sh, h);
        const T* srow = sp + ih * wp;
        T* drow = dp + rh * w;
        for (int64_t iw = 0; iw < wp; ++iw) drow[mirror(iw - pad, w)] += srow[iw];
      }
    }
  }
}

template <typename T>
void direct_forward(const Tensor<T>& xp, const Tensor<T>& w, const T* bias, Tensor<T>& out,
                    int stride, int64_t groups) {
  const int64_t batch = out.dim(0), cout = out.dim(1), ho = out.dim(2), wo = out.dim(3);
  const int64_t cin = xp.dim(1), hp = xp.dim(2), wp = xp.dim(3);
  const int64_t cin_g = w.dim(1), k = w.dim(2);
  const int64_t g_cout = cout / groups;
  const T* pw = w.ptr();
  const T* px = xp.ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < batch; ++bi)
    for (int64_t oc = 0; oc < cout; ++oc) {
      T* oplane = po + (bi * cout + oc) * ho * wo;
      if (bias) {
        const T bv = bias[oc];
        for (int64_t i = 0; i < ho * wo; ++i) oplane[i] = bv;
      }
      const int64_t gi = oc / g_cout;
      for (int64_t icg = 0; icg < cin_g; ++icg) {
        const int64_t ic = gi * cin_g + icg;
        const T* iplane = px + (bi * cin + ic) * hp * wp;
        const T* wk = pw + (oc * cin_g + icg) * k * k;
        for (int64_t kh = 0; kh < k; ++kh)
          for (int64_t kw = 0; kw < k; ++kw) {
            const T wv = wk[kh * k + kw];
            for (int64_t oh = 0; oh < ho; ++oh) {
              const T* __restrict irow = iplane + (oh * stride + kh) * wp + kw;
              T* __restrict orow = oplane + oh * wo;
              if (stride == 1)
                for (int64_t ow = 0; ow < wo; ++ow) orow[ow] += wv * irow[ow];
              else
                for (int64_t ow = 0; ow < wo; ++ow) orow[ow] += wv * irow[ow * stride];
            }
          }
      }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  FADP_CHECK_SHAPE(xs.size() == 4 && ws.size() == 4, "conv2d: rank-4 tensors expected");
  const int64_t batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int64_t cout = ws[0], cin_g = ws[1], k = ws[2];
  FADP_CHECK_SHAPE(ws[2] == ws[3], "conv2d: square kernels only");
  FADP_CHECK_SHAPE(cin % spec.groups == 0 && cout % spec.groups == 0,
                   "conv2d: groups must divide channel counts");
  FADP_CHECK_SHAPE(cin / spec.groups == cin_g, "conv2d: weight/input channel mismatch");
  FADP_CHECK_SHAPE(h + 2 * spec.pad >= k && wd + 2 * spec.pad >= k,
                   "conv2d: spatial extent smaller than kernel");
  const int64_t ho = conv_out_dim(h, static_cast<int>(k), spec.stride, spec.pad);
  const int64_t wo = conv_out_dim(wd, static_cast<int>(k), spec.stride, spec.pad);
  const bool gemm_path = spec.groups == 1 && spec.pad_mode == PadMode::Zero;
  const bool pointwise = gemm_path && k == 1 && spec.stride == 1 && spec.pad == 0;

  Tensor<T> out({batch, cout, ho, wo});
  const int64_t kdim = cin * k * k;
  const int64_t hw = ho * wo;

  if (gemm_path) {
    const T* px = x.val().ptr();
    const T* pw = w.val().ptr();
    T* po = out.ptr();
    std::vector<T> col;
    if (!pointwise) col.resize(static_cast<size_t>(kdim * hw));
    for (int64_t bi = 0; bi < batch; ++bi) {
      const T* bptr;
      if (pointwise) {
        bptr = px + bi * cin * h * wd;
      } else {
        im2col_zero(px + bi * cin * h * wd, cin, h, wd, k, spec.stride, spec.pad, ho, wo,
                    col.data());
        bptr = col.data();
      }
      gemm_nn(cout, hw, kdim, pw, bptr, po + bi * cout * hw, false);
    }
    if (b.defined()) {
      const T* pb = b.val().ptr();
      for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t oc = 0; oc < cout; ++oc) {
          T* row = po + (bi * cout + oc) * hw;
          const T bv = pb[oc];
          for (int64_t i = 0; i < hw; ++i) row[i] += bv;
        }
    }
  } else {
    Tensor<T> xp = pad_input(x.val(), spec.pad, spec.pad_mode);
    direct_forward(xp, w.val(), b.defined() ? b.val().ptr() : nullptr, out, spec.stride,
                   spec.groups);
  }

  bool needs = x.needs_grad() || w.needs_grad() || (b.defined() && b.needs_grad());
  Node<T>* nd = tp.alloc(std::move(out), needs);
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *nw = w.node, *self = nd;
    Node<T>* nb = b.defined() ? b.node : nullptr;
    ConvSpec sp = spec;
    nd->backprop = [nx, nw, nb, self, sp, batch, cin, cout, cin_g, k, h, wd, ho, wo, gemm_path,
                    pointwise, kdim, hw] {
      const T* g = self->grad.ptr();
      const T* pw = nw->value.ptr();
      const T* px = nx->value.ptr();

      if (nb && nb->needs_grad) {
        T* gb = nb->ensure_grad().ptr();
        for (int64_t bi = 0; bi < batch; ++bi)
          for (int64_t oc = 0; oc < cout; ++oc) {
            const T* gplane = g + (bi * cout + oc) * ho * wo;
            T acc = T(0);
            for (int64_t i = 0; i < ho * wo; ++i) acc += gplane[i];
            gb[oc] += acc;
          }
      }

      if (gemm_path) {
        std::vector<T> col;
        if (!pointwise && nw->needs_grad) col.resize(static_cast<size_t>(kdim * hw));
        if (nw->needs_grad) {
          T* gw = nw->ensure_grad().ptr();
          for (int64_t bi = 0; bi < batch; ++bi) {
            const T* bptr;
            if (pointwise) {
              bptr = px + bi * cin * h * wd;
            } else {
              im2col_zero(px + bi * cin * h * wd, cin, h, wd, k, sp.stride, sp.pad, ho, wo,
                          col.data());
              bptr = col.data();
            }
            gemm_nt_acc(cout, kdim, hw, g + bi * cout * hw, bptr, gw);
          }
        }
        if (nx->needs_grad) {
          Tensor<T>& gx = nx->ensure_grad();
          // W^T once: (kdim x cout)
          std::vector<T> wt(static_cast<size_t>(kdim * cout));
          for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t kk = 0; kk < kdim; ++kk) wt[static_cast<size_t>(kk * cout + oc)] = pw[oc * kdim + kk];
          std::vector<T> gcol(static_cast<size_t>(kdim * hw));
          for (int64_t bi = 0; bi < batch; ++bi) {
            gemm_nn(kdim, hw, cout, wt.data(), g + bi * cout * hw, gcol.data(), false);
            if (pointwise) {
              T* dst = gx.ptr() + bi * cin * h * wd;
              const T* src = gcol.data();
              for (int64_t i = 0; i < cin * h * wd; ++i) dst[i] += src[i];
            } else {
              col2im_zero_acc(gcol.data(), cin, h, wd, k, sp.stride, sp.pad, ho, wo,
                              gx.ptr() + bi * cin * h * wd);
            }
          }
        }
        return;
      }

      // direct path (grouped / reflect)
      Tensor<T> xp = pad_input(nx->value, sp.pad, sp.pad_mode);
      const int64_t hp = xp.dim(2), wp = xp.dim(3);
      const int stride = sp.stride;
      const int64_t g_cout = cout / sp.groups;
      const T* pxp = xp.ptr();
      if (nw->needs_grad) {
        T* gw = nw->ensure_grad().ptr();
        for (int64_t oc = 0; oc < cout; ++oc) {
          const int64_t gi = oc / g_cout;
          for (int64_t icg = 0; icg < cin_g; ++icg) {
            const int64_t ic = gi * cin_g + icg;
            T* gwk = gw + (oc * cin_g + icg) * k * k;
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                T acc = T(0);
                for (int64_t bi = 0; bi < batch; ++bi) {
                  const T* gplane = g + (bi * cout + oc) * ho * wo;
                  const T* iplane = pxp + (bi * cin + ic) * hp * wp;
                  for (int64_t oh = 0; oh < ho; ++oh) {
                    const T* __restrict grow = gplane + oh * wo;
                    const T* __restrict irow = iplane + (oh * stride + kh) * wp + kw;
                    if (stride == 1)
                      for (int64_t ow = 0; ow < wo; ++ow) acc += grow[ow] * irow[ow];
                    else
                      for (int64_t ow = 0; ow < wo; ++ow) acc += grow[ow] * irow[ow * stride];
                  }
                }
                gwk[kh * k + kw] += acc;
              }
          }
        }
      }
      if (nx->needs_grad) {
        Tensor<T> gpad({batch, cin, hp, wp});
        T* gp = gpad.ptr();
        for (int64_t bi = 0; bi < batch; ++bi)
          for (int64_t oc = 0; oc < cout; ++oc) {
            const int64_t gi = oc / g_cout;
            const T* gplane = g + (bi * cout + oc) * ho * wo;
            for (int64_t icg = 0; icg < cin_g; ++icg) {
              const int64_t ic = gi * cin_g + icg;
              T* iplane = gp + (bi * cin + ic) * hp * wp;
              const T* wk = pw + (oc * cin_g + icg) * k * k;
              for (int64_t kh = 0; kh < k; ++kh)
                for (int64_t kw = 0; kw < k; ++kw) {
                  const T wv = wk[kh * k + kw];
                  for (int64_t oh = 0; oh < ho; ++oh) {
                    const T* __restrict grow = gplane + oh * wo;
                    T* __restrict irow = iplane + (oh * stride + kh) * wp + kw;
                    if (stride == 1)
                      for (int64_t ow = 0; ow < wo; ++ow) irow[ow] += wv * grow[ow];
                    else
                      for (int64_t ow = 0; ow < wo; ++ow) irow[ow * stride] += wv * grow[ow];
                  }
                }
            }
          }
        unpad_accumulate(gpad, nx->ensure_grad(), sp.pad, sp.pad_mode);
      }
    };
  }
  return Var<T>{nd};
}

template Var<float> conv2d(Tape<float>&, Var<float>, Var<float>, Var<float>, const ConvSpec&);
template Var<double> conv2d(Tape<double>&, Var<double>, Var<double>, Var<double>, const ConvSpec&);

}  // namespace fadp
