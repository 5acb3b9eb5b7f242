#include <algorithm>
#include <cmath>
#include <memory>

#include "fadpnet/nn.hpp"

namespace fadp {

template <typename T>
Var<T> upsample_nearest2x(Tape<T>& tp, Var<T> x) {
  const auto& s = x.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "upsample_nearest2x: rank-4 expected");
  const int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> out({b, c, 2 * h, 2 * w});
  const T* px = x.val().ptr();
  T* po = out.ptr();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* sp = px + bc * h * w;
    T* dp = po + bc * 4 * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T v = sp[i * w + j];
        T* d0 = dp + (2 * i) * 2 * w + 2 * j;
        d0[0] = v;
        d0[1] = v;
        d0[2 * w] = v;
        d0[2 * w + 1] = v;
      }
  }
  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *self = nd;
    nd->backprop = [nx, self, b, c, h, w] {
      const T* g = self->grad.ptr();
      T* gx = nx->ensure_grad().ptr();
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* gp = g + bc * 4 * h * w;
        T* dp = gx + bc * h * w;
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) {
            const T* g0 = gp + (2 * i) * 2 * w + 2 * j;
            dp[i * w + j] += g0[0] + g0[1] + g0[2 * w] + g0[2 * w + 1];
          }
      }
    };
  }
  return Var<T>{nd};
}

// Border-clamped bilinear warp. Position gradients vanish where the sample
// position was clamped outside the valid range.
template <typename T>
Var<T> warp_bilinear(Tape<T>& tp, Var<T> x, Var<T> offsets) {
  const auto& s = x.shape();
  const auto& os = offsets.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "warp_bilinear: rank-4 expected");
  FADP_CHECK_SHAPE(os.size() == 4 && os[1] == 2 && os[0] == s[0] && os[2] == s[2] && os[3] == s[3],
                   "warp_bilinear: offsets must be (B,2,H,W) matching x");
  const int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  const T* poff = offsets.val().ptr();
  T* po = out.ptr();

  auto sample_plan = [&](int64_t bi, int64_t i, int64_t j, int64_t& x0, int64_t& y0, T& fx, T& fy,
                         bool& live_x, bool& live_y) {
    const T dx = poff[((bi * 2 + 0) * h + i) * w + j];
    const T dy = poff[((bi * 2 + 1) * h + i) * w + j];
    T sx = static_cast<T>(j) + dx;
    T sy = static_cast<T>(i) + dy;
    live_x = sx > T(0) && sx < T(w - 1);
    live_y = sy > T(0) && sy < T(h - 1);
    sx = std::min(std::max(sx, T(0)), T(w - 1));
    sy = std::min(std::max(sy, T(0)), T(h - 1));
    x0 = std::min(static_cast<int64_t>(std::floor(sx)), w - 2 >= 0 ? w - 2 : 0);
    y0 = std::min(static_cast<int64_t>(std::floor(sy)), h - 2 >= 0 ? h - 2 : 0);
    fx = sx - static_cast<T>(x0);
    fy = sy - static_cast<T>(y0);
  };

  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        int64_t x0, y0;
        T fx, fy;
        bool lx, ly;
        sample_plan(bi, i, j, x0, y0, fx, fy, lx, ly);
        const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
        const T w10 = fy * (T(1) - fx), w11 = fy * fx;
        for (int64_t ci = 0; ci < c; ++ci) {
          const T* plane = px + (bi * c + ci) * h * w;
          const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x0 + 1];
          const T v10 = plane[(y0 + 1) * w + x0], v11 = plane[(y0 + 1) * w + x0 + 1];
          po[((bi * c + ci) * h + i) * w + j] = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;
        }
      }

  Node<T>* nd = tp.alloc(std::move(out), x.needs_grad() || offsets.needs_grad());
  if (nd->needs_grad) {
    Node<T>*nx = x.node, *no = offsets.node, *self = nd;
    nd->backprop = [nx, no, self, b, c, h, w] {
      const T* g = self->grad.ptr();
      const T* px = nx->value.ptr();
      const T* poff = no->value.ptr();
      T* gx = nx->needs_grad ? nx->ensure_grad().ptr() : nullptr;
      T* goff = no->needs_grad ? no->ensure_grad().ptr() : nullptr;
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) {
            const T dx = poff[((bi * 2 + 0) * h + i) * w + j];
            const T dy = poff[((bi * 2 + 1) * h + i) * w + j];
            T sx = static_cast<T>(j) + dx;
            T sy = static_cast<T>(i) + dy;
            const bool lx = sx > T(0) && sx < T(w - 1);
            const bool ly = sy > T(0) && sy < T(h - 1);
            sx = std::min(std::max(sx, T(0)), T(w - 1));
            sy = std::min(std::max(sy, T(0)), T(h - 1));
            const int64_t x0 = std::min(static_cast<int64_t>(std::floor(sx)), w - 2 >= 0 ? w - 2 : 0);
            const int64_t y0 = std::min(static_cast<int64_t>(std::floor(sy)), h - 2 >= 0 ? h - 2 : 0);
            const T fx = sx - static_cast<T>(x0);
            const T fy = sy - static_cast<T>(y0);
            const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
            const T w10 = fy * (T(1) - fx), w11 = fy * fx;
            T gdx = T(0), gdy = T(0);
            for (int64_t ci = 0; ci < c; ++ci) {
              const T gv = g[((bi * c + ci) * h + i) * w + j];
              if (gv == T(0)) continue;
              const int64_t base = (bi * c + ci) * h * w;
              if (gx) {
                gx[base + y0 * w + x0] += gv * w00;
                gx[base + y0 * w + x0 + 1] += gv * w01;
                gx[base + (y0 + 1) * w + x0] += gv * w10;
                gx[base + (y0 + 1) * w + x0 + 1] += gv * w11;
              }
              if (goff) {
                const T v00 = px[base + y0 * w + x0], v01 = px[base + y0 * w + x0 + 1];
                const T v10 = px[base + (y0 + 1) * w + x0], v11 = px[base + (y0 + 1) * w + x0 + 1];
                if (lx) gdx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                if (ly) gdy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
            }
            if (goff) {
              goff[((bi * 2 + 0) * h + i) * w + j] += gdx;
              goff[((bi * 2 + 1) * h + i) * w + j] += gdy;
            }
          }
    };
  }
  return Var<T>{nd};
}

template Var<float> upsample_nearest2x(Tape<float>&, Var<float>);
template Var<double> upsample_nearest2x(Tape<double>&, Var<double>);
template Var<float> warp_bilinear(Tape<float>&, Var<float>, Var<float>);
template Var<double> warp_bilinear(Tape<double>&, Var<double>, Var<double>);

}  // namespace fadp
