#include "fadpnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "fadpnet/errors.hpp"

namespace fadp {

template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  FADP_CHECK_SHAPE(shape_eq(a.shape, b.shape), "l1_loss: shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(double(a[i]) - double(b[i]));
  return acc / static_cast<double>(a.numel());
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double data_range) {
  FADP_CHECK_SHAPE(shape_eq(a.shape, b.shape), "psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

template <typename T>
Tensor<double> luminance_bt601(const Tensor<T>& rgb) {
  FADP_CHECK_SHAPE(rgb.rank() == 3 && rgb.dim(0) == 3, "luminance: (3,H,W) expected");
  const int64_t h = rgb.dim(1), w = rgb.dim(2);
  Tensor<double> out({1, h, w});
  for (int64_t i = 0; i < h * w; ++i)
    out[i] = 0.299 * double(rgb[i]) + 0.587 * double(rgb[h * w + i]) +
             0.114 * double(rgb[2 * h * w + i]);
  return out;
}

template <typename T>
double psnr_luma(const Tensor<T>& a, const Tensor<T>& b, double data_range) {
  return psnr(luminance_bt601(a), luminance_bt601(b), data_range);
}

namespace {

std::vector<double> gaussian_window_1d(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  const int r = size / 2;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    total += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Valid-mode separable filter: (H,W) -> (H-size+1, W-size+1).
void filter_valid(const std::vector<double>& img, int64_t h, int64_t w,
                  const std::vector<double>& win, std::vector<double>& out) {
  const int size = static_cast<int>(win.size());
  const int64_t wo = w - size + 1, ho = h - size + 1;
  std::vector<double> tmp(static_cast<size_t>(h * wo));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (int t = 0; t < size; ++t) acc += win[static_cast<size_t>(t)] * img[static_cast<size_t>(y * w + x + t)];
      tmp[static_cast<size_t>(y * wo + x)] = acc;
    }
  out.assign(static_cast<size_t>(ho * wo), 0.0);
  for (int64_t y = 0; y < ho; ++y)
    for (int64_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (int t = 0; t < size; ++t) acc += win[static_cast<size_t>(t)] * tmp[static_cast<size_t>((y + t) * wo + x)];
      out[static_cast<size_t>(y * wo + x)] = acc;
    }
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double data_range) {
  FADP_CHECK_SHAPE(shape_eq(a.shape, b.shape), "ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  Tensor<double> la = a.dim(0) == 3 ? luminance_bt601(a) : tensor_cast<double>(a);
  Tensor<double> lb = b.dim(0) == 3 ? luminance_bt601(b) : tensor_cast<double>(b);
  const int64_t h = la.dim(1), w = la.dim(2);
  FADP_CHECK_SHAPE(h >= kWin && w >= kWin, "ssim: min side must be >= 11");

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const auto win = gaussian_window_1d(kWin, kSigma);

  std::vector<double> x(la.data.begin(), la.data.end());
  std::vector<double> y(lb.data.begin(), lb.data.end());
  const size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<double> mx, my, mxx, myy, mxy;
  filter_valid(x, h, w, win, mx);
  filter_valid(y, h, w, win, my);
  filter_valid(xx, h, w, win, mxx);
  filter_valid(yy, h, w, win, myy);
  filter_valid(xy, h, w, win, mxy);

  double acc = 0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    const double num = (2 * mx[i] * my[i] + c1) * (2 * cxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mx.size());
}

std::string format_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

#define FADP_INSTANTIATE_METRICS(T)                                      \
  template double l1_loss(const Tensor<T>&, const Tensor<T>&);           \
  template double psnr(const Tensor<T>&, const Tensor<T>&, double);      \
  template double psnr_luma(const Tensor<T>&, const Tensor<T>&, double); \
  template double ssim(const Tensor<T>&, const Tensor<T>&, double);      \
  template Tensor<double> luminance_bt601(const Tensor<T>&);

FADP_INSTANTIATE_METRICS(float)
FADP_INSTANTIATE_METRICS(double)

}  // namespace fadp
