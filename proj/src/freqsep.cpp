#include "fadpnet/freqsep.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "fadpnet/errors.hpp"

namespace fadp {

void LowPassSpec::validate() const {
  if (kernel_size < 3 || kernel_size % 2 == 0)
    throw ConfigError("lowpass kernel_size must be odd and >= 3");
  if (kind == Kind::GaussianBlur && !(sigma > 0)) throw ConfigError("lowpass sigma must be > 0");
}

void BandSpec::validate() const {
  if (!(cut_low > 0 && cut_low < cut_mid && cut_mid <= 0.5))
    throw ConfigError("band cuts must satisfy 0 < cut_low < cut_mid <= 0.5");
}

template <typename T>
Tensor<T> lowpass_kernel(const LowPassSpec& spec) {
  spec.validate();
  const int k = spec.kernel_size;
  Tensor<T> out({k, k});
  if (spec.kind == LowPassSpec::Kind::BoxBlur) {
    out.fill(static_cast<T>(1.0 / (static_cast<double>(k) * k)));
    return out;
  }
  const int r = k / 2;
  std::vector<double> w(static_cast<size_t>(k) * k);
  double total = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double dy = i - r, dx = j - r;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * spec.sigma * spec.sigma));
      w[static_cast<size_t>(i) * k + j] = v;
      total += v;
    }
  for (int i = 0; i < k * k; ++i) out[i] = static_cast<T>(w[static_cast<size_t>(i)] / total);
  return out;
}

template <typename T>
std::pair<Var<T>, Var<T>> split_frequency(Tape<T>& tp, Var<T> f, const LowPassSpec& spec) {
  const auto& s = f.shape();
  FADP_CHECK_SHAPE(s.size() == 4, "split_frequency: rank-4 expected");
  if (s[2] < spec.kernel_size || s[3] < spec.kernel_size)
    throw ShapeError("split_frequency: spatial extent smaller than kernel");
  const int64_t c = s[1];
  const int k = spec.kernel_size;
  Tensor<T> k2 = lowpass_kernel<T>(spec);
  Tensor<T> w({c, 1, k, k});
  for (int64_t ci = 0; ci < c; ++ci)
    std::copy(k2.data.begin(), k2.data.end(), w.data.begin() + ci * k * k);
  ConvSpec cs;
  cs.stride = 1;
  cs.pad = k / 2;
  cs.groups = static_cast<int>(c);
  cs.pad_mode = PadMode::Reflect;
  Var<T> low = conv2d(tp, f, tp.constant(std::move(w)), Var<T>{}, cs);
  Var<T> high = sub(tp, f, low);
  return {low, high};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_frequency(const Tensor<T>& f, const LowPassSpec& spec) {
  Tape<T> tp(false);
  auto [lo, hi] = split_frequency(tp, tp.constant(f), spec);
  return {lo.val(), hi.val()};
}

namespace {

// Row-column complex DFT, double precision. N is small here, so the naive
// O(N^2) per-line transform with a precomputed twiddle table is plenty.
struct DftTable {
  int n;
  std::vector<double> cosv, sinv;
  explicit DftTable(int n_) : n(n_), cosv(static_cast<size_t>(n_) * n_), sinv(cosv.size()) {
    for (int k = 0; k < n; ++k)
      for (int t = 0; t < n; ++t) {
        const double ang = -2.0 * 3.14159265358979323846 * k * t / n;
        cosv[static_cast<size_t>(k) * n + t] = std::cos(ang);
        sinv[static_cast<size_t>(k) * n + t] = std::sin(ang);
      }
  }
};

}  // namespace

template <typename T>
BandRatios band_energy_ratios(const Tensor<T>& f, const BandSpec& bands) {
  bands.validate();
  FADP_CHECK_SHAPE(f.rank() == 4, "band_energy_ratios: rank-4 expected");
  const int64_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  FADP_CHECK_SHAPE(h >= 4 && w >= 4, "band_energy_ratios: spatial extent must be >= 4");

  DftTable trow(static_cast<int>(w));
  DftTable tcol(static_cast<int>(h));
  std::vector<double> re_row(static_cast<size_t>(h) * w), im_row(re_row.size());
  std::vector<double> re(re_row.size()), im(re_row.size());

  double acc_low = 0, acc_mid = 0, acc_high = 0;
  int64_t live_channels = 0;

  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* plane = f.ptr() + bc * h * w;
    // rows
    for (int64_t i = 0; i < h; ++i)
      for (int64_t kx = 0; kx < w; ++kx) {
        double ar = 0, ai = 0;
        const double* cv = trow.cosv.data() + kx * w;
        const double* sv = trow.sinv.data() + kx * w;
        for (int64_t t = 0; t < w; ++t) {
          const double v = static_cast<double>(plane[i * w + t]);
          ar += v * cv[t];
          ai += v * sv[t];
        }
        re_row[static_cast<size_t>(i * w + kx)] = ar;
        im_row[static_cast<size_t>(i * w + kx)] = ai;
      }
    // columns
    for (int64_t kx = 0; kx < w; ++kx)
      for (int64_t ky = 0; ky < h; ++ky) {
        double ar = 0, ai = 0;
        const double* cv = tcol.cosv.data() + ky * h;
        const double* sv = tcol.sinv.data() + ky * h;
        for (int64_t t = 0; t < h; ++t) {
          const double vr = re_row[static_cast<size_t>(t * w + kx)];
          const double vi = im_row[static_cast<size_t>(t * w + kx)];
          ar += vr * cv[t] - vi * sv[t];
          ai += vr * sv[t] + vi * cv[t];
        }
        re[static_cast<size_t>(ky * w + kx)] = ar;
        im[static_cast<size_t>(ky * w + kx)] = ai;
      }
    // bin by radial frequency, DC excluded
    double e_low = 0, e_mid = 0, e_high = 0;
    double dc_power = 0;
    for (int64_t ky = 0; ky < h; ++ky)
      for (int64_t kx = 0; kx < w; ++kx) {
        if (kx == 0 && ky == 0) {
          dc_power = re[0] * re[0] + im[0] * im[0];
          continue;
        }
        const double fy = static_cast<double>(std::min(ky, h - ky)) / static_cast<double>(h);
        const double fx = static_cast<double>(std::min(kx, w - kx)) / static_cast<double>(w);
        const double r = std::sqrt(fx * fx + fy * fy);
        const double p = re[static_cast<size_t>(ky * w + kx)] * re[static_cast<size_t>(ky * w + kx)] +
                         im[static_cast<size_t>(ky * w + kx)] * im[static_cast<size_t>(ky * w + kx)];
        if (r <= bands.cut_low)
          e_low += p;
        else if (r <= bands.cut_mid)
          e_mid += p;
        else
          e_high += p;
      }
    const double total = e_low + e_mid + e_high;
    // DC-only channel up to DFT roundoff: ratios undefined, skip.
    if (total <= (total + dc_power) * 1e-18) continue;
    acc_low += e_low / total;
    acc_mid += e_mid / total;
    acc_high += e_high / total;
    ++live_channels;
  }

  if (live_channels == 0)
    throw DataError("band_energy_ratios: degenerate input (no non-DC spectral energy)");
  BandRatios r;
  r.low = acc_low / static_cast<double>(live_channels);
  r.mid = acc_mid / static_cast<double>(live_channels);
  r.high = acc_high / static_cast<double>(live_channels);
  return r;
}

std::string band_csv_row(const std::string& source, const BandRatios& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f", source.c_str(), r.low, r.mid, r.high);
  return buf;
}

template Tensor<float> lowpass_kernel(const LowPassSpec&);
template Tensor<double> lowpass_kernel(const LowPassSpec&);
template std::pair<Var<float>, Var<float>> split_frequency(Tape<float>&, Var<float>,
                                                           const LowPassSpec&);
template std::pair<Var<double>, Var<double>> split_frequency(Tape<double>&, Var<double>,
                                                             const LowPassSpec&);
template std::pair<Tensor<float>, Tensor<float>> split_frequency(const Tensor<float>&,
                                                                 const LowPassSpec&);
template std::pair<Tensor<double>, Tensor<double>> split_frequency(const Tensor<double>&,
                                                                   const LowPassSpec&);
template BandRatios band_energy_ratios(const Tensor<float>&, const BandSpec&);
template BandRatios band_energy_ratios(const Tensor<double>&, const BandSpec&);

}  // namespace fadp
