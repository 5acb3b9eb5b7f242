#pragma once

#include <string>
#include <utility>

#include "fadpnet/nn.hpp"

namespace fadp {

// Linear shift-invariant lowpass used to split features into complementary
// low/high parts: F_L = lowpass(F), F_H = F - F_L.
struct LowPassSpec {
  enum class Kind { BoxBlur, GaussianBlur };
  Kind kind = Kind::BoxBlur;
  int kernel_size = 3;   // odd, >= 3
  double sigma = 1.0;    // gaussian only

  void validate() const;
};

// Radial band boundaries as fractions of the per-axis Nyquist frequency.
struct BandSpec {
  double cut_low = 1.0 / 6.0;
  double cut_mid = 1.0 / 3.0;

  void validate() const;
};

struct BandRatios {
  double low = 0, mid = 0, high = 0;
};

// Normalized 2-d kernel for the spec; weights are nonnegative and sum to 1.
template <typename T>
Tensor<T> lowpass_kernel(const LowPassSpec& spec);

// Differentiable split on the tape (fixed, non-learnable kernel, reflect pad).
template <typename T>
std::pair<Var<T>, Var<T>> split_frequency(Tape<T>& tp, Var<T> f, const LowPassSpec& spec);

// Plain-tensor convenience wrapper.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_frequency(const Tensor<T>& f, const LowPassSpec& spec);

// Band-wise spectral energy ratios of a (B,C,H,W) feature map: per-channel 2-d
// DFT power with the DC bin excluded, binned by radial frequency (per-axis
// normalized to [0, 0.5]; radii beyond cut_mid count as high), ratios averaged
// over batch and channels. Channels with no non-DC energy are skipped; if all
// are degenerate the input is rejected.
template <typename T>
BandRatios band_energy_ratios(const Tensor<T>& f, const BandSpec& bands);

// CSV row `source,band_low,band_mid,band_high` with 6 decimal places.
std::string band_csv_row(const std::string& source, const BandRatios& r);

}  // namespace fadp
