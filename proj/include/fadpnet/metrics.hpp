#pragma once

#include <string>

#include "fadpnet/tensor.hpp"

namespace fadp {

// Mean absolute difference over all elements.
template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b);

// 10*log10(range^2 / MSE) over all elements (RGB convention); +inf when MSE=0.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double data_range = 1.0);

// Same, on the BT.601 luminance of (3,H,W) images.
template <typename T>
double psnr_luma(const Tensor<T>& a, const Tensor<T>& b, double data_range = 1.0);

// Structural similarity on the BT.601 luminance: 11x11 gaussian window,
// sigma 1.5, K1=0.01, K2=0.03, valid-mode mean over window positions.
// Implemented with separable filtering; tests check it against a direct
// per-window oracle.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double data_range = 1.0);

template <typename T>
Tensor<double> luminance_bt601(const Tensor<T>& rgb);  // (3,H,W) -> (1,H,W)

std::string format_psnr(double v);  // "inf" for the exact-match sentinel

}  // namespace fadp
