#pragma once

#include <string>

#include "fadpnet/tensor.hpp"

namespace fadp {

// 8-bit PNG in, (3,H,W) float in [0,1] out. Gray and alpha inputs are
// expanded/composited to RGB. Throws DataError on unreadable files.
Tensor<float> read_png(const std::string& path);

// (3,H,W) float in [0,1] -> 8-bit RGB PNG. Values are clamped and rounded.
void write_png(const std::string& path, const Tensor<float>& img);

bool file_exists(const std::string& path);

}  // namespace fadp
