#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "fadpnet/errors.hpp"

namespace fadp {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_eq(const Shape& a, const Shape& b);

// Dense row-major n-d array. All tensors in this codebase are contiguous;
// views are never aliased, ops materialize their outputs.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4-d accessor for (B, C, H, W) layouts; used in slow paths and tests.
  T& at4(int64_t b, int64_t c, int64_t h, int64_t w) {
    return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  const T& at4(int64_t b, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T& at3(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at3(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  void fill(T v) {
    for (auto& x : data) x = v;
  }
};

template <typename Dst, typename Src>
Tensor<Dst> tensor_cast(const Tensor<Src>& t) {
  Tensor<Dst> out;
  out.shape = t.shape;
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<Dst>(t.data[i]);
  return out;
}

}  // namespace fadp
