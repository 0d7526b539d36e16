#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace assoc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// dense row-major tensor
template <typename S>
struct NdArray {
  Shape shape;
  std::vector<S> data;

  NdArray() = default;
  explicit NdArray(Shape sh) : shape(std::move(sh)), data(numel(shape)) {}
  NdArray(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {}

  static NdArray zeros(Shape sh) { return NdArray(std::move(sh)); }
  static NdArray full(Shape sh, S v) {
    NdArray a(std::move(sh));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
  }
  static NdArray scalar(S v) { return NdArray({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }
  // rank-2 access
  S& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const NdArray& o) const { return shape == o.shape; }
};

template <typename To, typename From>
NdArray<To> cast_array(const NdArray<From>& a) {
  NdArray<To> out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = static_cast<To>(a.data[i]);
  return out;
}

}  // namespace assoc
