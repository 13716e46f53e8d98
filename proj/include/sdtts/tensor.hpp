#ifndef SDTTS_TENSOR_HPP
#define SDTTS_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdtts {
namespace nn {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

// Dense row-major tensor. Rank is dynamic; most of the model uses rank 2,
// the conv stacks use rank 3/4.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != count(shape))
      throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape));
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  int rows() const { return shape.size() == 2 ? shape[0] : throw_rank2(); }
  int cols() const { return shape.size() == 2 ? shape[1] : throw_rank2(); }

  T& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  T& at3(int c, int h, int w) {
    return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  const T& at3(int c, int h, int w) const {
    return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  T& at4(int o, int c, int h, int w) {
    return data[((static_cast<size_t>(o) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int o, int c, int h, int w) const {
    return data[((static_cast<size_t>(o) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  [[noreturn]] int throw_rank2() const {
    throw std::invalid_argument("tensor: expected rank 2, got shape " + shape_str(shape));
  }
};

}  // namespace nn
}  // namespace sdtts

#endif
