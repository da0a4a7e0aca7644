#ifndef MMREC_TENSOR_HPP
#define MMREC_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "mmrec/common.hpp"

namespace mmrec {

// Dense row-major array; rank 1 or 2 in practice. float in the production path,
// double for the finite-difference verification path.
template <typename T>
struct TensorT {
  std::vector<size_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<size_t> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
  TensorT(std::vector<size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw ValidationError("tensor data size does not match shape");
  }

  static TensorT zeros(std::initializer_list<size_t> s) { return TensorT(std::vector<size_t>(s)); }
  static TensorT scalar(T v) {
    TensorT t(std::vector<size_t>{1});
    t.data[0] = v;
    return t;
  }

  static size_t numel_of(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  size_t numel() const { return data.size(); }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& at(size_t i) { return data[i]; }
  T at(size_t i) const { return data[i]; }
  T& at(size_t i, size_t j) { return data[i * cols() + j]; }
  T at(size_t i, size_t j) const { return data[i * cols() + j]; }
  T* row_ptr(size_t i) { return data.data() + i * cols(); }
  const T* row_ptr(size_t i) const { return data.data() + i * cols(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

}  // namespace mmrec

#endif
