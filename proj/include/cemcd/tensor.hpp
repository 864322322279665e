#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cemcd/errors.hpp"
#include "cemcd/rng.hpp"

namespace cemcd {

// Dense row-major tensor of rank 1..4. Rank-4 data follows the NCHW
// convention; lower ranks drop leading axes (images are [C,H,W], masks [H,W]).
template <typename S>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims, S fill = S(0)) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 4) throw ShapeError("tensor rank must be 1..4");
    std::size_t n = 1;
    for (int d : dims_) {
      if (d <= 0) throw ShapeError("tensor dims must be positive: " + shape_str());
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<int> dims, S v) { return Tensor(std::move(dims), v); }

  static Tensor randn(std::vector<int> dims, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<S>(rng.normal() * stddev);
    return t;
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return dims_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // Rank-specific accessors; offsets are the caller's responsibility in hot
  // loops, these are for tests and glue code.
  S& at(int a, int b) { return data_[idx2(a, b)]; }
  const S& at(int a, int b) const { return data_[idx2(a, b)]; }
  S& at(int a, int b, int c) { return data_[idx3(a, b, c)]; }
  const S& at(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
  S& at(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
  const S& at(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << "]";
    return os.str();
  }

private:
  std::size_t idx2(int a, int b) const {
    return static_cast<std::size_t>(a) * dims_[1] + b;
  }
  std::size_t idx3(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c;
  }
  std::size_t idx4(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
  }

  std::vector<int> dims_;
  std::vector<S> data_;
};

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

}  // namespace cemcd
