#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cemcd/ops.hpp"
#include "cemcd/rng.hpp"
#include "cemcd/tensor.hpp"

namespace cemcd {

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  void init_shape(std::vector<int> dims) {
    value = Tensor<S>(dims);
    grad = Tensor<S>(std::move(dims));
  }
};

// Layers cache what their backward pass needs during forward. One forward
// then one backward per layer per step; training owns the parameters
// exclusively while updating (single writer).

template <typename S>
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int kernel, int stride, int pad, bool bias)
      : spec_{kernel, stride, pad}, has_bias_(bias) {
    w_.name = name + ".w";
    w_.init_shape({cout, cin, kernel, kernel});
    if (bias) {
      b_.name = name + ".b";
      b_.init_shape({cout});
    }
  }

  void init(Rng& rng) {
    const double fan_in = static_cast<double>(w_.value.dim(1)) * spec_.kernel * spec_.kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < w_.value.numel(); ++i)
      w_.value[i] = static_cast<S>(rng.normal() * stddev);
    if (has_bias_) b_.value.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    return conv2d_forward(x, w_.value, has_bias_ ? &b_.value : nullptr, spec_, &scratch_);
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    return conv2d_backward(x_, w_.value, spec_, dy, w_.grad, has_bias_ ? &b_.grad : nullptr, &scratch_);
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }

  void drop_cache() { x_ = Tensor<S>(); }

  Param<S>& weight() { return w_; }
  Param<S>& bias() { return b_; }
  const ConvSpec& spec() const { return spec_; }

private:
  ConvSpec spec_{};
  bool has_bias_ = false;
  Param<S> w_, b_;
  Tensor<S> x_;
  std::vector<S> scratch_;
};

template <typename S>
class ConvTranspose2x2 {
public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(std::string name, int cin, int cout) {
    w_.name = name + ".w";
    w_.init_shape({cin, cout, 2, 2});
    b_.name = name + ".b";
    b_.init_shape({cout});
  }

  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(w_.value.dim(0)) * 4.0));
    for (std::size_t i = 0; i < w_.value.numel(); ++i)
      w_.value[i] = static_cast<S>(rng.normal() * stddev);
    b_.value.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    return convtranspose2x2_forward(x, w_.value, &b_.value);
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    return convtranspose2x2_backward(x_, w_.value, dy, w_.grad, &b_.grad);
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  void drop_cache() { x_ = Tensor<S>(); }

private:
  Param<S> w_, b_;
  Tensor<S> x_;
};

// Batch normalization over (N,H,W) per channel. Reductions accumulate
// per-sample partials first, then combine across the batch in index order;
// this keeps a two-sample batch bit-identical under sample swap (the Siamese
// symmetry contract).
template <typename S>
class BatchNorm2d {
public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::string name, int channels, S momentum = S(0.1), S eps = S(1e-5))
      : momentum_(momentum), eps_(eps) {
    gamma_.name = name + ".gamma";
    gamma_.init_shape({channels});
    beta_.name = name + ".beta";
    beta_.init_shape({channels});
    gamma_.value.fill(S(1));
    running_mean_ = Tensor<S>({channels});
    running_var_ = Tensor<S>({channels}, S(1));
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<S> y(x.shape());
    train_ = train;
    if (train) {
      const S m = static_cast<S>(n) * static_cast<S>(plane);
      std::vector<S> mean(c, S(0)), var(c, S(0));
      std::vector<S> psum(static_cast<std::size_t>(n) * c), psq(static_cast<std::size_t>(n) * c);
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const S* src = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          S s0 = S(0), s1 = S(0);
          for (std::size_t p = 0; p < plane; ++p) {
            s0 += src[p];
            s1 += src[p] * src[p];
          }
          psum[static_cast<std::size_t>(i) * c + ch] = s0;
          psq[static_cast<std::size_t>(i) * c + ch] = s1;
        }
      }
      for (int ch = 0; ch < c; ++ch) {
        S s0 = S(0), s1 = S(0);
        for (int i = 0; i < n; ++i) {
          s0 += psum[static_cast<std::size_t>(i) * c + ch];
          s1 += psq[static_cast<std::size_t>(i) * c + ch];
        }
        mean[ch] = s0 / m;
        var[ch] = std::max(S(0), s1 / m - mean[ch] * mean[ch]);
      }
      inv_std_.assign(c, S(0));
      for (int ch = 0; ch < c; ++ch) inv_std_[ch] = S(1) / std::sqrt(var[ch] + eps_);
      xhat_ = Tensor<S>(x.shape());
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const S* src = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          S* xh = xhat_.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          S* dst = y.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const S mu = mean[ch], inv = inv_std_[ch];
          const S g = gamma_.value[ch], bv = beta_.value[ch];
          for (std::size_t p = 0; p < plane; ++p) {
            xh[p] = (src[p] - mu) * inv;
            dst[p] = g * xh[p] + bv;
          }
        }
      }
      const S unbias = m > S(1) ? m / (m - S(1)) : S(1);
      for (int ch = 0; ch < c; ++ch) {
        running_mean_[ch] = (S(1) - momentum_) * running_mean_[ch] + momentum_ * mean[ch];
        running_var_[ch] = (S(1) - momentum_) * running_var_[ch] + momentum_ * var[ch] * unbias;
      }
    } else {
      inv_std_.assign(c, S(0));
      for (int ch = 0; ch < c; ++ch) inv_std_[ch] = S(1) / std::sqrt(running_var_[ch] + eps_);
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const S* src = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          S* dst = y.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const S mu = running_mean_[ch], inv = inv_std_[ch];
          const S g = gamma_.value[ch], bv = beta_.value[ch];
          for (std::size_t p = 0; p < plane; ++p) dst[p] = g * (src[p] - mu) * inv + bv;
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<S> dx(dy.shape());
    if (!train_) {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const S k = gamma_.value[ch] * inv_std_[ch];
          const S* g = dy.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          S* d = dx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) d[p] = g[p] * k;
        }
      return dx;
    }
    const S m = static_cast<S>(n) * static_cast<S>(plane);
    std::vector<S> sum_dy(c, S(0)), sum_dy_xhat(c, S(0));
    for (int ch = 0; ch < c; ++ch) {
      S s0 = S(0), s1 = S(0);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
        const S* g = dy.data() + off;
        const S* xh = xhat_.data() + off;
        S p0 = S(0), p1 = S(0);
        for (std::size_t p = 0; p < plane; ++p) {
          p0 += g[p];
          p1 += g[p] * xh[p];
        }
        s0 += p0;
        s1 += p1;
      }
      sum_dy[ch] = s0;
      sum_dy_xhat[ch] = s1;
      gamma_.grad[ch] += s1;
      beta_.grad[ch] += s0;
    }
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
        const S* g = dy.data() + off;
        const S* xh = xhat_.data() + off;
        S* d = dx.data() + off;
        const S k = gamma_.value[ch] * inv_std_[ch] / m;
        for (std::size_t p = 0; p < plane; ++p)
          d[p] = k * (m * g[p] - sum_dy[ch] - xh[p] * sum_dy_xhat[ch]);
      }
    }
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void drop_cache() { xhat_ = Tensor<S>(); }

  Param<S>& gamma() { return gamma_; }
  Param<S>& beta() { return beta_; }
  Tensor<S>& running_mean() { return running_mean_; }
  Tensor<S>& running_var() { return running_var_; }

private:
  S momentum_ = S(0.1);
  S eps_ = S(1e-5);
  Param<S> gamma_, beta_;
  Tensor<S> running_mean_, running_var_;
  Tensor<S> xhat_;
  std::vector<S> inv_std_;
  bool train_ = false;
};

template <typename S>
class Silu {
public:
  Tensor<S> forward(const Tensor<S>& x) {
    x_ = x;
    return silu_forward(x);
  }
  Tensor<S> backward(const Tensor<S>& dy) { return silu_backward(x_, dy); }
  void drop_cache() { x_ = Tensor<S>(); }

private:
  Tensor<S> x_;
};

// Conv3x3 -> BN -> SiLU, the recurring motif of the whole network. The conv
// carries no bias (BN's beta subsumes it).
template <typename S>
class ConvBnSilu {
public:
  ConvBnSilu() = default;
  ConvBnSilu(std::string name, int cin, int cout, int stride)
      : conv_(name + ".conv", cin, cout, 3, stride, 1, false), bn_(name + ".bn", cout) {}

  void init(Rng& rng) { conv_.init(rng); }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    return act_.forward(bn_.forward(conv_.forward(x), train));
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    return conv_.backward(bn_.backward(act_.backward(dy)));
  }

  void collect(std::vector<Param<S>*>& out) {
    conv_.collect(out);
    bn_.collect(out);
  }

  void drop_cache() {
    conv_.drop_cache();
    bn_.drop_cache();
    act_.drop_cache();
  }

  Conv2d<S>& conv() { return conv_; }
  BatchNorm2d<S>& bn() { return bn_; }

private:
  Conv2d<S> conv_;
  BatchNorm2d<S> bn_;
  Silu<S> act_;
};

}  // namespace cemcd
