#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cemcd/tensor.hpp"

namespace cemcd {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

// The 1/32 pyramid level requires both input extents to be multiples of 32.
inline void check_divisible_by_32(int h, int w) {
  if (h % 32 != 0 || w % 32 != 0)
    throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by 32");
}

// Unrolls one image [C,H,W] into a [C*k*k, Ho*Wo] row-major column buffer.
template <typename S>
void im2col(const S* img, int ch, int h, int w, const ConvSpec& sp, S* col) {
  const int ho = sp.out_extent(h);
  const int wo = sp.out_extent(w);
  const int patch = ho * wo;
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < sp.kernel; ++ky) {
      for (int kx = 0; kx < sp.kernel; ++kx) {
        S* row = col + (static_cast<std::size_t>(c) * sp.kernel * sp.kernel + ky * sp.kernel + kx) * patch;
        const S* src = img + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sp.stride + ky - sp.pad;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, S(0));
            row += wo;
            continue;
          }
          const S* src_row = src + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sp.stride + kx - sp.pad;
            *row++ = (ix < 0 || ix >= w) ? S(0) : src_row[ix];
          }
        }
      }
    }
  }
}

// Scatters a column buffer back into an image, accumulating overlaps.
template <typename S>
void col2im(const S* col, int ch, int h, int w, const ConvSpec& sp, S* img) {
  const int ho = sp.out_extent(h);
  const int wo = sp.out_extent(w);
  const int patch = ho * wo;
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < sp.kernel; ++ky) {
      for (int kx = 0; kx < sp.kernel; ++kx) {
        const S* row = col + (static_cast<std::size_t>(c) * sp.kernel * sp.kernel + ky * sp.kernel + kx) * patch;
        S* dst = img + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sp.stride + ky - sp.pad;
          if (iy < 0 || iy >= h) {
            row += wo;
            continue;
          }
          S* dst_row = dst + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sp.stride + kx - sp.pad;
            if (ix >= 0 && ix < w) dst_row[ix] += row[ox];
          }
          row += wo;
        }
      }
    }
  }
}

// y = w * im2col(x) + b, batched over N. x [N,Ci,H,W], w [Co,Ci,k,k],
// b [Co] or null. 1x1/stride-1 convolutions skip the column buffer.
template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b,
                         const ConvSpec& sp, std::vector<S>* scratch = nullptr) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(1) != ci)
    throw ShapeError("conv2d: input channels " + std::to_string(ci) + " vs weight " + std::to_string(w.dim(1)));
  const int co = w.dim(0);
  const int ho = sp.out_extent(h), wo = sp.out_extent(wd);
  const int k2 = sp.kernel * sp.kernel;
  const int patch = ho * wo;
  Tensor<S> y({n, co, ho, wo});
  CMapRM<S> wm(w.data(), co, ci * k2);
  const bool direct = (sp.kernel == 1 && sp.stride == 1 && sp.pad == 0);
  std::vector<S> local;
  std::vector<S>& col = scratch ? *scratch : local;
  if (!direct) col.resize(static_cast<std::size_t>(ci) * k2 * patch);
  for (int i = 0; i < n; ++i) {
    const S* xi = x.data() + static_cast<std::size_t>(i) * ci * h * wd;
    MapRM<S> yi(y.data() + static_cast<std::size_t>(i) * co * patch, co, patch);
    if (direct) {
      CMapRM<S> xm(xi, ci, patch);
      yi.noalias() = wm * xm;
    } else {
      im2col(xi, ci, h, wd, sp, col.data());
      CMapRM<S> colm(col.data(), ci * k2, patch);
      yi.noalias() = wm * colm;
    }
    if (b) {
      for (int c = 0; c < co; ++c) yi.row(c).array() += (*b)[static_cast<std::size_t>(c)];
    }
  }
  return y;
}

// Accumulates dw/db and returns dx. x is the cached forward input.
template <typename S>
Tensor<S> conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const ConvSpec& sp,
                          const Tensor<S>& dy, Tensor<S>& dw, Tensor<S>* db,
                          std::vector<S>* scratch = nullptr) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0);
  const int ho = dy.dim(2), wo = dy.dim(3);
  const int k2 = sp.kernel * sp.kernel;
  const int patch = ho * wo;
  Tensor<S> dx({n, ci, h, wd});
  CMapRM<S> wm(w.data(), co, ci * k2);
  MapRM<S> dwm(dw.data(), co, ci * k2);
  const bool direct = (sp.kernel == 1 && sp.stride == 1 && sp.pad == 0);
  std::vector<S> local;
  std::vector<S>& col = scratch ? *scratch : local;
  std::vector<S> dcol;
  if (!direct) {
    col.resize(static_cast<std::size_t>(ci) * k2 * patch);
    dcol.resize(col.size());
  }
  for (int i = 0; i < n; ++i) {
    const S* xi = x.data() + static_cast<std::size_t>(i) * ci * h * wd;
    CMapRM<S> dyi(dy.data() + static_cast<std::size_t>(i) * co * patch, co, patch);
    if (direct) {
      CMapRM<S> xm(xi, ci, patch);
      dwm.noalias() += dyi * xm.transpose();
      MapRM<S> dxm(dx.data() + static_cast<std::size_t>(i) * ci * patch, ci, patch);
      dxm.noalias() = wm.transpose() * dyi;
    } else {
      im2col(xi, ci, h, wd, sp, col.data());
      CMapRM<S> colm(col.data(), ci * k2, patch);
      dwm.noalias() += dyi * colm.transpose();
      MapRM<S> dcolm(dcol.data(), ci * k2, patch);
      dcolm.noalias() = wm.transpose() * dyi;
      col2im(dcol.data(), ci, h, wd, sp, dx.data() + static_cast<std::size_t>(i) * ci * h * wd);
    }
    if (db) {
      for (int c = 0; c < co; ++c) (*db)[static_cast<std::size_t>(c)] += dyi.row(c).sum();
    }
  }
  return dx;
}

// Transpose convolution, kernel 2 stride 2: exact x2 upsampling with no
// output overlap. w [Ci,Co,2,2], x [N,Ci,H,W] -> [N,Co,2H,2W].
template <typename S>
Tensor<S> convtranspose2x2_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(0) != ci)
    throw ShapeError("convtranspose2x2: input channels " + std::to_string(ci) + " vs weight " + std::to_string(w.dim(0)));
  const int co = w.dim(1);
  Tensor<S> y({n, co, 2 * h, 2 * wd});
  // Per-offset weight view: wab(ci,co) strided over the [Ci,Co,2,2] layout.
  using StrideT = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  MatRM<S> yo(co, h * wd);
  for (int i = 0; i < n; ++i) {
    CMapRM<S> xm(x.data() + static_cast<std::size_t>(i) * ci * h * wd, ci, h * wd);
    for (int a = 0; a < 2; ++a) {
      for (int bb = 0; bb < 2; ++bb) {
        Eigen::Map<const MatRM<S>, 0, StrideT> wab(w.data() + a * 2 + bb, ci, co, StrideT(co * 4, 4));
        yo.noalias() = wab.transpose() * xm;
        for (int c = 0; c < co; ++c) {
          const S bias = b ? (*b)[static_cast<std::size_t>(c)] : S(0);
          S* dst = y.data() + ((static_cast<std::size_t>(i) * co + c) * 2 * h) * 2 * wd;
          const S* src = yo.data() + static_cast<std::size_t>(c) * h * wd;
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < wd; ++xx)
              dst[static_cast<std::size_t>(2 * yy + a) * 2 * wd + 2 * xx + bb] = src[static_cast<std::size_t>(yy) * wd + xx] + bias;
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> convtranspose2x2_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                                    Tensor<S>& dw, Tensor<S>* db) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1);
  Tensor<S> dx({n, ci, h, wd});
  using StrideT = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  MatRM<S> dyo(co, h * wd);
  for (int i = 0; i < n; ++i) {
    CMapRM<S> xm(x.data() + static_cast<std::size_t>(i) * ci * h * wd, ci, h * wd);
    MapRM<S> dxm(dx.data() + static_cast<std::size_t>(i) * ci * h * wd, ci, h * wd);
    for (int a = 0; a < 2; ++a) {
      for (int bb = 0; bb < 2; ++bb) {
        for (int c = 0; c < co; ++c) {
          const S* src = dy.data() + ((static_cast<std::size_t>(i) * co + c) * 2 * h) * 2 * wd;
          S* dst = dyo.data() + static_cast<std::size_t>(c) * h * wd;
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < wd; ++xx)
              dst[static_cast<std::size_t>(yy) * wd + xx] = src[static_cast<std::size_t>(2 * yy + a) * 2 * wd + 2 * xx + bb];
        }
        Eigen::Map<const MatRM<S>, 0, StrideT> wab(w.data() + a * 2 + bb, ci, co, StrideT(co * 4, 4));
        Eigen::Map<MatRM<S>, 0, StrideT> dwab(dw.data() + a * 2 + bb, ci, co, StrideT(co * 4, 4));
        dxm.noalias() += wab * dyo;
        dwab.noalias() += xm * dyo.transpose();
        if (db) {
          for (int c = 0; c < co; ++c) (*db)[static_cast<std::size_t>(c)] += dyo.row(c).sum();
        }
      }
    }
  }
  return dx;
}

// Bilinear resize to (ho, wo), half-pixel centers, edge clamped.
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& x, int ho, int wo) {
  const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<S> y({n, ch, ho, wo});
  const double sy = static_cast<double>(h) / ho;
  const double sx = static_cast<double>(w) / wo;
  std::vector<int> y0(ho), y1(ho), x0(wo), x1(wo);
  std::vector<S> fy(ho), fx(wo);
  for (int oy = 0; oy < ho; ++oy) {
    double src = std::max(0.0, std::min((oy + 0.5) * sy - 0.5, static_cast<double>(h - 1)));
    y0[oy] = static_cast<int>(src);
    y1[oy] = std::min(y0[oy] + 1, h - 1);
    fy[oy] = static_cast<S>(src - y0[oy]);
  }
  for (int ox = 0; ox < wo; ++ox) {
    double src = std::max(0.0, std::min((ox + 0.5) * sx - 0.5, static_cast<double>(w - 1)));
    x0[ox] = static_cast<int>(src);
    x1[ox] = std::min(x0[ox] + 1, w - 1);
    fx[ox] = static_cast<S>(src - x0[ox]);
  }
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < ch; ++c) {
      const S* src = x.data() + (static_cast<std::size_t>(i) * ch + c) * h * w;
      S* dst = y.data() + (static_cast<std::size_t>(i) * ch + c) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        const S* r0 = src + static_cast<std::size_t>(y0[oy]) * w;
        const S* r1 = src + static_cast<std::size_t>(y1[oy]) * w;
        const S wy = fy[oy];
        for (int ox = 0; ox < wo; ++ox) {
          const S wx = fx[ox];
          const S top = r0[x0[ox]] * (S(1) - wx) + r0[x1[ox]] * wx;
          const S bot = r1[x0[ox]] * (S(1) - wx) + r1[x1[ox]] * wx;
          *dst++ = top * (S(1) - wy) + bot * wy;
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> bilinear_resize_backward(const Tensor<S>& dy, int h, int w) {
  const int n = dy.dim(0), ch = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
  Tensor<S> dx({n, ch, h, w});
  const double sy = static_cast<double>(h) / ho;
  const double sx = static_cast<double>(w) / wo;
  std::vector<int> y0(ho), y1(ho), x0(wo), x1(wo);
  std::vector<S> fy(ho), fx(wo);
  for (int oy = 0; oy < ho; ++oy) {
    double src = std::max(0.0, std::min((oy + 0.5) * sy - 0.5, static_cast<double>(h - 1)));
    y0[oy] = static_cast<int>(src);
    y1[oy] = std::min(y0[oy] + 1, h - 1);
    fy[oy] = static_cast<S>(src - y0[oy]);
  }
  for (int ox = 0; ox < wo; ++ox) {
    double src = std::max(0.0, std::min((ox + 0.5) * sx - 0.5, static_cast<double>(w - 1)));
    x0[ox] = static_cast<int>(src);
    x1[ox] = std::min(x0[ox] + 1, w - 1);
    fx[ox] = static_cast<S>(src - x0[ox]);
  }
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < ch; ++c) {
      S* dst = dx.data() + (static_cast<std::size_t>(i) * ch + c) * h * w;
      const S* src = dy.data() + (static_cast<std::size_t>(i) * ch + c) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        const S wy = fy[oy];
        for (int ox = 0; ox < wo; ++ox) {
          const S wx = fx[ox];
          const S g = *src++;
          dst[static_cast<std::size_t>(y0[oy]) * w + x0[ox]] += g * (S(1) - wy) * (S(1) - wx);
          dst[static_cast<std::size_t>(y0[oy]) * w + x1[ox]] += g * (S(1) - wy) * wx;
          dst[static_cast<std::size_t>(y1[oy]) * w + x0[ox]] += g * wy * (S(1) - wx);
          dst[static_cast<std::size_t>(y1[oy]) * w + x1[ox]] += g * wy * wx;
        }
      }
    }
  }
  return dx;
}

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <typename S>
Tensor<S> silu_forward(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

template <typename S>
Tensor<S> silu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  Tensor<S> dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const S s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (S(1) + x[i] * (S(1) - s));
  }
  return dx;
}

// Channel concatenation of same-spatial-size tensors.
template <typename S>
Tensor<S> concat_channels(const std::vector<const Tensor<S>*>& parts) {
  const int n = parts[0]->dim(0), h = parts[0]->dim(2), w = parts[0]->dim(3);
  int ctot = 0;
  for (const auto* p : parts) {
    if (p->dim(0) != n || p->dim(2) != h || p->dim(3) != w)
      throw ShapeError("concat_channels: mismatched shapes");
    ctot += p->dim(1);
  }
  Tensor<S> out({n, ctot, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::size_t coff = 0;
    for (const auto* p : parts) {
      const std::size_t count = static_cast<std::size_t>(p->dim(1)) * plane;
      std::copy_n(p->data() + static_cast<std::size_t>(i) * count,
                  count,
                  out.data() + (static_cast<std::size_t>(i) * ctot + coff) * plane);
      coff += static_cast<std::size_t>(p->dim(1));
    }
  }
  return out;
}

// Splits channel-concatenated gradients back into per-part tensors.
template <typename S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& t, const std::vector<int>& channels) {
  const int n = t.dim(0), h = t.dim(2), w = t.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Tensor<S>> parts;
  parts.reserve(channels.size());
  for (int c : channels) parts.emplace_back(std::vector<int>{n, c, h, w});
  for (int i = 0; i < n; ++i) {
    std::size_t coff = 0;
    for (std::size_t p = 0; p < channels.size(); ++p) {
      const std::size_t count = static_cast<std::size_t>(channels[p]) * plane;
      std::copy_n(t.data() + (static_cast<std::size_t>(i) * t.dim(1) + coff) * plane,
                  count,
                  parts[p].data() + static_cast<std::size_t>(i) * count);
      coff += static_cast<std::size_t>(channels[p]);
    }
  }
  return parts;
}

// Stacks tensors along the batch axis.
template <typename S>
Tensor<S> concat_batch(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_batch: mismatched shapes " + a.shape_str() + " vs " + b.shape_str());
  Tensor<S> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy_n(a.data(), a.numel(), out.data());
  std::copy_n(b.data(), b.numel(), out.data() + a.numel());
  return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_batch(const Tensor<S>& t, int n_first) {
  const int n = t.dim(0);
  Tensor<S> a({n_first, t.dim(1), t.dim(2), t.dim(3)});
  Tensor<S> b({n - n_first, t.dim(1), t.dim(2), t.dim(3)});
  std::copy_n(t.data(), a.numel(), a.data());
  std::copy_n(t.data() + a.numel(), b.numel(), b.data());
  return {std::move(a), std::move(b)};
}

template <typename S>
void add_inplace(Tensor<S>& dst, const Tensor<S>& src) {
  check_same_shape(dst, src, "add");
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace cemcd
