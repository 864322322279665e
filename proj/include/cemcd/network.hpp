#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "cemcd/encoder.hpp"
#include "cemcd/layers.hpp"

namespace cemcd {

struct NetworkSpec {
  EncoderSpec encoder;
  int head_width = 32;
  int residual_blocks = 6;
};

// Pre-activation residual unit: x + BN(Conv3x3(SiLU(BN(Conv3x3(x))))).
// With the branch parameters zeroed the block is an exact identity.
template <typename S>
class ResidualBlock {
public:
  ResidualBlock() = default;
  ResidualBlock(std::string name, int channels)
      : conv1_(name + ".conv1", channels, channels, 3, 1, 1, false),
        bn1_(name + ".bn1", channels),
        conv2_(name + ".conv2", channels, channels, 3, 1, 1, false),
        bn2_(name + ".bn2", channels) {}

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> y = bn2_.forward(conv2_.forward(act_.forward(bn1_.forward(conv1_.forward(x), train))), train);
    add_inplace(y, x);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx = conv1_.backward(bn1_.backward(act_.backward(conv2_.backward(bn2_.backward(dy)))));
    add_inplace(dx, dy);
    return dx;
  }

  void collect(std::vector<Param<S>*>& out) {
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    bn2_.collect(out);
  }

  void drop_cache() {
    conv1_.drop_cache();
    bn1_.drop_cache();
    conv2_.drop_cache();
    bn2_.drop_cache();
    act_.drop_cache();
  }

  void zero_branch() {
    conv1_.weight().value.fill(S(0));
    conv2_.weight().value.fill(S(0));
    bn1_.gamma().value.fill(S(0));
    bn1_.beta().value.fill(S(0));
    bn2_.gamma().value.fill(S(0));
    bn2_.beta().value.fill(S(0));
  }

private:
  Conv2d<S> conv1_;
  BatchNorm2d<S> bn1_;
  Conv2d<S> conv2_;
  BatchNorm2d<S> bn2_;
  Silu<S> act_;
};

// The change head on top of the Siamese encoder:
//   STFE per scale:   concat(F_pre, F_post) -> Conv3x3 -> BN -> SiLU
//   decoder stage:    ConvTranspose2x2(deeper) ++ skip -> Conv3x3 -> BN -> SiLU
//   MSDF + head:      bilinear-to-full(d3,d2,d1) ++ -> 1x1 -> residual x6 -> 1x1
template <typename S>
class ChangeNet {
public:
  explicit ChangeNet(const NetworkSpec& spec = NetworkSpec{}) : spec_(spec), enc_(spec.encoder) {
    const auto& c = spec_.encoder.channels;
    for (int i = 0; i < 4; ++i)
      stfe_[i] = ConvBnSilu<S>("stfe" + std::to_string(i + 1), 2 * c[i], c[i], 1);
    up_[0] = ConvTranspose2x2<S>("dec3.up", c[3], c[2]);
    fuse_[0] = ConvBnSilu<S>("dec3.fuse", 2 * c[2], c[2], 1);
    up_[1] = ConvTranspose2x2<S>("dec2.up", c[2], c[1]);
    fuse_[1] = ConvBnSilu<S>("dec2.fuse", 2 * c[1], c[1], 1);
    up_[2] = ConvTranspose2x2<S>("dec1.up", c[1], c[0]);
    fuse_[2] = ConvBnSilu<S>("dec1.fuse", 2 * c[0], c[0], 1);
    const int fused_in = c[2] + c[1] + c[0];
    head_fuse_ = Conv2d<S>("head.fuse", fused_in, spec_.head_width, 1, 1, 0, true);
    blocks_.clear();
    for (int i = 0; i < spec_.residual_blocks; ++i)
      blocks_.emplace_back("head.res" + std::to_string(i + 1), spec_.head_width);
    head_out_ = Conv2d<S>("head.out", spec_.head_width, 1, 1, 1, 0, true);
  }

  void init(Rng& rng) {
    enc_.init(rng);
    for (auto& s : stfe_) s.init(rng);
    for (int i = 0; i < 3; ++i) {
      up_[i].init(rng);
      fuse_[i].init(rng);
    }
    head_fuse_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    head_out_.init(rng);
  }

  // pre/post: [N,3,H,W] -> logits [N,1,H,W].
  Tensor<S> forward(const Tensor<S>& pre, const Tensor<S>& post, bool train) {
    check_same_shape(pre, post, "forward");
    n_ = pre.dim(0);
    h_ = pre.dim(2);
    w_ = pre.dim(3);
    FeaturePyramid<S> taps = enc_.forward(concat_batch(pre, post), train);
    Tensor<S> e[4];
    const Tensor<S>* tap[4] = {&taps.f1, &taps.f2, &taps.f3, &taps.f4};
    for (int i = 0; i < 4; ++i) {
      auto [a, b] = split_batch(*tap[i], n_);
      e[i] = stfe_[i].forward(concat_channels<S>({&a, &b}), train);
    }
    Tensor<S> u3in = up_[0].forward(e[3]);
    Tensor<S> d3 = fuse_[0].forward(concat_channels<S>({&u3in, &e[2]}), train);
    Tensor<S> u2in = up_[1].forward(d3);
    Tensor<S> d2 = fuse_[1].forward(concat_channels<S>({&u2in, &e[1]}), train);
    Tensor<S> u1in = up_[2].forward(d2);
    Tensor<S> d1 = fuse_[2].forward(concat_channels<S>({&u1in, &e[0]}), train);
    d_dims_ = {{{d3.dim(2), d3.dim(3)}, {d2.dim(2), d2.dim(3)}, {d1.dim(2), d1.dim(3)}}};
    Tensor<S> u3 = bilinear_resize(d3, h_, w_);
    Tensor<S> u2 = bilinear_resize(d2, h_, w_);
    Tensor<S> u1 = bilinear_resize(d1, h_, w_);
    Tensor<S> x = head_fuse_.forward(concat_channels<S>({&u3, &u2, &u1}));
    for (auto& b : blocks_) x = b.forward(x, train);
    return head_out_.forward(x);
  }

  // Accumulates parameter gradients; returns (d_pre, d_post).
  std::pair<Tensor<S>, Tensor<S>> backward(const Tensor<S>& dlogits) {
    Tensor<S> dx = head_out_.backward(dlogits);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dx = it->backward(dx);
    Tensor<S> dcat = head_fuse_.backward(dx);
    const auto& c = spec_.encoder.channels;
    auto dus = split_channels(dcat, {c[2], c[1], c[0]});
    Tensor<S> dd3_msdf = bilinear_resize_backward(dus[0], d_dims_[0][0], d_dims_[0][1]);
    Tensor<S> dd2_msdf = bilinear_resize_backward(dus[1], d_dims_[1][0], d_dims_[1][1]);
    Tensor<S> dd1 = bilinear_resize_backward(dus[2], d_dims_[2][0], d_dims_[2][1]);

    Tensor<S> de[4];
    // Stage 1 (shallowest): d1 feeds only MSDF.
    {
      auto parts = split_channels(fuse_[2].backward(dd1), {c[0], c[0]});
      Tensor<S> dd2 = up_[2].backward(parts[0]);
      add_inplace(dd2, dd2_msdf);
      de[0] = std::move(parts[1]);
      auto parts2 = split_channels(fuse_[1].backward(dd2), {c[1], c[1]});
      Tensor<S> dd3 = up_[1].backward(parts2[0]);
      add_inplace(dd3, dd3_msdf);
      de[1] = std::move(parts2[1]);
      auto parts3 = split_channels(fuse_[0].backward(dd3), {c[2], c[2]});
      de[3] = up_[0].backward(parts3[0]);
      de[2] = std::move(parts3[1]);
    }

    FeaturePyramid<S> dtaps;
    Tensor<S>* dtap[4] = {&dtaps.f1, &dtaps.f2, &dtaps.f3, &dtaps.f4};
    for (int i = 0; i < 4; ++i) {
      auto halves = split_channels(stfe_[i].backward(de[i]), {c[i], c[i]});
      *dtap[i] = concat_batch(halves[0], halves[1]);
    }
    Tensor<S> dimg = enc_.backward(dtaps);
    return split_batch(dimg, n_);
  }

  void collect(std::vector<Param<S>*>& out) {
    enc_.collect(out);
    for (auto& s : stfe_) s.collect(out);
    for (int i = 0; i < 3; ++i) {
      up_[i].collect(out);
      fuse_[i].collect(out);
    }
    head_fuse_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    head_out_.collect(out);
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    collect(out);
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.fill(S(0));
  }

  void drop_caches() {
    enc_.drop_cache();
    for (auto& s : stfe_) s.drop_cache();
    for (auto& b : blocks_) b.drop_cache();
    for (int i = 0; i < 3; ++i) {
      up_[i].drop_cache();
      fuse_[i].drop_cache();
    }
    head_fuse_.drop_cache();
    head_out_.drop_cache();
  }

  ToyEncoder<S>& encoder() { return enc_; }
  const NetworkSpec& spec() const { return spec_; }
  std::vector<ResidualBlock<S>>& residual_blocks() { return blocks_; }

private:
  NetworkSpec spec_;
  ToyEncoder<S> enc_;
  std::array<ConvBnSilu<S>, 4> stfe_;
  std::array<ConvTranspose2x2<S>, 3> up_;
  std::array<ConvBnSilu<S>, 3> fuse_;
  Conv2d<S> head_fuse_;
  std::vector<ResidualBlock<S>> blocks_;
  Conv2d<S> head_out_;

  int n_ = 0, h_ = 0, w_ = 0;
  std::array<std::array<int, 2>, 3> d_dims_{};
};

}  // namespace cemcd
