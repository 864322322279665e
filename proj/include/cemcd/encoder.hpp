#pragma once

#include <array>
#include <string>
#include <vector>

#include "cemcd/layers.hpp"

namespace cemcd {

// Four-level pyramid at 1/4, 1/8, 1/16, 1/32 of the input resolution.
// Tensors are batched [N, C_i, H/s, W/s].
template <typename S>
struct FeaturePyramid {
  Tensor<S> f1, f2, f3, f4;
};

struct EncoderSpec {
  enum class Backend { toy, external };

  Backend backend = Backend::toy;
  std::array<int, 4> channels = {32, 64, 128, 256};
  std::string weights_path;  // checkpoint for Backend::external

  void validate() const {
    for (int c : channels)
      if (c < 8) throw ConfigError("encoder channels must be >= 8");
  }
};

// Strided convolutional pyramid: a stride-4 stem then three stride-2 stages,
// each Conv3x3 -> BN -> SiLU. Siamese use runs both temporal images through
// one instance (one parameter set), concatenated along the batch axis so the
// two branches see consistent normalization statistics.
template <typename S>
class ToyEncoder {
public:
  ToyEncoder() : ToyEncoder(EncoderSpec{}) {}

  explicit ToyEncoder(const EncoderSpec& spec) : spec_(spec) {
    spec_.validate();
    const auto& c = spec_.channels;
    stem_ = ConvBnSilu<S>("enc.stem", 3, c[0], 4);
    stage2_ = ConvBnSilu<S>("enc.stage2", c[0], c[1], 2);
    stage3_ = ConvBnSilu<S>("enc.stage3", c[1], c[2], 2);
    stage4_ = ConvBnSilu<S>("enc.stage4", c[2], c[3], 2);
  }

  void init(Rng& rng) {
    stem_.init(rng);
    stage2_.init(rng);
    stage3_.init(rng);
    stage4_.init(rng);
  }

  FeaturePyramid<S> forward(const Tensor<S>& x, bool train) {
    check_divisible_by_32(x.dim(2), x.dim(3));
    FeaturePyramid<S> p;
    p.f1 = stem_.forward(x, train);
    p.f2 = stage2_.forward(p.f1, train);
    p.f3 = stage3_.forward(p.f2, train);
    p.f4 = stage4_.forward(p.f3, train);
    return p;
  }

  // Gradients arrive at every tap; taps feeding the next stage accumulate
  // both contributions. Returns the input-image gradient.
  Tensor<S> backward(const FeaturePyramid<S>& dp) {
    Tensor<S> d3 = stage4_.backward(dp.f4);
    add_inplace(d3, dp.f3);
    Tensor<S> d2 = stage3_.backward(d3);
    add_inplace(d2, dp.f2);
    Tensor<S> d1 = stage2_.backward(d2);
    add_inplace(d1, dp.f1);
    return stem_.backward(d1);
  }

  void collect(std::vector<Param<S>*>& out) {
    stem_.collect(out);
    stage2_.collect(out);
    stage3_.collect(out);
    stage4_.collect(out);
  }

  void drop_cache() {
    stem_.drop_cache();
    stage2_.drop_cache();
    stage3_.drop_cache();
    stage4_.drop_cache();
  }

  const EncoderSpec& spec() const { return spec_; }
  ConvBnSilu<S>& stage(int i) {
    switch (i) {
      case 0: return stem_;
      case 1: return stage2_;
      case 2: return stage3_;
      default: return stage4_;
    }
  }

private:
  EncoderSpec spec_;
  ConvBnSilu<S> stem_, stage2_, stage3_, stage4_;
};

// Single-image convenience wrapper: [3,H,W] -> pyramid with batch dim 1.
template <typename S>
FeaturePyramid<S> encode(ToyEncoder<S>& enc, const Tensor<S>& image, bool train = false) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("encode expects a [3,H,W] image, got " + image.shape_str());
  Tensor<S> batched({1, 3, image.dim(1), image.dim(2)});
  std::copy_n(image.data(), image.numel(), batched.data());
  return enc.forward(batched, train);
}

// Runs both temporal images through the shared encoder in one forward pass
// (batch of two) and splits the taps back into per-image pyramids.
template <typename S>
std::pair<FeaturePyramid<S>, FeaturePyramid<S>> encode_pair(ToyEncoder<S>& enc,
                                                            const Tensor<S>& pre,
                                                            const Tensor<S>& post,
                                                            bool train = false) {
  if (pre.rank() != 3 || post.rank() != 3)
    throw ShapeError("encode_pair expects [3,H,W] images");
  check_same_shape(pre, post, "encode_pair");
  Tensor<S> batched({2, 3, pre.dim(1), pre.dim(2)});
  std::copy_n(pre.data(), pre.numel(), batched.data());
  std::copy_n(post.data(), post.numel(), batched.data() + pre.numel());
  FeaturePyramid<S> both = enc.forward(batched, train);
  FeaturePyramid<S> a, b;
  std::tie(a.f1, b.f1) = split_batch(both.f1, 1);
  std::tie(a.f2, b.f2) = split_batch(both.f2, 1);
  std::tie(a.f3, b.f3) = split_batch(both.f3, 1);
  std::tie(a.f4, b.f4) = split_batch(both.f4, 1);
  return {std::move(a), std::move(b)};
}

}  // namespace cemcd
