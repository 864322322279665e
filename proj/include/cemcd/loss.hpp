#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "cemcd/ops.hpp"
#include "cemcd/rng.hpp"
#include "cemcd/tensor.hpp"

namespace cemcd {

enum class LossKind { cem, bce, focal, wbce, bce_dice };

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cem") return LossKind::cem;
  if (s == "bce") return LossKind::bce;
  if (s == "focal") return LossKind::focal;
  if (s == "wbce") return LossKind::wbce;
  if (s == "bce_dice") return LossKind::bce_dice;
  throw ConfigError("unknown loss kind '" + s + "' (expected cem|bce|focal|wbce|bce_dice)");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cem: return "cem";
    case LossKind::bce: return "bce";
    case LossKind::focal: return "focal";
    case LossKind::wbce: return "wbce";
    default: return "bce_dice";
  }
}

struct CemConfig {
  double delta = 0.3;     // background masking probability
  double epsilon = 1e-7;  // probability clamp before logs
};

struct LossConfig {
  LossKind kind = LossKind::cem;
  CemConfig cem;
  double alpha = 0.5;  // focal
  double gamma = 2.0;
  double w0 = 0.7;  // weighted bce
  double w1 = 1.0;
  double bce_weight = 0.7;  // bce + dice combination
  double dice_weight = 0.3;
};

template <typename S>
S clamp_prob(S p, S eps) {
  return std::min(std::max(p, eps), S(1) - eps);
}

// Per-element binary cross-entropy -[y log p + (1-y) log(1-p)] with the
// probabilities clamped into [eps, 1-eps].
template <typename S>
Tensor<S> bce_map(const Tensor<S>& probs, const Tensor<S>& gt, S eps = S(1e-7)) {
  check_same_shape(probs, gt, "bce_map");
  Tensor<S> out(probs.shape());
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    out[i] = -(gt[i] * std::log(p) + (S(1) - gt[i]) * std::log(S(1) - p));
  }
  return out;
}

// Keep/drop matrix of Eq-style masking: change pixels are always kept;
// background pixels are kept iff R >= delta with R ~ Uniform(0,1). The
// boundary R == delta keeps (so delta = 0 keeps everything exactly). A fresh
// R is drawn for every pixel on every call.
template <typename S>
Tensor<S> cem_mask(const Tensor<S>& gt, const CemConfig& cfg, Rng& rng) {
  Tensor<S> mask(gt.shape());
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double r = rng.uniform();
    mask[i] = (gt[i] == S(1) || r >= cfg.delta) ? S(1) : S(0);
  }
  return mask;
}

// sum(bce * M) / sum(M). An all-dropped mask (possible only on all-background
// tiles) falls back to the unmasked mean and bumps the caller's counter.
template <typename S>
S masked_bce(const Tensor<S>& probs, const Tensor<S>& gt, const Tensor<S>& mask,
             S eps = S(1e-7), std::size_t* fallback_counter = nullptr) {
  check_same_shape(probs, gt, "masked_bce");
  check_same_shape(probs, mask, "masked_bce mask");
  S num = S(0), den = S(0);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S l = -(gt[i] * std::log(p) + (S(1) - gt[i]) * std::log(S(1) - p));
    num += l * mask[i];
    den += mask[i];
  }
  if (den == S(0)) {
    if (fallback_counter) ++(*fallback_counter);
    S total = S(0);
    for (std::size_t i = 0; i < probs.numel(); ++i) {
      const S p = clamp_prob(probs[i], eps);
      total += -(gt[i] * std::log(p) + (S(1) - gt[i]) * std::log(S(1) - p));
    }
    return total / static_cast<S>(probs.numel());
  }
  return num / den;
}

// d(masked_bce)/d(probs) with the mask treated as a constant.
template <typename S>
Tensor<S> masked_bce_grad(const Tensor<S>& probs, const Tensor<S>& gt, const Tensor<S>& mask,
                          S eps = S(1e-7)) {
  Tensor<S> dp(probs.shape());
  S den = S(0);
  for (std::size_t i = 0; i < mask.numel(); ++i) den += mask[i];
  const bool fallback = den == S(0);
  const S norm = fallback ? static_cast<S>(probs.numel()) : den;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S m = fallback ? S(1) : mask[i];
    dp[i] = m * (p - gt[i]) / (p * (S(1) - p)) / norm;
  }
  return dp;
}

template <typename S>
S cem_loss(const Tensor<S>& probs, const Tensor<S>& gt, const CemConfig& cfg, Rng& rng,
           std::size_t* fallback_counter = nullptr) {
  Tensor<S> mask = cem_mask(gt, cfg, rng);
  return masked_bce(probs, gt, mask, static_cast<S>(cfg.epsilon), fallback_counter);
}

// Mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t).
template <typename S>
S focal_loss(const Tensor<S>& probs, const Tensor<S>& gt, S alpha, S gamma, S eps = S(1e-7)) {
  check_same_shape(probs, gt, "focal_loss");
  S total = S(0);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S pt = gt[i] == S(1) ? p : S(1) - p;
    const S at = gt[i] == S(1) ? alpha : S(1) - alpha;
    total += -at * std::pow(S(1) - pt, gamma) * std::log(pt);
  }
  return total / static_cast<S>(probs.numel());
}

template <typename S>
Tensor<S> focal_loss_grad(const Tensor<S>& probs, const Tensor<S>& gt, S alpha, S gamma,
                          S eps = S(1e-7)) {
  Tensor<S> dp(probs.shape());
  const S n = static_cast<S>(probs.numel());
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S pt = gt[i] == S(1) ? p : S(1) - p;
    const S at = gt[i] == S(1) ? alpha : S(1) - alpha;
    // d/dpt of -at (1-pt)^g log(pt), then dpt/dp = +-1.
    const S one_m = S(1) - pt;
    S dpt = at * gamma * std::pow(one_m, gamma - S(1)) * std::log(pt) - at * std::pow(one_m, gamma) / pt;
    dp[i] = (gt[i] == S(1) ? dpt : -dpt) / n;
  }
  return dp;
}

// Mean BCE with per-class weights: w1 on change pixels, w0 on background.
template <typename S>
S weighted_bce(const Tensor<S>& probs, const Tensor<S>& gt, S w0, S w1, S eps = S(1e-7)) {
  check_same_shape(probs, gt, "weighted_bce");
  S total = S(0);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S l = -(gt[i] * std::log(p) + (S(1) - gt[i]) * std::log(S(1) - p));
    total += (gt[i] == S(1) ? w1 : w0) * l;
  }
  return total / static_cast<S>(probs.numel());
}

template <typename S>
Tensor<S> weighted_bce_grad(const Tensor<S>& probs, const Tensor<S>& gt, S w0, S w1,
                            S eps = S(1e-7)) {
  Tensor<S> dp(probs.shape());
  const S n = static_cast<S>(probs.numel());
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S w = gt[i] == S(1) ? w1 : w0;
    dp[i] = w * (p - gt[i]) / (p * (S(1) - p)) / n;
  }
  return dp;
}

// bce_weight * meanBCE + dice_weight * (1 - (2*sum(p*y)+s)/(sum(p)+sum(y)+s)),
// smoothing s = 1.
template <typename S>
S bce_dice(const Tensor<S>& probs, const Tensor<S>& gt, S bce_weight, S dice_weight,
           S eps = S(1e-7)) {
  check_same_shape(probs, gt, "bce_dice");
  const S smooth = S(1);
  S bce = S(0), inter = S(0), psum = S(0), ysum = S(0);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    bce += -(gt[i] * std::log(p) + (S(1) - gt[i]) * std::log(S(1) - p));
    inter += probs[i] * gt[i];
    psum += probs[i];
    ysum += gt[i];
  }
  bce /= static_cast<S>(probs.numel());
  const S dice = S(1) - (S(2) * inter + smooth) / (psum + ysum + smooth);
  return bce_weight * bce + dice_weight * dice;
}

template <typename S>
Tensor<S> bce_dice_grad(const Tensor<S>& probs, const Tensor<S>& gt, S bce_weight, S dice_weight,
                        S eps = S(1e-7)) {
  Tensor<S> dp(probs.shape());
  const S smooth = S(1);
  const S n = static_cast<S>(probs.numel());
  S inter = S(0), psum = S(0), ysum = S(0);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    inter += probs[i] * gt[i];
    psum += probs[i];
    ysum += gt[i];
  }
  const S den = psum + ysum + smooth;
  const S num = S(2) * inter + smooth;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const S p = clamp_prob(probs[i], eps);
    const S dbce = (p - gt[i]) / (p * (S(1) - p)) / n;
    const S ddice = -(S(2) * gt[i] * den - num) / (den * den);
    dp[i] = bce_weight * dbce + dice_weight * ddice;
  }
  return dp;
}

// ---- Logits entry points -------------------------------------------------
// Stable BCE on raw logits: max(z,0) - z*y + log(1 + exp(-|z|)). Values agree
// with the probability path to well under 1e-6 away from the clamp region;
// gradients are exact in z.

template <typename S>
Tensor<S> sigmoid_map(const Tensor<S>& logits) {
  Tensor<S> p(logits.shape());
  for (std::size_t i = 0; i < logits.numel(); ++i) p[i] = sigmoid(logits[i]);
  return p;
}

template <typename S>
S bce_on_logit(S z, S y) {
  return std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

template <typename S>
struct LossResult {
  S value = S(0);
  Tensor<S> dlogits;          // d(loss)/d(logits)
  std::size_t kept = 0;       // pixels contributing (CEM)
  bool mask_fallback = false; // all-background tile fully dropped
};

// Loss + gradient straight from logits; used by the training loop. The CEM
// mask is sampled from `rng` per call and treated as a constant under
// differentiation.
template <typename S>
LossResult<S> loss_on_logits(const Tensor<S>& logits, const Tensor<S>& gt, const LossConfig& cfg,
                             Rng& rng) {
  if (logits.numel() != gt.numel())
    throw ShapeError("loss_on_logits: logits " + logits.shape_str() + " vs gt " + gt.shape_str());
  const std::size_t n = logits.numel();
  LossResult<S> res;
  res.dlogits = Tensor<S>(logits.shape());
  const S eps = static_cast<S>(cfg.cem.epsilon);
  switch (cfg.kind) {
    case LossKind::cem:
    case LossKind::bce: {
      Tensor<S> mask(gt.shape(), S(1));
      if (cfg.kind == LossKind::cem) {
        for (std::size_t i = 0; i < n; ++i) {
          const double r = rng.uniform();
          mask[i] = (gt[i] == S(1) || r >= cfg.cem.delta) ? S(1) : S(0);
        }
      }
      S den = S(0);
      for (std::size_t i = 0; i < n; ++i) den += mask[i];
      res.mask_fallback = den == S(0);
      if (res.mask_fallback) mask.fill(S(1));
      const S norm = res.mask_fallback ? static_cast<S>(n) : den;
      res.kept = static_cast<std::size_t>(norm);
      S total = S(0);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == S(0)) continue;
        total += bce_on_logit(logits[i], gt[i]);
        res.dlogits[i] = (sigmoid(logits[i]) - gt[i]) / norm;
      }
      res.value = total / norm;
      break;
    }
    case LossKind::focal: {
      Tensor<S> p = sigmoid_map(logits);
      Tensor<S> flat_gt = gt;
      res.value = focal_loss(p, flat_gt, static_cast<S>(cfg.alpha), static_cast<S>(cfg.gamma), eps);
      Tensor<S> dp = focal_loss_grad(p, flat_gt, static_cast<S>(cfg.alpha), static_cast<S>(cfg.gamma), eps);
      for (std::size_t i = 0; i < n; ++i) res.dlogits[i] = dp[i] * p[i] * (S(1) - p[i]);
      break;
    }
    case LossKind::wbce: {
      const S w0 = static_cast<S>(cfg.w0), w1 = static_cast<S>(cfg.w1);
      S total = S(0);
      for (std::size_t i = 0; i < n; ++i) {
        const S w = gt[i] == S(1) ? w1 : w0;
        total += w * bce_on_logit(logits[i], gt[i]);
        res.dlogits[i] = w * (sigmoid(logits[i]) - gt[i]) / static_cast<S>(n);
      }
      res.value = total / static_cast<S>(n);
      break;
    }
    case LossKind::bce_dice: {
      Tensor<S> p = sigmoid_map(logits);
      res.value = bce_dice(p, gt, static_cast<S>(cfg.bce_weight), static_cast<S>(cfg.dice_weight), eps);
      Tensor<S> dp = bce_dice_grad(p, gt, static_cast<S>(cfg.bce_weight), static_cast<S>(cfg.dice_weight), eps);
      for (std::size_t i = 0; i < n; ++i) res.dlogits[i] = dp[i] * p[i] * (S(1) - p[i]);
      break;
    }
  }
  return res;
}

// Loss value from logits only (the numerically stable entry point of the
// probability-space functions above).
template <typename S>
S loss_value_on_logits(const Tensor<S>& logits, const Tensor<S>& gt, const LossConfig& cfg,
                       Rng& rng) {
  return loss_on_logits(logits, gt, cfg, rng).value;
}

}  // namespace cemcd
