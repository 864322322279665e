#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

#include "cemcd/tensor.hpp"

namespace cemcd {

// Pixel tallies with change as the positive class. Addition is associative,
// so tiles can be accumulated in any order (or in parallel) and reported once.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
};

struct MetricReport {
  double precision = 0, recall = 0, f1 = 0, oa = 0, iou = 0;
  double f1_bg = 0, iou_bg = 0;
  double mf1 = 0, miou = 0;
};

template <typename S>
ConfusionCounts confusion(const Tensor<S>& pred, const Tensor<S>& gt) {
  check_same_shape(pred, gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != S(0);
    const bool y = gt[i] != S(0);
    if (p && y)
      ++c.tp;
    else if (p && !y)
      ++c.fp;
    else if (!p && y)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Ratios with a zero denominator evaluate to 0.
inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline MetricReport report(const ConfusionCounts& c) {
  if (c.total() == 0) throw EmptyEvaluationError("no pixels evaluated");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  MetricReport r;
  r.precision = safe_ratio(tp, tp + fp);
  r.recall = safe_ratio(tp, tp + fn);
  r.f1 = safe_ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.oa = (tp + tn) / static_cast<double>(c.total());
  r.iou = safe_ratio(tp, tp + fp + fn);
  const double p_bg = safe_ratio(tn, tn + fn);
  const double r_bg = safe_ratio(tn, tn + fp);
  r.f1_bg = safe_ratio(2.0 * p_bg * r_bg, p_bg + r_bg);
  r.iou_bg = safe_ratio(tn, tn + fn + fp);
  r.mf1 = 0.5 * (r.f1 + r.f1_bg);
  r.miou = 0.5 * (r.iou + r.iou_bg);
  return r;
}

// Flat key=value block, percentages with two decimals.
inline std::string format_report(const MetricReport& r, const ConfusionCounts& c) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "precision=" << 100.0 * r.precision << "\n"
     << "recall=" << 100.0 * r.recall << "\n"
     << "f1=" << 100.0 * r.f1 << "\n"
     << "oa=" << 100.0 * r.oa << "\n"
     << "iou=" << 100.0 * r.iou << "\n"
     << "f1_bg=" << 100.0 * r.f1_bg << "\n"
     << "iou_bg=" << 100.0 * r.iou_bg << "\n"
     << "mf1=" << 100.0 * r.mf1 << "\n"
     << "miou=" << 100.0 * r.miou << "\n"
     << "tp=" << c.tp << "\n"
     << "fp=" << c.fp << "\n"
     << "fn=" << c.fn << "\n"
     << "tn=" << c.tn << "\n";
  return os.str();
}

}  // namespace cemcd
