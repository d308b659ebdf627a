#include <algorithm>
#include <cmath>
#include <iostream>

#include "shapedet/detect.hpp"

namespace shapedet {

namespace {
constexpr double kProbFloor = 1e-12;
}

double focal_loss(double p_t, const FocalParams& params) {
  if (p_t < kProbFloor) {
    std::cerr << "warning: focal loss clamped p_t to " << kProbFloor << '\n';
    p_t = kProbFloor;
  }
  return -params.alpha * std::pow(1.0 - p_t, params.gamma) * std::log(p_t);
}

double focal_loss(std::span<const double> p_t, const FocalParams& params, Reduction reduction) {
  double total = 0.0;
  for (double p : p_t) total += focal_loss(p, params);
  if (reduction == Reduction::kMean && !p_t.empty()) total /= static_cast<double>(p_t.size());
  return total;
}

double offset_bce_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ShapeError("offset_bce_loss: size mismatch");
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double p = predicted[i], t = target[i];
    total += -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
  }
  return total / static_cast<double>(predicted.size());
}

double confidence_target(double iou) { return std::clamp(2.0 * iou - 0.5, 0.0, 1.0); }

LossTerms total_loss(Tape& tape, const LossInputs& in, const LossWeights& weights) {
  const Var zero = tape.constant(Tensor::scalar(0.0));
  auto sum3 = [&](Var a, Var b, Var c) { return tape.add(tape.add(a, b), c); };

  LossTerms t;
  {
    Var cls = zero, reg = zero, dir = zero;
    if (in.anchor_prob) cls = tape.binary_focal(*in.anchor_prob, in.anchor_labels, weights.focal, Reduction::kMean);
    if (in.anchor_residual && tape.value(*in.anchor_residual).rows() > 0) {
      reg = tape.box_smooth_l1(*in.anchor_residual, in.anchor_residual_target);
    }
    if (in.direction_prob && tape.value(*in.direction_prob).rows() > 0) {
      const std::vector<double> all(tape.value(*in.direction_prob).rows(), 1.0);
      dir = tape.scale(tape.bce(*in.direction_prob, in.direction_target, all), weights.direction);
    }
    t.box = sum3(cls, reg, dir);
  }
  t.keypoint = in.keypoint_prob
                   ? tape.binary_focal(*in.keypoint_prob, in.keypoint_labels, weights.focal, Reduction::kMean)
                   : zero;
  t.segment = in.segment_prob
                  ? tape.binary_focal(*in.segment_prob, in.segment_labels, weights.focal, Reduction::kMean)
                  : zero;
  t.offset = in.offset_prob ? tape.bce(*in.offset_prob, in.offset_target, in.offset_mask) : zero;
  {
    Var reg = zero, conf = zero;
    if (in.refine_residual && tape.value(*in.refine_residual).rows() > 0) {
      reg = tape.box_smooth_l1(*in.refine_residual, in.refine_target);
    }
    if (in.confidence_prob && tape.value(*in.confidence_prob).rows() > 0) {
      const std::vector<double> all(tape.value(*in.confidence_prob).rows(), 1.0);
      conf = tape.bce(*in.confidence_prob, in.confidence_target, all);
    }
    t.rcnn = tape.add(reg, conf);
  }
  t.aux = tape.add(t.segment, t.offset);
  t.rpn = sum3(t.box, t.keypoint, t.aux);
  t.total = tape.add(t.rpn, t.rcnn);
  return t;
}

LossBreakdown loss_values(const Tape& tape, const LossTerms& terms) {
  LossBreakdown b;
  const std::pair<const char*, std::pair<Var, double*>> items[] = {
      {"box", {terms.box, &b.box}},       {"keypoint", {terms.keypoint, &b.keypoint}},
      {"segmentation", {terms.segment, &b.segment}}, {"offset", {terms.offset, &b.offset}},
      {"refinement", {terms.rcnn, &b.rcnn}},    {"auxiliary", {terms.aux, &b.aux}},
      {"first stage", {terms.rpn, &b.rpn}},       {"total", {terms.total, &b.total}},
  };
  for (const auto& [name, item] : items) {
    const double v = tape.value(item.first).item();
    if (!std::isfinite(v)) throw NumericError(std::string("loss term ") + name + " is not finite");
    *item.second = v;
  }
  return b;
}

}  // namespace shapedet
