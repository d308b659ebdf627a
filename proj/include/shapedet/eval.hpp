#pragma once

// KITTI-style average precision with 11 or 40 recall samples, per-class IoU
// thresholds, difficulty filtering and planar-distance buckets.

#include <optional>
#include <string>
#include <vector>

#include "shapedet/detect.hpp"
#include "shapedet/kitti.hpp"

namespace shapedet {

struct EvalConfig {
  std::string label = "Car";
  double iou_threshold = 0.7;
  int recall_positions = 40;  // 11 or 40
  IouKind metric = IouKind::k3d;
  Difficulty difficulty = Difficulty::kModerate;

  void validate() const;
  /// 0.7 for Car, 0.5 for Pedestrian and Cyclist.
  static double default_threshold(const std::string& label);
};

/// Ground truth and detections of one scene.
struct EvalScene {
  std::vector<GtObject> gt;
  std::vector<DetectionRecord> detections;
};

/// A gt takes part when it has the evaluated class and a difficulty no harder
/// than the evaluated level; other gts of the class are ignored.
bool gt_counts(const GtObject& gt, const EvalConfig& cfg);

enum class MatchState { kTruePositive, kFalsePositive, kIgnored };

struct SceneMatch {
  std::vector<MatchState> detections;  // in the order given
  std::vector<int> matched_detection;  // per gt, -1 when unmatched
  std::vector<bool> gt_ignored;
};

/// Greedy in descending score (ties by index): each detection of the class takes
/// the highest-IoU unmatched gt with IoU > threshold. A match on an ignored gt
/// makes the detection ignored.
SceneMatch match_detections(const EvalScene& scene, const EvalConfig& cfg);

struct PrPoint {
  double score = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct ApResult {
  std::optional<double> ap;  // absent when there are no counted gts
  std::size_t num_gt = 0;
  std::size_t num_tp = 0;
  std::size_t num_fp = 0;
  std::vector<PrPoint> curve;
};

ApResult average_precision(const std::vector<EvalScene>& scenes, const EvalConfig& cfg);

struct RangeBucket {
  double lower = 0.0;
  double upper = 0.0;  // infinity for the open bucket
  std::string name() const;
  /// Upper-inclusive (lower, upper]; distance 0 joins the first bucket.
  bool contains(double distance) const;
};

std::vector<RangeBucket> default_buckets();
double planar_distance(const Box7& box);

struct BucketResult {
  RangeBucket bucket;
  ApResult headline;  // detections: own bucket when unmatched, gt bucket when matched
  ApResult gt_only;   // all detections, only this bucket's gts counted
};

struct RangeApResult {
  std::vector<BucketResult> buckets;
  std::optional<double> mean;        // over buckets with an AP
  std::optional<double> gt_only_mean;
};

RangeApResult range_bucketed_ap(const std::vector<EvalScene>& scenes, const EvalConfig& cfg,
                                const std::vector<RangeBucket>& buckets = default_buckets());

/// {"class", "metric", "difficulty", "recall_positions", "ap", "per_bucket": {...}}.
std::string metrics_to_json(const EvalConfig& cfg, const ApResult& overall, const RangeApResult& ranges);

}  // namespace shapedet
