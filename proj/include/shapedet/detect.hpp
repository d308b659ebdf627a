#pragma once

// Anchors, residual coding, target assignment, proposal sampling, NMS, the
// training losses and the two-stage inference pipeline.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "shapedet/geometry.hpp"
#include "shapedet/pointops.hpp"
#include "shapedet/shape.hpp"
#include "shapedet/tensor.hpp"
#include "shapedet/voxel.hpp"

namespace shapedet {

struct DetectionRecord {
  std::string label;
  Box7 box;
  double score = 0.0;
};

// ---------------------------------------------------------------- anchors

struct AnchorSpec {
  std::string label = "Car";
  double l = 3.9, w = 1.6, h = 1.56;
  double z_center = -1.0;
  std::array<double, 2> yaws{0.0, M_PI / 2};

  void validate() const;
};

/// Anchors over the given BEV cells (row-major y, x of a map with `stride` input
/// voxels per cell), one per yaw, in cell order then yaw order.
std::vector<Box7> anchors_for_cells(const AnchorSpec& spec, const GridSpec& grid, int stride,
                                    std::span<const std::array<int, 2>> cells);
/// Dense tiling of the whole BEV map.
std::vector<Box7> generate_anchors(const AnchorSpec& spec, const GridSpec& grid, int stride);

/// Residuals: centre offsets over the anchor's BEV diagonal (z over its height),
/// log size ratios, raw yaw difference.
std::array<double, 7> encode_box(const Box7& box, const Box7& anchor);
Box7 decode_box(std::span<const double> residual, const Box7& anchor);

// ---------------------------------------------------------------- targets

struct AuxTargets {
  std::vector<int> labels;                     // 1 inside some gt box
  std::vector<int> box_index;                  // first containing gt, -1 otherwise
  std::vector<std::array<double, 3>> offsets;  // meaningful only where labels == 1
};

/// Offset target per axis: (box centre - point + d/2) / d with d the box's 3D
/// diagonal, clamped to [0, 1].
AuxTargets aux_targets(std::span<const Vec3> points, std::span<const Box7> gt_boxes);

struct ProposalSampleConfig {
  std::size_t total = 128;
  std::size_t max_positive = 64;
  double positive_iou = 0.55;
};

struct ProposalSample {
  std::vector<std::size_t> indices;  // into the proposal list, positives first
  std::vector<int> labels;           // 1 positive, 0 negative
  std::vector<double> max_iou;       // best 3D IoU with any gt
  std::vector<int> matched_gt;       // argmax gt (lowest index on ties), -1 without gts
};

/// Up to `max_positive` positives, negatives fill the rest; either side backfills
/// the other's deficit. Indices are never repeated.
ProposalSample sample_proposals(std::span<const Box7> proposals, std::span<const Box7> gt_boxes, Rng& rng,
                                const ProposalSampleConfig& cfg = {});

// ---------------------------------------------------------------- NMS

/// Greedy suppression in descending score order, ties by lower index. A record is
/// dropped when its IoU with a kept one exceeds `threshold`. Returns kept indices
/// in keep order.
std::vector<std::size_t> nms(std::span<const DetectionRecord> records, double threshold, IouKind kind);
std::vector<DetectionRecord> nms_records(std::span<const DetectionRecord> records, double threshold, IouKind kind);

// ---------------------------------------------------------------- losses

/// -alpha (1 - p_t)^gamma ln(p_t), p_t clamped below at 1e-12.
double focal_loss(double p_t, const FocalParams& params = {});
double focal_loss(std::span<const double> p_t, const FocalParams& params, Reduction reduction);
/// Elementwise BCE averaged over the given values.
double offset_bce_loss(std::span<const double> predicted, std::span<const double> target);

struct LossWeights {
  double direction = 0.2;
  FocalParams focal{};
};

/// Network outputs and their targets for one batch. Any block whose prediction
/// is unset contributes exactly zero.
struct LossInputs {
  // Anchor classification and regression (L_box).
  std::optional<Var> anchor_prob;  // [A x 1]
  std::vector<double> anchor_labels;
  std::optional<Var> anchor_residual;  // [P x 7], positive anchors only
  Tensor anchor_residual_target;
  std::optional<Var> direction_prob;  // [P x 1]
  Tensor direction_target;
  // Keypoint foreground (L_pt).
  std::optional<Var> keypoint_prob;  // [K x 1]
  std::vector<double> keypoint_labels;
  // Voxel segmentation and offsets (L_aux).
  std::optional<Var> segment_prob;  // [V x 1]
  std::vector<double> segment_labels;
  std::optional<Var> offset_prob;  // [V x 3]
  Tensor offset_target;
  std::vector<double> offset_mask;  // foreground rows
  // Second stage (L_rcnn).
  std::optional<Var> refine_residual;  // [R x 7]
  Tensor refine_target;
  std::optional<Var> confidence_prob;  // [R x 1]
  Tensor confidence_target;
};

struct LossTerms {
  Var box, keypoint, segment, offset, rcnn;
  Var aux, rpn, total;
};

struct LossBreakdown {
  double box = 0, keypoint = 0, segment = 0, offset = 0, rcnn = 0;
  double aux = 0, rpn = 0, total = 0;
};

/// total = rpn + rcnn, rpn = box + keypoint + aux, aux = segment + offset.
LossTerms total_loss(Tape& tape, const LossInputs& in, const LossWeights& weights = {});
/// Reads the term values; throws NumericError naming the first non-finite term.
LossBreakdown loss_values(const Tape& tape, const LossTerms& terms);

/// Confidence target for a proposal: clip(2 IoU - 0.5, 0, 1).
double confidence_target(double iou);

// ---------------------------------------------------------------- network

struct DetectorConfig {
  GridSpec grid;
  BackboneConfig backbone;
  std::vector<AnchorSpec> anchors{AnchorSpec{}};
  std::size_t keypoints = 2048;
  std::array<double, 4> vsa_radii{0.4, 0.8, 1.2, 2.4};
  std::size_t vsa_neighbors = 16;
  std::size_t vsa_width = 32;  // per level
  int pool_resolution = 12;    // r_p
  ShapeNetConfig shape;
  MsgConfig msg;
  RoiGridConfig roi_grid;
  FusionConfig fusion;
  std::size_t head_width = 256;

  void validate() const;
  std::size_t keypoint_channels() const { return 4 * vsa_width; }
};

struct PipelineConfig {
  std::size_t pre_nms_top_k = 4096;
  double rpn_nms_threshold = 0.7;
  IouKind rpn_nms_kind = IouKind::kBev;
  std::size_t post_nms_top_k = 100;
  double final_nms_threshold = 0.01;
  IouKind final_nms_kind = IouKind::k3d;
  std::size_t threads = 1;
};

/// First-stage output on the anchors of the occupied BEV cells.
struct RpnOutput {
  std::vector<Box7> anchors;
  std::vector<std::size_t> anchor_class;  // index into DetectorConfig::anchors
  Tensor scores;                          // [A x 1] probabilities
  Tensor residuals;                       // [A x 7]
};

struct KeypointFeatures {
  std::vector<Vec3> positions;
  Tensor features;  // [K x C], attention-weighted
  Tensor foreground;  // [K x 1] attention probabilities
};

struct RefinedProposal {
  Box7 box;
  double confidence = 0.0;
  std::size_t fallback_rows = 0;
};

class Detector {
 public:
  static Detector init(const DetectorConfig& cfg, Rng& rng);

  const DetectorConfig& config() const { return cfg_; }
  ShapePredictor& shape_net() { return shape_; }
  const SparseBackbone& backbone() const { return backbone_; }

  RpnOutput rpn(const SparseVoxelTensor& top_level) const;
  KeypointFeatures keypoints(const PointCloud& points, const std::vector<SparseVoxelTensor>& levels);
  /// Second stage for one proposal. Reads parameters only, so proposals may be
  /// refined concurrently.
  RefinedProposal refine(const Box7& proposal, const PointCloud& points, const KeypointFeatures& kp);

  std::vector<Parameter*> parameters();

 private:
  DetectorConfig cfg_;
  SparseBackbone backbone_;
  std::vector<LinearLayer> rpn_heads_;  // one per anchor spec
  std::array<std::vector<LinearLayer>, 4> vsa_;
  LinearLayer attention_a_, attention_b_;
  ShapePredictor shape_;
  MsgParams msg_;
  RoiGridParams roi_grid_;
  FusionParams fusion_;
  LinearLayer shared_;
  LinearLayer refine_a_, refine_b_;
  LinearLayer confidence_a_, confidence_b_;
};

/// Perfect first stage for plumbing tests: anchors whose best BEV IoU with a gt
/// reaches `match_iou`, plus each gt's single best anchor, get that gt's
/// residual and score 0.5 + IoU / 2; others keep their own box with score IoU / 2.
RpnOutput oracle_rpn(const RpnOutput& rpn, std::span<const Box7> gt_boxes, double match_iou = 0.45);

struct PipelineResult {
  std::vector<DetectionRecord> detections;
  std::vector<DetectionRecord> rpn_survivors;  // after the first NMS, before top-k
  std::vector<DetectionRecord> proposals;      // after top-k
};

/// voxelize -> backbone -> RPN -> NMS -> top-k -> per-proposal refinement -> NMS.
/// With `oracle_gt`, the first stage's scores and residuals are replaced by
/// oracle_rpn against those boxes.
PipelineResult inference_pipeline(const PointCloud& points, Detector& detector, const PipelineConfig& cfg,
                                  const std::vector<Box7>* oracle_gt = nullptr);

// ---------------------------------------------------------------- JSON

/// {"scene_id", "detections": [{"class", "box": [7], "score"}]} with fixed key order.
std::string detections_to_json(const std::string& scene_id, std::span<const DetectionRecord> records);
struct SceneDetections {
  std::string scene_id;
  std::vector<DetectionRecord> detections;
};
SceneDetections detections_from_json(const std::string& text);

}  // namespace shapedet
