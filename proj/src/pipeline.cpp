#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "shapedet/detect.hpp"

namespace shapedet {

namespace {

constexpr std::size_t kSlotsPerAnchor = 9;  // score, 7 residuals, direction

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void DetectorConfig::validate() const {
  grid.validate();
  if (anchors.empty()) throw DomainError("detector: at least one anchor class required");
  for (const auto& a : anchors) a.validate();
  if (keypoints == 0 || vsa_neighbors == 0 || vsa_width == 0) throw DomainError("detector: keypoint sizes must be >= 1");
  for (double r : vsa_radii)
    if (!(r > 0.0)) throw DomainError("detector: VSA radii must be positive");
  if (pool_resolution < 1) throw DomainError("detector: pool resolution must be >= 1");
  if (shape.output_points < msg.centers) throw DomainError("detector: MSG centers exceed predicted points");
  shape.validate();
  msg.validate();
  if (roi_grid.grid < 1 || roi_grid.widths.empty()) throw DomainError("detector: bad RoI grid config");
  if (head_width == 0) throw DomainError("detector: head width must be >= 1");
}

Detector Detector::init(const DetectorConfig& cfg, Rng& rng) {
  cfg.validate();
  Detector d;
  d.cfg_ = cfg;
  d.backbone_ = SparseBackbone::init(cfg.backbone, rng);
  const std::size_t top = cfg.backbone.channels.back();
  for (std::size_t c = 0; c < cfg.anchors.size(); ++c) {
    d.rpn_heads_.push_back(LinearLayer::init("rpn.head" + std::to_string(c), top,
                                             kSlotsPerAnchor * cfg.anchors[c].yaws.size(), rng));
  }
  const std::size_t widths[] = {cfg.vsa_width};
  for (std::size_t l = 0; l < 4; ++l) {
    d.vsa_[l] = make_mlp("vsa.level" + std::to_string(l), 3 + cfg.backbone.channels[l], widths, rng);
  }
  const std::size_t kc = cfg.keypoint_channels();
  d.attention_a_ = LinearLayer::init("keypoint.attention.0", kc, std::max<std::size_t>(1, kc / 2), rng);
  d.attention_b_ = LinearLayer::init("keypoint.attention.1", std::max<std::size_t>(1, kc / 2), 1, rng);
  d.shape_ = ShapePredictor::init(cfg.shape, rng);
  d.msg_ = MsgParams::init(cfg.msg, rng);
  d.roi_grid_ = RoiGridParams::init(cfg.roi_grid, kc, rng);
  const std::size_t rows = static_cast<std::size_t>(cfg.roi_grid.grid) * cfg.roi_grid.grid * cfg.roi_grid.grid;
  const std::size_t channels = cfg.roi_grid.channels() + cfg.msg.channels;
  d.fusion_ = FusionParams::init(rows, channels, cfg.fusion, rng);
  d.shared_ = LinearLayer::init("head.shared", rows * channels, cfg.head_width, rng);
  d.refine_a_ = LinearLayer::init("head.refine.0", cfg.head_width, cfg.head_width, rng);
  // Zero output layers: an untrained head keeps the proposal box and scores 0.5.
  d.refine_b_ = LinearLayer::zeros("head.refine.1", cfg.head_width, 7);
  d.confidence_a_ = LinearLayer::init("head.confidence.0", cfg.head_width, cfg.head_width, rng);
  d.confidence_b_ = LinearLayer::zeros("head.confidence.1", cfg.head_width, 1);
  return d;
}

std::vector<Parameter*> Detector::parameters() {
  std::vector<Parameter*> out = backbone_.parameters();
  for (auto& h : rpn_heads_) h.collect(out);
  for (auto& level : vsa_)
    for (auto& l : level) l.collect(out);
  attention_a_.collect(out);
  attention_b_.collect(out);
  for (auto* p : shape_.parameters()) out.push_back(p);
  msg_.collect(out);
  roi_grid_.collect(out);
  fusion_.collect(out);
  for (auto* l : {&shared_, &refine_a_, &refine_b_, &confidence_a_, &confidence_b_}) l->collect(out);
  return out;
}

RpnOutput Detector::rpn(const SparseVoxelTensor& top) const {
  RpnOutput out;
  if (top.size() == 0) {
    out.scores = Tensor({0, 1});
    out.residuals = Tensor({0, 7});
    return out;
  }
  // Collapse the vertical axis by a channel-wise max per BEV cell.
  const std::size_t c = top.channels();
  std::map<std::array<int, 2>, std::size_t> cell_of;
  std::vector<std::array<int, 2>> cells;
  std::vector<double> bev;
  for (std::size_t i = 0; i < top.size(); ++i) {
    const std::array<int, 2> key{top.coords[i].y, top.coords[i].x};
    auto [it, fresh] = cell_of.emplace(key, cells.size());
    if (fresh) {
      cells.push_back(key);
      bev.insert(bev.end(), top.features.ptr() + i * c, top.features.ptr() + (i + 1) * c);
    } else {
      double* row = bev.data() + it->second * c;
      for (std::size_t j = 0; j < c; ++j) row[j] = std::max(row[j], top.features.at(i, j));
    }
  }
  // std::map iteration order is the sorted cell order; rebuild rows in that order.
  std::vector<std::array<int, 2>> sorted_cells;
  Tensor feats({cells.size(), c});
  std::size_t r = 0;
  for (const auto& [key, idx] : cell_of) {
    sorted_cells.push_back(key);
    std::copy(bev.begin() + idx * c, bev.begin() + (idx + 1) * c, feats.ptr() + r * c);
    ++r;
  }

  std::vector<double> scores, residuals;
  for (std::size_t k = 0; k < cfg_.anchors.size(); ++k) {
    const auto& spec = cfg_.anchors[k];
    const auto anchors = anchors_for_cells(spec, cfg_.grid, top.stride, sorted_cells);
    const LinearLayer& head = rpn_heads_[k];
    const Tensor y = linear_forward(feats, head.weight.value, head.bias.value);
    for (std::size_t i = 0; i < sorted_cells.size(); ++i) {
      for (std::size_t a = 0; a < spec.yaws.size(); ++a) {
        const double* slot = y.ptr() + i * y.cols() + a * kSlotsPerAnchor;
        scores.push_back(sigmoid(slot[0]));
        residuals.insert(residuals.end(), slot + 1, slot + 8);
        out.anchors.push_back(anchors[i * spec.yaws.size() + a]);
        out.anchor_class.push_back(k);
      }
    }
  }
  const std::size_t n = scores.size();
  out.scores = Tensor({n, 1}, std::move(scores));
  out.residuals = Tensor({n, 7}, std::move(residuals));
  return out;
}

KeypointFeatures Detector::keypoints(const PointCloud& points, const std::vector<SparseVoxelTensor>& levels) {
  if (levels.size() != 4) throw ShapeError("keypoints: four backbone levels required");
  KeypointFeatures kp;
  if (points.empty()) {
    kp.features = Tensor({0, cfg_.keypoint_channels()});
    kp.foreground = Tensor({0, 1});
    return kp;
  }
  auto xyz = xyz_of(points);
  std::vector<Vec3> sorted;
  for (auto i : lexicographic_order(xyz)) sorted.push_back(xyz[i]);
  for (auto i : farthest_point_sample_padded(sorted, cfg_.keypoints, 0)) kp.positions.push_back(sorted[i]);
  const std::size_t k = kp.positions.size(), t = cfg_.vsa_neighbors;

  Tape tape;
  Var joined{};
  for (std::size_t l = 0; l < 4; ++l) {
    const auto& level = levels[l];
    Var part{};
    if (level.size() == 0) {
      part = tape.constant(Tensor({k, cfg_.vsa_width}, 0.0));
    } else {
      const auto centers = voxel_centers(level, cfg_.grid);
      const NeighborLists nl = ball_query(kp.positions, centers, cfg_.vsa_radii[l], t);
      const std::size_t c = level.channels();
      Tensor grouped({k * t, 3 + c});
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
          const std::size_t v = nl.indices[i * t + j];
          double* dst = grouped.ptr() + (i * t + j) * (3 + c);
          dst[0] = centers[v].x - kp.positions[i].x;
          dst[1] = centers[v].y - kp.positions[i].y;
          dst[2] = centers[v].z - kp.positions[i].z;
          std::copy(level.features.ptr() + v * c, level.features.ptr() + (v + 1) * c, dst + 3);
        }
      }
      part = pointnet_unit(tape, tape.constant(std::move(grouped)), vsa_[l], t);
    }
    joined = l == 0 ? part : tape.concat(joined, part);
  }
  const Var att = tape.sigmoid(tape.linear(tape.relu(tape.linear(joined, attention_a_)), attention_b_));
  kp.features = tape.value(joined);
  kp.foreground = tape.value(att);
  const std::size_t c = kp.features.cols();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < c; ++j) kp.features[i * c + j] *= kp.foreground[i];
  return kp;
}

RefinedProposal Detector::refine(const Box7& proposal, const PointCloud& points, const KeypointFeatures& kp) {
  const PooledPointGrid pooled = roi_aware_pool(points, proposal, cfg_.pool_resolution);
  const Tensor shape = predict_shape(pooled, shape_);

  Tape tape;
  const Var structure = msg_extract(tape, tape.constant(shape), cfg_.msg, msg_);
  const GridPointFeatures grid = roi_grid_pool(tape, kp.positions, kp.features, proposal, cfg_.roi_grid, roi_grid_);
  const FusionOutput fused = fuse_attention(tape, grid.features, structure, fusion_);
  const Tensor& fe = tape.value(fused.enhanced);
  const Var flat = tape.reshape(fused.enhanced, {1, fe.size()});
  const Var shared = tape.relu(tape.linear(flat, shared_));
  const Var residual = tape.linear(tape.relu(tape.linear(shared, refine_a_)), refine_b_);
  const Var conf = tape.sigmoid(tape.linear(tape.relu(tape.linear(shared, confidence_a_)), confidence_b_));

  RefinedProposal out;
  out.box = decode_box(tape.value(residual).data(), proposal).normalized();
  out.confidence = tape.value(conf).item();
  out.fallback_rows = grid.fallback_rows;
  return out;
}

RpnOutput oracle_rpn(const RpnOutput& rpn, std::span<const Box7> gt_boxes, double match_iou) {
  RpnOutput out = rpn;
  const std::size_t n = rpn.anchors.size();
  std::vector<double> best(n, 0.0);
  std::vector<int> arg(n, -1);
  // Every gt also claims its single best anchor, so a box that no anchor
  // covers at match_iou (e.g. a yaw between the anchor yaws) is still proposed.
  std::vector<std::size_t> claimed(gt_boxes.size(), n);
  std::vector<double> claimed_iou(gt_boxes.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double iou = bev_iou(rpn.anchors[i], gt_boxes[g]);
      if (iou > best[i]) {
        best[i] = iou;
        arg[i] = static_cast<int>(g);
      }
      if (iou > claimed_iou[g]) {
        claimed_iou[g] = iou;
        claimed[g] = i;
      }
    }
  }
  std::vector<bool> matched(n, false);
  for (std::size_t i = 0; i < n; ++i) matched[i] = arg[i] >= 0 && best[i] >= match_iou;
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (claimed[g] == n || matched[claimed[g]]) continue;
    matched[claimed[g]] = true;
    arg[claimed[g]] = static_cast<int>(g);
    best[claimed[g]] = claimed_iou[g];
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 7> r{};
    if (matched[i]) {
      r = encode_box(gt_boxes[arg[i]], rpn.anchors[i]);
      out.scores[i] = 0.5 + 0.5 * best[i];
    } else {
      out.scores[i] = 0.5 * best[i];
    }
    std::copy(r.begin(), r.end(), out.residuals.ptr() + 7 * i);
  }
  return out;
}

PipelineResult inference_pipeline(const PointCloud& points, Detector& detector, const PipelineConfig& cfg,
                                  const std::vector<Box7>* oracle_gt) {
  PipelineResult result;
  if (points.empty()) return result;
  const DetectorConfig& dc = detector.config();
  const SparseVoxelTensor voxels = voxelize(points, dc.grid);
  if (voxels.size() == 0) return result;
  const auto levels = detector.backbone().forward(voxels);

  RpnOutput rpn = detector.rpn(levels.back());
  if (oracle_gt != nullptr) rpn = oracle_rpn(rpn, *oracle_gt);

  std::vector<DetectionRecord> candidates;
  for (std::size_t i = 0; i < rpn.anchors.size(); ++i) {
    const Box7 box = decode_box({rpn.residuals.ptr() + 7 * i, 7}, rpn.anchors[i]).normalized();
    if (!box.valid()) continue;
    candidates.push_back({dc.anchors[rpn.anchor_class[i]].label, box, rpn.scores[i]});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const DetectionRecord& a, const DetectionRecord& b) { return a.score > b.score; });
  if (candidates.size() > cfg.pre_nms_top_k) candidates.resize(cfg.pre_nms_top_k);

  result.rpn_survivors = nms_records(candidates, cfg.rpn_nms_threshold, cfg.rpn_nms_kind);
  result.proposals.assign(result.rpn_survivors.begin(),
                          result.rpn_survivors.begin() +
                              static_cast<std::ptrdiff_t>(std::min(cfg.post_nms_top_k, result.rpn_survivors.size())));
  if (result.proposals.empty()) return result;

  const KeypointFeatures kp = detector.keypoints(points, levels);
  std::vector<DetectionRecord> refined(result.proposals.size());
  parallel_for(refined.size(), cfg.threads, [&](std::size_t i) {
    const RefinedProposal r = detector.refine(result.proposals[i].box, points, kp);
    refined[i] = {result.proposals[i].label, r.box, r.confidence};
  });
  result.detections = nms_records(refined, cfg.final_nms_threshold, cfg.final_nms_kind);
  return result;
}

}  // namespace shapedet
