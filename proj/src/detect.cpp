#include "shapedet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace shapedet {

void AnchorSpec::validate() const {
  if (!(l > 0.0 && w > 0.0 && h > 0.0)) throw DomainError("anchor " + label + ": sizes must be positive");
}

std::vector<Box7> anchors_for_cells(const AnchorSpec& spec, const GridSpec& grid, int stride,
                                    std::span<const std::array<int, 2>> cells) {
  spec.validate();
  if (stride < 1) throw DomainError("anchors: stride must be >= 1");
  std::vector<Box7> out;
  out.reserve(cells.size() * spec.yaws.size());
  const double sx = grid.voxel_size.x * stride, sy = grid.voxel_size.y * stride;
  for (const auto& [iy, ix] : cells) {
    for (double yaw : spec.yaws) {
      out.push_back({grid.range_min.x + (ix + 0.5) * sx, grid.range_min.y + (iy + 0.5) * sy, spec.z_center,
                     spec.l, spec.w, spec.h, yaw});
    }
  }
  return out;
}

std::vector<Box7> generate_anchors(const AnchorSpec& spec, const GridSpec& grid, int stride) {
  const GridShape d = grid.dims();
  const int ny = (d[1] + stride - 1) / stride, nx = (d[2] + stride - 1) / stride;
  std::vector<std::array<int, 2>> cells;
  cells.reserve(static_cast<std::size_t>(ny) * nx);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) cells.push_back({y, x});
  return anchors_for_cells(spec, grid, stride, cells);
}

std::array<double, 7> encode_box(const Box7& box, const Box7& anchor) {
  const double diag = std::sqrt(anchor.l * anchor.l + anchor.w * anchor.w);
  return {(box.cx - anchor.cx) / diag,  (box.cy - anchor.cy) / diag,  (box.cz - anchor.cz) / anchor.h,
          std::log(box.l / anchor.l),   std::log(box.w / anchor.w),   std::log(box.h / anchor.h),
          box.yaw - anchor.yaw};
}

Box7 decode_box(std::span<const double> r, const Box7& anchor) {
  if (r.size() != 7) throw ShapeError("decode_box: residual must have 7 entries");
  const double diag = std::sqrt(anchor.l * anchor.l + anchor.w * anchor.w);
  return {anchor.cx + r[0] * diag,    anchor.cy + r[1] * diag,    anchor.cz + r[2] * anchor.h,
          anchor.l * std::exp(r[3]),  anchor.w * std::exp(r[4]),  anchor.h * std::exp(r[5]),
          anchor.yaw + r[6]};
}

AuxTargets aux_targets(std::span<const Vec3> points, std::span<const Box7> gt_boxes) {
  AuxTargets t;
  t.labels.assign(points.size(), 0);
  t.box_index.assign(points.size(), -1);
  t.offsets.assign(points.size(), {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t b = 0; b < gt_boxes.size(); ++b) {
      const Box7& box = gt_boxes[b];
      if (!point_in_box(points[i], box)) continue;
      const double d = std::sqrt(box.l * box.l + box.w * box.w + box.h * box.h);
      const Vec3 c = box.center();
      const double raw[3] = {c.x - points[i].x, c.y - points[i].y, c.z - points[i].z};
      for (int a = 0; a < 3; ++a) t.offsets[i][a] = std::clamp((raw[a] + 0.5 * d) / d, 0.0, 1.0);
      t.labels[i] = 1;
      t.box_index[i] = static_cast<int>(b);
      break;
    }
  }
  return t;
}

ProposalSample sample_proposals(std::span<const Box7> proposals, std::span<const Box7> gt_boxes, Rng& rng,
                                const ProposalSampleConfig& cfg) {
  if (cfg.max_positive > cfg.total) throw DomainError("sample_proposals: max_positive exceeds total");
  const std::size_t n = proposals.size();
  std::vector<double> best(n, 0.0);
  std::vector<int> arg(n, -1);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double iou = iou3d(proposals[i], gt_boxes[g]);
      if (arg[i] < 0 || iou > best[i]) {
        best[i] = iou;
        arg[i] = static_cast<int>(g);
      }
    }
    (arg[i] >= 0 && best[i] >= cfg.positive_iou ? pos : neg).push_back(i);
  }
  shuffle(pos, rng);
  shuffle(neg, rng);
  std::size_t n_pos = std::min(pos.size(), cfg.max_positive);
  const std::size_t n_neg = std::min(neg.size(), cfg.total - n_pos);
  n_pos = std::min(pos.size(), cfg.total - n_neg);

  ProposalSample s;
  auto take = [&](const std::vector<std::size_t>& from, std::size_t count, int label) {
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = from[k];
      s.indices.push_back(i);
      s.labels.push_back(label);
      s.max_iou.push_back(best[i]);
      s.matched_gt.push_back(arg[i]);
    }
  };
  take(pos, n_pos, 1);
  take(neg, n_neg, 0);
  return s;
}

std::vector<std::size_t> nms(std::span<const DetectionRecord> records, double threshold, IouKind kind) {
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw DomainError("nms: non-finite score");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].score > records[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (box_iou(records[i].box, records[k].box, kind) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<DetectionRecord> nms_records(std::span<const DetectionRecord> records, double threshold, IouKind kind) {
  std::vector<DetectionRecord> out;
  for (std::size_t i : nms(records, threshold, kind)) out.push_back(records[i]);
  return out;
}

std::string detections_to_json(const std::string& scene_id, std::span<const DetectionRecord> records) {
  nlohmann::ordered_json doc;
  doc["scene_id"] = scene_id;
  doc["detections"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json d;
    d["class"] = r.label;
    const auto b = r.box.as_array();
    d["box"] = std::vector<double>(b.begin(), b.end());
    d["score"] = r.score;
    doc["detections"].push_back(std::move(d));
  }
  return doc.dump(2) + "\n";
}

SceneDetections detections_from_json(const std::string& text) {
  SceneDetections out;
  try {
    const auto doc = nlohmann::json::parse(text);
    out.scene_id = doc.at("scene_id").get<std::string>();
    for (const auto& d : doc.at("detections")) {
      DetectionRecord r;
      r.label = d.at("class").get<std::string>();
      const auto b = d.at("box").get<std::vector<double>>();
      if (b.size() != 7) throw FormatError("detection box must have 7 numbers");
      r.box = Box7::from_array(b);
      r.score = d.at("score").get<double>();
      out.detections.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("detection JSON: ") + e.what());
  }
  return out;
}

}  // namespace shapedet
