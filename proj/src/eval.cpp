#include "shapedet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace shapedet {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw DomainError("eval: IoU threshold must be in (0, 1]");
  if (recall_positions != 11 && recall_positions != 40) throw DomainError("eval: recall positions must be 11 or 40");
  if (difficulty == Difficulty::kIgnored) throw DomainError("eval: cannot evaluate the ignored difficulty");
}

double EvalConfig::default_threshold(const std::string& label) { return label == "Car" ? 0.7 : 0.5; }

namespace {

// Classes whose boxes neither count nor penalize for the evaluated class.
bool neighbour_class(const std::string& gt_label, const std::string& eval_label) {
  return (eval_label == "Car" && gt_label == "Van") || (eval_label == "Pedestrian" && gt_label == "Person_sitting");
}

int rank(Difficulty d) { return static_cast<int>(d); }

SceneMatch match_scene(const EvalScene& scene, const EvalConfig& cfg, const std::vector<bool>& extra_ignore) {
  SceneMatch m;
  const std::size_t ng = scene.gt.size(), nd = scene.detections.size();
  m.detections.assign(nd, MatchState::kIgnored);
  m.matched_detection.assign(ng, -1);
  m.gt_ignored.assign(ng, true);
  std::vector<bool> candidate(ng, false);
  for (std::size_t g = 0; g < ng; ++g) {
    const GtObject& o = scene.gt[g];
    if (o.label == cfg.label || neighbour_class(o.label, cfg.label)) candidate[g] = true;
    m.gt_ignored[g] = !gt_counts(o, cfg) || (!extra_ignore.empty() && extra_ignore[g]);
  }
  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < nd; ++d)
    if (scene.detections[d].label == cfg.label) order.push_back(d);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.detections[a].score > scene.detections[b].score;
  });
  for (std::size_t d : order) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < ng; ++g) {
      if (!candidate[g] || m.matched_detection[g] >= 0) continue;
      const double iou = box_iou(scene.detections[d].box, scene.gt[g].box, cfg.metric);
      if (iou > cfg.iou_threshold && iou > best) {
        best = iou;
        arg = static_cast<int>(g);
      }
    }
    if (arg < 0) {
      m.detections[d] = MatchState::kFalsePositive;
    } else {
      m.matched_detection[arg] = static_cast<int>(d);
      m.detections[d] = m.gt_ignored[arg] ? MatchState::kIgnored : MatchState::kTruePositive;
    }
  }
  return m;
}

struct Scored {
  double score;
  bool tp;
};

ApResult ap_from(std::vector<Scored> dets, std::size_t num_gt, int positions) {
  ApResult r;
  r.num_gt = num_gt;
  // Stable: equal scores keep scene order, then detection order.
  std::stable_sort(dets.begin(), dets.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::size_t tp = 0, fp = 0;
  for (const auto& d : dets) {
    (d.tp ? tp : fp) += 1;
    r.curve.push_back({d.score, num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt),
                       static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  r.num_tp = tp;
  r.num_fp = fp;
  if (num_gt == 0) return r;

  // Running max from the right gives the interpolated precision.
  std::vector<double> interp(r.curve.size());
  double run = 0.0;
  for (std::size_t i = r.curve.size(); i-- > 0;) {
    run = std::max(run, r.curve[i].precision);
    interp[i] = run;
  }
  double sum = 0.0;
  std::size_t j = 0;
  for (int k = 0; k < positions; ++k) {
    const double recall = positions == 11 ? k / 10.0 : (k + 1) / 40.0;
    while (j < r.curve.size() && r.curve[j].recall < recall) ++j;
    sum += j < r.curve.size() ? interp[j] : 0.0;
  }
  r.ap = 100.0 * sum / positions;
  return r;
}

}  // namespace

bool gt_counts(const GtObject& gt, const EvalConfig& cfg) {
  return gt.label == cfg.label && gt.difficulty != Difficulty::kIgnored && rank(gt.difficulty) <= rank(cfg.difficulty);
}

SceneMatch match_detections(const EvalScene& scene, const EvalConfig& cfg) {
  cfg.validate();
  return match_scene(scene, cfg, {});
}

ApResult average_precision(const std::vector<EvalScene>& scenes, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<Scored> dets;
  std::size_t num_gt = 0;
  for (const auto& s : scenes) {
    const SceneMatch m = match_scene(s, cfg, {});
    for (std::size_t g = 0; g < s.gt.size(); ++g) num_gt += m.gt_ignored[g] ? 0 : 1;
    for (std::size_t d = 0; d < s.detections.size(); ++d) {
      if (m.detections[d] != MatchState::kIgnored) {
        dets.push_back({s.detections[d].score, m.detections[d] == MatchState::kTruePositive});
      }
    }
  }
  return ap_from(std::move(dets), num_gt, cfg.recall_positions);
}

std::string RangeBucket::name() const {
  auto fmt = [](double v) { return std::to_string(static_cast<long long>(v)); };
  return fmt(lower) + "-" + (std::isinf(upper) ? std::string("inf") : fmt(upper));
}

bool RangeBucket::contains(double distance) const {
  if (lower == 0.0 && distance == 0.0) return true;
  return distance > lower && distance <= upper;
}

std::vector<RangeBucket> default_buckets() {
  return {{0.0, 20.0}, {20.0, 40.0}, {40.0, std::numeric_limits<double>::infinity()}};
}

double planar_distance(const Box7& box) { return std::hypot(box.cx, box.cy); }

RangeApResult range_bucketed_ap(const std::vector<EvalScene>& scenes, const EvalConfig& cfg,
                                const std::vector<RangeBucket>& buckets) {
  cfg.validate();
  auto bucket_of = [&](const Box7& b) -> int {
    const double d = planar_distance(b);
    for (std::size_t k = 0; k < buckets.size(); ++k)
      if (buckets[k].contains(d)) return static_cast<int>(k);
    return -1;
  };
  std::vector<std::vector<Scored>> head(buckets.size()), gt_only(buckets.size());
  std::vector<std::size_t> head_gt(buckets.size(), 0), only_gt(buckets.size(), 0);

  for (const auto& s : scenes) {
    const SceneMatch m = match_scene(s, cfg, {});
    std::vector<int> gt_bucket(s.gt.size());
    for (std::size_t g = 0; g < s.gt.size(); ++g) {
      gt_bucket[g] = bucket_of(s.gt[g].box);
      if (!m.gt_ignored[g] && gt_bucket[g] >= 0) ++head_gt[gt_bucket[g]];
    }
    std::vector<int> det_gt(s.detections.size(), -1);
    for (std::size_t g = 0; g < s.gt.size(); ++g)
      if (m.matched_detection[g] >= 0) det_gt[m.matched_detection[g]] = static_cast<int>(g);
    for (std::size_t d = 0; d < s.detections.size(); ++d) {
      if (m.detections[d] == MatchState::kIgnored) continue;
      const int b = det_gt[d] >= 0 ? gt_bucket[det_gt[d]] : bucket_of(s.detections[d].box);
      if (b >= 0) head[b].push_back({s.detections[d].score, m.detections[d] == MatchState::kTruePositive});
    }

    for (std::size_t k = 0; k < buckets.size(); ++k) {
      std::vector<bool> outside(s.gt.size());
      for (std::size_t g = 0; g < s.gt.size(); ++g) outside[g] = gt_bucket[g] != static_cast<int>(k);
      const SceneMatch mk = match_scene(s, cfg, outside);
      for (std::size_t g = 0; g < s.gt.size(); ++g) only_gt[k] += mk.gt_ignored[g] ? 0 : 1;
      for (std::size_t d = 0; d < s.detections.size(); ++d) {
        if (mk.detections[d] != MatchState::kIgnored) {
          gt_only[k].push_back({s.detections[d].score, mk.detections[d] == MatchState::kTruePositive});
        }
      }
    }
  }

  RangeApResult out;
  double sum = 0.0, sum_only = 0.0;
  std::size_t n = 0, n_only = 0;
  for (std::size_t k = 0; k < buckets.size(); ++k) {
    BucketResult br{buckets[k], ap_from(std::move(head[k]), head_gt[k], cfg.recall_positions),
                    ap_from(std::move(gt_only[k]), only_gt[k], cfg.recall_positions)};
    if (br.headline.ap) {
      sum += *br.headline.ap;
      ++n;
    }
    if (br.gt_only.ap) {
      sum_only += *br.gt_only.ap;
      ++n_only;
    }
    out.buckets.push_back(std::move(br));
  }
  if (n > 0) out.mean = sum / static_cast<double>(n);
  if (n_only > 0) out.gt_only_mean = sum_only / static_cast<double>(n_only);
  return out;
}

std::string metrics_to_json(const EvalConfig& cfg, const ApResult& overall, const RangeApResult& ranges) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json doc;
  doc["class"] = cfg.label;
  doc["metric"] = cfg.metric == IouKind::k3d ? "3d" : "bev";
  doc["difficulty"] = difficulty_name(cfg.difficulty);
  doc["recall_positions"] = cfg.recall_positions;
  doc["iou_threshold"] = cfg.iou_threshold;
  doc["ap"] = opt(overall.ap);
  doc["num_gt"] = overall.num_gt;
  doc["num_tp"] = overall.num_tp;
  doc["num_fp"] = overall.num_fp;
  ordered_json per = ordered_json::object();
  for (const auto& b : ranges.buckets) {
    ordered_json e;
    e["ap"] = opt(b.headline.ap);
    e["num_gt"] = b.headline.num_gt;
    e["gt_only_ap"] = opt(b.gt_only.ap);
    per[b.bucket.name()] = std::move(e);
  }
  per["mean"] = opt(ranges.mean);
  per["gt_only_mean"] = opt(ranges.gt_only_mean);
  doc["per_bucket"] = std::move(per);
  return doc.dump(2) + "\n";
}

}  // namespace shapedet
