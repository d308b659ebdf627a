// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --cli PATH [--only N]...

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "grad_cases.hpp"
#include "json.hpp"
#include "oracles/oracles.hpp"
#include "shapedet/kitti.hpp"
#include "support.hpp"

using namespace shapedet;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, const char* f = "%.3g") {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

// ---------------------------------------------------------------- 1

Outcome rotated_iou() {
  Rng rng(1001), mc(1002);
  std::vector<std::pair<Box7, Box7>> pairs;
  for (int i = 0; i < 500; ++i) {
    const Box7 a = random_box(rng, 1.0);
    Box7 b = a;
    b.cx += rng.uniform(-1.5, 1.5);
    b.cy += rng.uniform(-1.5, 1.5);
    b.cz += rng.uniform(-0.8, 0.8);
    b.l *= rng.uniform(0.6, 1.5);
    b.w *= rng.uniform(0.6, 1.5);
    b.h *= rng.uniform(0.6, 1.5);
    b.yaw = rng.uniform(-M_PI, M_PI);
    pairs.emplace_back(a, b);
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ious;
  for (const auto& [a, b] : pairs) ious.push_back(iou3d(a, b));
  const double secs = seconds_since(t0);
  double worst = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    worst = std::max(worst, std::abs(ious[i] - oracle::monte_carlo_iou(pairs[i].first, pairs[i].second, 200000, mc)));
  return {worst < 5e-3 && secs < 10.0, "max |iou - mc| " + num(worst) + ", iou time " + num(secs) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome nms_oracle() {
  Rng rng(2001);
  int mismatches = 0;
  std::size_t survivors = 0;
  for (int set = 0; set < 100; ++set) {
    std::vector<DetectionRecord> recs;
    // Clustered so suppression chains actually occur.
    std::vector<Box7> seeds;
    for (int c = 0; c < 120; ++c) seeds.push_back(random_box(rng, 35.0));
    for (int i = 0; i < 1000; ++i) {
      Box7 b = seeds[rng.index(seeds.size())];
      b.cx += rng.uniform(-1, 1);
      b.cy += rng.uniform(-1, 1);
      b.yaw += rng.uniform(-0.3, 0.3);
      recs.push_back({"Car", b, rng.uniform()});
    }
    const IouKind kind = set % 2 ? IouKind::k3d : IouKind::kBev;
    const double thr = set % 3 == 0 ? 0.7 : set % 3 == 1 ? 0.3 : 0.01;
    const auto got = nms(recs, thr, kind);
    mismatches += got != oracle::nms(recs, thr, kind);
    survivors += got.size();
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 100 sets differ, mean survivors " +
                               num(static_cast<double>(survivors) / 100.0)};
}

// ---------------------------------------------------------------- 3

Outcome sparse_conv() {
  Rng rng(3001);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int side = 2 + static_cast<int>(rng.index(15));
    SparseVoxelTensor t;
    t.shape = {side, side, side};
    const double density = rng.uniform(0.02, 0.7);
    for (int z = 0; z < side; ++z)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if (rng.bernoulli(density)) t.coords.push_back({z, y, x});
    if (t.coords.empty()) t.coords.push_back({0, 0, 0});
    const std::size_t cin = 1 + rng.index(4), cout = 1 + rng.index(5);
    t.features = random_tensor(t.coords.size(), cin, rng);
    Tensor w({27, cin, cout});
    for (auto& v : w.data()) v = rng.uniform(-1, 1);
    for (int stride : {1, 2}) {
      const auto rb = stride == 1 ? build_rulebook_submanifold(t.coords, t.shape) : build_rulebook_strided(t.coords, t.shape);
      const Tensor got = sparse_conv_apply(rb, t.features, w);
      const Tensor ref = oracle::dense_conv(t.coords, t.features, t.shape, rb.out_coords, w, stride, 3);
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
    }
  }
  // Three stride-2 stages over a dense 32^3 cube.
  std::vector<GridCoord> coords;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) coords.push_back({z, y, x});
  GridShape shape{32, 32, 32};
  for (int stage = 0; stage < 3; ++stage) {
    const auto rb = build_rulebook_strided(coords, shape);
    coords = rb.out_coords;
    shape = rb.out_shape;
  }
  std::array<int, 3> lo{1 << 20, 1 << 20, 1 << 20}, hi{-1, -1, -1};
  for (const auto& c : coords) {
    const int v[3] = {c.z, c.y, c.x};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  bool eight = coords.size() == 64;
  for (int a = 0; a < 3; ++a) eight = eight && hi[a] - lo[a] + 1 == 4;
  return {worst < 1e-9 && eight,
          "max |sparse - dense| " + num(worst) + ", 32^3 cube after 3 stages spans " +
              std::to_string(hi[2] - lo[2] + 1) + " per axis"};
}

// ---------------------------------------------------------------- 4

Outcome gradients() {
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  for (const auto& c : grad_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(4000 + seed * 31);
      const auto r = grad_check(c.f, c.make(rng));
      ++checks;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  ShapeNetConfig small;
  small.enc1_hidden = 8;
  small.local_features = 8;
  small.enc2_hidden = 16;
  small.global_features = 16;
  small.decoder_hidden = 16;
  small.output_points = 32;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(4500 + seed);
    auto net = ShapePredictor::init(small, rng);
    // A pooled grid of a real partial shape, then its dense prediction.
    const auto sample = make_shape_corpus(1, 4600 + seed)[0];
    auto ex = make_shape_example(sample, 3);
    // Empty cells repeat the same row, which puts every max pool on a tie.
    // A small jitter moves the check to a differentiable point nearby.
    for (auto& v : ex.input.data()) v += rng.uniform(-1e-3, 1e-3);
    const Tensor target({32, 3}, std::vector<double>(ex.target.data().begin(), ex.target.data().begin() + 96));
    auto f = [&](Tape& t, std::span<const Var> in) { return t.sum(t.chamfer(net.forward(t, in[0], 1), {target})); };
    // Piecewise-linear net into a quadratic loss, so the small step costs no accuracy.
    const auto r = grad_check(f, {ex.input}, {1e-6, 1e-6, 0, 0});
    ++checks;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = "pooled grid -> shape -> chamfer";
    }
  }
  return {worst < 1e-4, std::to_string(checks) + " checks, worst rel err " + num(worst) + " (" + worst_name + ")"};
}

// ---------------------------------------------------------------- 5

// Toy setting: a narrower network on a coarser pooled grid, so 2000 steps fit
// in the time budget on one core. 200 training shapes with batch 4 make every
// 50-step window exactly one pass over the training set.
constexpr std::size_t kCorpus = 256, kTrain = 200, kBatch = 4, kSteps = 2000;
constexpr int kToyResolution = 4;

Outcome shape_training() {
  ShapeNetConfig cfg;
  cfg.enc1_hidden = 64;
  cfg.enc2_hidden = 128;
  cfg.decoder_hidden = 256;
  const auto corpus = make_shape_corpus(kCorpus, 7);
  std::vector<ShapeExample> train, held;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    (i < kTrain ? train : held).push_back(make_shape_example(corpus[i], kToyResolution));
  Rng rng(1);
  auto net = ShapePredictor::init(cfg, rng);
  const double before = mean_chamfer(net, held);
  ShapeTrainConfig tc;
  tc.steps = kSteps;
  tc.batch = kBatch;
  tc.resolution = kToyResolution;
  tc.adam.learning_rate = 1e-4;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train_shape_net(net, train, tc);
  const double secs = seconds_since(t0);
  const double after = mean_chamfer(net, held);
  const auto w = window_means(res.loss_curve, 50);
  std::size_t rises = 0;
  for (std::size_t i = 1; i < w.size(); ++i) rises += w[i] > w[i - 1];
  const double reduction = 1.0 - after / before;
  return {reduction >= 0.5 && secs < 300.0 && rises == 0,
          "held-out chamfer " + num(before, "%.4f") + " -> " + num(after, "%.5f") + " (" + num(100 * reduction, "%.1f") +
              "% lower), " + num(secs, "%.0f") + " s, " + std::to_string(rises) + " of " +
              std::to_string(w.empty() ? 0 : w.size() - 1) + " window-mean steps rise"};
}

// ---------------------------------------------------------------- 6

std::vector<EvalScene> eval_scenes(Rng& rng, std::size_t n) {
  std::vector<EvalScene> out(n);
  for (auto& s : out) {
    const std::size_t k = 1 + rng.index(7);
    for (std::size_t i = 0; i < k; ++i) {
      const Box7 b{rng.uniform(0, 70), rng.uniform(-35, 35), -1, rng.uniform(3.5, 4.5), rng.uniform(1.5, 2), 1.5,
                   rng.uniform(-M_PI, M_PI)};
      const double u = rng.uniform();
      const Difficulty d = u < 0.4 ? Difficulty::kEasy : u < 0.7 ? Difficulty::kModerate
                         : u < 0.9 ? Difficulty::kHard : Difficulty::kIgnored;
      s.gt.push_back({"Car", b, d});
      if (rng.bernoulli(0.85)) {
        Box7 det = b;
        det.cx += rng.uniform(-0.5, 0.5);
        det.cy += rng.uniform(-0.5, 0.5);
        det.yaw += rng.uniform(-0.2, 0.2);
        s.detections.push_back({"Car", det, rng.uniform()});
      }
    }
    for (std::size_t i = rng.index(4); i > 0; --i)
      s.detections.push_back({"Car", {rng.uniform(0, 70), rng.uniform(-35, 35), -1, 4, 1.8, 1.5, 0}, rng.uniform()});
  }
  return out;
}

Outcome evaluator() {
  Rng rng(6001);
  const auto scenes = eval_scenes(rng, 100);
  double worst = 0;
  bool all_defined = true;
  for (int positions : {11, 40})
    for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard})
      for (IouKind kind : {IouKind::kBev, IouKind::k3d}) {
        EvalConfig cfg;
        cfg.recall_positions = positions;
        cfg.difficulty = d;
        cfg.metric = kind;
        const auto got = average_precision(scenes, cfg).ap;
        const auto ref = oracle::average_precision(scenes, cfg);
        all_defined = all_defined && got && ref;
        if (got && ref) worst = std::max(worst, std::abs(*got - *ref));
      }
  auto perfect = scenes;
  for (auto& s : perfect) {
    s.detections.clear();
    for (const auto& g : s.gt) s.detections.push_back({g.label, g.box, rng.uniform()});
  }
  EvalConfig cfg40;
  const auto p40 = average_precision(perfect, cfg40).ap;
  EvalConfig cfg11;
  cfg11.recall_positions = 11;
  const auto p11 = average_precision(perfect, cfg11).ap;
  const bool exact = p40 && p11 && *p40 == 100.0 && *p11 == 100.0;
  const auto all = average_precision(scenes, cfg40);
  const auto ranges = range_bucketed_ap(scenes, cfg40);
  std::size_t sum = 0;
  for (const auto& b : ranges.buckets) sum += b.headline.num_gt;
  return {all_defined && worst < 1e-6 && exact && sum == all.num_gt,
          "max |ap - oracle| " + num(worst) + ", perfect AP40 " + (p40 ? num(*p40, "%.1f") : "-") + " AP11 " +
              (p11 ? num(*p11, "%.1f") : "-") + ", bucket gts " + std::to_string(sum) + "/" + std::to_string(all.num_gt)};
}

// ---------------------------------------------------------------- 7

Outcome point_ops() {
  std::size_t mismatches = 0, cases = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(7000 + seed);
    const std::size_t n = 1 + rng.index(128);
    auto pts = random_points(n, rng);
    if (seed % 10 == 0 && n > 4) pts[n - 1] = pts[1];  // duplicates test the tie rule
    const std::size_t k = 1 + rng.index(n);
    mismatches += farthest_point_sample(pts, k, seed % n) != oracle::fps(pts, k, seed % n);

    const auto centers = random_points(1 + rng.index(32), rng, -3, 3);
    const double radius = rng.uniform(0.05, 2.5);
    const std::size_t t = 1 + rng.index(32);
    const auto bq = ball_query(centers, pts, radius, t);
    const auto bref = oracle::ball_query(centers, pts, radius, t);
    for (std::size_t i = 0; i < centers.size(); ++i)
      mismatches += std::vector<std::size_t>(bq.row(i).begin(), bq.row(i).end()) != bref.rows[i] ||
                    bq.fallback[i] != bref.fallback[i];

    const Box7 box = random_box(rng, 1.0);
    const int r = 1 + static_cast<int>(rng.index(12));
    const auto pooled = roi_aware_pool(pts, box, r);
    std::vector<Vec3> means;
    std::vector<std::size_t> counts;
    oracle::roi_pool(pts, box, r, means, counts);
    mismatches += pooled.counts != counts || pooled.cells != means;

    const auto nb = roi_grid_neighbors(pts, box, 6, radius, 16);
    const auto nref = oracle::ball_query(oracle::grid_points(box, 6), pts, radius, 16);
    for (std::size_t i = 0; i < nb.rows(); ++i)
      mismatches += std::vector<std::size_t>(nb.row(i).begin(), nb.row(i).end()) != nref.rows[i];
    cases += 4;
  }
  return {mismatches == 0, std::to_string(cases) + " seeded cases, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 8

Outcome losses() {
  const double focal = focal_loss(0.9, {0.25, 2.0});
  const double one = 1.0, half = 0.5;
  const double bce = offset_bce_loss({&half, 1}, {&one, 1});
  Tape t0;
  const double tape_bce =
      t0.value(t0.bce(t0.constant(Tensor::scalar(0.5)), Tensor::scalar(1.0), {1.0})).item();
  bool additive = true;
  Rng rng(8001);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    LossInputs in;
    in.anchor_prob = t.input(random_tensor(12, 1, rng, 0.01, 0.99));
    for (int i = 0; i < 12; ++i) in.anchor_labels.push_back(rng.bernoulli(0.3));
    in.anchor_residual = t.input(random_tensor(5, 7, rng));
    in.anchor_residual_target = random_tensor(5, 7, rng);
    in.direction_prob = t.input(random_tensor(5, 1, rng, 0.01, 0.99));
    in.direction_target = random_tensor(5, 1, rng, 0, 1);
    in.keypoint_prob = t.input(random_tensor(9, 1, rng, 0.01, 0.99));
    for (int i = 0; i < 9; ++i) in.keypoint_labels.push_back(rng.bernoulli(0.5));
    in.segment_prob = t.input(random_tensor(7, 1, rng, 0.01, 0.99));
    for (int i = 0; i < 7; ++i) in.segment_labels.push_back(rng.bernoulli(0.5));
    in.offset_prob = t.input(random_tensor(7, 3, rng, 0.01, 0.99));
    in.offset_target = random_tensor(7, 3, rng, 0, 1);
    in.offset_mask.assign(7, 1.0);
    in.refine_residual = t.input(random_tensor(4, 7, rng));
    in.refine_target = random_tensor(4, 7, rng);
    in.confidence_prob = t.input(random_tensor(4, 1, rng, 0.01, 0.99));
    in.confidence_target = random_tensor(4, 1, rng, 0, 1);
    const auto v = loss_values(t, total_loss(t, in));
    additive = additive && v.aux == v.segment + v.offset && v.rpn == v.box + v.keypoint + v.aux &&
               v.total == v.rpn + v.rcnn;
  }
  const bool pass = std::abs(focal - 2.6340e-4) <= 1e-8 && std::abs(bce - std::log(2.0)) <= 1e-12 &&
                    std::abs(tape_bce - std::log(2.0)) <= 1e-12 && additive;
  return {pass, "focal(0.9) " + num(focal, "%.8e") + ", bce(1, 0.5) - ln2 " + num(bce - std::log(2.0)) +
                    ", additivity " + (additive ? "exact" : "broken")};
}

// ---------------------------------------------------------------- 9

Outcome pipeline() {
  DetectorConfig dc;
  dc.backbone.channels = {8, 8, 16, 16};
  dc.keypoints = 512;
  dc.vsa_width = 8;
  dc.shape.enc1_hidden = 32;
  dc.shape.local_features = 32;
  dc.shape.enc2_hidden = 64;
  dc.shape.global_features = 64;
  dc.shape.decoder_hidden = 64;
  dc.msg.hidden = {16};
  dc.msg.channels = 32;
  dc.roi_grid.widths = {16, 16};
  dc.head_width = 32;
  Rng rng(9001);
  auto det = Detector::init(dc, rng);
  const Scene scene = make_synthetic_scene("planted", 9002);
  std::vector<Box7> gt;
  for (const auto& o : scene.gt) gt.push_back(o.box);
  PipelineConfig pc;  // NMS 0.7 BEV, top 100, NMS 0.01 3D
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = inference_pipeline(scene.points, det, pc, &gt);
  const double secs = seconds_since(t0);
  std::size_t found = 0;
  double worst = 1.0;
  for (const auto& g : gt) {
    double best = 0;
    for (const auto& d : r.detections) best = std::max(best, iou3d(d.box, g));
    found += best > 0.7;
    worst = std::min(worst, best);
  }
  return {gt.size() == 3 && found == 3 && r.proposals.size() <= 100,
          std::to_string(found) + "/" + std::to_string(gt.size()) + " planted boxes at IoU > 0.7 (min " +
              num(worst, "%.4f") + "), " + std::to_string(r.proposals.size()) + " proposals, " +
              std::to_string(r.detections.size()) + " detections, " + num(secs, "%.1f") + " s"};
}

// ---------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli_arg) {
  if (cli_arg.empty() || !fs::exists(cli_arg)) return {false, "CLI binary not found: '" + cli_arg + "'"};
  const std::string cli = fs::absolute(cli_arg).string();
  TempDir root("determinism");
  const nlohmann::json config = {
      {"seed", 5},
      {"threads", 1},
      {"backbone", {{"channels", {8, 8, 16, 16}}}},
      {"keypoints", {{"count", 256}, {"width", 8}}},
      {"pool_resolution", 6},
      {"shape_net", {{"enc1_hidden", 16}, {"local_features", 16}, {"enc2_hidden", 32}, {"global_features", 32}, {"decoder_hidden", 32}}},
      {"msg", {{"centers", 32}, {"hidden", {8}}, {"channels", 16}}},
      {"roi_grid", {{"widths", {8, 8}}}},
      {"head_width", 16},
      {"nms", {{"pre_top_k", 512}}},
      {"train", {{"steps", 12}, {"batch", 4}, {"holdout", 4}, {"learning_rate", 1e-3}}},
      {"corpus", {{"count", 16}}},
      {"augment", {{"gt_samples", 15}}},
  };
  std::ofstream(root.path() / "config.json") << config.dump(2);

  const std::vector<std::string> commands = {
      "make-scenes --out data --count 3",
      "voxelize --input data/velodyne/000000.bin --out voxels.csv --summary voxels.json",
      "make-corpus --out corpus.bin",
      "shape-train --corpus corpus.bin --out train",
      "shape-predict --checkpoint train/shape_net.ckpt --corpus corpus.bin --index 2 --out predict.json",
      "eval --labels data/label_2 --detections data/perfect --out metrics.json",
      "pipeline --data data --out detections --oracle",
      "pipeline --data data --out detections_rpn --scene 000001",
      "build-db --data data --out db/gt",
      "augment --data data --database db/gt --out augmented",
  };
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = root.path() / tag;
    fs::create_directories(dir);
    for (const auto& c : commands) {
      const std::string line = "cd '" + dir.string() + "' && '" + cli + "' " + c + " --config ../config.json >> log.txt 2>&1";
      if (std::system(line.c_str()) != 0) return {false, "command failed: " + c};
    }
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "log.txt")
        files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    runs.push_back(std::move(files));
  }
  std::size_t differing = 0;
  for (const auto& [name, text] : runs[0]) differing += !runs[1].count(name) || runs[1].at(name) != text;
  differing += runs[0].size() != runs[1].size();

  // The augmentation records carry the draws and a capped gt-sampling count.
  bool capped = true, has_draws = true;
  std::size_t pasted = 0;
  for (const auto& [name, text] : runs[0]) {
    if (name.rfind("augmented/", 0) != 0 || fs::path(name).extension() != ".json") continue;
    const auto j = nlohmann::json::parse(text);
    capped = capped && j["gt_sampling"]["attempted"].get<std::size_t>() <= 15;
    pasted += j["gt_sampling"]["accepted"].get<std::size_t>();
    has_draws = has_draws && j["draw"].contains("flip") && j["draw"].contains("rotation") && j["draw"].contains("scale");
  }
  const auto metrics = nlohmann::json::parse(runs[0]["metrics.json"]);
  const bool perfect = metrics["ap"].is_number() && metrics["ap"].get<double>() == 100.0;
  return {differing == 0 && capped && has_draws && perfect,
          std::to_string(runs[0].size()) + " output files over " + std::to_string(commands.size()) +
              " commands, " + std::to_string(differing) + " differ; " + std::to_string(pasted) +
              " gt crops pasted (cap 15 per scene); perfect-detector AP " + (perfect ? "100.0" : "wrong")};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) cli = argv[++i];
    else if (a == "--only" && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else {
      std::cerr << "usage: acceptance --cli PATH [--only N]...\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"rotated-box IoU vs Monte Carlo", rotated_iou},
      {"NMS vs brute force", nms_oracle},
      {"sparse convolution vs dense", sparse_conv},
      {"finite-difference gradients", gradients},
      {"shape net toy training", shape_training},
      {"evaluator vs PR oracle", evaluator},
      {"point ops vs brute force", point_ops},
      {"loss values and additivity", losses},
      {"pipeline plumbing with oracle scores", pipeline},
      {"CLI determinism", [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
