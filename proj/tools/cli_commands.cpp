#include "cli_commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "shapedet/record_file.hpp"
#include "shapedet/simd.hpp"

namespace shapedet::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void log(const std::string& message) { std::cerr << "[shapedet] " << message << '\n'; }

namespace {

// Library writers expect the directory to exist.
void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Sorted file stems with the given extension.
std::vector<std::string> list_ids(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw std::runtime_error("no such directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

ordered_json box_json(const Box7& b) {
  const auto a = b.as_array();
  return std::vector<double>(a.begin(), a.end());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("-"); }

std::vector<ShapeExample> examples_of(const std::vector<ShapeSample>& samples, int resolution) {
  std::vector<ShapeExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(make_shape_example(s, resolution));
  return out;
}

}  // namespace

int run_voxelize(const RunConfig& cfg, const VoxelizeArgs& args) {
  const PointCloud points = read_velodyne(args.input);
  const SparseVoxelTensor t = voxelize(points, cfg.detector.grid);
  std::ostringstream csv;
  write_voxel_csv(csv, t);
  write_text(args.output, csv.str());
  ordered_json s;
  s["input"] = fs::path(args.input).filename().string();
  s["points"] = points.size();
  s["voxels"] = t.size();
  s["shape"] = std::vector<int>(t.shape.begin(), t.shape.end());
  s["channels"] = t.channels();
  if (!args.summary.empty()) write_text(args.summary, s.dump(2) + "\n");
  std::cout << "points  " << points.size() << "\nvoxels  " << t.size() << '\n';
  return 0;
}

int run_make_corpus(const RunConfig& cfg, const CorpusArgs& args) {
  const auto corpus = make_shape_corpus(cfg.corpus_count, cfg.seed, cfg.corpus);
  ensure_parent(args.output);
  write_shape_corpus(args.output, corpus);
  std::size_t lo = cfg.corpus.points, hi = 0;
  for (const auto& s : corpus) {
    lo = std::min(lo, s.partial.size());
    hi = std::max(hi, s.partial.size());
  }
  ordered_json s;
  s["count"] = corpus.size();
  s["seed"] = cfg.seed;
  s["points"] = cfg.corpus.points;
  s["partial_min"] = corpus.empty() ? 0 : lo;
  s["partial_max"] = hi;
  write_text(args.output + ".json", s.dump(2) + "\n");
  std::cout << "shapes        " << corpus.size() << "\npartial size  " << lo << " .. " << hi << '\n';
  return 0;
}

int run_shape_train(const RunConfig& cfg, const TrainArgs& args) {
  const auto corpus = read_shape_corpus(args.corpus);
  if (cfg.holdout >= corpus.size()) {
    throw DomainError("held-out count " + std::to_string(cfg.holdout) + " leaves no training shapes");
  }
  const std::size_t n_train = corpus.size() - cfg.holdout;
  const int r = cfg.detector.pool_resolution;
  const auto train = examples_of({corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n_train)}, r);
  const auto held = examples_of({corpus.begin() + static_cast<std::ptrdiff_t>(n_train), corpus.end()}, r);

  Rng rng(cfg.seed);
  ShapePredictor net = ShapePredictor::init(cfg.detector.shape, rng);
  const double before = held.empty() ? 0.0 : mean_chamfer(net, held);
  ShapeTrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.resolution = r;
  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);
  tc.checkpoint_path = (out_dir / "shape_net.ckpt").string();
  const std::size_t every = std::max<std::size_t>(1, tc.steps / 10);
  const auto result = train_shape_net(net, train, tc, [&](std::size_t step, double loss) {
    if (step % every == 0 || step + 1 == tc.steps) log("step " + std::to_string(step) + " loss " + fmt("%.6f", loss));
  });
  const double after = held.empty() ? 0.0 : mean_chamfer(net, held);
  const auto params = net.parameters();
  save_checkpoint(tc.checkpoint_path, std::vector<const Parameter*>(params.begin(), params.end()));

  ordered_json s;
  s["steps"] = tc.steps;
  s["batch"] = tc.batch;
  s["learning_rate"] = tc.adam.learning_rate;
  s["pool_resolution"] = r;
  s["train_shapes"] = train.size();
  s["heldout_shapes"] = held.size();
  s["heldout_chamfer_initial"] = before;
  s["heldout_chamfer_final"] = after;
  s["loss_curve"] = result.loss_curve;
  write_text((out_dir / "train.json").string(), s.dump(2) + "\n");
  std::cout << "steps                 " << tc.steps << "\nheld-out chamfer  init " << fmt("%.6f", before)
            << "\nheld-out chamfer final " << fmt("%.6f", after) << '\n';
  return 0;
}

int run_shape_predict(const RunConfig& cfg, const PredictArgs& args) {
  Rng rng(cfg.seed);
  ShapePredictor net = ShapePredictor::init(cfg.detector.shape, rng);
  const auto params = net.parameters();
  restore_checkpoint(params, load_checkpoint(args.checkpoint));
  const auto corpus = read_shape_corpus(args.corpus);
  if (args.index >= corpus.size()) throw DomainError("index " + std::to_string(args.index) + " out of range");
  const ShapeSample& sample = corpus[args.index];
  const ShapeExample ex = make_shape_example(sample, cfg.detector.pool_resolution);
  const Tensor pred = predict_shape(ex.input, net);
  const auto pts = points_of(pred);
  const double cd = chamfer_distance(pts, points_of(ex.target));

  const auto frame = CanonicalFrame::of(sample.box);
  ordered_json s;
  s["index"] = args.index;
  s["box"] = box_json(sample.box);
  s["chamfer"] = cd;
  ordered_json world = ordered_json::array();
  for (const auto& p : pts) {
    const Vec3 w = frame.to_world({p.x * sample.box.l, p.y * sample.box.w, p.z * sample.box.h});
    world.push_back({w.x, w.y, w.z});
  }
  s["points"] = std::move(world);
  write_text(args.output, s.dump(2) + "\n");
  std::cout << "shape " << args.index << "  chamfer " << fmt("%.6f", cd) << '\n';
  return 0;
}

int run_eval(const RunConfig& cfg, const EvalArgs& args) {
  std::vector<EvalScene> scenes;
  const auto ids = list_ids(args.labels, ".txt");
  for (const auto& id : ids) {
    Calibration calib = Calibration::identity();
    if (!args.calib.empty()) calib = read_calib((fs::path(args.calib) / (id + ".txt")).string());
    EvalScene s;
    s.gt = labels_to_objects(read_label((fs::path(args.labels) / (id + ".txt")).string()), calib);
    const fs::path det = fs::path(args.detections) / (id + ".json");
    if (fs::exists(det)) s.detections = detections_from_json(read_text(det.string())).detections;
    scenes.push_back(std::move(s));
  }
  const ApResult overall = average_precision(scenes, cfg.eval);
  const RangeApResult ranges = range_bucketed_ap(scenes, cfg.eval);
  write_text(args.output, metrics_to_json(cfg.eval, overall, ranges));

  std::cout << "class " << cfg.eval.label << "  " << difficulty_name(cfg.eval.difficulty) << "  AP@"
            << cfg.eval.recall_positions << "  scenes " << scenes.size() << '\n';
  std::cout << "  overall  " << opt_fmt(overall.ap) << "  (gt " << overall.num_gt << ", tp " << overall.num_tp
            << ", fp " << overall.num_fp << ")\n";
  for (const auto& b : ranges.buckets) {
    std::cout << "  " << b.bucket.name() << "  " << opt_fmt(b.headline.ap) << "  gt-only " << opt_fmt(b.gt_only.ap)
              << '\n';
  }
  std::cout << "  mean     " << opt_fmt(ranges.mean) << '\n';
  return 0;
}

int run_pipeline(const RunConfig& cfg, const PipelineArgs& args) {
  const std::string root = args.data.empty() ? cfg.data_root : args.data;
  if (root.empty()) throw DomainError("pipeline needs --data or paths.data_root");
  const auto ids = args.scenes.empty() ? list_ids(fs::path(root) / "velodyne", ".bin") : args.scenes;
  Rng rng(cfg.seed);
  Detector detector = Detector::init(cfg.detector, rng);
  const std::string ckpt = args.shape_checkpoint.empty() ? cfg.checkpoint : args.shape_checkpoint;
  if (!ckpt.empty()) restore_checkpoint(detector.shape_net().parameters(), load_checkpoint(ckpt));
  PipelineConfig pc = cfg.pipeline;
  pc.threads = cfg.threads;

  std::cout << "scene      proposals  detections\n";
  for (const auto& id : ids) {
    const Scene scene = load_scene(root, id);
    std::vector<Box7> oracle;
    for (const auto& o : scene.gt) {
      const bool known = std::any_of(cfg.detector.anchors.begin(), cfg.detector.anchors.end(),
                                     [&](const AnchorSpec& a) { return a.label == o.label; });
      if (known && o.difficulty != Difficulty::kIgnored) oracle.push_back(o.box);
    }
    const auto res = inference_pipeline(scene.points, detector, pc, args.oracle ? &oracle : nullptr);
    write_text((fs::path(args.out_dir) / (id + ".json")).string(), detections_to_json(id, res.detections));
    std::printf("%-10s %9zu  %10zu\n", id.c_str(), res.proposals.size(), res.detections.size());
  }
  return 0;
}

namespace {

template <typename Fn>
double best_seconds(std::size_t repeat, Fn fn) {
  double best = 1e300;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeat); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int run_bench(const RunConfig& cfg, const BenchArgs& args) {
  Rng rng(cfg.seed);
  auto row = [](const std::string& op, const std::string& isa, double items, const char* unit, double sec) {
    std::printf("%-28s %-7s %12.3e %s/s\n", op.c_str(), isa.c_str(), items / sec, unit);
  };
  std::printf("%-28s %-7s %12s\n", "op", "isa", "throughput");

  const std::size_t n = 256;
  std::vector<double> a(n * n), b(n * n), c(n * n);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  std::vector<simd::Isa> isas{simd::Isa::kScalar};
  if (simd::detected_isa() == simd::Isa::kAvx2) isas.push_back(simd::Isa::kAvx2);
  std::vector<Vec3> cloud(16384);
  for (auto& p : cloud) p = {rng.uniform(0, 70), rng.uniform(-40, 40), rng.uniform(-3, 1)};
  const PointsSoa soa(cloud);
  for (auto isa : isas) {
    const auto& k = simd::kernels(isa);
    const std::string name(simd::isa_name(isa));
    row("gemm 256^3", name, 2.0 * n * n * n, "flop",
        best_seconds(args.repeat, [&] { k.gemm_nn(n, n, n, a.data(), n, b.data(), n, c.data(), n); }));
    std::vector<double> dist(cloud.size(), 1e300);
    row("fps_update 16k", name, static_cast<double>(cloud.size()) * 64, "pt", best_seconds(args.repeat, [&] {
          for (int i = 0; i < 64; ++i) k.fps_update(soa.x.data(), soa.y.data(), soa.z.data(), soa.size(), i, 0, 0, dist.data());
        }));
    double d = 0;
    row("nearest 16k", name, static_cast<double>(cloud.size()) * 64, "pt", best_seconds(args.repeat, [&] {
          for (int i = 0; i < 64; ++i) k.nearest(soa.x.data(), soa.y.data(), soa.z.data(), soa.size(), i, 0, 0, &d);
        }));
  }
  const std::string act(simd::isa_name(simd::active_isa()));

  std::vector<Box7> boxes(1000);
  for (auto& bx : boxes) {
    bx = {rng.uniform(0, 40), rng.uniform(-20, 20), rng.uniform(-1, 1), rng.uniform(1, 5), rng.uniform(1, 3),
          rng.uniform(1, 2), rng.uniform(-M_PI, M_PI)};
  }
  volatile double sink = 0;
  row("iou3d pairs", act, 1000.0 * 999, "pair", best_seconds(args.repeat, [&] {
        for (std::size_t i = 0; i < boxes.size(); ++i)
          for (std::size_t j = 0; j < boxes.size(); ++j)
            if (i != j) sink = sink + iou3d(boxes[i], boxes[j]);
      }));
  std::vector<DetectionRecord> recs;
  for (const auto& bx : boxes) recs.push_back({"Car", bx, rng.uniform()});
  row("nms 1000 (bev 0.7)", act, 1000, "box", best_seconds(args.repeat, [&] { nms(recs, 0.7, IouKind::kBev); }));

  PointCloud scan(100000);
  for (auto& p : scan) p = {rng.uniform(0, 70), rng.uniform(-40, 40), rng.uniform(-3, 1), rng.uniform()};
  SparseVoxelTensor vox;
  row("voxelize 100k", act, 1e5, "pt", best_seconds(args.repeat, [&] { vox = voxelize(scan, cfg.detector.grid); }));
  Rulebook rb;
  row("submanifold rulebook", act, static_cast<double>(vox.size()), "voxel",
      best_seconds(args.repeat, [&] { rb = build_rulebook_submanifold(vox.coords, vox.shape); }));
  Tensor w({27, 4, 16});
  for (auto& v : w.data()) v = rng.uniform(-1, 1);
  row("sparse conv 4->16", act, static_cast<double>(rb.pair_count()), "pair",
      best_seconds(args.repeat, [&] { sparse_conv_apply(rb, vox.features, w); }));
  std::vector<Vec3> centers(cloud.begin(), cloud.begin() + 2048);
  row("ball query 2048 x 16k", act, 2048, "center",
      best_seconds(args.repeat, [&] { ball_query(centers, cloud, 2.0, 16); }));
  row("fps 2048 of 16k", act, 2048, "pick", best_seconds(args.repeat, [&] { farthest_point_sample(cloud, 2048); }));
  row("roi_aware_pool r=12", act, static_cast<double>(scan.size()), "pt",
      best_seconds(args.repeat, [&] { roi_aware_pool(scan, boxes[0], 12); }));
  ShapePredictor net = ShapePredictor::init(cfg.detector.shape, rng);
  const Tensor grid({static_cast<std::size_t>(cfg.detector.pool_resolution * cfg.detector.pool_resolution *
                                              cfg.detector.pool_resolution), 3}, 0.1);
  row("predict_shape", act, 1, "shape", best_seconds(args.repeat, [&] { predict_shape(grid, net); }));
  return 0;
}

int run_make_scenes(const RunConfig& cfg, const ScenesArgs& args) {
  SyntheticSceneConfig sc;
  sc.objects = args.objects;
  for (std::size_t i = 0; i < args.count; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%06zu", i);
    const Scene s = make_synthetic_scene(id, cfg.seed + i, sc);
    write_scene(args.output, s);
    std::vector<DetectionRecord> perfect;
    for (const auto& o : s.gt) perfect.push_back({o.label, o.box, 1.0});
    write_text((fs::path(args.output) / "perfect" / (std::string(id) + ".json")).string(),
               detections_to_json(id, perfect));
  }
  std::cout << "scenes " << args.count << " written to " << args.output << '\n';
  return 0;
}

int run_build_db(const RunConfig& cfg, const DatabaseArgs& args) {
  const std::string root = args.data.empty() ? cfg.data_root : args.data;
  if (root.empty()) throw DomainError("build-db needs --data or paths.data_root");
  std::vector<Scene> scenes;
  for (const auto& id : list_ids(fs::path(root) / "velodyne", ".bin")) scenes.push_back(load_scene(root, id));
  const GtDatabase db = build_gt_database(scenes, cfg.db_min_points, cfg.threads);
  ensure_parent(args.output);
  write_gt_database(args.output, db);
  std::map<std::string, std::size_t> per_class;
  for (const auto& e : db.entries) ++per_class[e.label];
  ordered_json s;
  s["scenes"] = scenes.size();
  s["entries"] = db.entries.size();
  s["min_points"] = cfg.db_min_points;
  s["per_class"] = per_class;
  write_text(args.output + ".json", s.dump(2) + "\n");
  std::cout << "database entries " << db.entries.size() << '\n';
  return 0;
}

int run_augment(const RunConfig& cfg, const AugmentArgs& args) {
  const std::string root = args.data.empty() ? cfg.data_root : args.data;
  if (root.empty()) throw DomainError("augment needs --data or paths.data_root");
  const auto ids = args.scenes.empty() ? list_ids(fs::path(root) / "velodyne", ".bin") : args.scenes;
  std::optional<GtDatabase> db;
  if (!args.database.empty()) db = read_gt_database(args.database);
  Rng rng(cfg.seed);
  fs::create_directories(args.out_dir);
  for (const auto& id : ids) {
    Scene scene = load_scene(root, id);
    GtSampleResult sampled;
    if (db && !db->entries.empty()) sampled = gt_sample(scene, *db, rng, cfg.gt_samples);
    const AugmentDraw draw = augment(scene, rng, cfg.augment);
    write_velodyne((fs::path(args.out_dir) / (id + ".bin")).string(), scene.points);
    ordered_json s;
    s["scene_id"] = id;
    s["gt_sampling"] = {{"attempted", sampled.attempted}, {"accepted", sampled.accepted}};
    s["draw"] = {{"flip", draw.flip}, {"rotation", draw.rotation}, {"scale", draw.scale}};
    s["num_points"] = scene.points.size();
    ordered_json objs = ordered_json::array();
    for (const auto& o : scene.gt) {
      ordered_json e;
      e["class"] = o.label;
      e["box"] = box_json(o.box);
      e["difficulty"] = difficulty_name(o.difficulty);
      objs.push_back(std::move(e));
    }
    s["objects"] = std::move(objs);
    write_text((fs::path(args.out_dir) / (id + ".json")).string(), s.dump(2) + "\n");
    std::cout << id << "  flip " << draw.flip << "  rot " << fmt("%+.4f", draw.rotation) << "  scale "
              << fmt("%.4f", draw.scale) << "  pasted " << sampled.accepted << '\n';
  }
  return 0;
}

}  // namespace shapedet::cli
