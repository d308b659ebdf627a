#include "shapedet/kitti.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "shapedet/record_file.hpp"

namespace shapedet {

namespace fs = std::filesystem;

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kModerate: return "moderate";
    case Difficulty::kHard: return "hard";
    case Difficulty::kIgnored: return "ignored";
  }
  throw InternalError("bad difficulty");
}

Difficulty parse_difficulty(const std::string& name) {
  if (name == "easy") return Difficulty::kEasy;
  if (name == "moderate") return Difficulty::kModerate;
  if (name == "hard") return Difficulty::kHard;
  if (name == "ignored") return Difficulty::kIgnored;
  throw DomainError("unknown difficulty '" + name + "'");
}

Calibration Calibration::identity() {
  Calibration c;
  c.p2 = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  return c;
}

Vec3 Calibration::lidar_to_rect(const Vec3& p) const {
  return mul(r0_rect, mul(velo_to_cam_rot, p) + velo_to_cam_trans);
}

Vec3 Calibration::rect_to_lidar(const Vec3& p) const {
  const Vec3 cam = mul(inverse(r0_rect), p);
  return mul(inverse(velo_to_cam_rot), cam - velo_to_cam_trans);
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_number(const std::string& tok, const std::string& source, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || !std::isfinite(v)) throw FormatError(source + ": bad number '" + tok + "'", line);
  return v;
}

}  // namespace

PointCloud read_velodyne(const std::string& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() % 16 != 0) {
    throw FormatError(path + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes");
  }
  PointCloud pts(bytes.size() / 16);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    float v[4];
    std::memcpy(v, bytes.data() + 16 * i, 16);
    for (float& f : v) f = io::to_little(f);
    pts[i] = {v[0], v[1], v[2], v[3]};
  }
  return pts;
}

void write_velodyne(const std::string& path, const PointCloud& points) {
  io::Writer w(path);
  for (const auto& p : points) {
    w.put<float>(static_cast<float>(p.x));
    w.put<float>(static_cast<float>(p.y));
    w.put<float>(static_cast<float>(p.z));
    w.put<float>(static_cast<float>(p.reflectance));
  }
  w.close();
}

std::vector<KittiLabel> parse_labels(const std::string& text, const std::string& source) {
  std::vector<KittiLabel> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 15 && tok.size() != 16) {
      throw FormatError(source + ": expected 15 or 16 fields, got " + std::to_string(tok.size()), lineno);
    }
    KittiLabel l;
    l.type = tok[0];
    auto num = [&](std::size_t i) { return parse_number(tok[i], source, lineno); };
    l.truncation = num(1);
    const double occ = num(2);
    if (occ != std::floor(occ)) throw FormatError(source + ": occlusion must be an integer", lineno);
    l.occlusion = static_cast<int>(occ);
    l.alpha = num(3);
    for (int k = 0; k < 4; ++k) l.bbox[k] = num(4 + k);
    l.h = num(8);
    l.w = num(9);
    l.l = num(10);
    l.x = num(11);
    l.y = num(12);
    l.z = num(13);
    l.rotation_y = num(14);
    if (tok.size() == 16) l.score = num(15);
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<KittiLabel> read_label(const std::string& path) { return parse_labels(slurp(path), path); }

std::string format_label(const KittiLabel& l) {
  std::ostringstream s;
  s.precision(17);
  s << l.type << ' ' << l.truncation << ' ' << l.occlusion << ' ' << l.alpha;
  for (double b : l.bbox) s << ' ' << b;
  s << ' ' << l.h << ' ' << l.w << ' ' << l.l << ' ' << l.x << ' ' << l.y << ' ' << l.z << ' ' << l.rotation_y;
  if (l.score) s << ' ' << *l.score;
  return s.str();
}

Calibration parse_calib(const std::string& text, const std::string& source) {
  std::map<std::string, std::vector<double>> m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto colon = line.find(':');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (colon == std::string::npos) throw FormatError(source + ": expected 'NAME: values'", lineno);
    std::istringstream vs(line.substr(colon + 1));
    std::vector<double> v;
    for (std::string t; vs >> t;) v.push_back(parse_number(t, source, lineno));
    m[line.substr(0, colon)] = std::move(v);
  }
  auto need = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError(source + ": missing " + key);
    if (it->second.size() != n) {
      throw FormatError(source + ": " + key + " needs " + std::to_string(n) + " values");
    }
    return it->second;
  };
  Calibration c;
  const auto& p2 = need("P2", 12);
  std::copy(p2.begin(), p2.end(), c.p2.begin());
  const auto& r0 = need("R0_rect", 9);
  std::copy(r0.begin(), r0.end(), c.r0_rect.begin());
  const auto& tr = need("Tr_velo_to_cam", 12);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) c.velo_to_cam_rot[3 * r + k] = tr[4 * r + k];
  }
  c.velo_to_cam_trans = {tr[3], tr[7], tr[11]};
  return c;
}

Calibration read_calib(const std::string& path) { return parse_calib(slurp(path), path); }

Difficulty label_difficulty(const KittiLabel& l) {
  if (l.type == "DontCare") return Difficulty::kIgnored;
  if (l.occlusion <= 0 && l.truncation <= 0.15) return Difficulty::kEasy;
  if (l.occlusion <= 1 && l.truncation <= 0.3) return Difficulty::kModerate;
  if (l.occlusion <= 2 && l.truncation <= 0.5) return Difficulty::kHard;
  return Difficulty::kIgnored;
}

Box7 camera_to_lidar(const KittiLabel& l, const Calibration& calib) {
  // Labels give the bottom-face centre; the internal box is centred.
  const Vec3 bottom = calib.rect_to_lidar({l.x, l.y, l.z});
  Box7 b;
  b.cx = bottom.x;
  b.cy = bottom.y;
  b.cz = bottom.z + 0.5 * l.h;
  b.l = l.l;
  b.w = l.w;
  b.h = l.h;
  b.yaw = normalize_angle(-l.rotation_y - M_PI / 2);
  return b;
}

void lidar_to_camera(const Box7& box, const Calibration& calib, KittiLabel& l) {
  const Vec3 bottom = calib.lidar_to_rect({box.cx, box.cy, box.cz - 0.5 * box.h});
  l.x = bottom.x;
  l.y = bottom.y;
  l.z = bottom.z;
  l.l = box.l;
  l.w = box.w;
  l.h = box.h;
  l.rotation_y = normalize_angle(-box.yaw - M_PI / 2);
}

std::vector<GtObject> labels_to_objects(const std::vector<KittiLabel>& labels, const Calibration& calib) {
  std::vector<GtObject> out;
  for (const auto& l : labels) {
    if (l.type == "DontCare") continue;
    GtObject o{l.type, camera_to_lidar(l, calib), label_difficulty(l)};
    if (!o.box.valid()) throw FormatError("label '" + l.type + "' has non-positive extents");
    out.push_back(std::move(o));
  }
  return out;
}

Scene load_scene(const std::string& root, const std::string& id) {
  Scene s;
  s.id = id;
  s.points = read_velodyne((fs::path(root) / "velodyne" / (id + ".bin")).string());
  const fs::path calib = fs::path(root) / "calib" / (id + ".txt");
  if (fs::exists(calib)) s.calib = read_calib(calib.string());
  const fs::path label = fs::path(root) / "label_2" / (id + ".txt");
  if (fs::exists(label)) s.gt = labels_to_objects(read_label(label.string()), s.calib);
  return s;
}

void write_scene(const std::string& root, const Scene& scene) {
  for (const char* sub : {"velodyne", "label_2", "calib"}) fs::create_directories(fs::path(root) / sub);
  write_velodyne((fs::path(root) / "velodyne" / (scene.id + ".bin")).string(), scene.points);
  const Calibration calib = Calibration::identity();
  std::ofstream label(fs::path(root) / "label_2" / (scene.id + ".txt"));
  for (const auto& o : scene.gt) {
    KittiLabel l;
    l.type = o.label;
    l.occlusion = o.difficulty == Difficulty::kEasy ? 0 : o.difficulty == Difficulty::kModerate ? 1 : 2;
    l.truncation = o.difficulty == Difficulty::kIgnored ? 0.9 : 0.0;
    lidar_to_camera(o.box, calib, l);
    l.alpha = l.rotation_y;
    label << format_label(l) << '\n';
  }
  std::ofstream c(fs::path(root) / "calib" / (scene.id + ".txt"));
  c << "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  if (!label || !c) throw std::runtime_error("write failed under " + root);
}

Scene make_synthetic_scene(const std::string& id, std::uint64_t seed, const SyntheticSceneConfig& cfg) {
  constexpr double kGround = -1.73;
  Rng rng(seed);
  Scene s;
  s.id = id;
  const auto f = round_to_float;
  std::size_t attempts = 0;
  while (s.gt.size() < cfg.objects) {
    if (++attempts > 1000 * (cfg.objects + 1)) throw DomainError("make_synthetic_scene: cannot place objects");
    Box7 b;
    b.l = rng.uniform(3.5, 4.5);
    b.w = rng.uniform(1.5, 1.9);
    b.h = rng.uniform(1.4, 1.7);
    b.cx = rng.uniform(cfg.x_range[0], cfg.x_range[1]);
    b.cy = rng.uniform(cfg.y_range[0], cfg.y_range[1]);
    b.cz = kGround + 0.5 * b.h;
    b.yaw = rng.uniform(-M_PI, M_PI);
    if (std::any_of(s.gt.begin(), s.gt.end(), [&](const GtObject& o) { return bev_iou(o.box, b) > 0.0; })) continue;
    s.gt.push_back({"Car", b, Difficulty::kEasy});
  }
  for (const auto& o : s.gt) {
    const auto frame = CanonicalFrame::of(o.box);
    const Box7& b = o.box;
    for (std::size_t i = 0; i < cfg.points_per_object; ++i) {
      // Surface samples pulled slightly inwards so they stay inside after rounding.
      Vec3 q{rng.uniform(-0.49, 0.49) * b.l, rng.uniform(-0.49, 0.49) * b.w, rng.uniform(-0.49, 0.49) * b.h};
      switch (rng.index(3)) {
        case 0: q.x = (rng.bernoulli(0.5) ? 0.49 : -0.49) * b.l; break;
        case 1: q.y = (rng.bernoulli(0.5) ? 0.49 : -0.49) * b.w; break;
        default: q.z = 0.49 * b.h; break;
      }
      const Vec3 w = frame.to_world(q);
      s.points.push_back({f(w.x), f(w.y), f(w.z), f(rng.uniform())});
    }
  }
  for (std::size_t i = 0; i < cfg.ground_points; ++i) {
    s.points.push_back({f(rng.uniform(0.0, 70.0)), f(rng.uniform(-39.0, 39.0)), f(kGround - 0.02), f(rng.uniform(0.0, 0.3))});
  }
  return s;
}

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& cfg) {
  AugmentDraw d;
  d.flip = rng.bernoulli(cfg.flip_probability);
  d.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  d.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
  return d;
}

void apply_augmentation(Scene& scene, const AugmentDraw& d) {
  const double c = std::cos(d.rotation), s = std::sin(d.rotation);
  auto move = [&](double& x, double& y, double& z) {
    if (d.flip) y = -y;
    const double rx = c * x - s * y, ry = s * x + c * y;
    x = rx * d.scale;
    y = ry * d.scale;
    z *= d.scale;
  };
  for (auto& p : scene.points) move(p.x, p.y, p.z);
  for (auto& o : scene.gt) {
    Box7& b = o.box;
    move(b.cx, b.cy, b.cz);
    b.l *= d.scale;
    b.w *= d.scale;
    b.h *= d.scale;
    b.yaw = normalize_angle((d.flip ? -b.yaw : b.yaw) + d.rotation);
  }
}

AugmentDraw augment(Scene& scene, Rng& rng, const AugmentConfig& cfg) {
  const AugmentDraw d = draw_augmentation(rng, cfg);
  apply_augmentation(scene, d);
  return d;
}

GtDatabase build_gt_database(const std::vector<Scene>& scenes, std::size_t min_points, std::size_t threads) {
  std::vector<std::vector<GtDatabaseEntry>> per_scene(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t si) {
    const Scene& scene = scenes[si];
    for (const auto& o : scene.gt) {
      if (o.difficulty == Difficulty::kIgnored) continue;
      GtDatabaseEntry e{o.label, o.difficulty, o.box, {}};
      const auto frame = CanonicalFrame::of(o.box);
      for (const auto& p : scene.points) {
        if (!point_in_box(p.xyz(), o.box)) continue;
        // Rounded here so an entry read back from disk is identical.
        const Vec3 q = frame.to_local(p.xyz());
        e.points.push_back({round_to_float(q.x), round_to_float(q.y), round_to_float(q.z), p.reflectance});
      }
      if (e.points.size() >= min_points) per_scene[si].push_back(std::move(e));
    }
  });
  GtDatabase db;
  for (auto& v : per_scene)
    for (auto& e : v) db.entries.push_back(std::move(e));
  return db;
}

void write_gt_database(const std::string& prefix, const GtDatabase& db) {
  PointSetFile file;
  file.channels = 4;
  std::ofstream index(prefix + ".txt");
  if (!index) throw std::runtime_error("cannot open " + prefix + ".txt for writing");
  index << "# record label difficulty points\n";
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    const auto& e = db.entries[i];
    if (e.label.find_first_of(" \t\n") != std::string::npos) throw DomainError("gt database: label has whitespace");
    std::vector<float> set;
    for (const auto& p : e.points) {
      set.insert(set.end(), {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                             static_cast<float>(p.reflectance)});
    }
    file.records.push_back({e.box, {std::move(set)}});
    index << i << ' ' << e.label << ' ' << difficulty_name(e.difficulty) << ' ' << e.points.size() << '\n';
  }
  if (!index) throw std::runtime_error("write failed: " + prefix + ".txt");
  write_point_sets(prefix + ".bin", file);
}

GtDatabase read_gt_database(const std::string& prefix) {
  const PointSetFile file = read_point_sets(prefix + ".bin");
  if (file.channels != 4) throw FormatError(prefix + ".bin: gt database needs 4 channels");
  std::istringstream index(slurp(prefix + ".txt"));
  GtDatabase db;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t rec = 0, count = 0;
    std::string label, diff;
    if (!(ls >> rec >> label >> diff >> count)) throw FormatError(prefix + ".txt: malformed index line", lineno);
    if (rec != db.entries.size() || rec >= file.records.size()) {
      throw FormatError(prefix + ".txt: index out of order or past the data file", lineno);
    }
    const auto& r = file.records[rec];
    if (r.sets.size() != 1 || r.sets[0].size() != 4 * count) {
      throw FormatError(prefix + ".txt: point count disagrees with the data file", lineno);
    }
    GtDatabaseEntry e{label, Difficulty::kModerate, r.box, {}};
    try {
      e.difficulty = parse_difficulty(diff);
    } catch (const DomainError& err) {
      throw FormatError(prefix + ".txt: " + err.what(), lineno);
    }
    for (std::size_t i = 0; i < count; ++i) {
      const float* v = r.sets[0].data() + 4 * i;
      e.points.push_back({v[0], v[1], v[2], v[3]});
    }
    db.entries.push_back(std::move(e));
  }
  if (db.entries.size() != file.records.size()) throw FormatError(prefix + ".txt: index is missing records");
  return db;
}

GtSampleResult gt_sample(Scene& scene, const GtDatabase& db, Rng& rng, std::size_t max_samples) {
  if (db.entries.empty()) throw DomainError("gt_sample: empty database");
  GtSampleResult res;
  for (std::size_t k = 0; k < max_samples; ++k) {
    const GtDatabaseEntry& e = db.entries[rng.index(db.entries.size())];
    ++res.attempted;
    const bool collides = std::any_of(scene.gt.begin(), scene.gt.end(),
                                      [&](const GtObject& o) { return bev_iou(o.box, e.box) > 0.0; });
    if (collides) continue;
    const auto frame = CanonicalFrame::of(e.box);
    for (const auto& p : e.points) {
      const Vec3 w = frame.to_world({p.x, p.y, p.z});
      scene.points.push_back({w.x, w.y, w.z, p.reflectance});
    }
    scene.gt.push_back({e.label, e.box, e.difficulty});
    ++res.accepted;
  }
  return res;
}

}  // namespace shapedet
