#include <algorithm>
#include <cmath>
#include <numeric>

#include "shapedet/record_file.hpp"
#include "shapedet/shape.hpp"

namespace shapedet {

namespace {

Vec3 cuboid_surface_point(double l, double w, double h, Rng& rng) {
  // Face pair chosen with probability proportional to its area.
  const double a_xy = l * w, a_xz = l * h, a_yz = w * h;
  const double pick = rng.uniform() * (a_xy + a_xz + a_yz);
  const double side = rng.bernoulli(0.5) ? 0.5 : -0.5;
  const double u = rng.uniform() - 0.5, v = rng.uniform() - 0.5;
  if (pick < a_xy) return {u * l, v * w, side * h};
  if (pick < a_xy + a_xz) return {u * l, side * w, v * h};
  return {side * l, u * w, v * h};
}

Vec3 ellipsoid_surface_point(double l, double w, double h, Rng& rng) {
  Vec3 d{rng.normal(), rng.normal(), rng.normal()};
  double n = d.norm();
  while (n < 1e-12) {
    d = {rng.normal(), rng.normal(), rng.normal()};
    n = d.norm();
  }
  return {0.5 * l * d.x / n, 0.5 * w * d.y / n, 0.5 * h * d.z / n};
}

}  // namespace

std::vector<ShapeSample> make_shape_corpus(std::size_t count, std::uint64_t seed, const ShapeCorpusConfig& cfg) {
  if (cfg.points == 0) throw DomainError("make_shape_corpus: zero points per shape");
  if (!(0.0 <= cfg.min_drop && cfg.min_drop <= cfg.max_drop && cfg.max_drop < 1.0)) {
    throw DomainError("make_shape_corpus: drop fraction range must satisfy 0 <= min <= max < 1");
  }
  Rng rng(seed);
  std::vector<ShapeSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const bool cuboid = rng.bernoulli(0.5);
    const double l = rng.uniform(3.2, 4.8), w = rng.uniform(1.4, 2.0), h = rng.uniform(1.3, 1.9);
    // The enclosing box is a little loose, like a proposal rather than a label.
    Box7 box;
    box.l = l * rng.uniform(1.0, 1.15);
    box.w = w * rng.uniform(1.0, 1.15);
    box.h = h * rng.uniform(1.0, 1.15);
    box.cx = rng.uniform(0.0, 60.0);
    box.cy = rng.uniform(-30.0, 30.0);
    box.cz = rng.uniform(-2.0, 0.0);
    box.yaw = rng.uniform(-M_PI, M_PI);
    const Vec3 shift{rng.uniform(-0.5, 0.5) * (box.l - l), rng.uniform(-0.5, 0.5) * (box.w - w),
                     rng.uniform(-0.5, 0.5) * (box.h - h)};

    std::vector<Vec3> local(cfg.points);
    for (auto& p : local) {
      p = (cuboid ? cuboid_surface_point(l, w, h, rng) : ellipsoid_surface_point(l, w, h, rng)) + shift;
    }

    // Remove one wedge: sort by azimuth measured from a random start angle.
    const double start = rng.uniform(-M_PI, M_PI);
    const double frac = rng.uniform(cfg.min_drop, cfg.max_drop);
    const auto drop = static_cast<std::size_t>(std::llround(frac * static_cast<double>(cfg.points)));
    std::vector<double> az(cfg.points);
    for (std::size_t i = 0; i < cfg.points; ++i) {
      double a = std::atan2(local[i].y, local[i].x) - start;
      a = std::fmod(a + 4.0 * M_PI, 2.0 * M_PI);
      az[i] = a;
    }
    std::vector<std::size_t> order(cfg.points);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return az[a] < az[b]; });
    std::vector<bool> keep(cfg.points, true);
    for (std::size_t i = 0; i < drop; ++i) keep[order[i]] = false;

    const auto frame = CanonicalFrame::of(box);
    ShapeSample sample;
    sample.box = box;
    for (std::size_t i = 0; i < cfg.points; ++i) {
      Vec3 p = frame.to_world(local[i]);
      p = {round_to_float(p.x), round_to_float(p.y), round_to_float(p.z)};
      sample.complete.push_back(p);
      if (keep[i]) sample.partial.push_back(p);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

std::vector<float> pack(const std::vector<Vec3>& pts) {
  std::vector<float> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts) {
    v.push_back(static_cast<float>(p.x));
    v.push_back(static_cast<float>(p.y));
    v.push_back(static_cast<float>(p.z));
  }
  return v;
}

std::vector<Vec3> unpack(const std::vector<float>& v) {
  std::vector<Vec3> pts(v.size() / 3);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pts;
}

}  // namespace

void write_shape_corpus(const std::string& path, const std::vector<ShapeSample>& corpus) {
  PointSetFile file;
  file.channels = 3;
  for (const auto& s : corpus) file.records.push_back({s.box, {pack(s.partial), pack(s.complete)}});
  write_point_sets(path, file);
}

std::vector<ShapeSample> read_shape_corpus(const std::string& path) {
  const PointSetFile file = read_point_sets(path);
  if (file.channels != 3) throw FormatError(path + ": shape corpus must have 3 channels");
  std::vector<ShapeSample> out;
  for (const auto& rec : file.records) {
    if (rec.sets.size() != 2) throw FormatError(path + ": shape record must hold a partial and a complete set");
    out.push_back({rec.box, unpack(rec.sets[1]), unpack(rec.sets[0])});
  }
  return out;
}

}  // namespace shapedet
