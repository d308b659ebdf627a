#include "shapedet/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace shapedet {

namespace {
constexpr double kCollinearEps = 1e-9;
constexpr double kDegenerateArea = 1e-12;
}  // namespace

bool Box7::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(cz) && std::isfinite(yaw) && l > 0.0 &&
         w > 0.0 && h > 0.0 && std::isfinite(l) && std::isfinite(w) && std::isfinite(h);
}

Box7 Box7::normalized() const {
  Box7 b = *this;
  b.yaw = normalize_angle(yaw);
  return b;
}

Box7 Box7::from_array(std::span<const double> v) {
  if (v.size() != 7) throw ShapeError("Box7: 7 values required");
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

Vec3 CanonicalFrame::to_local(const Vec3& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec3 d = p - translation;
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

Vec3 CanonicalFrame::to_world(const Vec3& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y, p.z + translation.z};
}

Vec3 to_canonical(const Vec3& p, const Box7& box) { return CanonicalFrame::of(box).to_local(p); }

std::vector<Vec3> to_canonical(std::span<const Vec3> points, const Box7& box) {
  const auto frame = CanonicalFrame::of(box);
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(frame.to_local(p));
  return out;
}

std::vector<Vec3> to_canonical(const PointCloud& points, const Box7& box) {
  const auto frame = CanonicalFrame::of(box);
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(frame.to_local(p.xyz()));
  return out;
}

bool point_in_box(const Vec3& p, const Box7& box) {
  const Vec3 q = to_canonical(p, box);
  return std::abs(q.x) <= 0.5 * box.l && std::abs(q.y) <= 0.5 * box.w && std::abs(q.z) <= 0.5 * box.h;
}

std::vector<bool> points_in_box(const PointCloud& points, const Box7& box) {
  std::vector<bool> mask(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) mask[i] = point_in_box(points[i].xyz(), box);
  return mask;
}

std::vector<bool> points_in_box(std::span<const Vec3> points, const Box7& box) {
  std::vector<bool> mask(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) mask[i] = point_in_box(points[i], box);
  return mask;
}

std::array<Vec2, 4> bev_corners(const Box7& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {c * local[i].x - s * local[i].y + box.cx, s * local[i].x + c * local[i].y + box.cy};
  }
  return out;
}

double polygon_area(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(a);
}

std::vector<Vec2> clip_polygon(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len = std::hypot(ex, ey);
    // Signed distance to the edge line, positive on the inner (left) side.
    auto side = [&](const Vec2& p) { return (ex * (p.y - a.y) - ey * (p.x - a.x)) / len; };
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& cur = in[i];
      const Vec2& nxt = in[(i + 1) % in.size()];
      const double dc = side(cur), dn = side(nxt);
      const bool cur_in = dc >= -kCollinearEps;
      const bool nxt_in = dn >= -kCollinearEps;
      if (cur_in) out.push_back(cur);
      if (cur_in != nxt_in && std::abs(dc - dn) > kCollinearEps) {
        const double t = dc / (dc - dn);
        out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
      }
    }
  }
  return out;
}

double bev_intersection(const Box7& a, const Box7& b) {
  if (a.bev_area() < kDegenerateArea || b.bev_area() < kDegenerateArea) return 0.0;
  // Circumscribed circles: exact early-out for far-apart pairs.
  const double ra = 0.5 * std::hypot(a.l, a.w), rb = 0.5 * std::hypot(b.l, b.w);
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  if (dx * dx + dy * dy > (ra + rb) * (ra + rb)) return 0.0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const auto poly = clip_polygon(ca, cb);
  return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

double bev_iou(const Box7& a, const Box7& b) {
  const double inter = bev_intersection(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.bev_area() + b.bev_area() - inter;
  return uni <= 0.0 ? 0.0 : std::clamp(inter / uni, 0.0, 1.0);
}

double iou3d(const Box7& a, const Box7& b) {
  if (a.volume() < kDegenerateArea || b.volume() < kDegenerateArea) return 0.0;
  const double zlo = std::max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h);
  const double zhi = std::min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h);
  if (zhi <= zlo) return 0.0;
  const double inter = bev_intersection(a, b) * (zhi - zlo);
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return uni <= 0.0 ? 0.0 : std::clamp(inter / uni, 0.0, 1.0);
}

double box_iou(const Box7& a, const Box7& b, IouKind kind) {
  return kind == IouKind::kBev ? bev_iou(a, b) : iou3d(a, b);
}

Vec3 mul(const Mat3& m, const Vec3& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

Mat3 transpose(const Mat3& m) { return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}; }

Mat3 inverse(const Mat3& m) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det) < 1e-15) throw DomainError("inverse: singular 3x3 matrix");
  const double id = 1.0 / det;
  return {(m[4] * m[8] - m[5] * m[7]) * id, (m[2] * m[7] - m[1] * m[8]) * id, (m[1] * m[5] - m[2] * m[4]) * id,
          (m[5] * m[6] - m[3] * m[8]) * id, (m[0] * m[8] - m[2] * m[6]) * id, (m[2] * m[3] - m[0] * m[5]) * id,
          (m[3] * m[7] - m[4] * m[6]) * id, (m[1] * m[6] - m[0] * m[7]) * id, (m[0] * m[4] - m[1] * m[3]) * id};
}

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

}  // namespace shapedet
