#pragma once

// 7-DOF boxes in the LiDAR frame: z up, yaw counter-clockwise about +z seen
// from above, (cx, cy, cz) the geometric center.

#include <array>
#include <span>
#include <vector>

#include "shapedet/common.hpp"

namespace shapedet {

struct LidarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double reflectance = 0.0;

  Vec3 xyz() const { return {x, y, z}; }
  bool operator==(const LidarPoint&) const = default;
};

using PointCloud = std::vector<LidarPoint>;

struct Box7 {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;

  Vec3 center() const { return {cx, cy, cz}; }
  double volume() const { return l * w * h; }
  double bev_area() const { return l * w; }
  /// Extents positive and finite.
  bool valid() const;
  /// Copy with yaw wrapped into (-pi, pi].
  Box7 normalized() const;
  std::array<double, 7> as_array() const { return {cx, cy, cz, l, w, h, yaw}; }
  static Box7 from_array(std::span<const double> v);
};

/// Rigid transform between the world and a box-local frame where the box is
/// axis-aligned at the origin.
struct CanonicalFrame {
  Vec3 translation;
  double yaw = 0.0;

  static CanonicalFrame of(const Box7& box) { return {box.center(), box.yaw}; }
  Vec3 to_local(const Vec3& p) const;
  Vec3 to_world(const Vec3& p) const;
};

Vec3 to_canonical(const Vec3& p, const Box7& box);
std::vector<Vec3> to_canonical(std::span<const Vec3> points, const Box7& box);
std::vector<Vec3> to_canonical(const PointCloud& points, const Box7& box);

/// Inside test in the box frame; the boundary counts as inside.
bool point_in_box(const Vec3& p, const Box7& box);
std::vector<bool> points_in_box(const PointCloud& points, const Box7& box);
std::vector<bool> points_in_box(std::span<const Vec3> points, const Box7& box);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Footprint corners, counter-clockwise.
std::array<Vec2, 4> bev_corners(const Box7& box);

/// Sutherland-Hodgman clip of `subject` against the convex, counter-clockwise `clip`.
std::vector<Vec2> clip_polygon(std::span<const Vec2> subject, std::span<const Vec2> clip);
double polygon_area(std::span<const Vec2> poly);

/// Area of the footprint intersection.
double bev_intersection(const Box7& a, const Box7& b);
double bev_iou(const Box7& a, const Box7& b);
double iou3d(const Box7& a, const Box7& b);

enum class IouKind { kBev, k3d };
double box_iou(const Box7& a, const Box7& b, IouKind kind);

/// 3x3 row-major matrix helpers for calibration transforms.
using Mat3 = std::array<double, 9>;
Vec3 mul(const Mat3& m, const Vec3& v);
Mat3 mul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
Mat3 inverse(const Mat3& m);
Mat3 identity3();

}  // namespace shapedet
