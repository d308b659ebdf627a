#include "shapedet/pointops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "shapedet/simd.hpp"

namespace shapedet {

PointsSoa::PointsSoa(std::span<const Vec3> points) : x(points.size()), y(points.size()), z(points.size()) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    x[i] = points[i].x;
    y[i] = points[i].y;
    z[i] = points[i].z;
  }
}

std::vector<Vec3> xyz_of(const PointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(p.xyz());
  return out;
}

std::vector<Vec3> points_of(const Tensor& t) {
  if (t.rank() != 2 || t.cols() != 3) throw ShapeError("points_of: [N x 3] tensor required");
  std::vector<Vec3> out(t.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {t[3 * i], t[3 * i + 1], t[3 * i + 2]};
  return out;
}

Tensor tensor_of(std::span<const Vec3> points) {
  Tensor t({points.size(), 3});
  for (std::size_t i = 0; i < points.size(); ++i) {
    t[3 * i] = points[i].x;
    t[3 * i + 1] = points[i].y;
    t[3 * i + 2] = points[i].z;
  }
  return t;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k,
                                               std::size_t seed_index) {
  const std::size_t n = points.size();
  if (n == 0) throw DomainError("farthest_point_sample: empty point set");
  if (k > n) {
    throw DomainError("farthest_point_sample: k = " + std::to_string(k) + " exceeds " + std::to_string(n) +
                      " points");
  }
  if (seed_index >= n) throw DomainError("farthest_point_sample: seed index out of range");
  std::vector<std::size_t> out;
  if (k == 0) return out;
  out.reserve(k);
  const PointsSoa soa(points);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  const auto& kern = simd::kernels();
  std::size_t cur = seed_index;
  out.push_back(cur);
  while (out.size() < k) {
    cur = kern.fps_update(soa.x.data(), soa.y.data(), soa.z.data(), n, points[cur].x, points[cur].y,
                          points[cur].z, dist.data());
    out.push_back(cur);
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample_padded(std::span<const Vec3> points, std::size_t k,
                                                      std::size_t seed_index) {
  if (points.size() >= k) return farthest_point_sample(points, k, seed_index);
  std::vector<std::size_t> out = farthest_point_sample(points, points.size(), seed_index);
  const std::size_t n = out.size();
  for (std::size_t i = n; i < k; ++i) out.push_back(out[i % n]);
  return out;
}

std::vector<std::size_t> lexicographic_order(std::span<const Vec3> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lex_less(points[a], points[b]); });
  return order;
}

NeighborLists ball_query(std::span<const Vec3> centers, std::span<const Vec3> points, double radius,
                         std::size_t max_neighbors) {
  if (points.empty()) throw DomainError("ball_query: empty point set");
  if (!(radius > 0.0)) throw DomainError("ball_query: radius must be positive");
  if (max_neighbors == 0) throw DomainError("ball_query: T must be at least 1");
  const PointsSoa soa(points);
  const auto& kern = simd::kernels();
  const double r2 = radius * radius;
  NeighborLists out;
  out.width = max_neighbors;
  out.indices.reserve(centers.size() * max_neighbors);
  out.fallback.assign(centers.size(), false);
  std::vector<double> d2(points.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const Vec3& q = centers[c];
    kern.sq_dist(soa.x.data(), soa.y.data(), soa.z.data(), points.size(), q.x, q.y, q.z, d2.data());
    const std::size_t begin = out.indices.size();
    for (std::size_t i = 0; i < points.size() && out.indices.size() - begin < max_neighbors; ++i) {
      if (d2[i] <= r2) out.indices.push_back(i);
    }
    if (out.indices.size() == begin) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < points.size(); ++i)
        if (d2[i] < d2[arg]) arg = i;
      out.indices.push_back(arg);
      out.fallback[c] = true;
    }
    const std::size_t first = out.indices[begin];
    while (out.indices.size() - begin < max_neighbors) out.indices.push_back(first);
  }
  return out;
}

ThreeNN three_nn(const Vec3& query, const PointsSoa& sources, double eps) {
  ThreeNN r;
  const std::size_t n = sources.size();
  if (n == 0) throw DomainError("three_nn: no source points");
  std::array<double, 3> best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = sources.x[i] - query.x, dy = sources.y[i] - query.y, dz = sources.z[i] - query.z;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best[2]) {
      std::size_t slot = 2;
      while (slot > 0 && d < best[slot - 1]) {
        best[slot] = best[slot - 1];
        r.index[slot] = r.index[slot - 1];
        --slot;
      }
      best[slot] = d;
      r.index[slot] = i;
    }
  }
  r.count = std::min<std::size_t>(3, n);
  double total = 0.0;
  for (std::size_t j = 0; j < r.count; ++j) {
    r.weight[j] = 1.0 / (std::sqrt(best[j]) + eps);
    total += r.weight[j];
  }
  for (std::size_t j = 0; j < r.count; ++j) r.weight[j] /= total;
  return r;
}

Tensor three_nn_interpolate(std::span<const Vec3> query, std::span<const Vec3> source_xyz,
                            const Tensor& source_feats, double eps) {
  if (source_xyz.empty()) throw DomainError("three_nn_interpolate: no source points");
  if (source_feats.rank() != 2 || source_feats.rows() != source_xyz.size()) {
    throw ShapeError("three_nn_interpolate: features must be [S x C]");
  }
  const std::size_t c = source_feats.cols();
  const PointsSoa soa(source_xyz);
  const auto& kern = simd::kernels();
  Tensor out({query.size(), c});
  for (std::size_t q = 0; q < query.size(); ++q) {
    const ThreeNN nn = three_nn(query[q], soa, eps);
    for (std::size_t j = 0; j < nn.count; ++j) {
      kern.axpy(nn.weight[j], source_feats.ptr() + nn.index[j] * c, out.ptr() + q * c, c);
    }
  }
  return out;
}

Tensor PooledPointGrid::matrix() const { return tensor_of(cells); }

Tensor PooledPointGrid::normalized_matrix() const {
  Tensor m = matrix();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    m[3 * i] /= box.l;
    m[3 * i + 1] /= box.w;
    m[3 * i + 2] /= box.h;
  }
  return m;
}

std::array<int, 3> roi_cell_of(const Vec3& local, const Box7& box, int resolution) {
  auto axis = [&](double v, double extent) {
    const double t = (v + 0.5 * extent) / extent;
    const int idx = static_cast<int>(std::ceil(t * resolution)) - 1;
    return std::clamp(idx, 0, resolution - 1);
  };
  return {axis(local.x, box.l), axis(local.y, box.w), axis(local.z, box.h)};
}

PooledPointGrid roi_aware_pool(std::span<const Vec3> points, const Box7& box, int resolution) {
  if (resolution < 1) throw DomainError("roi_aware_pool: resolution must be >= 1");
  PooledPointGrid g;
  g.resolution = resolution;
  g.box = box;
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution * resolution;
  g.cells.assign(n, Vec3{});
  g.counts.assign(n, 0);
  const auto frame = CanonicalFrame::of(box);
  for (const auto& p : points) {
    const Vec3 q = frame.to_local(p);
    if (std::abs(q.x) > 0.5 * box.l || std::abs(q.y) > 0.5 * box.w || std::abs(q.z) > 0.5 * box.h) continue;
    const auto c = roi_cell_of(q, box, resolution);
    const std::size_t idx = PooledPointGrid::flat_index(c[0], c[1], c[2], resolution);
    g.cells[idx] = g.cells[idx] + q;
    ++g.counts[idx];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (g.counts[i] > 0) g.cells[i] = g.cells[i] * (1.0 / static_cast<double>(g.counts[i]));
  }
  return g;
}

PooledPointGrid roi_aware_pool(const PointCloud& points, const Box7& box, int resolution) {
  const auto xyz = xyz_of(points);
  return roi_aware_pool(std::span<const Vec3>(xyz), box, resolution);
}

Var pointnet_unit(Tape& tape, Var grouped, std::vector<LinearLayer>& mlp, std::size_t group_rows) {
  Var h = grouped;
  for (auto& layer : mlp) h = tape.relu(tape.linear(h, layer));
  return tape.group_max_pool(h, group_rows);
}

std::vector<LinearLayer> make_mlp(const std::string& name, std::size_t in, std::span<const std::size_t> widths,
                                  Rng& rng) {
  std::vector<LinearLayer> out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    out.push_back(LinearLayer::init(name + "." + std::to_string(i), in, widths[i], rng));
    in = widths[i];
  }
  return out;
}

void MsgConfig::validate() const {
  if (centers < 1 || neighbors < 1) throw DomainError("msg: m and T must be >= 1");
  if (!(radii[0] > 0.0 && radii[0] < radii[1])) throw DomainError("msg: radii must be positive and increasing");
  if (channels < 1) throw DomainError("msg: C1 must be >= 1");
}

MsgParams MsgParams::init(const MsgConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(cfg.channels);
  MsgParams p;
  p.scales[0] = make_mlp("msg.scale0", 3, widths, rng);
  p.scales[1] = make_mlp("msg.scale1", 3, widths, rng);
  p.fc = LinearLayer::init("msg.fc", cfg.centers * 2 * cfg.channels, cfg.channels, rng);
  return p;
}

void MsgParams::collect(std::vector<Parameter*>& out) {
  for (auto& scale : scales)
    for (auto& l : scale) l.collect(out);
  fc.collect(out);
}

Var msg_extract(Tape& tape, Var shape, const MsgConfig& cfg, MsgParams& params) {
  cfg.validate();
  const Tensor& sv = tape.value(shape);
  if (sv.rank() != 2 || sv.cols() != 3) throw ShapeError("msg_extract: shape must be [N x 3]");
  if (sv.rows() < cfg.centers) throw ShapeError("msg_extract: fewer points than centers");
  if (params.fc.in() != cfg.centers * 2 * cfg.channels) throw ShapeError("msg_extract: fc width mismatch");

  const auto raw = points_of(sv);
  const Var sorted = tape.gather_rows(shape, lexicographic_order(raw));
  const auto pts = points_of(tape.value(sorted));
  const auto center_idx = farthest_point_sample(pts, cfg.centers, 0);
  std::vector<Vec3> centers;
  for (auto i : center_idx) centers.push_back(pts[i]);

  std::vector<std::size_t> center_rep;
  center_rep.reserve(cfg.centers * cfg.neighbors);
  for (auto i : center_idx) center_rep.insert(center_rep.end(), cfg.neighbors, i);
  const Var anchor = tape.gather_rows(sorted, center_rep);

  std::array<Var, 2> scale_out;
  for (int s = 0; s < 2; ++s) {
    const NeighborLists nl = ball_query(centers, pts, cfg.radii[s], cfg.neighbors);
    const Var grouped = tape.sub(tape.gather_rows(sorted, nl.indices), anchor);
    scale_out[s] = pointnet_unit(tape, grouped, params.scales[s], cfg.neighbors);
  }
  const Var joined = tape.concat(scale_out[0], scale_out[1]);  // [m x 2C1]
  const Var flat = tape.reshape(joined, {1, cfg.centers * 2 * cfg.channels});
  return tape.linear(flat, params.fc);
}

RoiGridParams RoiGridParams::init(const RoiGridConfig& cfg, std::size_t keypoint_channels, Rng& rng) {
  RoiGridParams p;
  p.scales[0] = make_mlp("roi_grid.scale0", 3 + keypoint_channels, cfg.widths, rng);
  p.scales[1] = make_mlp("roi_grid.scale1", 3 + keypoint_channels, cfg.widths, rng);
  return p;
}

void RoiGridParams::collect(std::vector<Parameter*>& out) {
  for (auto& scale : scales)
    for (auto& l : scale) l.collect(out);
}

std::vector<Vec3> roi_grid_points(const Box7& box, int grid) {
  if (grid < 1) throw DomainError("roi_grid_points: grid must be >= 1");
  const auto frame = CanonicalFrame::of(box);
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(grid) * grid * grid);
  auto coord = [&](int i, double extent) { return ((i + 0.5) / grid - 0.5) * extent; };
  for (int ix = 0; ix < grid; ++ix)
    for (int iy = 0; iy < grid; ++iy)
      for (int iz = 0; iz < grid; ++iz)
        out.push_back(frame.to_world({coord(ix, box.l), coord(iy, box.w), coord(iz, box.h)}));
  return out;
}

NeighborLists roi_grid_neighbors(std::span<const Vec3> keypoints, const Box7& box, int grid, double radius,
                                 std::size_t max_neighbors) {
  const auto pts = roi_grid_points(box, grid);
  return ball_query(pts, keypoints, radius, max_neighbors);
}

GridPointFeatures roi_grid_pool(Tape& tape, std::span<const Vec3> keypoints, const Tensor& keypoint_feats,
                                const Box7& box, const RoiGridConfig& cfg, RoiGridParams& params) {
  GridPointFeatures out;
  out.positions = roi_grid_points(box, cfg.grid);
  const std::size_t rows = out.positions.size();
  if (keypoints.empty()) {
    out.no_keypoints = true;
    out.fallback_rows = rows;
    out.features = tape.constant(Tensor({rows, cfg.channels()}, 0.0));
    return out;
  }
  if (keypoint_feats.rank() != 2 || keypoint_feats.rows() != keypoints.size()) {
    throw ShapeError("roi_grid_pool: keypoint features must be [K x C]");
  }
  const std::size_t c = keypoint_feats.cols();
  const std::size_t t = cfg.neighbors;
  std::array<Var, 2> scale_out;
  for (int s = 0; s < 2; ++s) {
    const NeighborLists nl = ball_query(out.positions, keypoints, cfg.radii[s], t);
    for (std::size_t r = 0; r < rows; ++r) out.fallback_rows += nl.fallback[r] ? 1 : 0;
    Tensor grouped({rows * t, 3 + c});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < t; ++j) {
        const std::size_t k = nl.indices[r * t + j];
        double* dst = grouped.ptr() + (r * t + j) * (3 + c);
        dst[0] = keypoints[k].x - out.positions[r].x;
        dst[1] = keypoints[k].y - out.positions[r].y;
        dst[2] = keypoints[k].z - out.positions[r].z;
        std::copy(keypoint_feats.ptr() + k * c, keypoint_feats.ptr() + (k + 1) * c, dst + 3);
      }
    }
    scale_out[s] = pointnet_unit(tape, tape.constant(std::move(grouped)), params.scales[s], t);
  }
  out.features = tape.concat(scale_out[0], scale_out[1]);
  return out;
}

}  // namespace shapedet
