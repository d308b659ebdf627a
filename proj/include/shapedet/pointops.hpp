#pragma once

// Point-set sampling, grouping, interpolation and the two RoI pooling schemes.

#include <array>
#include <span>
#include <vector>

#include "shapedet/geometry.hpp"
#include "shapedet/tensor.hpp"

namespace shapedet {

/// Structure-of-arrays copy of xyz coordinates for the distance kernels.
struct PointsSoa {
  std::vector<double> x, y, z;

  PointsSoa() = default;
  explicit PointsSoa(std::span<const Vec3> points);
  std::size_t size() const { return x.size(); }
};

std::vector<Vec3> xyz_of(const PointCloud& cloud);
/// Rows of an [N x 3] tensor as points.
std::vector<Vec3> points_of(const Tensor& t);
Tensor tensor_of(std::span<const Vec3> points);

/// Greedy max-min selection starting at `seed_index`; ties go to the lowest index.
/// Throws DomainError when k > N or N == 0.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k,
                                               std::size_t seed_index = 0);
/// As above, but when the cloud has fewer than k points the selection is
/// padded by cycling through the chosen indices.
std::vector<std::size_t> farthest_point_sample_padded(std::span<const Vec3> points, std::size_t k,
                                                      std::size_t seed_index = 0);
/// Indices that order points lexicographically (x, then y, then z; stable).
std::vector<std::size_t> lexicographic_order(std::span<const Vec3> points);

/// Fixed-width neighbour lists: row i holds exactly `width` indices.
struct NeighborLists {
  std::size_t width = 0;
  std::vector<std::size_t> indices;  // [rows x width]
  std::vector<bool> fallback;        // row had no point within radius

  std::size_t rows() const { return width == 0 ? 0 : indices.size() / width; }
  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * width, width}; }
};

/// Up to T indices with |p - c| <= radius per center, ascending. Short lists are
/// padded with their first entry; empty ones with T copies of the nearest point.
NeighborLists ball_query(std::span<const Vec3> centers, std::span<const Vec3> points, double radius,
                         std::size_t max_neighbors);

struct ThreeNN {
  std::array<std::size_t, 3> index{};
  std::array<double, 3> weight{};  // non-negative, sums to 1
  std::size_t count = 0;           // < 3 only when fewer sources exist
};

/// Inverse-distance weights 1 / (d + eps) over the (up to) three nearest sources.
ThreeNN three_nn(const Vec3& query, const PointsSoa& sources, double eps = 1e-8);
/// Interpolates [S x C] source features onto the query points: [Q x C].
Tensor three_nn_interpolate(std::span<const Vec3> query, std::span<const Vec3> source_xyz,
                            const Tensor& source_feats, double eps = 1e-8);

/// Result of RoI-aware pooling: r^3 cells over the box, each holding the mean
/// canonical-frame point of its members (zero when empty).
struct PooledPointGrid {
  int resolution = 0;
  Box7 box;
  std::vector<Vec3> cells;
  std::vector<std::size_t> counts;

  std::size_t size() const { return cells.size(); }
  bool occupied(std::size_t i) const { return counts[i] > 0; }
  static std::size_t flat_index(int ix, int iy, int iz, int r) {
    return (static_cast<std::size_t>(ix) * r + iy) * r + iz;
  }
  /// [n x 3] matrix of cell means in metres (n = r^3).
  Tensor matrix() const;
  /// Same, divided by the box extents per axis (values in [-0.5, 0.5]).
  Tensor normalized_matrix() const;
};

/// Cell of a canonical-frame point, per axis in [0, r). Cells are upper-inclusive
/// intervals, so a point on an interior boundary belongs to the lower cell.
std::array<int, 3> roi_cell_of(const Vec3& local, const Box7& box, int resolution);

PooledPointGrid roi_aware_pool(std::span<const Vec3> points, const Box7& box, int resolution);
PooledPointGrid roi_aware_pool(const PointCloud& points, const Box7& box, int resolution);

/// Shared MLP (Linear + ReLU per layer) on [G*T x C] rows, max-pooled per group of T.
Var pointnet_unit(Tape& tape, Var grouped, std::vector<LinearLayer>& mlp, std::size_t group_rows);
std::vector<LinearLayer> make_mlp(const std::string& name, std::size_t in, std::span<const std::size_t> widths,
                                  Rng& rng);

struct MsgConfig {
  std::size_t centers = 128;    // m
  std::size_t neighbors = 16;   // T
  std::array<double, 2> radii{0.2, 0.4};
  std::vector<std::size_t> hidden{64};
  std::size_t channels = 128;   // C1

  void validate() const;
};

struct MsgParams {
  std::array<std::vector<LinearLayer>, 2> scales;
  LinearLayer fc;

  static MsgParams init(const MsgConfig& cfg, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Multi-scale structure feature of a predicted shape ([N x 3], N >= m): [1 x C1].
/// Points are put in lexicographic order before sampling, so the result does not
/// depend on the input row order.
Var msg_extract(Tape& tape, Var shape, const MsgConfig& cfg, MsgParams& params);

struct RoiGridConfig {
  int grid = 6;
  std::array<double, 2> radii{0.8, 1.6};
  std::size_t neighbors = 16;
  std::vector<std::size_t> widths{64, 64};  // per radius; C2 = 2 * widths.back()

  std::size_t channels() const { return 2 * widths.back(); }
};

struct RoiGridParams {
  std::array<std::vector<LinearLayer>, 2> scales;

  static RoiGridParams init(const RoiGridConfig& cfg, std::size_t keypoint_channels, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// grid^3 sample points uniformly spanning the box interior (cell centres), world frame.
std::vector<Vec3> roi_grid_points(const Box7& box, int grid);
NeighborLists roi_grid_neighbors(std::span<const Vec3> keypoints, const Box7& box, int grid, double radius,
                                 std::size_t max_neighbors);

struct GridPointFeatures {
  std::vector<Vec3> positions;  // world frame, grid^3 rows
  Var features;                 // [grid^3 x C2]
  std::size_t fallback_rows = 0;
  bool no_keypoints = false;
};

/// Aggregates keypoint features ([K x C]) at the RoI grid points with two radii.
GridPointFeatures roi_grid_pool(Tape& tape, std::span<const Vec3> keypoints, const Tensor& keypoint_feats,
                                const Box7& box, const RoiGridConfig& cfg, RoiGridParams& params);

}  // namespace shapedet
