#pragma once

// Voxelization and sparse 3D convolution by rulebook (gather, GEMM, scatter).

#include <array>
#include <compare>
#include <iosfwd>
#include <span>
#include <vector>

#include "shapedet/geometry.hpp"
#include "shapedet/tensor.hpp"

namespace shapedet {

/// Integer voxel index, stored (z, y, x); ordering is lexicographic in that order.
struct GridCoord {
  int z = 0;
  int y = 0;
  int x = 0;
  auto operator<=>(const GridCoord&) const = default;
};

/// Extents per axis in (z, y, x) order.
using GridShape = std::array<int, 3>;

struct GridSpec {
  Vec3 range_min{0.0, -40.0, -3.0};
  Vec3 range_max{70.4, 40.0, 1.0};
  Vec3 voxel_size{0.05, 0.05, 0.1};

  /// KITTI-style default range with 0.05 x 0.05 x 0.1 m voxels.
  static GridSpec kitti() { return {}; }
  /// (z, y, x) voxel counts. Throws DomainError if the grid is invalid.
  GridShape dims() const;
  void validate() const;
};

struct SparseVoxelTensor {
  std::vector<GridCoord> coords;  // unique, sorted
  Tensor features;                // [N x C]
  GridShape shape{0, 0, 0};
  int stride = 1;                 // accumulated downsampling relative to the input grid

  std::size_t size() const { return coords.size(); }
  std::size_t channels() const { return features.empty() ? 0 : features.cols(); }
  /// Checks uniqueness, bounds and row count; throws ShapeError.
  void validate() const;
};

/// Drops points outside the range; each voxel's feature is the mean (x, y, z, reflectance).
SparseVoxelTensor voxelize(const PointCloud& points, const GridSpec& grid);

/// Packs (z, y, x) into one 64-bit key; the hash map then mixes the key.
std::uint64_t pack_coord(const GridCoord& c);

struct Rulebook {
  int kernel_size = 3;
  std::vector<GridCoord> offsets;                                 // (dz, dy, dx) per kernel slot
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> pairs;  // (input, output) per slot
  std::vector<GridCoord> out_coords;
  GridShape out_shape{0, 0, 0};
  std::size_t num_inputs = 0;

  std::size_t pair_count() const;
};

/// Output sites equal input sites; (i, j) pairs where coord_i - coord_j is the slot offset.
Rulebook build_rulebook_submanifold(std::span<const GridCoord> coords, const GridShape& shape,
                                    int kernel_size = 3);
/// Output sites are the distinct floor(coord / stride); each gathers the active inputs
/// in the kernel window centred at stride * out (zero padding kernel_size / 2).
Rulebook build_rulebook_strided(std::span<const GridCoord> coords, const GridShape& shape,
                                int kernel_size = 3, int stride = 2);

/// out_j = sum over slots and pairs (i, j) of feat_i * W[slot]; weights are [K x C_in x C_out].
Tensor sparse_conv_apply(const Rulebook& rulebook, const Tensor& features, const Tensor& weights);

/// Metric centers of voxels at a backbone level with the given accumulated stride.
std::vector<Vec3> voxel_centers(std::span<const GridCoord> coords, const GridSpec& grid, int stride = 1);
std::vector<Vec3> voxel_centers(const SparseVoxelTensor& t, const GridSpec& grid);

/// CSV dump, one row per voxel: z,y,x,f0,f1,...
void write_voxel_csv(std::ostream& out, const SparseVoxelTensor& t);

struct SparseConvLayer {
  Parameter weights;  // [K x C_in x C_out]
  Parameter bias;     // [1 x C_out]
  int stride = 1;     // 1 = submanifold
};

struct BackboneConfig {
  std::size_t input_channels = 4;
  std::array<std::size_t, 4> channels{16, 32, 64, 64};
  std::array<int, 4> strides{1, 2, 2, 2};
  int kernel_size = 3;
};

/// Four blocks: one (strided) sparse conv followed by two submanifold convs,
/// ReLU after each layer. Strides (1, 2, 2, 2) give 8x total downsampling.
class SparseBackbone {
 public:
  static SparseBackbone init(const BackboneConfig& cfg, Rng& rng);
  /// Output of every block, level 1 first.
  std::vector<SparseVoxelTensor> forward(const SparseVoxelTensor& input) const;
  const BackboneConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();

 private:
  BackboneConfig cfg_;
  std::vector<std::array<SparseConvLayer, 3>> blocks_;
};

}  // namespace shapedet
