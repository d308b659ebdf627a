#include "shapedet/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include "shapedet/simd.hpp"

namespace shapedet {

namespace {

struct MixHash {
  std::size_t operator()(std::uint64_t k) const noexcept {
    // splitmix64 finalizer
    k ^= k >> 30;
    k *= 0xbf58476d1ce4e5b9ULL;
    k ^= k >> 27;
    k *= 0x94d049bb133111ebULL;
    k ^= k >> 31;
    return static_cast<std::size_t>(k);
  }
};

using CoordIndex = std::unordered_map<std::uint64_t, std::uint32_t, MixHash>;

CoordIndex index_coords(std::span<const GridCoord> coords) {
  CoordIndex index;
  index.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!index.emplace(pack_coord(coords[i]), static_cast<std::uint32_t>(i)).second) {
      throw ShapeError("rulebook: duplicate voxel coordinate");
    }
  }
  return index;
}

int axis_dim(double lo, double hi, double size) {
  const double n = (hi - lo) / size;
  const double r = std::round(n);
  return static_cast<int>(std::abs(n - r) < 1e-6 ? r : std::floor(n));
}

std::vector<GridCoord> kernel_offsets(int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw DomainError("kernel size must be odd and positive");
  const int r = kernel_size / 2;
  std::vector<GridCoord> out;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) out.push_back({dz, dy, dx});
  return out;
}

bool in_shape(const GridCoord& c, const GridShape& s) {
  return c.z >= 0 && c.y >= 0 && c.x >= 0 && c.z < s[0] && c.y < s[1] && c.x < s[2];
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

std::uint64_t pack_coord(const GridCoord& c) {
  constexpr std::uint64_t kMask = (1ULL << 21) - 1;
  constexpr int kBias = 1 << 20;
  return ((static_cast<std::uint64_t>(c.z + kBias) & kMask) << 42) |
         ((static_cast<std::uint64_t>(c.y + kBias) & kMask) << 21) |
         (static_cast<std::uint64_t>(c.x + kBias) & kMask);
}

GridShape GridSpec::dims() const {
  validate();
  return {axis_dim(range_min.z, range_max.z, voxel_size.z), axis_dim(range_min.y, range_max.y, voxel_size.y),
          axis_dim(range_min.x, range_max.x, voxel_size.x)};
}

void GridSpec::validate() const {
  const double lo[3] = {range_min.x, range_min.y, range_min.z};
  const double hi[3] = {range_max.x, range_max.y, range_max.z};
  const double sz[3] = {voxel_size.x, voxel_size.y, voxel_size.z};
  for (int a = 0; a < 3; ++a) {
    if (!(hi[a] > lo[a]) || !(sz[a] > 0.0)) throw DomainError("grid: range_max must exceed range_min and voxel size be positive");
    if (axis_dim(lo[a], hi[a], sz[a]) < 1) throw DomainError("grid: voxel larger than range");
  }
}

void SparseVoxelTensor::validate() const {
  if (!features.empty() && features.rows() != coords.size()) throw ShapeError("voxels: feature rows != coords");
  if (features.empty() && !coords.empty()) throw ShapeError("voxels: missing features");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!in_shape(coords[i], shape)) throw ShapeError("voxels: coordinate outside grid");
    if (i > 0 && !(coords[i - 1] < coords[i])) throw ShapeError("voxels: coordinates not unique and sorted");
  }
}

SparseVoxelTensor voxelize(const PointCloud& points, const GridSpec& grid) {
  const GridShape shape = grid.dims();
  struct Acc {
    GridCoord coord;
    double sum[4] = {0, 0, 0, 0};
    std::size_t count = 0;
  };
  std::unordered_map<std::uint64_t, std::size_t, MixHash> slot;
  std::vector<Acc> acc;
  for (const auto& p : points) {
    const GridCoord c{static_cast<int>(std::floor((p.z - grid.range_min.z) / grid.voxel_size.z)),
                      static_cast<int>(std::floor((p.y - grid.range_min.y) / grid.voxel_size.y)),
                      static_cast<int>(std::floor((p.x - grid.range_min.x) / grid.voxel_size.x))};
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !in_shape(c, shape)) continue;
    auto [it, fresh] = slot.emplace(pack_coord(c), acc.size());
    if (fresh) acc.push_back(Acc{c});
    Acc& a = acc[it->second];
    a.sum[0] += p.x;
    a.sum[1] += p.y;
    a.sum[2] += p.z;
    a.sum[3] += p.reflectance;
    ++a.count;
  }
  std::sort(acc.begin(), acc.end(), [](const Acc& a, const Acc& b) { return a.coord < b.coord; });
  SparseVoxelTensor out;
  out.shape = shape;
  out.features = Tensor({acc.size(), 4});
  out.coords.reserve(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out.coords.push_back(acc[i].coord);
    for (int f = 0; f < 4; ++f) out.features[i * 4 + f] = acc[i].sum[f] / static_cast<double>(acc[i].count);
  }
  return out;
}

std::size_t Rulebook::pair_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

Rulebook build_rulebook_submanifold(std::span<const GridCoord> coords, const GridShape& shape,
                                    int kernel_size) {
  Rulebook rb;
  rb.kernel_size = kernel_size;
  rb.offsets = kernel_offsets(kernel_size);
  rb.pairs.resize(rb.offsets.size());
  rb.out_coords.assign(coords.begin(), coords.end());
  rb.out_shape = shape;
  rb.num_inputs = coords.size();
  const CoordIndex index = index_coords(coords);
  for (std::size_t j = 0; j < coords.size(); ++j) {
    for (std::size_t o = 0; o < rb.offsets.size(); ++o) {
      const GridCoord& d = rb.offsets[o];
      const GridCoord nb{coords[j].z + d.z, coords[j].y + d.y, coords[j].x + d.x};
      if (!in_shape(nb, shape)) continue;
      if (auto it = index.find(pack_coord(nb)); it != index.end()) {
        rb.pairs[o].emplace_back(it->second, static_cast<std::uint32_t>(j));
      }
    }
  }
  return rb;
}

Rulebook build_rulebook_strided(std::span<const GridCoord> coords, const GridShape& shape, int kernel_size,
                                int stride) {
  if (stride < 1) throw DomainError("stride must be positive");
  Rulebook rb;
  rb.kernel_size = kernel_size;
  rb.offsets = kernel_offsets(kernel_size);
  rb.pairs.resize(rb.offsets.size());
  rb.out_shape = {(shape[0] + stride - 1) / stride, (shape[1] + stride - 1) / stride,
                  (shape[2] + stride - 1) / stride};
  rb.num_inputs = coords.size();
  const CoordIndex index = index_coords(coords);
  for (const auto& c : coords) {
    rb.out_coords.push_back({floor_div(c.z, stride), floor_div(c.y, stride), floor_div(c.x, stride)});
  }
  std::sort(rb.out_coords.begin(), rb.out_coords.end());
  rb.out_coords.erase(std::unique(rb.out_coords.begin(), rb.out_coords.end()), rb.out_coords.end());
  for (std::size_t j = 0; j < rb.out_coords.size(); ++j) {
    const GridCoord& q = rb.out_coords[j];
    for (std::size_t o = 0; o < rb.offsets.size(); ++o) {
      const GridCoord& d = rb.offsets[o];
      const GridCoord src{q.z * stride + d.z, q.y * stride + d.y, q.x * stride + d.x};
      if (!in_shape(src, shape)) continue;
      if (auto it = index.find(pack_coord(src)); it != index.end()) {
        rb.pairs[o].emplace_back(it->second, static_cast<std::uint32_t>(j));
      }
    }
  }
  return rb;
}

Tensor sparse_conv_apply(const Rulebook& rulebook, const Tensor& features, const Tensor& weights) {
  if (weights.rank() != 3 || weights.shape()[0] != rulebook.offsets.size()) {
    throw ShapeError("sparse_conv_apply: weights must be [K x C_in x C_out] with K = " +
                     std::to_string(rulebook.offsets.size()));
  }
  const std::size_t cin = weights.shape()[1], cout = weights.shape()[2];
  if (rulebook.num_inputs > 0 && (features.rank() != 2 || features.rows() != rulebook.num_inputs || features.cols() != cin)) {
    throw ShapeError("sparse_conv_apply: features " + shape_string(features.shape()) + " do not match rulebook/weights");
  }
  Tensor out({rulebook.out_coords.size(), cout});
  const auto& k = simd::kernels();
  std::vector<double> gathered, product;
  for (std::size_t o = 0; o < rulebook.pairs.size(); ++o) {
    const auto& pairs = rulebook.pairs[o];
    if (pairs.empty()) continue;
    gathered.assign(pairs.size() * cin, 0.0);
    product.assign(pairs.size() * cout, 0.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [i, j] = pairs[p];
      if (i >= rulebook.num_inputs || j >= rulebook.out_coords.size()) {
        throw InternalError("sparse_conv_apply: rulebook index out of range");
      }
      std::copy(features.ptr() + i * cin, features.ptr() + (i + 1) * cin, gathered.data() + p * cin);
    }
    k.gemm_nn(pairs.size(), cout, cin, gathered.data(), cin, weights.ptr() + o * cin * cout, cout, product.data(),
              cout);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      k.axpy(1.0, product.data() + p * cout, out.ptr() + pairs[p].second * cout, cout);
    }
  }
  return out;
}

std::vector<Vec3> voxel_centers(std::span<const GridCoord> coords, const GridSpec& grid, int stride) {
  std::vector<Vec3> out;
  out.reserve(coords.size());
  const double s = static_cast<double>(stride);
  for (const auto& c : coords) {
    out.push_back({grid.range_min.x + (c.x + 0.5) * grid.voxel_size.x * s,
                   grid.range_min.y + (c.y + 0.5) * grid.voxel_size.y * s,
                   grid.range_min.z + (c.z + 0.5) * grid.voxel_size.z * s});
  }
  return out;
}

std::vector<Vec3> voxel_centers(const SparseVoxelTensor& t, const GridSpec& grid) {
  return voxel_centers(t.coords, grid, t.stride);
}

void write_voxel_csv(std::ostream& out, const SparseVoxelTensor& t) {
  out << "z,y,x";
  for (std::size_t f = 0; f < t.channels(); ++f) out << ",f" << f;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << t.coords[i].z << ',' << t.coords[i].y << ',' << t.coords[i].x;
    for (std::size_t f = 0; f < t.channels(); ++f) out << ',' << t.features.at(i, f);
    out << '\n';
  }
  out.precision(old_precision);
}

SparseBackbone SparseBackbone::init(const BackboneConfig& cfg, Rng& rng) {
  SparseBackbone bb;
  bb.cfg_ = cfg;
  const std::size_t kvol = static_cast<std::size_t>(cfg.kernel_size) * cfg.kernel_size * cfg.kernel_size;
  auto make = [&](const std::string& name, std::size_t cin, std::size_t cout, int stride) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(kvol * cin));
    std::vector<double> w(kvol * cin * cout), b(cout);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    for (auto& v : b) v = rng.uniform(-bound, bound);
    return SparseConvLayer{Parameter(name + ".weight", Tensor({kvol, cin, cout}, std::move(w))),
                           Parameter(name + ".bias", Tensor({1, cout}, std::move(b))), stride};
  };
  std::size_t cprev = cfg.input_channels;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::string prefix = "backbone.block" + std::to_string(b + 1);
    const std::size_t c = cfg.channels[b];
    bb.blocks_.push_back({make(prefix + ".down", cprev, cprev, cfg.strides[b]),
                          make(prefix + ".subm1", cprev, c, 1), make(prefix + ".subm2", c, c, 1)});
    cprev = c;
  }
  return bb;
}

std::vector<Parameter*> SparseBackbone::parameters() {
  std::vector<Parameter*> out;
  for (auto& block : blocks_)
    for (auto& layer : block) {
      out.push_back(&layer.weights);
      out.push_back(&layer.bias);
    }
  return out;
}

std::vector<SparseVoxelTensor> SparseBackbone::forward(const SparseVoxelTensor& input) const {
  if (input.channels() != cfg_.input_channels && !input.coords.empty()) {
    throw ShapeError("backbone: expected " + std::to_string(cfg_.input_channels) + " input channels");
  }
  std::vector<SparseVoxelTensor> levels;
  SparseVoxelTensor cur = input;
  if (cur.features.empty()) cur.features = Tensor({0, cfg_.input_channels});
  for (const auto& block : blocks_) {
    for (const auto& layer : block) {
      const Rulebook rb = layer.stride == 1
                              ? build_rulebook_submanifold(cur.coords, cur.shape, cfg_.kernel_size)
                              : build_rulebook_strided(cur.coords, cur.shape, cfg_.kernel_size, layer.stride);
      Tensor f = sparse_conv_apply(rb, cur.features, layer.weights.value);
      const std::size_t cout = f.cols();
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::max(0.0, f[i] + layer.bias.value[i % cout]);
      SparseVoxelTensor next;
      next.coords = rb.out_coords;
      next.features = std::move(f);
      next.shape = rb.out_shape;
      next.stride = cur.stride * layer.stride;
      cur = std::move(next);
    }
    levels.push_back(cur);
  }
  return levels;
}

}  // namespace shapedet
