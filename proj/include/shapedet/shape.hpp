#pragma once

// Shape completion for proposals: pooled partial points in, a dense 1024-point
// canonical shape out, then the structure feature and its fusion with the
// grid-point features.

#include <functional>
#include <string>
#include <vector>

#include "shapedet/pointops.hpp"
#include "shapedet/tensor.hpp"

namespace shapedet {

struct ShapeNetConfig {
  std::size_t enc1_hidden = 128;
  std::size_t local_features = 256;  // width of v
  std::size_t enc2_hidden = 512;
  std::size_t global_features = 1024;  // width of g
  std::size_t decoder_hidden = 1024;
  std::size_t output_points = 1024;

  void validate() const;
};

/// Two PointNet encoders and a fully connected decoder. Inputs are pooled grids
/// in box-normalized canonical coordinates; outputs use the same units.
class ShapePredictor {
 public:
  static ShapePredictor init(const ShapeNetConfig& cfg, Rng& rng);
  static ShapePredictor zeros(const ShapeNetConfig& cfg);

  /// points: [batch * n x 3], consecutive groups of n rows per sample.
  /// Returns [batch * output_points x 3].
  Var forward(Tape& tape, Var points, std::size_t batch);
  /// Per-sample local and global features, [batch x 256] and [batch x 1024].
  struct Features {
    Var local;
    Var global;
  };
  Features encode(Tape& tape, Var points, std::size_t batch);

  const ShapeNetConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();

 private:
  ShapeNetConfig cfg_;
  LinearLayer enc1_a_, enc1_b_, enc2_a_, enc2_b_, dec_a_, dec_b_;
};

/// Dense shape for one pooled grid ([n x 3] normalized matrix): [output_points x 3].
Tensor predict_shape(const PooledPointGrid& grid, ShapePredictor& net);
Tensor predict_shape(const Tensor& pooled_matrix, ShapePredictor& net);

/// mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2.
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

struct FusionConfig {
  std::size_t point_hidden = 54;
  std::size_t channel_hidden = 64;
};

/// Two small MLPs: one over the point axis (fed by the per-row channel max),
/// one over the channel axis (fed by the per-channel row max).
struct FusionParams {
  LinearLayer point_a, point_b;
  LinearLayer channel_a, channel_b;

  static FusionParams init(std::size_t rows, std::size_t channels, const FusionConfig& cfg, Rng& rng);
  std::size_t rows() const { return point_b.out(); }
  std::size_t channels() const { return channel_b.out(); }
  void collect(std::vector<Parameter*>& out);
};

struct FusionOutput {
  Var concatenated;  // [rows x (C2 + C1)]
  Var attention;     // same shape, entries in (0, 1)
  Var enhanced;      // attention * concatenated
};

/// grid_features [rows x C2], structure [1 x C1].
FusionOutput fuse_attention(Tape& tape, Var grid_features, Var structure, FusionParams& params);

// ---------------------------------------------------------------- corpus

/// A synthetic object: world-frame complete surface and its partial view.
struct ShapeSample {
  Box7 box;
  std::vector<Vec3> complete;  // 1024 points
  std::vector<Vec3> partial;
};

struct ShapeCorpusConfig {
  std::size_t points = 1024;
  double min_drop = 0.3;
  double max_drop = 0.7;
};

/// Cuboid and ellipsoid surfaces at random poses; each partial drops one
/// contiguous azimuth wedge (box frame) holding 30-70% of the points.
/// Coordinates are rounded to 32-bit floats so the file round trip is exact.
std::vector<ShapeSample> make_shape_corpus(std::size_t count, std::uint64_t seed,
                                           const ShapeCorpusConfig& cfg = {});
void write_shape_corpus(const std::string& path, const std::vector<ShapeSample>& corpus);
std::vector<ShapeSample> read_shape_corpus(const std::string& path);

/// Network input and target of one sample in box-normalized canonical units.
struct ShapeExample {
  Tensor input;   // [r^3 x 3] pooled partial
  Tensor target;  // [points x 3] complete
};
ShapeExample make_shape_example(const ShapeSample& sample, int resolution);

// ---------------------------------------------------------------- training

struct ShapeTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  int resolution = 12;
  AdamConfig adam{1e-4, 0.9, 0.999, 1e-8, 0.7, 50000};
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
};

struct ShapeTrainResult {
  std::vector<double> loss_curve;  // mean batch chamfer before each update
};

/// Minibatch Adam on mean chamfer. Throws NumericError on a non-finite loss.
ShapeTrainResult train_shape_net(ShapePredictor& net, const std::vector<ShapeExample>& train,
                                 const ShapeTrainConfig& cfg,
                                 const std::function<void(std::size_t, double)>& on_step = {});

/// Mean chamfer of the predictions over a set of examples.
double mean_chamfer(ShapePredictor& net, const std::vector<ShapeExample>& examples, std::size_t batch = 16);

/// Means of consecutive non-overlapping windows; a short tail window is dropped.
std::vector<double> window_means(const std::vector<double>& curve, std::size_t window);

}  // namespace shapedet
