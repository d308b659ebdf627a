#pragma once

// KITTI object-benchmark files, conversion into the LiDAR-frame box convention,
// and the training-time augmentations.

#include <optional>
#include <string>
#include <vector>

#include "shapedet/geometry.hpp"

namespace shapedet {

enum class Difficulty { kEasy, kModerate, kHard, kIgnored };
std::string difficulty_name(Difficulty d);
Difficulty parse_difficulty(const std::string& name);

/// One label line: type, truncation, occlusion, alpha, 2D box, (h, w, l),
/// bottom-centre location in the rectified camera frame, rotation_y.
struct KittiLabel {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};
  double h = 0.0, w = 0.0, l = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double rotation_y = 0.0;
  std::optional<double> score;
};

struct Calibration {
  std::array<double, 12> p2{};  // left colour camera projection, row-major 3x4
  Mat3 r0_rect = identity3();
  Mat3 velo_to_cam_rot = identity3();
  Vec3 velo_to_cam_trans{};

  static Calibration identity();
  Vec3 lidar_to_rect(const Vec3& p) const;
  Vec3 rect_to_lidar(const Vec3& p) const;
};

struct GtObject {
  std::string label;
  Box7 box;
  Difficulty difficulty = Difficulty::kModerate;
};

struct Scene {
  std::string id;
  PointCloud points;
  std::vector<GtObject> gt;
  Calibration calib = Calibration::identity();
};

/// Little-endian float32 quadruples. Throws FormatError when the size is not a
/// multiple of 16 bytes.
PointCloud read_velodyne(const std::string& path);
void write_velodyne(const std::string& path, const PointCloud& points);

std::vector<KittiLabel> parse_labels(const std::string& text, const std::string& source = "label");
std::vector<KittiLabel> read_label(const std::string& path);
std::string format_label(const KittiLabel& label);
Calibration parse_calib(const std::string& text, const std::string& source = "calib");
Calibration read_calib(const std::string& path);

/// Occlusion/truncation part of the KITTI difficulty rules (no image heights):
/// easy (occ 0, trunc <= 0.15), moderate (occ <= 1, trunc <= 0.3),
/// hard (occ <= 2, trunc <= 0.5), otherwise ignored. DontCare is ignored.
Difficulty label_difficulty(const KittiLabel& label);

Box7 camera_to_lidar(const KittiLabel& label, const Calibration& calib);
/// Fills the 3D fields (h, w, l, x, y, z, rotation_y) of a label from a box.
void lidar_to_camera(const Box7& box, const Calibration& calib, KittiLabel& label);

/// <root>/velodyne/<id>.bin, <root>/label_2/<id>.txt, <root>/calib/<id>.txt.
/// Missing label or calib files leave the scene without gt / with identity calib.
Scene load_scene(const std::string& root, const std::string& id);
std::vector<GtObject> labels_to_objects(const std::vector<KittiLabel>& labels, const Calibration& calib);
/// Writes the scene in the layout load_scene reads (identity calibration).
void write_scene(const std::string& root, const Scene& scene);

struct SyntheticSceneConfig {
  std::size_t objects = 3;
  std::size_t points_per_object = 400;
  std::size_t ground_points = 2000;
  double x_range[2] = {5.0, 60.0};
  double y_range[2] = {-25.0, 25.0};
};

/// Car-sized boxes resting on a flat ground (z = -1.73), surface-sampled, with no
/// two footprints overlapping, plus sparse ground returns.
Scene make_synthetic_scene(const std::string& id, std::uint64_t seed, const SyntheticSceneConfig& cfg = {});

// ---------------------------------------------------------------- augmentation

struct AugmentConfig {
  double flip_probability = 0.5;
  double max_rotation = M_PI / 4;
  double min_scale = 0.95;
  double max_scale = 1.05;
};

struct AugmentDraw {
  bool flip = false;
  double rotation = 0.0;
  double scale = 1.0;
};

/// Draws in a fixed order: flip, rotation, scale.
AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& cfg = {});
/// Mirror y, then rotate about +z, then scale, for points and boxes alike.
void apply_augmentation(Scene& scene, const AugmentDraw& draw);
AugmentDraw augment(Scene& scene, Rng& rng, const AugmentConfig& cfg = {});

struct GtDatabaseEntry {
  std::string label;
  Difficulty difficulty = Difficulty::kModerate;
  Box7 box;
  PointCloud points;  // canonical frame of `box`
};

struct GtDatabase {
  std::vector<GtDatabaseEntry> entries;
};

/// Crops every non-ignored gt with at least `min_points` points.
GtDatabase build_gt_database(const std::vector<Scene>& scenes, std::size_t min_points = 5, std::size_t threads = 1);
/// Writes <prefix>.bin (point-set container) and <prefix>.txt (index).
void write_gt_database(const std::string& prefix, const GtDatabase& db);
GtDatabase read_gt_database(const std::string& prefix);

struct GtSampleResult {
  std::size_t attempted = 0;
  std::size_t accepted = 0;
};

/// Pastes up to `max_samples` random crops at their stored poses, rejecting any
/// whose footprint overlaps an existing or already pasted box.
GtSampleResult gt_sample(Scene& scene, const GtDatabase& db, Rng& rng, std::size_t max_samples = 15);

}  // namespace shapedet
