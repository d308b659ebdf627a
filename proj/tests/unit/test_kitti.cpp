#include <fstream>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "shapedet/kitti.hpp"
#include "support.hpp"

using namespace shapedet;
using namespace testing_support;

TEST_CASE("velodyne files") {
  TempDir dir("velo");
  {
    std::ofstream f(dir.str("one.bin"), std::ios::binary);
    const float v[4] = {1, 2, 3, 0.5f};
    f.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  const auto one = read_velodyne(dir.str("one.bin"));
  REQUIRE(one.size() == 1);
  CHECK(one[0] == LidarPoint{1, 2, 3, 0.5});
  { std::ofstream f(dir.str("empty.bin"), std::ios::binary); }
  CHECK(read_velodyne(dir.str("empty.bin")).empty());
  {
    std::ofstream f(dir.str("bad.bin"), std::ios::binary);
    f << "abc";
  }
  CHECK_THROWS_AS(read_velodyne(dir.str("bad.bin")), FormatError);
  Rng rng(1);
  PointCloud pts(1000);
  for (auto& p : pts)
    p = {static_cast<float>(rng.uniform(-50, 50)), static_cast<float>(rng.uniform(-50, 50)),
         static_cast<float>(rng.uniform(-3, 3)), static_cast<float>(rng.uniform())};
  write_velodyne(dir.str("rt.bin"), pts);
  CHECK(read_velodyne(dir.str("rt.bin")) == pts);
}

TEST_CASE("labels and calibration") {
  const auto labels = parse_labels(
      "Car 0.00 0 -1.5 100 100 200 200 1.5 1.6 3.9 1.0 1.7 20.0 0.1\n"
      "DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n"
      "Pedestrian 0.40 2 0.2 1 1 2 2 1.7 0.6 0.8 -3 1.7 10 0.0 0.93\n"
      "Car 0.10 3 0.0 1 1 2 2 1.5 1.6 3.9 1 1.7 30 0.0\n");
  REQUIRE(labels.size() == 4);
  CHECK(label_difficulty(labels[0]) == Difficulty::kEasy);
  CHECK(label_difficulty(labels[1]) == Difficulty::kIgnored);
  CHECK(label_difficulty(labels[2]) == Difficulty::kHard);
  CHECK(label_difficulty(labels[3]) == Difficulty::kIgnored);  // fully occluded
  CHECK(labels[2].score.has_value());
  CHECK(labels_to_objects(labels, Calibration::identity()).size() == 3);
  CHECK_THROWS_AS(parse_labels("Car 1 2\n"), FormatError);

  KittiLabel origin;
  origin.type = "Car";
  origin.h = 1.5;
  origin.w = 1.6;
  origin.l = 3.9;
  const Box7 b = camera_to_lidar(origin, Calibration::identity());
  // Identity calibration: the rectified frame's axes are taken as-is, so the
  // only change is the bottom-to-centre lift.
  CHECK(b.cz == doctest::Approx(origin.h / 2));

  const Calibration calib = parse_calib(
      "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP1: 1 0 0 0 0 1 0 0 0 0 1 0\n"
      "P2: 721.5 0 609.5 44.8 0 721.5 172.8 0.2 0 0 1 0.003\nP3: 1 0 0 0 0 1 0 0 0 0 1 0\n"
      "R0_rect: 0.9999 0.0098 -0.0074 -0.0098 0.9999 -0.0043 0.0074 0.0042 1.0\n"
      "Tr_velo_to_cam: 0.0075 -0.9999 -0.0006 -0.0040 0.0148 0.0007 -0.9999 -0.0763 0.9999 0.0075 0.0148 -0.2718\n"
      "Tr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    KittiLabel l;
    l.type = "Car";
    l.h = rng.uniform(1, 2);
    l.w = rng.uniform(1, 2);
    l.l = rng.uniform(3, 5);
    l.x = rng.uniform(-10, 10);
    l.y = rng.uniform(0, 2);
    l.z = rng.uniform(5, 50);
    l.rotation_y = rng.uniform(-M_PI, M_PI);
    KittiLabel back = l;
    lidar_to_camera(camera_to_lidar(l, calib), calib, back);
    CHECK(std::abs(back.x - l.x) < 1e-9);
    CHECK(std::abs(back.y - l.y) < 1e-9);
    CHECK(std::abs(back.z - l.z) < 1e-9);
    CHECK(std::abs(normalize_angle(back.rotation_y - l.rotation_y)) < 1e-9);
    const Vec3 p{rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9)};
    CHECK((calib.rect_to_lidar(calib.lidar_to_rect(p)) - p).norm() < 1e-9);
  }
  const auto round = parse_labels(format_label(labels[2]));
  CHECK(round[0].rotation_y == labels[2].rotation_y);
}

TEST_CASE("scene write and load") {
  TempDir dir("scene");
  const Scene s = make_synthetic_scene("000003", 5);
  CHECK(s.gt.size() == 3);
  for (std::size_t i = 0; i < s.gt.size(); ++i)
    for (std::size_t j = i + 1; j < s.gt.size(); ++j) CHECK(bev_iou(s.gt[i].box, s.gt[j].box) == 0.0);
  write_scene(dir.str(), s);
  const Scene back = load_scene(dir.str(), "000003");
  CHECK(back.points.size() == s.points.size());
  REQUIRE(back.gt.size() == s.gt.size());
  for (std::size_t i = 0; i < s.gt.size(); ++i) {
    CHECK(iou3d(back.gt[i].box, s.gt[i].box) > 0.999);
    CHECK(back.gt[i].difficulty == s.gt[i].difficulty);
  }
}

namespace {

std::vector<std::size_t> fg_counts(const Scene& s) {
  std::vector<std::size_t> out;
  for (const auto& g : s.gt) {
    const auto m = points_in_box(s.points, g.box);
    out.push_back(std::count(m.begin(), m.end(), true));
  }
  return out;
}

}  // namespace

TEST_CASE("augmentation") {
  const Scene s = make_synthetic_scene("a", 6);
  Scene same = s;
  apply_augmentation(same, {false, 0.0, 1.0});
  CHECK(same.points == s.points);
  Scene twice = s;
  apply_augmentation(twice, {true, 0.0, 1.0});
  apply_augmentation(twice, {true, 0.0, 1.0});
  for (std::size_t i = 0; i < s.points.size(); ++i) CHECK(std::abs(twice.points[i].y - s.points[i].y) < 1e-12);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Scene a = s;
    augment(a, rng);
    CHECK(fg_counts(a) == fg_counts(s));
  }
  Scene x = s, y = s;
  Rng r1(9), r2(9);
  augment(x, r1);
  augment(y, r2);
  CHECK(x.points == y.points);
}

TEST_CASE("ground truth database and sampling") {
  TempDir dir("db");
  std::vector<Scene> scenes;
  for (int i = 0; i < 4; ++i) scenes.push_back(make_synthetic_scene(std::to_string(i), 20 + i));
  Scene sparse;
  sparse.id = "sparse";
  sparse.gt.push_back({"Car", {10, 0, -1, 4, 2, 1.5, 0}, Difficulty::kEasy});
  sparse.points = {{10, 0, -1, 0}, {10.5, 0, -1, 0}, {9.5, 0, -1, 0}};
  scenes.push_back(sparse);
  const auto db = build_gt_database(scenes, 5);
  CHECK(db.entries.size() == 12);
  for (const auto& e : db.entries)
    for (const auto& p : e.points) CHECK(oracle::inside(Box7{0, 0, 0, e.box.l, e.box.w, e.box.h, 0}, p.x, p.y, p.z));
  write_gt_database(dir.str("db"), db);
  const auto back = read_gt_database(dir.str("db"));
  REQUIRE(back.entries.size() == db.entries.size());
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    CHECK(back.entries[i].points == db.entries[i].points);
    CHECK(back.entries[i].box.as_array() == db.entries[i].box.as_array());
    CHECK(back.entries[i].label == db.entries[i].label);
  }

  Scene empty;
  GtDatabase one;
  one.entries.push_back(db.entries[0]);
  Rng rng(4);
  const auto r = gt_sample(empty, one, rng, 1);
  CHECK(r.accepted == 1);
  CHECK(empty.gt.size() == 1);

  Scene blocked;
  blocked.gt.push_back({"Car", db.entries[0].box, Difficulty::kEasy});
  const auto rb = gt_sample(blocked, one, rng, 3);
  CHECK(rb.accepted == 0);

  for (int i = 0; i < 30; ++i) {
    Scene s = scenes[i % 4];
    const auto res = gt_sample(s, db, rng, 15);
    CHECK(res.accepted <= 15);
    for (std::size_t a = 0; a < s.gt.size(); ++a)
      for (std::size_t b = a + 1; b < s.gt.size(); ++b) CHECK(bev_iou(s.gt[a].box, s.gt[b].box) == 0.0);
  }
}
