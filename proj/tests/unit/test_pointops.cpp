#include <set>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "shapedet/pointops.hpp"
#include "support.hpp"

using namespace shapedet;
using namespace testing_support;

TEST_CASE("farthest point sampling examples") {
  std::vector<Vec3> line;
  for (int i = 0; i < 10; ++i) line.push_back({static_cast<double>(i), 0, 0});
  CHECK(farthest_point_sample(line, 2) == std::vector<std::size_t>{0, 9});
  CHECK(farthest_point_sample(line, 3) == std::vector<std::size_t>{0, 9, 4});
  const auto all = farthest_point_sample(line, 10);
  CHECK(all.size() == 10);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 10);
  CHECK(all == farthest_point_sample(line, 10));
  CHECK_THROWS_AS(farthest_point_sample(line, 11), DomainError);
  CHECK(farthest_point_sample_padded(line, 12).size() == 12);
}

TEST_CASE("FPS matches brute force and min distance shrinks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.index(127);
    const auto pts = random_points(n, rng);
    const std::size_t k = 1 + rng.index(n);
    const auto got = farthest_point_sample(pts, k, seed % n);
    CHECK(got == oracle::fps(pts, k, seed % n));
    double prev = 1e300;
    for (std::size_t m = 2; m <= got.size(); ++m) {
      double mind = 1e300;
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) mind = std::min(mind, squared_distance(pts[got[a]], pts[got[b]]));
      CHECK(mind <= prev);
      prev = mind;
    }
  }
}

TEST_CASE("ball query examples") {
  const std::vector<Vec3> c{{0, 0, 0}};
  const std::vector<Vec3> two{{0.5, 0, 0}, {2, 0, 0}};
  auto r = ball_query(c, two, 1.0, 2);
  CHECK(std::vector<std::size_t>(r.row(0).begin(), r.row(0).end()) == std::vector<std::size_t>{0, 0});
  const std::vector<Vec3> five{{0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}, {0.2, 0, 0}, {0, 0.2, 0}};
  r = ball_query(c, five, 1.0, 3);
  CHECK(std::vector<std::size_t>(r.row(0).begin(), r.row(0).end()) == std::vector<std::size_t>{0, 1, 2});
  const std::vector<Vec3> far{{5, 0, 0}, {3, 0, 0}};
  r = ball_query(c, far, 1.0, 4);
  CHECK(r.fallback[0]);
  CHECK(std::vector<std::size_t>(r.row(0).begin(), r.row(0).end()) == std::vector<std::size_t>{1, 1, 1, 1});
}

TEST_CASE("ball query matches brute force") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(100 + seed);
    const auto pts = random_points(1 + rng.index(128), rng);
    const auto centers = random_points(1 + rng.index(32), rng, -3, 3);
    const double radius = rng.uniform(0.1, 2.0);
    const std::size_t t = 1 + rng.index(16);
    const auto got = ball_query(centers, pts, radius, t);
    const auto ref = oracle::ball_query(centers, pts, radius, t);
    REQUIRE(got.rows() == centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) {
      CHECK(std::vector<std::size_t>(got.row(i).begin(), got.row(i).end()) == ref.rows[i]);
      CHECK(got.fallback[i] == ref.fallback[i]);
      if (!got.fallback[i])
        for (auto j : got.row(i)) CHECK(squared_distance(centers[i], pts[j]) <= radius * radius);
    }
  }
}

TEST_CASE("three nearest neighbour interpolation") {
  const std::vector<Vec3> src{{0, 0, 0}, {2, 0, 0}, {50, 0, 0}};
  const Tensor feats = Tensor::matrix(3, 2, {1, 10, 3, 20, 100, 100});
  const std::vector<Vec3> q{{0, 0, 0}, {1, 0, 0}};
  const Tensor out = three_nn_interpolate(q, src, feats);
  CHECK(std::abs(out.at(0, 0) - 1.0) < 1e-6);
  // weights 1/1, 1/1, 1/49 (normalized)
  CHECK(out.at(1, 0) == doctest::Approx((1.0 + 3.0 + 100.0 / 49) / (2.0 + 1.0 / 49)).epsilon(1e-6));
  const Tensor flat = three_nn_interpolate(q, src, Tensor({3, 2}, 4.0));
  for (double v : flat.data()) CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
  Rng rng(7);
  const auto s = random_points(40, rng);
  const PointsSoa soa(s);
  for (int i = 0; i < 100; ++i) {
    const auto nn = three_nn({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)}, soa);
    CHECK(nn.count == 3);
    CHECK(std::abs(nn.weight[0] + nn.weight[1] + nn.weight[2] - 1.0) < 1e-12);
    for (double w : nn.weight) CHECK(w >= 0.0);
  }
}

TEST_CASE("roi aware pooling examples") {
  const Box7 box{10, 5, 0, 4, 2, 2, 0.3};
  const std::vector<Vec3> center{box.center()};
  const auto even = roi_aware_pool(center, box, 4);
  CHECK(even.counts[PooledPointGrid::flat_index(1, 1, 1, 4)] == 1);
  const auto odd = roi_aware_pool(center, box, 3);
  CHECK(odd.counts[PooledPointGrid::flat_index(1, 1, 1, 3)] == 1);
  const std::vector<Vec3> outside{box.center() + Vec3{0, 0, 5}};
  const auto none = roi_aware_pool(outside, box, 3);
  for (auto c : none.counts) CHECK(c == 0);
}

TEST_CASE("roi aware pooling matches brute-force bucketing") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(200 + seed);
    const Box7 box = random_box(rng, 1.0);
    const auto pts = random_points(1 + rng.index(128), rng, -3, 3);
    const int r = 1 + static_cast<int>(rng.index(8));
    const auto got = roi_aware_pool(pts, box, r);
    std::vector<Vec3> means;
    std::vector<std::size_t> counts;
    oracle::roi_pool(pts, box, r, means, counts);
    CHECK(got.counts == counts);
    CHECK(got.cells == means);
    // Means sit inside their cells.
    for (int ix = 0; ix < r; ++ix)
      for (int iy = 0; iy < r; ++iy)
        for (int iz = 0; iz < r; ++iz) {
          const auto i = PooledPointGrid::flat_index(ix, iy, iz, r);
          if (!got.occupied(i)) continue;
          CHECK(got.cells[i].x >= (static_cast<double>(ix) / r - 0.5) * box.l - 1e-12);
          CHECK(got.cells[i].x <= (static_cast<double>(ix + 1) / r - 0.5) * box.l + 1e-12);
          CHECK(got.cells[i].z >= (static_cast<double>(iz) / r - 0.5) * box.h - 1e-12);
        }
  }
}

TEST_CASE("roi aware pooling is rigid-motion invariant") {
  Rng rng(300);
  const Box7 box{1, 2, 0, 4, 2, 1.5, 0.2};
  const auto pts = random_points(300, rng, -2, 2);
  const double t = 0.9;
  const Vec3 d{5, -3, 1};
  auto move = [&](const Vec3& p) {
    return Vec3{std::cos(t) * p.x - std::sin(t) * p.y, std::sin(t) * p.x + std::cos(t) * p.y, p.z} + d;
  };
  std::vector<Vec3> moved;
  for (const auto& p : pts) moved.push_back(move(p));
  Box7 mb = box;
  const Vec3 c = move(box.center());
  mb.cx = c.x;
  mb.cy = c.y;
  mb.cz = c.z;
  mb.yaw += t;
  const auto a = roi_aware_pool(pts, box, 5), b = roi_aware_pool(moved, mb, 5);
  CHECK(a.counts == b.counts);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a.cells[i] - b.cells[i]).norm() < 1e-9);
}

TEST_CASE("roi grid neighbours match brute force") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(400 + seed);
    const Box7 box = random_box(rng, 1.0);
    const auto kp = random_points(1 + rng.index(128), rng, -3, 3);
    const double radius = rng.uniform(0.3, 1.6);
    const auto got = roi_grid_neighbors(kp, box, 6, radius, 16);
    const auto ref = oracle::ball_query(oracle::grid_points(box, 6), kp, radius, 16);
    REQUIRE(got.rows() == 216);
    for (std::size_t i = 0; i < 216; ++i) {
      CHECK(std::vector<std::size_t>(got.row(i).begin(), got.row(i).end()) == ref.rows[i]);
      CHECK(got.fallback[i] == ref.fallback[i]);
    }
  }
}

TEST_CASE("roi grid pooling") {
  Rng rng(500);
  RoiGridConfig cfg;
  cfg.widths = {8, 8};
  auto params = RoiGridParams::init(cfg, 4, rng);
  const Box7 box{0, 0, 0, 4, 2, 1.5, 0.4};
  const auto kp = random_points(50, rng, -2, 2);
  const Tensor feats = random_tensor(50, 4, rng);
  Tape t;
  const auto out = roi_grid_pool(t, kp, feats, box, cfg, params);
  CHECK(t.value(out.features).shape() == std::vector<std::size_t>{216, cfg.channels()});
  // Joint translation leaves features unchanged.
  std::vector<Vec3> moved;
  for (const auto& p : kp) moved.push_back(p + Vec3{7, -3, 2});
  Box7 mb = box;
  mb.cx += 7;
  mb.cy -= 3;
  mb.cz += 2;
  Tape t2;
  const auto out2 = roi_grid_pool(t2, moved, feats, mb, cfg, params);
  for (std::size_t i = 0; i < t.value(out.features).size(); ++i)
    CHECK(std::abs(t.value(out.features)[i] - t2.value(out2.features)[i]) < 1e-9);
  Tape t3;
  const auto empty = roi_grid_pool(t3, {}, Tensor(), box, cfg, params);
  CHECK(empty.no_keypoints);
  // One keypoint inside the box is every grid point's neighbour at a large radius.
  const std::vector<Vec3> one{{0.1, 0.1, 0}};
  const auto nb = roi_grid_neighbors(one, box, 6, 10.0, 4);
  for (std::size_t i = 0; i < nb.rows(); ++i) CHECK(nb.row(i)[0] == 0);
}

TEST_CASE("multi-scale structure feature") {
  Rng rng(600);
  MsgConfig cfg;
  cfg.centers = 16;
  cfg.hidden = {8};
  cfg.channels = 12;
  auto params = MsgParams::init(cfg, rng);
  const Tensor shape = random_tensor(64, 3, rng, -0.5, 0.5);
  Tape t;
  Var f = msg_extract(t, t.constant(shape), cfg, params);
  CHECK(t.value(f).shape() == std::vector<std::size_t>{1, 12});
  std::vector<std::size_t> perm(64);
  for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
  shuffle(perm, rng);
  Tape t2;
  Var g = msg_extract(t2, t2.gather_rows(t2.constant(shape), perm), cfg, params);
  CHECK(t.value(f) == t2.value(g));
  for (double v : t.value(f).data()) CHECK(std::isfinite(v));
}
