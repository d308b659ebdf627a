#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "shapedet/geometry.hpp"
#include "shapedet/tensor.hpp"

namespace testing_support {

using namespace shapedet;

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform entries kept at least `gap` away from zero (keeps ReLU kinks out of FD stencils).
inline Tensor away_from_zero(std::size_t r, std::size_t c, Rng& rng, double gap = 0.05) {
  Tensor t({r, c});
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

/// sum(x * R) for a fixed random R, so every output entry gets a distinct weight.
inline Var weighted_sum(Tape& t, Var x, std::uint64_t seed) {
  const Tensor& v = t.value(x);
  Rng rng(seed);
  Tensor w(v.shape());
  for (auto& e : w.data()) e = rng.uniform(0.5, 1.5);
  return t.sum(t.mul(x, t.constant(std::move(w))));
}

inline Box7 random_box(Rng& rng, double span = 20.0) {
  return {rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-2.0, 1.0),
          rng.uniform(0.5, 5.0),    rng.uniform(0.5, 3.0),    rng.uniform(0.5, 2.5),
          rng.uniform(-M_PI, M_PI)};
}

inline std::vector<Vec3> random_points(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<Vec3> p(n);
  for (auto& v : p) v = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return p;
}

/// Fresh directory under the system temp path, removed by the destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("shapedet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf = "") const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
