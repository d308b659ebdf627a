#include "shapedet/simd.hpp"

#include <limits>

namespace shapedet::simd::scalar {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
             double qy, double qz, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double dz = zs[i] - qz;
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

std::size_t nearest(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
                    double qy, double qz, double* min_sq) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double dz = zs[i] - qz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  if (min_sq != nullptr) *min_sq = best;
  return arg;
}

std::size_t fps_update(const double* xs, const double* ys, const double* zs, std::size_t n,
                       double qx, double qy, double qz, double* dist) {
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double dz = zs[i] - qz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < dist[i]) dist[i] = d;
    if (dist[i] > best) {
      best = dist[i];
      arg = i;
    }
  }
  return arg;
}

}  // namespace shapedet::simd::scalar
