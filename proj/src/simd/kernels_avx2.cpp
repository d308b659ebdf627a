// AVX2 + FMA variants. This file is compiled with -mavx2 -mfma and is only
// reached through the dispatch table after the runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <limits>

#include "shapedet/simd.hpp"

namespace shapedet::simd::avx2 {

namespace {

constexpr std::size_t kLanes = 4;

// 4 x 8 register block: C[i..i+4, j..j+8] += A[i..i+4, 0..k] * B[0..k, j..j+8]
inline void block_4x8(std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  auto store = [](double* dst, __m256d lo, __m256d hi) {
    _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), lo));
    _mm256_storeu_pd(dst + 4, _mm256_add_pd(_mm256_loadu_pd(dst + 4), hi));
  };
  store(c, c00, c01);
  store(c + ldc, c10, c11);
  store(c + 2 * ldc, c20, c21);
  store(c + 3 * ldc, c30, c31);
}

inline void block_1x8(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c) {
  __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + 4), c1);
  }
  _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c0));
  _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), c1));
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline __m256d sq_dist4(const double* xs, const double* ys, const double* zs, std::size_t i,
                        __m256d qx, __m256d qy, __m256d qz) {
  const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), qx);
  const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), qy);
  const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(zs + i), qz);
  // Same association as the scalar reference: (dx^2 + dy^2) + dz^2, no FMA.
  return _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
                       _mm256_mul_pd(dz, dz));
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t kBlockK = 256;
  const std::size_t n8 = n - n % 8;
  const std::size_t m4 = m - m % 4;
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t kb = std::min(kBlockK, k - p0);
    for (std::size_t j = 0; j < n8; j += 8) {
      const double* bp = b + p0 * ldb + j;
      for (std::size_t i = 0; i < m4; i += 4) {
        block_4x8(kb, a + i * lda + p0, lda, bp, ldb, c + i * ldc + j, ldc);
      }
      for (std::size_t i = m4; i < m; ++i) {
        block_1x8(kb, a + i * lda + p0, bp, ldb, c + i * ldc + j);
      }
    }
    if (n8 < n) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = p0; p < p0 + kb; ++p) {
          const double aip = a[i * lda + p];
          for (std::size_t j = n8; j < n; ++j) c[i * ldc + j] += aip * b[p * ldb + j];
        }
      }
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    // Separate multiply and add: bit-identical to the scalar loop.
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(av, _mm256_loadu_pd(x + i)), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
             double qy, double qz, double* out) {
  const __m256d vx = _mm256_set1_pd(qx), vy = _mm256_set1_pd(qy), vz = _mm256_set1_pd(qz);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, sq_dist4(xs, ys, zs, i, vx, vy, vz));
  for (; i < n; ++i) {
    const double dx = xs[i] - qx, dy = ys[i] - qy, dz = zs[i] - qz;
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

std::size_t nearest(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
                    double qy, double qz, double* min_sq) {
  const __m256d vx = _mm256_set1_pd(qx), vy = _mm256_set1_pd(qy), vz = _mm256_set1_pd(qz);
  __m256d best = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  __m256d best_idx = _mm256_setzero_pd();
  __m256d idx = _mm256_setr_pd(0.0, 1.0, 2.0, 3.0);
  const __m256d step = _mm256_set1_pd(4.0);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d d = sq_dist4(xs, ys, zs, i, vx, vy, vz);
    const __m256d lt = _mm256_cmp_pd(d, best, _CMP_LT_OQ);
    best = _mm256_blendv_pd(best, d, lt);
    best_idx = _mm256_blendv_pd(best_idx, idx, lt);
    idx = _mm256_add_pd(idx, step);
  }
  alignas(32) double bv[4], bi[4];
  _mm256_store_pd(bv, best);
  _mm256_store_pd(bi, best_idx);
  double out = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (int l = 0; l < 4; ++l) {
    const auto li = static_cast<std::size_t>(bi[l]);
    if (bv[l] < out || (bv[l] == out && li < arg)) {
      out = bv[l];
      arg = li;
    }
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - qx, dy = ys[i] - qy, dz = zs[i] - qz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < out) {
      out = d;
      arg = i;
    }
  }
  if (min_sq != nullptr) *min_sq = out;
  return arg;
}

std::size_t fps_update(const double* xs, const double* ys, const double* zs, std::size_t n,
                       double qx, double qy, double qz, double* dist) {
  const __m256d vx = _mm256_set1_pd(qx), vy = _mm256_set1_pd(qy), vz = _mm256_set1_pd(qz);
  __m256d best = _mm256_set1_pd(-1.0);
  __m256d best_idx = _mm256_setzero_pd();
  __m256d idx = _mm256_setr_pd(0.0, 1.0, 2.0, 3.0);
  const __m256d step = _mm256_set1_pd(4.0);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d d = sq_dist4(xs, ys, zs, i, vx, vy, vz);
    const __m256d cur = _mm256_loadu_pd(dist + i);
    const __m256d upd = _mm256_blendv_pd(cur, d, _mm256_cmp_pd(d, cur, _CMP_LT_OQ));
    _mm256_storeu_pd(dist + i, upd);
    const __m256d gt = _mm256_cmp_pd(upd, best, _CMP_GT_OQ);
    best = _mm256_blendv_pd(best, upd, gt);
    best_idx = _mm256_blendv_pd(best_idx, idx, gt);
    idx = _mm256_add_pd(idx, step);
  }
  alignas(32) double bv[4], bi[4];
  _mm256_store_pd(bv, best);
  _mm256_store_pd(bi, best_idx);
  double out = -1.0;
  std::size_t arg = 0;
  for (int l = 0; l < 4; ++l) {
    const auto li = static_cast<std::size_t>(bi[l]);
    if (bv[l] > out || (bv[l] == out && li < arg)) {
      out = bv[l];
      arg = li;
    }
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - qx, dy = ys[i] - qy, dz = zs[i] - qz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < dist[i]) dist[i] = d;
    if (dist[i] > out) {
      out = dist[i];
      arg = i;
    }
  }
  return arg;
}

}  // namespace shapedet::simd::avx2
