#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference in
// namespace `scalar`; wider variants live in their own translation units and are
// chosen once at startup from the CPU feature flags. The variants must agree
// with the reference: distance kernels bit-for-bit, GEMM to rounding.

#include <cstddef>
#include <string_view>

namespace shapedet::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  /// C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// out[i] = |p_i - q|^2 over structure-of-arrays coordinates.
  void (*sq_dist)(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
                  double qy, double qz, double* out);
  /// Index of the nearest point (lowest index on ties); writes its squared distance.
  std::size_t (*nearest)(const double* xs, const double* ys, const double* zs, std::size_t n,
                         double qx, double qy, double qz, double* min_sq);
  /// dist[i] = min(dist[i], |p_i - q|^2); returns argmax of the updated dist
  /// (lowest index on ties). The farthest-point-sampling inner step.
  std::size_t (*fps_update)(const double* xs, const double* ys, const double* zs, std::size_t n,
                            double qx, double qy, double qz, double* dist);
};

/// Best ISA supported by this CPU and build.
Isa detected_isa();
/// ISA currently used by `kernels()`. Defaults to `detected_isa()`, or scalar when
/// the SHAPEDET_SIMD environment variable is set to "scalar".
Isa active_isa();
/// Forces an ISA; throws DomainError if unsupported on this machine.
void set_active_isa(Isa isa);

const KernelTable& kernels();
const KernelTable& kernels(Isa isa);

namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
             double qy, double qz, double* out);
std::size_t nearest(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
                    double qy, double qz, double* min_sq);
std::size_t fps_update(const double* xs, const double* ys, const double* zs, std::size_t n,
                       double qx, double qy, double qz, double* dist);
}  // namespace scalar

namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void sq_dist(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
             double qy, double qz, double* out);
std::size_t nearest(const double* xs, const double* ys, const double* zs, std::size_t n, double qx,
                    double qy, double qz, double* min_sq);
std::size_t fps_update(const double* xs, const double* ys, const double* zs, std::size_t n,
                       double qx, double qy, double qz, double* dist);
}  // namespace avx2

}  // namespace shapedet::simd
