#include <atomic>
#include <cstdlib>
#include <string>

#include "shapedet/common.hpp"
#include "shapedet/simd.hpp"

namespace shapedet::simd {

namespace {

constexpr KernelTable kScalarTable{scalar::gemm_nn, scalar::dot,     scalar::axpy,
                                   scalar::sq_dist, scalar::nearest, scalar::fps_update};

#ifdef SHAPEDET_HAVE_AVX2_TU
constexpr KernelTable kAvx2Table{avx2::gemm_nn, avx2::dot,     avx2::axpy,
                                 avx2::sq_dist, avx2::nearest, avx2::fps_update};
#endif

bool cpu_has_avx2() {
#if defined(SHAPEDET_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("SHAPEDET_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return Isa::kScalar;
  }
  return detected_isa();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) {
    throw DomainError("AVX2 kernels are not available on this machine");
  }
  active().store(isa, std::memory_order_relaxed);
}

const KernelTable& kernels(Isa isa) {
#ifdef SHAPEDET_HAVE_AVX2_TU
  if (isa == Isa::kAvx2) {
    if (detected_isa() != Isa::kAvx2) throw DomainError("AVX2 kernels are not available");
    return kAvx2Table;
  }
#endif
  (void)isa;
  return kScalarTable;
}

const KernelTable& kernels() { return kernels(active_isa()); }

}  // namespace shapedet::simd
