#include "fmamba/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace fmamba::simd {

#if !defined(FMAMBA_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(FMAMBA_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(FMAMBA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* pick_default() {
  if (const char* env = std::getenv("FMAMBA_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return &scalar_table();
    if (v == "avx2" && backend_available(Backend::Avx2)) return avx2_table();
    if (v == "neon" && backend_available(Backend::Neon)) return neon_table();
  }
  if (backend_available(Backend::Avx2)) return avx2_table();
  if (backend_available(Backend::Neon)) return neon_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> t{pick_default()};
  return t;
}

}  // namespace

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
      return avx2_table() != nullptr && cpu_has_avx2();
    case Backend::Neon:
      return neon_table() != nullptr;
  }
  return false;
}

const KernelTable& table(Backend backend) {
  if (!backend_available(backend)) {
    throw std::runtime_error("SIMD backend not available: " + std::string(backend_name(backend)));
  }
  switch (backend) {
    case Backend::Avx2:
      return *avx2_table();
    case Backend::Neon:
      return *neon_table();
    case Backend::Scalar:
      break;
  }
  return scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Backend active_backend() { return active().backend; }

void set_backend(Backend backend) { current().store(&table(backend), std::memory_order_relaxed); }

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace fmamba::simd
