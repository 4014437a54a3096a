#pragma once
// Data-parallel inner loops behind the tensor core.
//
// Every backend computes each output element with the same sequence of
// IEEE operations as the scalar reference, so backends agree bit-for-bit.
// Reductions use four interleaved accumulators combined as
// ((a0 + a1) + (a2 + a3)) followed by the sequential tail; the scalar
// reference follows that exact order.

#include <cstddef>
#include <string_view>

namespace fmamba::simd {

enum class Backend { Scalar, Avx2, Neon };

/// Arguments of one selective-scan forward sweep.
///
/// Layouts: u, delta, y are [L, channels]; a_t is [state, channels]
/// (transposed so consecutive channels are contiguous); b, c are [L, state];
/// d is [channels]. h_all, when non-null, receives the state after every
/// token as [L, state, channels]. The state resets to zero at every
/// multiple of `segment` tokens.
struct ScanForwardArgs {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  std::size_t segment = 0;
  const double* u = nullptr;
  const double* delta = nullptr;
  const double* a_t = nullptr;
  const double* b = nullptr;
  const double* c = nullptr;
  const double* d = nullptr;
  double* y = nullptr;
  double* h_all = nullptr;
};

/// Adjoint of ScanForwardArgs. All gradient outputs are accumulated into.
struct ScanBackwardArgs {
  ScanForwardArgs fwd;
  const double* grad_y = nullptr;
  const double* h_all = nullptr;
  double* grad_u = nullptr;
  double* grad_delta = nullptr;
  double* grad_a_t = nullptr;
  double* grad_b = nullptr;
  double* grad_c = nullptr;
  double* grad_d = nullptr;
};

struct KernelTable {
  Backend backend;
  std::string_view name;

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*div)(const double* a, const double* b, double* out, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += alpha * x[i * stride]
  void (*axpy_strided)(double alpha, const double* x, std::size_t stride, double* y, std::size_t n);
  // y[i] = alpha * x[i] + beta
  void (*affine)(double alpha, double beta, const double* x, double* y, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  void (*exp)(const double* x, double* out, std::size_t n);
  void (*sigmoid)(const double* x, double* out, std::size_t n);
  void (*silu)(const double* x, double* out, std::size_t n);
  void (*leaky_relu)(double slope, const double* x, double* out, std::size_t n);

  void (*scan_forward)(const ScanForwardArgs& args);
  void (*scan_backward)(const ScanBackwardArgs& args);
};

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();  // nullptr when not compiled in

/// True when the backend is compiled in and the running CPU supports it.
bool backend_available(Backend backend);

/// Table for a specific backend; throws if unavailable.
const KernelTable& table(Backend backend);

/// The table every tensor op dispatches through. Chosen once at startup
/// (widest supported ISA, overridable with FMAMBA_SIMD=scalar|avx2|neon).
const KernelTable& active();
Backend active_backend();
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

/// Scalar exp with the exact operation sequence of the vector kernels.
double exp_reference(double x);

}  // namespace fmamba::simd
