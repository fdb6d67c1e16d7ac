#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace wzmerge::kernels {

// Dense double-precision primitives behind the network math. A scalar
// reference implementation always exists; vector variants (AVX2+FMA on
// x86-64, NEON on aarch64) are selected once at runtime from CPU features.
// Variants may reassociate sums, so cross-backend results agree to rounding,
// not bit-for-bit; a single process always runs one backend, chosen
// deterministically, so reruns on the same machine are bit-stable.
struct Ops {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y += W x, W row-major rows x cols
  void (*matvec_addto)(const double* w, std::size_t rows, std::size_t cols,
                       const double* x, double* y);
  // y += a .* b
  void (*hadamard_addto)(const double* a, const double* b, double* y, std::size_t n);
  // c = f .* c_prev + i .* g
  void (*cell_update)(const double* f, const double* c_prev, const double* i,
                      const double* g, double* c, std::size_t n);
  // in-place Adam step with precomputed bias corrections 1 - beta^t
  void (*adam_update)(double* w, const double* grad, double* m, double* v,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double bias1, double bias2);
};

const Ops& scalar_ops();

// Backends usable on this machine; scalar is always first.
std::vector<const Ops*> available_backends();

// Active backend. First use picks the widest supported variant unless the
// WZMERGE_KERNELS environment variable names one explicitly.
const Ops& active();

// Force a specific backend ("scalar", "avx2", "neon"); throws if unknown or
// unsupported on this machine.
void select_backend(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void matvec_addto(const double* w, std::size_t rows, std::size_t cols,
                         const double* x, double* y) {
  active().matvec_addto(w, rows, cols, x, y);
}
inline void hadamard_addto(const double* a, const double* b, double* y, std::size_t n) {
  active().hadamard_addto(a, b, y, n);
}
inline void cell_update(const double* f, const double* c_prev, const double* i,
                        const double* g, double* c, std::size_t n) {
  active().cell_update(f, c_prev, i, g, c, n);
}
inline void adam_update(double* w, const double* grad, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, double bias1, double bias2) {
  active().adam_update(w, grad, m, v, n, lr, beta1, beta2, eps, bias1, bias2);
}

}  // namespace wzmerge::kernels
