// NEON backend for aarch64. float64x2_t is baseline on that architecture, so
// no runtime feature probe is needed beyond building for it.

#include <arm_neon.h>

#include <cmath>
#include <cstddef>

#include "wzmerge/kernels.hpp"

namespace wzmerge::kernels {

namespace {

inline double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  for (; i + 2 <= n; i += 2) acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc0) + vaddvq_f64(acc1);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void matvec_addto_neon(const double* w, std::size_t rows, std::size_t cols,
                       const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot_neon(w + r * cols, x, cols);
}

void hadamard_addto_neon(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void cell_update_neon(const double* f, const double* c_prev, const double* ig,
                      const double* g, double* c, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vc = vmulq_f64(vld1q_f64(f + i), vld1q_f64(c_prev + i));
    vc = vfmaq_f64(vc, vld1q_f64(ig + i), vld1q_f64(g + i));
    vst1q_f64(c + i, vc);
  }
  for (; i < n; ++i) c[i] = f[i] * c_prev[i] + ig[i] * g[i];
}

void adam_update_neon(double* w, const double* grad, double* m, double* v,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double bias1, double bias2) {
  const float64x2_t vb1 = vdupq_n_f64(beta1);
  const float64x2_t vb2 = vdupq_n_f64(beta2);
  const float64x2_t vomb1 = vdupq_n_f64(1.0 - beta1);
  const float64x2_t vomb2 = vdupq_n_f64(1.0 - beta2);
  const float64x2_t vlr = vdupq_n_f64(lr);
  const float64x2_t veps = vdupq_n_f64(eps);
  const float64x2_t vib1 = vdupq_n_f64(1.0 / bias1);
  const float64x2_t vib2 = vdupq_n_f64(1.0 / bias2);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t g = vld1q_f64(grad + i);
    float64x2_t vm = vfmaq_f64(vmulq_f64(vb1, vld1q_f64(m + i)), vomb1, g);
    float64x2_t vv = vfmaq_f64(vmulq_f64(vb2, vld1q_f64(v + i)), vomb2, vmulq_f64(g, g));
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vmulq_f64(vm, vib1);
    const float64x2_t vhat = vmulq_f64(vv, vib2);
    const float64x2_t denom = vaddq_f64(vsqrtq_f64(vhat), veps);
    const float64x2_t stepv = vdivq_f64(vmulq_f64(vlr, mhat), denom);
    vst1q_f64(w + i, vsubq_f64(vld1q_f64(w + i), stepv));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    w[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

const Ops kNeonOps{
    "neon",        dot_neon,         axpy_neon, matvec_addto_neon,
    hadamard_addto_neon, cell_update_neon, adam_update_neon,
};

}  // namespace

const Ops* neon_ops() { return &kNeonOps; }

}  // namespace wzmerge::kernels
