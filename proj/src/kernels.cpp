#include "wzmerge/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <mutex>

#include "wzmerge/util.hpp"

namespace wzmerge::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void matvec_addto_scalar(const double* w, std::size_t rows, std::size_t cols,
                         const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

void hadamard_addto_scalar(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void cell_update_scalar(const double* f, const double* c_prev, const double* i_g,
                        const double* g, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = f[i] * c_prev[i] + i_g[i] * g[i];
}

void adam_update_scalar(double* w, const double* grad, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bias1;
    const double vhat = v[i] / bias2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

const Ops kScalarOps{
    "scalar",         dot_scalar,         axpy_scalar, matvec_addto_scalar,
    hadamard_addto_scalar, cell_update_scalar, adam_update_scalar,
};

const Ops* g_active = nullptr;
std::once_flag g_init_flag;

void init_active() {
  const char* env = std::getenv("WZMERGE_KERNELS");
  if (env != nullptr && *env != '\0') {
    for (const Ops* ops : available_backends()) {
      if (std::string_view(ops->name) == env) {
        g_active = ops;
        return;
      }
    }
    throw Error(std::string("config: WZMERGE_KERNELS names unavailable backend '") +
                env + "'");
  }
  const auto backends = available_backends();
  g_active = backends.back();  // widest supported; scalar if nothing else
}

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

#if defined(WZMERGE_HAVE_AVX2_TU)
const Ops* avx2_ops_if_supported();  // defined in kernels_avx2.cpp
#endif
#if defined(WZMERGE_HAVE_NEON_TU)
const Ops* neon_ops();  // defined in kernels_neon.cpp
#endif

std::vector<const Ops*> available_backends() {
  std::vector<const Ops*> out{&kScalarOps};
#if defined(WZMERGE_HAVE_AVX2_TU)
  if (const Ops* ops = avx2_ops_if_supported()) out.push_back(ops);
#endif
#if defined(WZMERGE_HAVE_NEON_TU)
  out.push_back(neon_ops());
#endif
  return out;
}

const Ops& active() {
  std::call_once(g_init_flag, init_active);
  return *g_active;
}

void select_backend(std::string_view name) {
  std::call_once(g_init_flag, init_active);
  for (const Ops* ops : available_backends()) {
    if (std::string_view(ops->name) == name) {
      g_active = ops;
      return;
    }
  }
  throw Error("config: kernel backend '" + std::string(name) +
              "' is not available on this machine");
}

}  // namespace wzmerge::kernels
