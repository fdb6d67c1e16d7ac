#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "wzmerge/kernels.hpp"
#include "wzmerge/util.hpp"

using namespace wzmerge;

namespace {

std::vector<double> randv(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Odd sizes exercise the vector remainder loops.
const size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 13, 16, 31, 50, 64, 127, 250};

}  // namespace

TEST_CASE("scalar primitives against naive loops") {
  const kernels::Ops& ops = kernels::scalar_ops();
  Rng rng(1);
  for (size_t n : kSizes) {
    const auto a = randv(rng, n);
    const auto b = randv(rng, n);

    double want = 0.0;
    for (size_t i = 0; i < n; ++i) want += a[i] * b[i];
    CHECK(ops.dot(a.data(), b.data(), n) == doctest::Approx(want).epsilon(1e-12));

    auto y = randv(rng, n);
    auto y2 = y;
    ops.axpy(0.7, a.data(), y.data(), n);
    for (size_t i = 0; i < n; ++i) y2[i] += 0.7 * a[i];
    for (size_t i = 0; i < n; ++i) CHECK(y[i] == doctest::Approx(y2[i]));

    auto h = randv(rng, n);
    auto h2 = h;
    ops.hadamard_addto(a.data(), b.data(), h.data(), n);
    for (size_t i = 0; i < n; ++i) h2[i] += a[i] * b[i];
    for (size_t i = 0; i < n; ++i) CHECK(h[i] == doctest::Approx(h2[i]));
  }
}

TEST_CASE("scalar matvec against the triple loop") {
  const kernels::Ops& ops = kernels::scalar_ops();
  Rng rng(2);
  for (size_t rows : {1u, 3u, 5u, 50u})
    for (size_t cols : {1u, 2u, 5u, 50u, 100u}) {
      const auto w = randv(rng, rows * cols);
      const auto x = randv(rng, cols);
      auto y = randv(rng, rows);
      auto want = y;
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) want[r] += w[r * cols + c] * x[c];
      ops.matvec_addto(w.data(), rows, cols, x.data(), y.data());
      for (size_t r = 0; r < rows; ++r)
        CHECK(y[r] == doctest::Approx(want[r]).epsilon(1e-12));
    }
}

TEST_CASE("cell update composes forget and input paths") {
  const kernels::Ops& ops = kernels::scalar_ops();
  Rng rng(3);
  for (size_t n : kSizes) {
    const auto f = randv(rng, n, 0.0, 1.0);
    const auto cp = randv(rng, n);
    const auto in = randv(rng, n, 0.0, 1.0);
    const auto g = randv(rng, n);
    std::vector<double> c(n, -99.0);
    ops.cell_update(f.data(), cp.data(), in.data(), g.data(), c.data(), n);
    for (size_t i = 0; i < n; ++i)
      CHECK(c[i] == doctest::Approx(f[i] * cp[i] + in[i] * g[i]));
  }
}

TEST_CASE("adam semantics: one step by hand") {
  const kernels::Ops& ops = kernels::scalar_ops();
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> w{1.0, -2.0}, g{0.5, -0.25}, m(2, 0.0), v(2, 0.0);
  // First step, bias corrections 1 - beta^1.
  ops.adam_update(w.data(), g.data(), m.data(), v.data(), 2, lr, b1, b2, eps,
                  1.0 - b1, 1.0 - b2);
  for (size_t i = 0; i < 2; ++i) {
    const double mi = (1.0 - b1) * g[i];
    const double vi = (1.0 - b2) * g[i] * g[i];
    const double mhat = mi / (1.0 - b1);
    const double vhat = vi / (1.0 - b2);
    const double want = (i == 0 ? 1.0 : -2.0) - lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(w[i] == doctest::Approx(want).epsilon(1e-14));
    CHECK(m[i] == doctest::Approx(mi));
    CHECK(v[i] == doctest::Approx(vi));
  }
  // First-step update magnitude is ~lr regardless of gradient scale.
  CHECK(std::fabs(w[0] - 1.0) == doctest::Approx(lr).epsilon(1e-4));
}

TEST_CASE("adam converges on a quadratic") {
  const kernels::Ops& ops = kernels::scalar_ops();
  std::vector<double> w{5.0}, m{0.0}, v{0.0};
  const double b1 = 0.9, b2 = 0.999;
  double p1 = 1.0, p2 = 1.0;
  for (int t = 1; t <= 4000; ++t) {
    std::vector<double> g{2.0 * w[0]};  // d/dw of w^2
    p1 *= b1;
    p2 *= b2;
    ops.adam_update(w.data(), g.data(), m.data(), v.data(), 1, 1e-2, b1, b2,
                    1e-8, 1.0 - p1, 1.0 - p2);
  }
  CHECK(std::fabs(w[0]) < 1e-3);
}

TEST_CASE("every available backend matches scalar") {
  const kernels::Ops& ref = kernels::scalar_ops();
  Rng rng(4);
  const auto backends = kernels::available_backends();
  REQUIRE(!backends.empty());
  CHECK(std::string(backends[0]->name) == "scalar");

  for (const kernels::Ops* ops : backends) {
    INFO("backend ", ops->name);
    for (size_t n : kSizes) {
      const auto a = randv(rng, n);
      const auto b = randv(rng, n);
      CHECK(ops->dot(a.data(), b.data(), n) ==
            doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-12));

      auto y1 = randv(rng, n);
      auto y2 = y1;
      ops->axpy(1.3, a.data(), y1.data(), n);
      ref.axpy(1.3, a.data(), y2.data(), n);
      for (size_t i = 0; i < n; ++i)
        CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-13));

      auto h1 = randv(rng, n);
      auto h2 = h1;
      ops->hadamard_addto(a.data(), b.data(), h1.data(), n);
      ref.hadamard_addto(a.data(), b.data(), h2.data(), n);
      for (size_t i = 0; i < n; ++i)
        CHECK(h1[i] == doctest::Approx(h2[i]).epsilon(1e-13));

      const auto f = randv(rng, n, 0.0, 1.0);
      const auto cp = randv(rng, n);
      const auto in = randv(rng, n, 0.0, 1.0);
      const auto g = randv(rng, n);
      std::vector<double> c1(n), c2(n);
      ops->cell_update(f.data(), cp.data(), in.data(), g.data(), c1.data(), n);
      ref.cell_update(f.data(), cp.data(), in.data(), g.data(), c2.data(), n);
      for (size_t i = 0; i < n; ++i)
        CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));

      auto w1 = randv(rng, n), g1 = randv(rng, n);
      auto m1 = randv(rng, n, 0.0, 1.0), v1 = randv(rng, n, 0.001, 1.0);
      auto w2 = w1, m2 = m1, v2 = v1;
      ops->adam_update(w1.data(), g1.data(), m1.data(), v1.data(), n, 1e-3, 0.9,
                       0.999, 1e-8, 0.1, 0.001);
      ref.adam_update(w2.data(), g1.data(), m2.data(), v2.data(), n, 1e-3, 0.9,
                      0.999, 1e-8, 0.1, 0.001);
      for (size_t i = 0; i < n; ++i) {
        CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-13));
        CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-13));
        CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-13));
      }
    }

    // Wide matvec, the hot path: remainder columns included.
    for (size_t rows : {50u})
      for (size_t cols : {5u, 50u, 53u, 100u}) {
        const auto w = randv(rng, rows * cols);
        const auto x = randv(rng, cols);
        auto y1 = randv(rng, rows);
        auto y2 = y1;
        ops->matvec_addto(w.data(), rows, cols, x.data(), y1.data());
        ref.matvec_addto(w.data(), rows, cols, x.data(), y2.data());
        for (size_t r = 0; r < rows; ++r)
          CHECK(y1[r] == doctest::Approx(y2[r]).epsilon(1e-12));
      }
  }
}

TEST_CASE("backend selection") {
  const kernels::Ops& before = kernels::active();
  CHECK_THROWS_AS(kernels::select_backend("quantum"), Error);
  // A failed selection leaves the active backend untouched.
  CHECK(std::string(kernels::active().name) == std::string(before.name));
  kernels::select_backend("scalar");
  CHECK(std::string(kernels::active().name) == "scalar");
  // Restore the widest variant for any later tests in this process.
  for (const kernels::Ops* ops : kernels::available_backends())
    kernels::select_backend(ops->name);
}
