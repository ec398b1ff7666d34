#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "vlm3d/gradcheck.hpp"
#include "vlm3d/rng.hpp"

using namespace vlm3d;

TEST_CASE("square function matches its analytic adjoint") {
  auto forward = [](const std::vector<double>& x) {
    return std::vector<double>{x[0] * x[0]};
  };
  auto adjoint = [](const std::vector<double>& x,
                    const std::vector<double>& u) {
    return std::vector<double>{u[0] * 2.0 * x[0]};
  };
  const GradCheckReport r =
      check_vjp(forward, adjoint, {3.0}, 8, 1e-4, 1e-6, 42);
  CHECK(r.passed);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.num_points == 8);
}

TEST_CASE("constant function with zero adjoint reports zero error") {
  auto forward = [](const std::vector<double>& x) {
    return std::vector<double>(3, 7.5 + 0.0 * x[0]);
  };
  auto adjoint = [](const std::vector<double>& x,
                    const std::vector<double>&) {
    return std::vector<double>(x.size(), 0.0);
  };
  const GradCheckReport r =
      check_vjp(forward, adjoint, {1.0, -2.0}, 5, 1e-4, 1e-9, 7);
  CHECK(r.passed);
  CHECK(r.max_relative_error == 0.0);
}

TEST_CASE("zero-dimensional input is rejected") {
  auto forward = [](const std::vector<double>&) {
    return std::vector<double>{0.0};
  };
  auto adjoint = [](const std::vector<double>&, const std::vector<double>&) {
    return std::vector<double>{};
  };
  CHECK_THROWS_AS(check_vjp(forward, adjoint, {}, 1, 1e-4, 1e-6, 0),
                  std::invalid_argument);
}

TEST_CASE("non-finite forward value fails with the offending coordinate") {
  auto forward = [](const std::vector<double>& x) {
    std::vector<double> y{x[0], std::nan(""), x[0]};
    return y;
  };
  auto adjoint = [](const std::vector<double>& x,
                    const std::vector<double>&) {
    return std::vector<double>(x.size(), 0.0);
  };
  const GradCheckReport r = check_vjp(forward, adjoint, {1.0}, 3, 1e-4, 1e-6, 0);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_coordinate == 1);
  CHECK(std::isinf(r.max_relative_error));
}

TEST_CASE("dot-product symmetry of a random linear map holds to 1e-10") {
  // y = A x with a fixed seeded matrix; the adjoint is A^T u. Central
  // differences of a linear map are exact up to roundoff.
  const int n = 7, m = 5;
  std::vector<double> A(static_cast<std::size_t>(n) * m);
  DetRng rng(99);
  for (auto& a : A) a = rng.normal();

  auto forward = [&](const std::vector<double>& x) {
    std::vector<double> y(m, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y[i] += A[i * n + j] * x[j];
    return y;
  };
  auto adjoint = [&](const std::vector<double>&,
                     const std::vector<double>& u) {
    std::vector<double> g(n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g[j] += A[i * n + j] * u[i];
    return g;
  };
  std::vector<double> point(n);
  for (auto& p : point) p = rng.normal();

  // Direct bilinear form: <u, A e> vs <A^T u, e>, no differencing involved.
  DetRng probe_rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> e(n), u(m);
    probe_rng.unit_vector(e);
    probe_rng.unit_vector(u);
    const std::vector<double> ae = forward(e);
    double lhs = 0.0;
    for (int i = 0; i < m; ++i) lhs += u[i] * ae[i];
    const std::vector<double> atu = adjoint(point, u);
    double rhs = 0.0;
    for (int j = 0; j < n; ++j) rhs += atu[j] * e[j];
    CHECK(std::abs(lhs - rhs) /
              std::max({std::abs(lhs), std::abs(rhs), 1e-12}) <
          1e-10);
  }

  // Central differences of a linear map are exact for any step, so a large
  // step sidesteps cancellation and the full check also clears 1e-10.
  const GradCheckReport r =
      check_vjp(forward, adjoint, point, 20, 0.25, 1e-10, 3);
  CHECK(r.passed);
  CHECK(r.max_relative_error < 1e-10);
}

TEST_CASE("shrinking the step does not blow up the error on smooth maps") {
  auto forward = [](const std::vector<double>& x) {
    return std::vector<double>{std::sin(x[0]) * std::exp(0.3 * x[1]),
                               x[0] * x[1] * x[1]};
  };
  auto adjoint = [](const std::vector<double>& x,
                    const std::vector<double>& u) {
    std::vector<double> g(2, 0.0);
    g[0] = u[0] * std::cos(x[0]) * std::exp(0.3 * x[1]) + u[1] * x[1] * x[1];
    g[1] = u[0] * std::sin(x[0]) * 0.3 * std::exp(0.3 * x[1]) +
           u[1] * 2.0 * x[0] * x[1];
    return g;
  };
  const std::vector<double> point{0.7, -0.4};
  const GradCheckReport coarse =
      check_vjp(forward, adjoint, point, 10, 1e-3, 1.0, 11);
  const GradCheckReport fine =
      check_vjp(forward, adjoint, point, 10, 1e-4, 1.0, 11);
  CHECK(fine.max_relative_error <= 10.0 * coarse.max_relative_error + 1e-12);
}
