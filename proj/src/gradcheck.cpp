#include "vlm3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vlm3d/rng.hpp"

namespace vlm3d {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Index of the first non-finite entry, or -1.
int first_non_finite(const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return static_cast<int>(i);
  return -1;
}

}  // namespace

GradCheckReport check_vjp(const ForwardFn& forward, const AdjointFn& adjoint,
                          const std::vector<double>& point, int num_probes,
                          double step, double tolerance, std::uint64_t seed) {
  if (point.empty())
    throw std::invalid_argument("check_vjp: zero-dimensional input");
  if (num_probes < 1) throw std::invalid_argument("check_vjp: num_probes < 1");
  if (!(step > 0.0)) throw std::invalid_argument("check_vjp: step must be > 0");

  const std::vector<double> base = forward(point);
  if (base.empty())
    throw std::invalid_argument("check_vjp: forward returned empty output");

  GradCheckReport report;
  report.num_points = num_probes;

  if (int bad = first_non_finite(base); bad >= 0) {
    report.max_relative_error = std::numeric_limits<double>::infinity();
    report.worst_coordinate = bad;
    report.passed = false;
    return report;
  }

  DetRng rng(seed);
  std::vector<double> e(point.size());
  std::vector<double> u(base.size());
  std::vector<double> shifted(point.size());

  for (int probe = 0; probe < num_probes; ++probe) {
    rng.unit_vector(e);
    rng.unit_vector(u);

    for (std::size_t i = 0; i < point.size(); ++i)
      shifted[i] = point[i] + step * e[i];
    const std::vector<double> plus = forward(shifted);
    for (std::size_t i = 0; i < point.size(); ++i)
      shifted[i] = point[i] - step * e[i];
    const std::vector<double> minus = forward(shifted);

    if (int bad = first_non_finite(plus); bad >= 0) {
      report.max_relative_error = std::numeric_limits<double>::infinity();
      report.worst_coordinate = bad;
      report.passed = false;
      return report;
    }
    if (int bad = first_non_finite(minus); bad >= 0) {
      report.max_relative_error = std::numeric_limits<double>::infinity();
      report.worst_coordinate = bad;
      report.passed = false;
      return report;
    }

    const double fd = (dot(u, plus) - dot(u, minus)) / (2.0 * step);
    const std::vector<double> jt_u = adjoint(point, u);
    if (jt_u.size() != point.size())
      throw std::invalid_argument("check_vjp: adjoint output size mismatch");
    const double adj = dot(jt_u, e);

    const double denom = std::max({std::abs(fd), std::abs(adj), 1e-12});
    const double rel = std::abs(fd - adj) / denom;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_coordinate = probe;
    }
  }

  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace vlm3d
