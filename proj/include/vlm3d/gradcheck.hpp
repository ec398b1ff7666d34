#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace vlm3d {

// Forward map and its vector-Jacobian product, both over flat vectors.
// adjoint(point, u) must return J(point)^T u.
using ForwardFn =
    std::function<std::vector<double>(const std::vector<double>&)>;
using AdjointFn = std::function<std::vector<double>(
    const std::vector<double>&, const std::vector<double>&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  int num_points = 0;
  // Probe index of the worst comparison; on a non-finite forward value this
  // is instead the offending output coordinate.
  int worst_coordinate = -1;
  bool passed = false;
};

// Compares <u, J e> estimated by central differences of <u, forward(.)>
// against <adjoint(point, u), e> over num_probes random unit directions
// (u in output space, e in input space), drawn from a seeded sphere
// distribution. Relative error is |a-b| / max(|a|, |b|, 1e-12).
//
// All arithmetic is double precision. Throws std::invalid_argument on a
// zero-dimensional point or invalid step/num_probes. A non-finite forward
// value fails the check rather than throwing, recording the coordinate.
GradCheckReport check_vjp(const ForwardFn& forward, const AdjointFn& adjoint,
                          const std::vector<double>& point, int num_probes,
                          double step, double tolerance, std::uint64_t seed);

}  // namespace vlm3d
