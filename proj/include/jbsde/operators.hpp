#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "jbsde/bsde.hpp"

namespace jbsde {

struct FdSteps {
    double fd_x = 0.0;  // 0: box width / 200
    double fd_t = 0.0;  // 0: the grid step
};

// integral of gamma_i(t,x,e) [u_i(t, x+beta(t,x,e)) - u_i(t,x)] against
// the truncated measure: the zeroth-order nonlocal operator
double nonlocal_b(const MeshSolution& sol, const ModelCoefficients& coeffs,
                  const LevyMeasure& measure, int i, double t, std::span<const double> x,
                  int panels_per_side = 8);

// second-order nonlocal operator: the displaced increment minus its
// linearization, with the gradient taken by central differences
double nonlocal_k(const MeshSolution& sol, const ModelCoefficients& coeffs,
                  const LevyMeasure& measure, int i, double t, std::span<const double> x,
                  double fd_step, int panels_per_side = 8);

// Equation residual of the solved field at a probe point, treating the
// smoothly interpolated mesh as the test function.  All derivatives by
// central differences (one-sided in time near the terminal layer),
// nonlocal terms by truncated quadrature.
struct ProbeResidual {
    double t = 0.0;
    Vec x;
    std::vector<double> residual;  // per equation
    std::string classification;    // interior | near-terminal | extrapolated
    double fd_x = 0.0, fd_t = 0.0, quad_tol = 0.0;
};

ProbeResidual viscosity_residual(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                 const LevyMeasure& measure, double t,
                                 std::span<const double> x, const FdSteps& fd = {},
                                 int panels_per_side = 8);

struct ResidualReport {
    std::vector<ProbeResidual> probes;
    double max_abs(int i) const;
    double median_abs(int i) const;
    void write_csv(std::ostream& os) const;
};

ResidualReport residual_survey(const MeshSolution& sol, const ModelCoefficients& coeffs,
                               const LevyMeasure& measure,
                               const std::vector<std::pair<double, Vec>>& probes,
                               const FdSteps& fd = {}, int panels_per_side = 8);

// max over probes of |u_i(T,x) - g_i(x)| per equation
DiagnosticsReport terminal_consistency(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                       const std::vector<Vec>& xs);

}  // namespace jbsde
