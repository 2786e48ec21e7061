#pragma once

#include <Eigen/Dense>
#include <optional>
#include <ostream>

#include "jbsde/basis.hpp"
#include "jbsde/coefficients.hpp"
#include "jbsde/diagnostics.hpp"
#include "jbsde/sde.hpp"

namespace jbsde {

struct SolveOptions {
    double quad_rel_tol = 1e-8;
    int nonlocal_panels = 8;     // fixed panels per side for the nonlocal term
    bool z_by_regression = true; // false: central differences of the continuation
    double z_fd_rel_step = 5e-3; // FD step relative to the box width
    double cond_cap = 1e8;
    bool time_interpolation = false;  // nearest layer by default
    double extrapolation_margin = 0.10;
};

// per-time-node regression layers
struct LayerFit {
    Eigen::MatrixXd u;  // basis-size x m
    Eigen::MatrixXd z;  // basis-size x (m*d), column i*d+l
    double cond_u = 0.0;
};

// Backward-solved approximation of the solution field: regression
// layers for the value functions plus companion gradient-surrogate
// layers, evaluable anywhere in the design box.
struct MeshSolution {
    TimeGrid grid;
    TruncationIndex k;
    Dims dims;
    RegressionBasis basis = RegressionBasis::polynomial(0, Box{{0.0}, {1.0}});
    std::vector<LayerFit> layers;  // n_nodes entries; terminal layer has no z
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    bool time_interpolation = false;
    double extrapolation_margin = 0.10;
    double terminal_fit_residual = 0.0;  // max |fit - g| over design points
    double max_condition = 0.0;

    int nearest_layer(double t) const;
    // value of equation i; nearest layer or linear time interpolation
    double eval(double t, std::span<const double> x, int i, bool* extrapolated = nullptr) const;
    void eval_all(double t, std::span<const double> x, std::span<double> y_out,
                  bool* extrapolated = nullptr) const;
    // always interpolates linearly in t (smooth in t for differencing)
    double eval_interp(double t, std::span<const double> x, int i) const;
    double eval_layer(int j, std::span<const double> x, int i) const;
    void eval_layer_all(int j, std::span<const double> x, std::span<double> y_out) const;
    void eval_z(double t, std::span<const double> x, int i, std::span<double> z_out) const;
    void eval_z_layer(int j, std::span<const double> x, int i, std::span<double> z_out) const;
    bool in_design_box(std::span<const double> x) const {
        return basis.box().contains(x, extrapolation_margin);
    }
};

// Backward dynamic program over the ensemble's grid: project the next
// layer onto the basis for the continuation, regress Brownian-weighted
// increments for z, evaluate the nonlocal driver argument by quadrature
// of displaced layer values, then fit the driver-updated targets.
MeshSolution solve_backward(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                            const PathEnsemble& ensemble, const RegressionBasis& basis,
                            const SolveOptions& opt = {});

// design box from the ensemble's states with a small pad
Box design_box(const PathEnsemble& ensemble, double pad_frac = 0.02);

// u_i(t, x + beta(t,x,e)) - u_i(t, x): the jump-increment representation
// of the solution field
double jump_increment_field(const MeshSolution& sol, const ModelCoefficients& coeffs, int i,
                            double t, std::span<const double> x, std::span<const double> e);

// nonlocal driver argument at a fixed layer: integral over the truncated
// measure of gamma_i(t,x,e) * [u_layer(x + beta(t,x,e)) - u_layer(x)];
// this is the quantity the solver feeds to the driver
double nonlocal_gamma_term(const MeshSolution& sol, const ModelCoefficients& coeffs,
                           const LevyMeasure& measure, int i, int layer, double t,
                           std::span<const double> x, int panels_per_side = 8);

struct ResidualStats {
    std::vector<double> rms;       // per equation, unscaled per-step residual
    std::size_t n_paths = 0;
    int n_steps = 0;
    double dt = 0.0;
};

// Out-of-sample one-step residuals of the backward equation along fresh
// paths, using the solved layers for value, gradient surrogate and jump
// increments.  Small values certify the triple approximately satisfies
// the dynamics away from the training set.
ResidualStats bsde_residual(const MeshSolution& sol, const ModelCoefficients& coeffs,
                            const LevyMeasure& measure, const PathEnsemble& fresh,
                            const SolveOptions& opt = {});

struct LadderConfig {
    std::vector<int> ks;
    TimeGrid grid;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 1;
    int replicates = 3;
    Vec x0;
    std::vector<Vec> probe_points;  // solution-gap probes at t0
    std::optional<RegressionBasis> basis;  // default: auto box, degree 3
    int basis_degree = 3;
    SolveOptions solve;
};

struct LadderRung {
    int k_low = 0, k_high = 0;
    double forward_gap = 0.0, forward_gap_se = 0.0;
    double solution_gap = 0.0, solution_gap_se = 0.0;
    double ufield_gap = 0.0, ufield_gap_se = 0.0;
};

struct ConvergenceReport {
    std::vector<int> ks;
    std::vector<double> small_jump_moment;  // per k
    std::vector<LadderRung> rungs;          // consecutive pairs
    int replicates = 0;

    // strict decrease along consecutive rungs with an n_sigma margin
    bool gaps_decreasing(double n_sigma, const std::string& column) const;
    void write_csv(std::ostream& os) const;
};

// Coupled truncation-ladder study: per replicate one jump reservoir at
// the top level feeds every rung; gaps between consecutive rungs are the
// Cauchy proxies for the convergence of the auxiliary processes, with
// standard errors across replicates.
ConvergenceReport ladder_study(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                               const LadderConfig& cfg);

struct ModulusFit {
    double c_fit = 0.0;
    double kappa = 1.0;
    double m2 = 0.0;
    std::vector<double> pair_lhs;  // |u(t0,x)-u(t0,x')|^2 per pair
    std::vector<double> pair_rhs;  // envelope value per pair at c_fit
};

// Fits the smallest C so that |u(t0,x)-u(t0,x')|^2 is bounded by
// rho(M2 |x-x'|^2 (1+|x-x'|^2)) * C (1+|x|^kappa) over the pairs, with
// kappa selected from a small grid.
ModulusFit continuity_modulus_probe(const MeshSolution& sol, const ConcaveModulus& rho,
                                    const PairList& pairs, double m2,
                                    std::span<const double> kappa_grid);

struct JumpFieldCheck {
    std::vector<double> cell_lo, cell_hi;  // signed 1-d mark cells
    std::vector<double> cell_mass;
    Eigen::MatrixXd regression;  // probe x cell, from compensated jump counts
    Eigen::MatrixXd quadrature;  // probe x cell, cell averages of the field
    double rms_discrepancy = 0.0;
    double field_rms = 0.0;
};

// Independent re-estimation of the jump-increment field: regress
// compensated per-cell jump counts weighted by realized value increments
// on a fresh ensemble, then compare with the field's cell averages.
JumpFieldCheck reestimate_jump_field(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                     const LevyMeasure& measure, const PathEnsemble& fresh,
                                     const std::vector<Vec>& probes, int cells_per_side,
                                     const SolveOptions& opt = {});

}  // namespace jbsde
