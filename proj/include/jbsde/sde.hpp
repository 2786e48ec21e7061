#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "jbsde/coefficients.hpp"
#include "jbsde/levy.hpp"

namespace jbsde {

struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int n_steps = 1;

    static TimeGrid uniform(double t0, double T, int n_steps);
    double dt() const { return (T - t0) / n_steps; }
    double node(int j) const { return t0 + dt() * j; }
    int n_nodes() const { return n_steps + 1; }
    bool operator==(const TimeGrid&) const = default;
};

// Simulated forward paths on a grid, plus every random input that
// produced them; immutable once built.
struct PathEnsemble {
    TimeGrid grid;
    TruncationIndex k;
    Dims dims;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::string coupling_id;

    std::vector<double> states;    // [path][node][component]
    std::vector<double> brownian;  // [path][step][component], actual increments
    std::vector<JumpTrain> jumps;  // absolute times in (t0, T]

    std::span<const double> state(std::size_t p, int j) const {
        std::size_t kx = static_cast<std::size_t>(dims.k_x);
        return {states.data() + (p * static_cast<std::size_t>(grid.n_nodes()) + j) * kx, kx};
    }
    std::span<const double> db(std::size_t p, int j) const {
        std::size_t d = static_cast<std::size_t>(dims.d);
        return {brownian.data() + (p * static_cast<std::size_t>(grid.n_steps) + j) * d, d};
    }
    // grid-node evaluation; s <= t0 returns the start state by convention
    void state_at(std::size_t p, double s, std::span<double> out) const;
    std::size_t jumps_through(std::size_t p, int j) const;  // count with time <= node j
};

struct ForwardOptions {
    double quad_rel_tol = 1e-8;
    int compensator_panels = 8;  // fixed panels per side for the drift correction
};

// drift correction from compensating the jump integral: the integral of
// beta(t,x,.) against the k-truncated measure
void compensator_drift(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                       TruncationIndex k, double t, std::span<const double> x,
                       std::span<double> out, double quad_rel_tol = 1e-8);

// Euler scheme with jumps attached at the left grid node and the
// compensator subtracted per step; bit-reproducible for fixed
// (seed, grid, k, n_paths).
PathEnsemble simulate_forward(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                              TruncationIndex k, const TimeGrid& grid,
                              std::span<const double> x0, std::size_t n_paths,
                              std::uint64_t seed, const ForwardOptions& opt = {});

// Re-runs the Euler scheme reusing the reservoir's Brownian increments
// and jump trains, keeping only marks with |e| >= 1/k.  Lets truncation
// levels and start points share one source of randomness.
PathEnsemble simulate_filtered(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                               TruncationIndex k, const PathEnsemble& reservoir,
                               std::span<const double> x0, const ForwardOptions& opt = {});

struct GapStatistic {
    double mean_sup_sq = 0.0;  // E[ sup_s |X_high - X_low|^2 ]
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

// Coupled two-level gap: both levels share Brownian noise and one jump
// reservoir drawn at k_high; the lower level drops small marks.  A
// computable Cauchy proxy for the truncation-convergence statement.
GapStatistic coupled_truncation_gap(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                                    TruncationIndex k_low, TruncationIndex k_high,
                                    const TimeGrid& grid, std::span<const double> x0,
                                    std::size_t n_paths, std::uint64_t seed,
                                    const ForwardOptions& opt = {});

struct MomentFit {
    double m_p = 0.0;        // smallest constant fitting the estimate across grid times
    double std_error = 0.0;  // plug-in standard error at the binding time
    double argmax_time = 0.0;
    double worst_residual = 0.0;  // max over times of estimate - fitted bound (<= 0)
};

// fits E[sup_{r<=s}|X_r - x0|^p] <= M_p (s-t0)(1+|x0|^p) over grid times
MomentFit moment_diagnostics(const PathEnsemble& ensemble, double p);

// fits the coupled second estimate on two shared-noise ensembles started
// at different points
MomentFit coupled_moment_diagnostics(const PathEnsemble& a, const PathEnsemble& b, double p);

// columnar export: one row per (path, node) with state and cumulative
// jump count
void write_ensemble_csv(const PathEnsemble& ensemble, std::ostream& os);

}  // namespace jbsde
