#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/diagnostics.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/modulus.hpp"

namespace jbsde {

struct Dims {
    int k_x = 1;  // state dimension
    int d = 1;    // Brownian dimension
    int m = 1;    // number of equations
    int ell = 1;  // mark dimension
    bool operator==(const Dims&) const = default;
};

// out has k_x entries
using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
// out has k_x * d entries, row-major
using DiffusionFn =
    std::function<void(double t, std::span<const double> x, std::span<double> out)>;
// out has k_x entries
using JumpCoefFn = std::function<void(double t, std::span<const double> x,
                                      std::span<const double> e, std::span<double> out)>;
using GammaFn = std::function<double(double t, std::span<const double> x,
                                     std::span<const double> e)>;
using TerminalFn = std::function<double(std::span<const double> x)>;
// y has m entries (the full system value), z has d entries, q is the
// integrated nonlocal argument
using DriverFn = std::function<double(double t, std::span<const double> x,
                                      std::span<const double> y, std::span<const double> z,
                                      double q)>;

// structure flags supplied by the coefficient registry; they gate the
// precomputation fast paths, never the math
struct CoefficientTraits {
    bool beta_state_independent = false;
    bool beta_time_independent = false;
    bool gamma_state_independent = false;
    bool gamma_time_independent = false;
};

struct DeclaredModuli {
    ConcaveModulus b = ConcaveModulus::linear();
    ConcaveModulus sigma = ConcaveModulus::linear();
    ConcaveModulus beta = ConcaveModulus::linear();
    ConcaveModulus gamma = ConcaveModulus::linear();
    ConcaveModulus g = ConcaveModulus::linear();
    ConcaveModulus h = ConcaveModulus::linear();
};

struct ModelCoefficients {
    Dims dims;
    double horizon = 1.0;          // T
    double lipschitz_const = 1.0;  // C in the jump bounds and driver Lipschitz condition
    DriftFn b;
    DiffusionFn sigma;
    JumpCoefFn beta;
    std::vector<GammaFn> gamma;  // m entries
    std::vector<TerminalFn> g;   // m entries
    std::vector<DriverFn> h;     // m entries
    DeclaredModuli moduli;
    CoefficientTraits traits;
};

// h^(i) composed with the integrated nonlocal argument: the driver is
// evaluated at q = integral of gamma_i(t,x,e) * zeta(e) against the
// k-truncated measure.
double effective_driver(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                        TruncationIndex k, int i, double t, std::span<const double> x,
                        std::span<const double> y, std::span<const double> z,
                        const std::function<double(std::span<const double>)>& zeta,
                        double quad_rel_tol = 1e-8);

struct SamplePlan {
    int n_points = 10000;  // single-point checks (jump bounds, Lipschitz)
    int n_pairs = 10000;   // pair checks (modulus conditions)
    Vec box_lo, box_hi;    // state box; defaults to [-5,5]^k_x
    double t_lo = 0.0, t_hi = 1.0;
    double yzq_box = 5.0;    // box half-width for (y,z,q) samples
    double e_floor = 1e-6;   // smallest |e| scale probed in jump bounds
    std::uint64_t seed = 0;
};

// Sampled falsification of the standing assumptions: jump-coefficient
// bounds |beta|,|gamma| <= C(1 ^ |e|), driver Lipschitz continuity in
// (y,z,q), declared-modulus continuity in x for b, sigma, beta, gamma,
// g and h, and shape checks on the declared modulus itself.  Failures
// become report entries with witnesses, never exceptions.
DiagnosticsReport validate_assumptions(const ModelCoefficients& coeffs,
                                       const LevyMeasure& measure, const SamplePlan& plan);

using PointMap = std::function<void(std::span<const double> x, std::span<double> out)>;
using PairList = std::vector<std::pair<Vec, Vec>>;

// |f(x) - f(x')| <= rho^(1/p)(|x - x'|^p) over the given pairs
DiagnosticsReport mao_distance_test(const PointMap& f, int out_dim, const ConcaveModulus& rho,
                                    double p, const PairList& pairs);

// signed variant <(x-x')/|x-x'|, f(x) - f(x')> <= rho^(1/p)(|x-x'|^p);
// requires out_dim == dim(x).  Also records whether the two-sided bound
// implies the one-sided one on every pair, which must always hold.
DiagnosticsReport one_sided_mao_test(const PointMap& f, const ConcaveModulus& rho, double p,
                                     const PairList& pairs);

}  // namespace jbsde
