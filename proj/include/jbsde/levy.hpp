#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/quadrature.hpp"
#include "jbsde/rng.hpp"

namespace jbsde {

// Jumps with |e| < 1/k are discarded.
struct TruncationIndex {
    int k = 1;
    TruncationIndex() = default;
    explicit TruncationIndex(int kk) : k(kk) {
        if (k < 1) throw ConfigError("TruncationIndex: k must be >= 1");
    }
    double threshold() const { return 1.0 / static_cast<double>(k); }
};

// One realization of the compound-Poisson part above the truncation
// threshold: sorted times in (0, horizon], marks with |e| >= 1/k.
struct JumpTrain {
    std::vector<double> times;
    std::vector<double> marks;  // flattened, dim_e entries per jump
    int dim_e = 1;
    int k = 1;
    std::size_t size() const { return times.size(); }
    std::span<const double> mark(std::size_t i) const {
        return {marks.data() + i * static_cast<std::size_t>(dim_e),
                static_cast<std::size_t>(dim_e)};
    }
};

// Closed forms used as oracles when the measure family admits them.
struct AnalyticMoments {
    std::function<double(double)> mass_above;    // lambda({|e| >= r})
    std::function<double(double)> second_below;  // integral of |e|^2 over {|e| < r}
};

// Sigma-finite jump measure on R^l \ {0} with infinite mass at the
// origin and finite integral of (1 ^ |e|^2).  Only the truncated tails
// {|e| >= 1/k} are ever sampled or integrated against.
class LevyMeasure {
public:
    // lambda(de) = scale * |e|^(-1-alpha) on 0 < |e| <= radius, both signs
    static LevyMeasure power_law(double alpha, double scale = 1.0, double radius = 1.0);

    // general 1-d density on R \ {0}, optionally with analytic moments
    static LevyMeasure from_density(std::function<double(double)> density, double radius,
                                    std::optional<AnalyticMoments> analytic = std::nullopt);

    // symmetric 1-d density tabulated at increasing |e| grid points,
    // interpolated log-linearly between knots
    static LevyMeasure from_table(std::vector<double> abs_grid, std::vector<double> values,
                                  double radius);

    // isotropic planar measure lambda(de) = profile(|e|) de on R^2 \ {0}
    static LevyMeasure isotropic_2d(std::function<double(double)> radial_profile, double radius,
                                    int direction_nodes = 32);

    int dim_e() const { return dim_e_; }
    double support_radius() const { return radius_; }
    bool has_analytic() const { return analytic_.has_value(); }
    double density(std::span<const double> e) const;

    // lambda({|e| >= 1/k}); finite for every k
    double truncated_mass(TruncationIndex k, double rel_tol = 1e-10) const;

    // integral of |e|^2 over {|e| < 1/k}; decreasing in k, -> 0
    double small_jump_second_moment(TruncationIndex k, double rel_tol = 1e-10) const;

    // integral of (1 ^ |e|^2) over E, the basic integrability functional
    double one_wedge_e2_mass(double rel_tol = 1e-8) const;

    // integral of f against the k-truncated measure, f: E -> R^n
    void integrate(TruncationIndex k, int out_dim,
                   const std::function<void(std::span<const double>, std::span<double>)>& f,
                   std::span<double> out, double rel_tol = 1e-8) const;
    double integrate_scalar(TruncationIndex k,
                            const std::function<double(std::span<const double>)>& f,
                            double rel_tol = 1e-8) const;

    // deterministic fixed-panel variant used in hot loops
    void integrate_fixed(TruncationIndex k, int out_dim,
                         const std::function<void(std::span<const double>, std::span<double>)>& f,
                         std::span<double> out, int panels_per_side = 8) const;

    JumpTrain sample_jumps(TruncationIndex k, double horizon, RngStream& stream) const;

    // CDF of |mark| under the normalized k-truncated measure (law tests)
    double truncated_radial_cdf(TruncationIndex k, double r) const;

    // integral of f over a radial band {r_lo <= |e| <= r_hi}, optionally
    // one-sided (sign -1 or +1; 0 takes both sides); 1-d measures only
    double band_integral(double r_lo, double r_hi, int sign,
                         const std::function<double(double)>& f_signed_e,
                         double rel_tol = 1e-10) const;

private:
    LevyMeasure() = default;

    struct Sampler;  // cached per-k inverse-transform tables
    std::shared_ptr<const Sampler> sampler_for(int k) const;

    int dim_e_ = 1;
    double radius_ = 1.0;
    bool is_power_law_ = false;
    double alpha_ = 0.0;
    std::function<double(double)> side_pos_;  // density at +|e| (1-d)
    std::function<double(double)> side_neg_;  // density at -|e| (1-d)
    std::function<double(double)> radial_profile_;  // 2-d isotropic
    int direction_nodes_ = 32;
    std::optional<AnalyticMoments> analytic_;

    // copies of a measure share the per-k sampler tables
    struct SamplerCache {
        std::mutex mutex;
        std::map<int, std::shared_ptr<const Sampler>> table;
    };
    std::shared_ptr<SamplerCache> cache_ = std::make_shared<SamplerCache>();
};

// spec-level conveniences
inline double truncated_mass(const LevyMeasure& m, TruncationIndex k) {
    return m.truncated_mass(k);
}
inline double small_jump_second_moment(const LevyMeasure& m, TruncationIndex k) {
    return m.small_jump_second_moment(k);
}
inline JumpTrain sample_truncated_jumps(const LevyMeasure& m, TruncationIndex k, double horizon,
                                        RngStream& stream) {
    return m.sample_jumps(k, horizon, stream);
}

}  // namespace jbsde
