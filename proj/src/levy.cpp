#include "jbsde/levy.hpp"

#include <algorithm>
#include <cmath>

namespace jbsde {

namespace {

constexpr double kZeroFloor = 1e-14;  // relative lower cutoff replacing |e| = 0

// sequential Poisson inversion; event rates here are desk scale
std::size_t draw_poisson(double mean, RngStream& stream) {
    if (mean <= 0.0) return 0;
    if (mean > 1e6) throw NumericalError("sample_jumps: Poisson mean too large: " +
                                         std::to_string(mean));
    double u = stream.next_double();
    double p = std::exp(-mean);
    double cdf = p;
    std::size_t n = 0;
    while (u > cdf) {
        ++n;
        p *= mean / static_cast<double>(n);
        cdf += p;
        if (n > 100 + static_cast<std::size_t>(20.0 * mean)) break;
    }
    return n;
}

}  // namespace

// per-k inverse-transform tables for mark sampling
struct LevyMeasure::Sampler {
    double mass = 0.0;
    double p_pos = 1.0;  // probability of a positive mark (1-d)
    // piecewise tables of the radial CDF per side, log-spaced in r
    std::vector<double> grid_pos, cdf_pos;
    std::vector<double> grid_neg, cdf_neg;
    // closed-form inverse for the power-law family
    bool power_law = false;
    double alpha = 0.0, thr = 0.0, radius = 0.0;

    static double invert(const std::vector<double>& grid, const std::vector<double>& cdf,
                         double u) {
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.begin()) return grid.front();
        if (it == cdf.end()) return grid.back();
        std::size_t i = static_cast<std::size_t>(it - cdf.begin());
        double c0 = cdf[i - 1], c1 = cdf[i];
        double w = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.0;
        return grid[i - 1] + w * (grid[i] - grid[i - 1]);
    }

    double draw_radius(bool positive, double u) const {
        if (power_law) {
            double ta = std::pow(thr, -alpha), ra = std::pow(radius, -alpha);
            return std::pow(ta - u * (ta - ra), -1.0 / alpha);
        }
        return positive ? invert(grid_pos, cdf_pos, u) : invert(grid_neg, cdf_neg, u);
    }
};

LevyMeasure LevyMeasure::power_law(double alpha, double scale, double radius) {
    if (!(alpha > 0.0 && alpha < 2.0)) throw ConfigError("power_law: alpha must be in (0,2)");
    if (!(scale > 0.0) || !(radius > 0.0))
        throw ConfigError("power_law: scale and radius must be positive");
    LevyMeasure m;
    m.dim_e_ = 1;
    m.radius_ = radius;
    m.is_power_law_ = true;
    m.alpha_ = alpha;
    auto dens = [alpha, scale, radius](double r) {
        return (r > 0.0 && r <= radius) ? scale * std::pow(r, -1.0 - alpha) : 0.0;
    };
    m.side_pos_ = dens;
    m.side_neg_ = dens;
    AnalyticMoments am;
    am.mass_above = [alpha, scale, radius](double r) {
        if (r >= radius) return 0.0;
        r = std::max(r, 0.0);
        if (r == 0.0) return std::numeric_limits<double>::infinity();
        return 2.0 * scale * (std::pow(r, -alpha) - std::pow(radius, -alpha)) / alpha;
    };
    am.second_below = [alpha, scale, radius](double r) {
        double a = std::min(std::max(r, 0.0), radius);
        return 2.0 * scale * std::pow(a, 2.0 - alpha) / (2.0 - alpha);
    };
    m.analytic_ = std::move(am);
    return m;
}

LevyMeasure LevyMeasure::from_density(std::function<double(double)> density, double radius,
                                      std::optional<AnalyticMoments> analytic) {
    if (!(radius > 0.0)) throw ConfigError("from_density: radius must be positive");
    LevyMeasure m;
    m.dim_e_ = 1;
    m.radius_ = radius;
    m.side_pos_ = [density](double r) { return std::max(0.0, density(r)); };
    m.side_neg_ = [density](double r) { return std::max(0.0, density(-r)); };
    m.analytic_ = std::move(analytic);
    return m;
}

LevyMeasure LevyMeasure::from_table(std::vector<double> abs_grid, std::vector<double> values,
                                    double radius) {
    if (abs_grid.size() != values.size() || abs_grid.size() < 2)
        throw ConfigError("from_table: grid and values must have equal size >= 2");
    for (std::size_t i = 0; i + 1 < abs_grid.size(); ++i)
        if (!(abs_grid[i] > 0.0) || !(abs_grid[i] < abs_grid[i + 1]))
            throw ConfigError("from_table: grid must be positive and strictly increasing");
    for (double v : values)
        if (!(v >= 0.0)) throw ConfigError("from_table: density values must be nonnegative");
    auto grid = std::make_shared<std::vector<double>>(std::move(abs_grid));
    auto vals = std::make_shared<std::vector<double>>(std::move(values));
    // log-linear interpolation; extend the first knot's value toward 0
    auto dens = [grid, vals, radius](double r) -> double {
        r = std::abs(r);
        if (r <= 0.0 || r > radius) return 0.0;
        const auto& g = *grid;
        const auto& v = *vals;
        if (r <= g.front()) return v.front() * std::pow(r / g.front(), -1.0);
        if (r >= g.back()) return v.back();
        auto it = std::upper_bound(g.begin(), g.end(), r);
        std::size_t i = static_cast<std::size_t>(it - g.begin());
        double lr = std::log(r), l0 = std::log(g[i - 1]), l1 = std::log(g[i]);
        double w = (lr - l0) / (l1 - l0);
        double v0 = std::max(v[i - 1], 1e-300), v1 = std::max(v[i], 1e-300);
        return std::exp((1.0 - w) * std::log(v0) + w * std::log(v1));
    };
    return from_density(dens, radius);
}

LevyMeasure LevyMeasure::isotropic_2d(std::function<double(double)> radial_profile, double radius,
                                      int direction_nodes) {
    if (!(radius > 0.0)) throw ConfigError("isotropic_2d: radius must be positive");
    if (direction_nodes < 4) throw ConfigError("isotropic_2d: need >= 4 direction nodes");
    LevyMeasure m;
    m.dim_e_ = 2;
    m.radius_ = radius;
    m.radial_profile_ = std::move(radial_profile);
    m.direction_nodes_ = direction_nodes;
    return m;
}

double LevyMeasure::density(std::span<const double> e) const {
    if (dim_e_ == 1) {
        double v = e[0];
        if (v == 0.0 || std::abs(v) > radius_) return 0.0;
        return v > 0.0 ? side_pos_(v) : side_neg_(-v);
    }
    double r = norm2(e);
    if (r == 0.0 || r > radius_) return 0.0;
    return radial_profile_(r);
}

double LevyMeasure::truncated_mass(TruncationIndex k, double rel_tol) const {
    const double thr = k.threshold();
    if (analytic_ && analytic_->mass_above) {
        double v = analytic_->mass_above(thr);
        if (!std::isfinite(v))
            throw NumericalError("truncated_mass: analytic mass not finite at k=" +
                                 std::to_string(k.k));
        return v;
    }
    if (thr >= radius_) return 0.0;
    if (dim_e_ == 1) {
        auto one = [this](double r, bool pos) { return pos ? side_pos_(r) : side_neg_(r); };
        auto qp = integrate_log_adaptive([&](double r) { return one(r, true); }, thr, radius_,
                                         rel_tol);
        auto qn = integrate_log_adaptive([&](double r) { return one(r, false); }, thr, radius_,
                                         rel_tol);
        if (!qp.converged || !qn.converged)
            throw NumericalError("truncated_mass: quadrature did not converge at k=" +
                                 std::to_string(k.k));
        return qp.value + qn.value;
    }
    auto q = integrate_log_adaptive(
        [this](double r) { return 2.0 * M_PI * r * radial_profile_(r); }, thr, radius_, rel_tol);
    if (!q.converged)
        throw NumericalError("truncated_mass: quadrature did not converge at k=" +
                             std::to_string(k.k));
    return q.value;
}

double LevyMeasure::small_jump_second_moment(TruncationIndex k, double rel_tol) const {
    const double thr = std::min(k.threshold(), radius_);
    if (analytic_ && analytic_->second_below) return analytic_->second_below(k.threshold());
    const double lo = thr * kZeroFloor;
    if (dim_e_ == 1) {
        auto q = integrate_log_adaptive(
            [this](double r) { return r * r * (side_pos_(r) + side_neg_(r)); }, lo, thr, rel_tol);
        if (!q.converged)
            throw NumericalError("small_jump_second_moment: quadrature did not converge at k=" +
                                 std::to_string(k.k));
        return q.value;
    }
    auto q = integrate_log_adaptive(
        [this](double r) { return 2.0 * M_PI * r * r * r * radial_profile_(r); }, lo, thr,
        rel_tol);
    if (!q.converged)
        throw NumericalError("small_jump_second_moment: quadrature did not converge at k=" +
                             std::to_string(k.k));
    return q.value;
}

double LevyMeasure::one_wedge_e2_mass(double rel_tol) const {
    // second moment below min(1, R) plus the mass of {1 <= |e| <= R}
    double below = small_jump_second_moment(TruncationIndex(1), rel_tol);
    double above = 0.0;
    if (radius_ > 1.0) {
        if (analytic_ && analytic_->mass_above) {
            above = analytic_->mass_above(1.0);
        } else if (dim_e_ == 1) {
            above = integrate_log_adaptive(
                        [this](double r) { return side_pos_(r) + side_neg_(r); }, 1.0, radius_,
                        rel_tol)
                        .value;
        } else {
            above = integrate_log_adaptive(
                        [this](double r) { return 2.0 * M_PI * r * radial_profile_(r); }, 1.0,
                        radius_, rel_tol)
                        .value;
        }
    }
    return below + above;
}

void LevyMeasure::integrate(TruncationIndex k, int out_dim,
                            const std::function<void(std::span<const double>, std::span<double>)>& f,
                            std::span<double> out, double rel_tol) const {
    const double thr = k.threshold();
    for (int i = 0; i < out_dim; ++i) out[i] = 0.0;
    if (thr >= radius_) return;
    if (dim_e_ == 1) {
        std::vector<double> acc(out_dim);
        double e[1];
        for (int side = 0; side < 2; ++side) {
            const bool pos = side == 0;
            auto g = [&](double r, std::span<double> o) {
                e[0] = pos ? r : -r;
                double w = pos ? side_pos_(r) : side_neg_(r);
                f(std::span<const double>(e, 1), o);
                for (int i = 0; i < out_dim; ++i) o[i] *= w;
            };
            auto q = integrate_log_adaptive_vec(out_dim, g, thr, radius_, rel_tol);
            if (!q.converged)
                throw NumericalError("quad_integrate: did not converge at k=" +
                                     std::to_string(k.k));
            for (int i = 0; i < out_dim; ++i) acc[i] += q.value[i];
        }
        for (int i = 0; i < out_dim; ++i) out[i] = acc[i];
        return;
    }
    // isotropic planar: radial shell x uniform direction average; an
    // extra |f| component keeps the convergence test scale-aware when
    // the direction average cancels
    const int nd = direction_nodes_;
    std::vector<double> fx(out_dim);
    auto g = [&](double r, std::span<double> o) {
        for (int i = 0; i <= out_dim; ++i) o[i] = 0.0;
        double e2[2];
        for (int a = 0; a < nd; ++a) {
            double th = 2.0 * M_PI * (a + 0.5) / nd;
            e2[0] = r * std::cos(th);
            e2[1] = r * std::sin(th);
            f(std::span<const double>(e2, 2), fx);
            for (int i = 0; i < out_dim; ++i) {
                o[i] += fx[i];
                o[out_dim] += std::abs(fx[i]);
            }
        }
        double w = 2.0 * M_PI * r * radial_profile_(r) / nd;
        for (int i = 0; i <= out_dim; ++i) o[i] *= w;
    };
    auto q = integrate_log_adaptive_vec(out_dim + 1, g, thr, radius_, rel_tol);
    if (!q.converged)
        throw NumericalError("quad_integrate: did not converge at k=" + std::to_string(k.k));
    for (int i = 0; i < out_dim; ++i) out[i] = q.value[i];
}

double LevyMeasure::integrate_scalar(TruncationIndex k,
                                     const std::function<double(std::span<const double>)>& f,
                                     double rel_tol) const {
    double out[1];
    integrate(
        k, 1, [&](std::span<const double> e, std::span<double> o) { o[0] = f(e); },
        std::span<double>(out, 1), rel_tol);
    return out[0];
}

void LevyMeasure::integrate_fixed(TruncationIndex k, int out_dim,
                                  const std::function<void(std::span<const double>, std::span<double>)>& f,
                                  std::span<double> out, int panels_per_side) const {
    const double thr = k.threshold();
    for (int i = 0; i < out_dim; ++i) out[i] = 0.0;
    if (thr >= radius_) return;
    if (dim_e_ != 1)
        throw ConfigError("integrate_fixed: only 1-d marks supported");
    const auto& gl = GaussLegendre::default_rule();
    const double la = std::log(thr), lb = std::log(radius_);
    const double h = (lb - la) / panels_per_side;
    std::vector<double> tmp(out_dim);
    double e[1];
    for (int side = 0; side < 2; ++side) {
        const bool pos = side == 0;
        for (int p = 0; p < panels_per_side; ++p) {
            const double x0 = std::exp(la + p * h);
            const double x1 = (p + 1 == panels_per_side) ? radius_ : std::exp(la + (p + 1) * h);
            const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
            for (int q = 0; q < gl.order(); ++q) {
                const double r = mid + half * gl.nodes()[q];
                const double w = half * gl.weights()[q] * (pos ? side_pos_(r) : side_neg_(r));
                e[0] = pos ? r : -r;
                f(std::span<const double>(e, 1), tmp);
                for (int i = 0; i < out_dim; ++i) {
                    if (!std::isfinite(tmp[i]))
                        throw NumericalError("integrate_fixed: integrand not finite at e=" +
                                             std::to_string(e[0]));
                    out[i] += w * tmp[i];
                }
            }
        }
    }
}

std::shared_ptr<const LevyMeasure::Sampler> LevyMeasure::sampler_for(int k) const {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->table.find(k);
    if (it != cache_->table.end()) return it->second;

    auto s = std::make_shared<Sampler>();
    TruncationIndex ki(k);
    const double thr = ki.threshold();
    s->mass = truncated_mass(ki);
    if (s->mass > 0.0 && thr < radius_) {
        if (dim_e_ == 1) {
            auto side_mass = [&](bool pos) {
                return integrate_log_adaptive(
                           [&](double r) { return pos ? side_pos_(r) : side_neg_(r); }, thr,
                           radius_, 1e-12)
                    .value;
            };
            double mp = side_mass(true), mn = side_mass(false);
            double tot = mp + mn;
            s->p_pos = tot > 0.0 ? mp / tot : 1.0;
            if (is_power_law_) {
                // closed-form radial inverse transform
                s->power_law = true;
                s->alpha = alpha_;
                s->thr = thr;
                s->radius = radius_;
            } else {
                // tabulated inverse CDF per side on a log grid
                auto build = [&](bool pos, std::vector<double>& grid, std::vector<double>& cdf) {
                    const int n = 512;
                    grid.resize(n + 1);
                    cdf.resize(n + 1);
                    double la = std::log(thr), lb = std::log(radius_);
                    for (int i = 0; i <= n; ++i) grid[i] = std::exp(la + (lb - la) * i / n);
                    grid[n] = radius_;
                    cdf[0] = 0.0;
                    for (int i = 1; i <= n; ++i) {
                        double seg = integrate_log_panels(
                            [&](double r) { return pos ? side_pos_(r) : side_neg_(r); },
                            grid[i - 1], grid[i], 1);
                        cdf[i] = cdf[i - 1] + std::max(seg, 0.0);
                    }
                    double tot_side = cdf[n];
                    if (tot_side > 0.0)
                        for (auto& c : cdf) c /= tot_side;
                };
                build(true, s->grid_pos, s->cdf_pos);
                build(false, s->grid_neg, s->cdf_neg);
            }
        } else {
            auto build_radial = [&](std::vector<double>& grid, std::vector<double>& cdf) {
                const int n = 512;
                grid.resize(n + 1);
                cdf.resize(n + 1);
                double la = std::log(thr), lb = std::log(radius_);
                for (int i = 0; i <= n; ++i) grid[i] = std::exp(la + (lb - la) * i / n);
                grid[n] = radius_;
                cdf[0] = 0.0;
                for (int i = 1; i <= n; ++i) {
                    double seg = integrate_log_panels(
                        [&](double r) { return 2.0 * M_PI * r * radial_profile_(r); },
                        grid[i - 1], grid[i], 1);
                    cdf[i] = cdf[i - 1] + std::max(seg, 0.0);
                }
                double tot = cdf[n];
                if (tot > 0.0)
                    for (auto& c : cdf) c /= tot;
            };
            build_radial(s->grid_pos, s->cdf_pos);
        }
    }
    cache_->table.emplace(k, s);
    return s;
}

JumpTrain LevyMeasure::sample_jumps(TruncationIndex k, double horizon, RngStream& stream) const {
    if (!(horizon > 0.0)) throw ConfigError("sample_jumps: horizon must be positive");
    auto s = sampler_for(k.k);
    JumpTrain train;
    train.dim_e = dim_e_;
    train.k = k.k;
    if (s->mass <= 0.0) return train;

    std::size_t n = draw_poisson(s->mass * horizon, stream);
    train.times.resize(n);
    train.marks.resize(n * static_cast<std::size_t>(dim_e_));
    for (std::size_t i = 0; i < n; ++i) train.times[i] = horizon * stream.next_double();
    std::sort(train.times.begin(), train.times.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (dim_e_ == 1) {
            bool pos = stream.next_double() < s->p_pos;
            double r = s->draw_radius(pos, stream.next_double());
            train.marks[i] = pos ? r : -r;
        } else {
            double r = s->draw_radius(true, stream.next_double());
            double th = 2.0 * M_PI * stream.next_double();
            train.marks[2 * i] = r * std::cos(th);
            train.marks[2 * i + 1] = r * std::sin(th);
        }
    }
    return train;
}

double LevyMeasure::band_integral(double r_lo, double r_hi, int sign,
                                  const std::function<double(double)>& f_signed_e,
                                  double rel_tol) const {
    if (dim_e_ != 1) throw ConfigError("band_integral: only 1-d marks supported");
    r_hi = std::min(r_hi, radius_);
    if (!(r_lo > 0.0) || !(r_hi > r_lo)) return 0.0;
    double total = 0.0;
    if (sign >= 0) {
        auto q = integrate_log_adaptive(
            [&](double r) { return side_pos_(r) * f_signed_e(r); }, r_lo, r_hi, rel_tol);
        if (!q.converged) throw NumericalError("band_integral: quadrature did not converge");
        total += q.value;
    }
    if (sign <= 0) {
        auto q = integrate_log_adaptive(
            [&](double r) { return side_neg_(r) * f_signed_e(-r); }, r_lo, r_hi, rel_tol);
        if (!q.converged) throw NumericalError("band_integral: quadrature did not converge");
        total += q.value;
    }
    return total;
}

double LevyMeasure::truncated_radial_cdf(TruncationIndex k, double r) const {
    const double thr = k.threshold();
    if (r <= thr) return 0.0;
    if (r >= radius_) return 1.0;
    double mass = truncated_mass(k);
    if (mass <= 0.0) return 0.0;
    double below;
    if (analytic_ && analytic_->mass_above) {
        below = analytic_->mass_above(thr) - analytic_->mass_above(r);
    } else if (dim_e_ == 1) {
        below = integrate_log_adaptive(
                    [this](double s) { return side_pos_(s) + side_neg_(s); }, thr, r, 1e-12)
                    .value;
    } else {
        below = integrate_log_adaptive(
                    [this](double s) { return 2.0 * M_PI * s * radial_profile_(s); }, thr, r,
                    1e-12)
                    .value;
    }
    return below / mass;
}

}  // namespace jbsde
