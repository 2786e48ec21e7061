#include "jbsde/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace jbsde {

double effective_driver(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                        TruncationIndex k, int i, double t, std::span<const double> x,
                        std::span<const double> y, std::span<const double> z,
                        const std::function<double(std::span<const double>)>& zeta,
                        double quad_rel_tol) {
    if (i < 0 || i >= coeffs.dims.m) throw ConfigError("effective_driver: equation index");
    double q = measure.integrate_scalar(
        k,
        [&](std::span<const double> e) { return coeffs.gamma[i](t, x, e) * zeta(e); },
        quad_rel_tol);
    double v = coeffs.h[i](t, x, y, z, q);
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "effective_driver: non-finite driver value at equation " << i << ", t=" << t;
        throw NumericalError(os.str());
    }
    return v;
}

namespace {

std::string point_str(std::span<const double> x) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
    os << ")";
    return os.str();
}

struct PairCheck {
    double max_ratio = 0.0;
    std::string witness;
};

// worst ratio of |f(x)-f(x')| (or a caller-supplied numerator) against
// rho^(1/p)(|x-x'|^p)
template <class Num>
PairCheck scan_pairs(const PairList& pairs, const ConcaveModulus& rho, double p, Num&& numerator) {
    PairCheck out;
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto& [x, xp] = pairs[idx];
        double dist = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) {
            double d = x[c] - xp[c];
            dist += d * d;
        }
        dist = std::sqrt(dist);
        if (dist == 0.0) continue;
        double bound = std::pow(rho.rho(std::pow(dist, p)), 1.0 / p);
        double num = numerator(x, xp);
        double ratio = bound > 0.0 ? num / bound
                                   : (num <= 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        if (ratio > out.max_ratio) {
            out.max_ratio = ratio;
            out.witness = point_str(x) + " vs " + point_str(xp);
        }
    }
    return out;
}

constexpr double kRatioTol = 1e-9;  // equality cases count as passing

}  // namespace

DiagnosticsReport mao_distance_test(const PointMap& f, int out_dim, const ConcaveModulus& rho,
                                    double p, const PairList& pairs) {
    if (p < 2.0) throw ConfigError("mao_distance_test: p must be >= 2");
    Vec fa(out_dim), fb(out_dim);
    auto pc = scan_pairs(pairs, rho, p, [&](const Vec& x, const Vec& xp) {
        f(x, fa);
        f(xp, fb);
        double s = 0.0;
        for (int c = 0; c < out_dim; ++c) s += (fa[c] - fb[c]) * (fa[c] - fb[c]);
        return std::sqrt(s);
    });
    DiagnosticsReport rep;
    rep.add("mao_distance", pc.max_ratio <= 1.0 + kRatioTol, pc.max_ratio, 1.0, pc.witness);
    return rep;
}

DiagnosticsReport one_sided_mao_test(const PointMap& f, const ConcaveModulus& rho, double p,
                                     const PairList& pairs) {
    if (p < 2.0) throw ConfigError("one_sided_mao_test: p must be >= 2");
    if (pairs.empty()) {
        DiagnosticsReport rep;
        rep.add("mao_one_sided", true, 0.0, 1.0);
        return rep;
    }
    const int dim = static_cast<int>(pairs.front().first.size());
    Vec fa(dim), fb(dim);
    auto pc = scan_pairs(pairs, rho, p, [&](const Vec& x, const Vec& xp) {
        f(x, fa);
        f(xp, fb);
        double dist = 0.0, proj = 0.0;
        for (int c = 0; c < dim; ++c) {
            double dx = x[c] - xp[c];
            dist += dx * dx;
            proj += dx * (fa[c] - fb[c]);
        }
        dist = std::sqrt(dist);
        return dist > 0.0 ? proj / dist : 0.0;
    });
    // the projection is bounded by the norm, so a two-sided pass implies
    // a one-sided pass pair by pair
    Vec ga(dim), gb(dim);
    double max_excess = 0.0;
    std::string excess_witness;
    for (const auto& [x, xp] : pairs) {
        f(x, ga);
        f(xp, gb);
        double dist = 0.0, proj = 0.0, nrm = 0.0;
        for (int c = 0; c < dim; ++c) {
            double dx = x[c] - xp[c];
            dist += dx * dx;
            double df = ga[c] - gb[c];
            proj += dx * df;
            nrm += df * df;
        }
        dist = std::sqrt(dist);
        if (dist == 0.0) continue;
        double excess = proj / dist - std::sqrt(nrm);
        if (excess > max_excess) {
            max_excess = excess;
            excess_witness = point_str(x) + " vs " + point_str(xp);
        }
    }
    DiagnosticsReport rep;
    rep.add("mao_one_sided", pc.max_ratio <= 1.0 + kRatioTol, pc.max_ratio, 1.0, pc.witness);
    rep.add("one_sided_implied_by_two_sided", max_excess <= 1e-12, max_excess, 0.0,
            excess_witness);
    return rep;
}

DiagnosticsReport validate_assumptions(const ModelCoefficients& coeffs,
                                       const LevyMeasure& measure, const SamplePlan& plan_in) {
    SamplePlan plan = plan_in;
    const Dims& dims = coeffs.dims;
    if (plan.box_lo.empty()) plan.box_lo.assign(dims.k_x, -5.0);
    if (plan.box_hi.empty()) plan.box_hi.assign(dims.k_x, 5.0);
    if (static_cast<int>(plan.box_lo.size()) != dims.k_x ||
        static_cast<int>(plan.box_hi.size()) != dims.k_x)
        throw ConfigError("validate_assumptions: box dimensions do not match k_x");
    plan.t_hi = std::max(plan.t_hi, plan.t_lo);

    DiagnosticsReport rep;
    RngStream rng(plan.seed, streams::validation);
    const double C = coeffs.lipschitz_const;
    const double R = measure.support_radius();

    auto rand_x = [&](Vec& x) {
        x.resize(dims.k_x);
        for (int c = 0; c < dims.k_x; ++c)
            x[c] = plan.box_lo[c] + (plan.box_hi[c] - plan.box_lo[c]) * rng.next_double();
    };
    auto rand_t = [&]() { return plan.t_lo + (plan.t_hi - plan.t_lo) * rng.next_double(); };
    auto rand_mark = [&](Vec& e) {
        // log-uniform magnitude over [e_floor, R] so the e -> 0 regime is probed
        e.resize(dims.ell);
        double r = plan.e_floor * std::pow(R / plan.e_floor, rng.next_double());
        if (dims.ell == 1) {
            e[0] = rng.next_double() < 0.5 ? r : -r;
        } else {
            double th = 2.0 * M_PI * rng.next_double();
            e[0] = r * std::cos(th);
            e[1] = r * std::sin(th);
        }
        return r;
    };

    // jump-size bounds: |beta(t,x,e)|, |gamma_i(t,x,e)| <= C(1 ^ |e|)
    {
        Vec x, e, bout(dims.k_x);
        double worst_b = 0.0, worst_g = 0.0;
        std::string wit_b, wit_g;
        for (int n = 0; n < plan.n_points; ++n) {
            double t = rand_t();
            rand_x(x);
            double r = rand_mark(e);
            double cap = C * std::min(1.0, r);
            coeffs.beta(t, x, e, bout);
            double rb = norm2(bout) / cap;
            if (rb > worst_b) {
                worst_b = rb;
                wit_b = "t=" + std::to_string(t) + " x=" + point_str(x) +
                        " e=" + point_str(e);
            }
            for (int i = 0; i < dims.m; ++i) {
                double rg = std::abs(coeffs.gamma[i](t, x, e)) / cap;
                if (rg > worst_g) {
                    worst_g = rg;
                    wit_g = "eq " + std::to_string(i) + " t=" + std::to_string(t) +
                            " x=" + point_str(x) + " e=" + point_str(e);
                }
            }
        }
        rep.add("beta_jump_bound", worst_b <= 1.0 + kRatioTol, worst_b, 1.0, wit_b);
        rep.add("gamma_jump_bound", worst_g <= 1.0 + kRatioTol, worst_g, 1.0, wit_g);
    }

    // driver Lipschitz continuity in (y,z,q) with the declared constant
    {
        Vec x, y0(dims.m), y1(dims.m), z0(dims.d), z1(dims.d);
        double worst = 0.0;
        std::string wit;
        for (int n = 0; n < plan.n_pairs; ++n) {
            double t = rand_t();
            rand_x(x);
            for (int c = 0; c < dims.m; ++c) {
                y0[c] = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
                y1[c] = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
            }
            for (int c = 0; c < dims.d; ++c) {
                z0[c] = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
                z1[c] = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
            }
            double q0 = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
            double q1 = plan.yzq_box * (2.0 * rng.next_double() - 1.0);
            double den = 0.0;
            for (int c = 0; c < dims.m; ++c) den += std::abs(y0[c] - y1[c]);
            double dz = 0.0;
            for (int c = 0; c < dims.d; ++c) dz += (z0[c] - z1[c]) * (z0[c] - z1[c]);
            den += std::sqrt(dz) + std::abs(q0 - q1);
            if (den == 0.0) continue;
            for (int i = 0; i < dims.m; ++i) {
                double dh = std::abs(coeffs.h[i](t, x, y0, z0, q0) -
                                     coeffs.h[i](t, x, y1, z1, q1));
                double ratio = dh / (C * den);
                if (ratio > worst) {
                    worst = ratio;
                    wit = "eq " + std::to_string(i) + " t=" + std::to_string(t) +
                          " x=" + point_str(x);
                }
            }
        }
        rep.add("driver_lipschitz_yzq", worst <= 1.0 + kRatioTol, worst, 1.0, wit);
    }

    // modulus continuity in x for every state-dependent coefficient;
    // separations are drawn log-uniformly so the origin regime is probed
    {
        PairList pairs;
        pairs.reserve(plan.n_pairs);
        double wmax = 0.0;
        for (int c = 0; c < dims.k_x; ++c) wmax = std::max(wmax, plan.box_hi[c] - plan.box_lo[c]);
        for (int n = 0; n < plan.n_pairs; ++n) {
            Vec x, xp;
            rand_x(x);
            xp = x;
            double delta = wmax * std::pow(1e-8, rng.next_double());
            for (int c = 0; c < dims.k_x; ++c) {
                double dir = 2.0 * rng.next_double() - 1.0;
                xp[c] = std::clamp(x[c] + dir * delta, plan.box_lo[c], plan.box_hi[c]);
            }
            pairs.emplace_back(std::move(x), std::move(xp));
        }
        const double p = 2.0;
        double t_fix = 0.5 * (plan.t_lo + plan.t_hi);

        auto add_mao = [&](const std::string& name, const PointMap& f, int out_dim,
                           const ConcaveModulus& rho) {
            auto sub = mao_distance_test(f, out_dim, rho, p, pairs);
            const auto& e = sub.entries.front();
            rep.add(name, e.pass, e.observed, e.bound, e.witness);
        };

        add_mao("drift_modulus",
                [&](std::span<const double> x, std::span<double> out) { coeffs.b(t_fix, x, out); },
                dims.k_x, coeffs.moduli.b);
        add_mao("diffusion_modulus",
                [&](std::span<const double> x, std::span<double> out) {
                    coeffs.sigma(t_fix, x, out);
                },
                dims.k_x * dims.d, coeffs.moduli.sigma);
        {
            Vec e_fix(dims.ell, 0.0);
            e_fix[0] = 0.5 * R;
            add_mao("beta_modulus",
                    [&](std::span<const double> x, std::span<double> out) {
                        coeffs.beta(t_fix, x, e_fix, out);
                    },
                    dims.k_x, coeffs.moduli.beta);
            double worst = 0.0;
            std::string wit;
            for (int i = 0; i < dims.m; ++i) {
                auto sub = mao_distance_test(
                    [&](std::span<const double> x, std::span<double> out) {
                        out[0] = coeffs.gamma[i](t_fix, x, e_fix);
                    },
                    1, coeffs.moduli.gamma, p, pairs);
                if (sub.entries.front().observed > worst) {
                    worst = sub.entries.front().observed;
                    wit = "eq " + std::to_string(i) + ": " + sub.entries.front().witness;
                }
            }
            rep.add("gamma_modulus", worst <= 1.0 + kRatioTol, worst, 1.0, wit);
        }
        {
            double worst = 0.0;
            std::string wit;
            for (int i = 0; i < dims.m; ++i) {
                auto sub = mao_distance_test(
                    [&](std::span<const double> x, std::span<double> out) {
                        out[0] = coeffs.g[i](x);
                    },
                    1, coeffs.moduli.g, p, pairs);
                if (sub.entries.front().observed > worst) {
                    worst = sub.entries.front().observed;
                    wit = "eq " + std::to_string(i) + ": " + sub.entries.front().witness;
                }
            }
            rep.add("terminal_modulus", worst <= 1.0 + kRatioTol, worst, 1.0, wit);
        }
        {
            Vec y_fix(dims.m, 0.3), z_fix(dims.d, -0.2);
            double q_fix = 0.1;
            double worst = 0.0;
            std::string wit;
            for (int i = 0; i < dims.m; ++i) {
                auto sub = mao_distance_test(
                    [&](std::span<const double> x, std::span<double> out) {
                        out[0] = coeffs.h[i](t_fix, x, y_fix, z_fix, q_fix);
                    },
                    1, coeffs.moduli.h, p, pairs);
                if (sub.entries.front().observed > worst) {
                    worst = sub.entries.front().observed;
                    wit = "eq " + std::to_string(i) + ": " + sub.entries.front().witness;
                }
            }
            rep.add("driver_modulus_x", worst <= 1.0 + kRatioTol, worst, 1.0, wit);
        }
    }

    // shape of the declared moduli themselves
    {
        const ConcaveModulus* mods[] = {&coeffs.moduli.b, &coeffs.moduli.sigma,
                                        &coeffs.moduli.beta, &coeffs.moduli.gamma,
                                        &coeffs.moduli.g, &coeffs.moduli.h};
        bool ok = true;
        std::string wit;
        for (const auto* m : mods) {
            auto chk = check_modulus(*m);
            if (!chk.ok) {
                ok = false;
                wit = m->name + ": " + chk.what + " at u=" + std::to_string(chk.at_u);
                break;
            }
        }
        rep.add("modulus_shape", ok, ok ? 0.0 : 1.0, 0.0, wit);
    }

    return rep;
}

}  // namespace jbsde
