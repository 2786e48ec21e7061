#include "jbsde/operators.hpp"

#include <algorithm>
#include <cmath>

#include "jbsde/report.hpp"

namespace jbsde {

double nonlocal_b(const MeshSolution& sol, const ModelCoefficients& coeffs,
                  const LevyMeasure& measure, int i, double t, std::span<const double> x,
                  int panels_per_side) {
    const int kx = coeffs.dims.k_x;
    Vec bout(kx), xd(kx);
    const double base = sol.eval(t, x, i);
    double out[1];
    measure.integrate_fixed(
        sol.k, 1,
        [&](std::span<const double> e, std::span<double> o) {
            coeffs.beta(t, x, e, bout);
            for (int c = 0; c < kx; ++c) xd[c] = x[c] + bout[c];
            o[0] = coeffs.gamma[i](t, x, e) * (sol.eval(t, xd, i) - base);
        },
        std::span<double>(out, 1), panels_per_side);
    return out[0];
}

namespace {

void gradient_fd(const MeshSolution& sol, int i, double t, std::span<const double> x,
                 double fd_step, std::span<double> grad) {
    const int kx = static_cast<int>(x.size());
    Vec xp(x.begin(), x.end()), xm(x.begin(), x.end());
    for (int c = 0; c < kx; ++c) {
        xp[c] = x[c] + fd_step;
        xm[c] = x[c] - fd_step;
        grad[c] = (sol.eval(t, xp, i) - sol.eval(t, xm, i)) / (2.0 * fd_step);
        xp[c] = x[c];
        xm[c] = x[c];
    }
}

}  // namespace

double nonlocal_k(const MeshSolution& sol, const ModelCoefficients& coeffs,
                  const LevyMeasure& measure, int i, double t, std::span<const double> x,
                  double fd_step, int panels_per_side) {
    const int kx = coeffs.dims.k_x;
    if (!(fd_step > 0.0)) throw ConfigError("nonlocal_k: fd_step must be positive");
    Vec grad(kx);
    gradient_fd(sol, i, t, x, fd_step, grad);
    Vec bout(kx), xd(kx);
    const double base = sol.eval(t, x, i);
    double out[1];
    measure.integrate_fixed(
        sol.k, 1,
        [&](std::span<const double> e, std::span<double> o) {
            coeffs.beta(t, x, e, bout);
            double lin = 0.0;
            for (int c = 0; c < kx; ++c) {
                xd[c] = x[c] + bout[c];
                lin += bout[c] * grad[c];
            }
            o[0] = sol.eval(t, xd, i) - base - lin;
        },
        std::span<double>(out, 1), panels_per_side);
    return out[0];
}

ProbeResidual viscosity_residual(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                 const LevyMeasure& measure, double t,
                                 std::span<const double> x, const FdSteps& fd_in,
                                 int panels_per_side) {
    const Dims dims = coeffs.dims;
    const int kx = dims.k_x, d = dims.d, m = dims.m;
    FdSteps fd = fd_in;
    if (fd.fd_x <= 0.0) {
        double w = 0.0;
        for (int c = 0; c < kx; ++c) w = std::max(w, sol.basis.box().width(c));
        fd.fd_x = w / 200.0;
    }
    if (fd.fd_t <= 0.0) fd.fd_t = sol.grid.dt();

    ProbeResidual pr;
    pr.t = t;
    pr.x.assign(x.begin(), x.end());
    pr.fd_x = fd.fd_x;
    pr.fd_t = fd.fd_t;
    pr.quad_tol = 0.0;
    pr.residual.resize(m);

    const bool near_terminal = t + fd.fd_t > sol.grid.T - 1e-12;
    const bool near_start = t - fd.fd_t < sol.grid.t0 + 1e-12;
    pr.classification = sol.in_design_box(x)
                            ? (near_terminal ? "near-terminal" : "interior")
                            : "extrapolated";

    Vec bvec(kx), sigma(static_cast<std::size_t>(kx) * d);
    coeffs.b(t, x, bvec);
    coeffs.sigma(t, x, sigma);

    // time-interpolated evaluation keeps the time derivative meaningful
    auto eval_t = [&](double tt, std::span<const double> xx, int i) {
        return sol.eval_interp(tt, xx, i);
    };

    Vec y(m);
    for (int i = 0; i < m; ++i) y[i] = eval_t(t, x, i);

    for (int i = 0; i < m; ++i) {
        double du_dt;
        if (near_terminal) {
            du_dt = (eval_t(t, x, i) - eval_t(t - fd.fd_t, x, i)) / fd.fd_t;
        } else if (near_start) {
            du_dt = (eval_t(t + fd.fd_t, x, i) - eval_t(t, x, i)) / fd.fd_t;
        } else {
            du_dt = (eval_t(t + fd.fd_t, x, i) - eval_t(t - fd.fd_t, x, i)) / (2.0 * fd.fd_t);
        }

        // first and second space derivatives at the interpolated time
        Vec grad(kx);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(kx, kx);
        Vec xp(x.begin(), x.end()), xm(x.begin(), x.end());
        const double base = eval_t(t, x, i);
        for (int c = 0; c < kx; ++c) {
            xp[c] = x[c] + fd.fd_x;
            xm[c] = x[c] - fd.fd_x;
            double up = eval_t(t, xp, i), um = eval_t(t, xm, i);
            grad[c] = (up - um) / (2.0 * fd.fd_x);
            hess(c, c) = (up - 2.0 * base + um) / (fd.fd_x * fd.fd_x);
            xp[c] = x[c];
            xm[c] = x[c];
        }
        for (int c = 0; c < kx; ++c) {
            for (int cc = c + 1; cc < kx; ++cc) {
                Vec xpp(x.begin(), x.end()), xpm(x.begin(), x.end());
                Vec xmp(x.begin(), x.end()), xmm(x.begin(), x.end());
                xpp[c] += fd.fd_x;
                xpp[cc] += fd.fd_x;
                xpm[c] += fd.fd_x;
                xpm[cc] -= fd.fd_x;
                xmp[c] -= fd.fd_x;
                xmp[cc] += fd.fd_x;
                xmm[c] -= fd.fd_x;
                xmm[cc] -= fd.fd_x;
                double v = (eval_t(t, xpp, i) - eval_t(t, xpm, i) - eval_t(t, xmp, i) +
                            eval_t(t, xmm, i)) /
                           (4.0 * fd.fd_x * fd.fd_x);
                hess(c, cc) = v;
                hess(cc, c) = v;
            }
        }

        double drift_term = 0.0;
        for (int c = 0; c < kx; ++c) drift_term += bvec[c] * grad[c];
        // (1/2) Tr(sigma sigma^T H)
        double diff_term = 0.0;
        for (int c = 0; c < kx; ++c)
            for (int cc = 0; cc < kx; ++cc) {
                double ssT = 0.0;
                for (int l = 0; l < d; ++l) ssT += sigma[c * d + l] * sigma[cc * d + l];
                diff_term += ssT * hess(c, cc);
            }
        diff_term *= 0.5;

        double k_term = nonlocal_k(sol, coeffs, measure, i, t, x, fd.fd_x, panels_per_side);
        double b_term = nonlocal_b(sol, coeffs, measure, i, t, x, panels_per_side);

        Vec z(d, 0.0);
        for (int l = 0; l < d; ++l) {
            double v = 0.0;
            for (int c = 0; c < kx; ++c) v += sigma[c * d + l] * grad[c];
            z[l] = v;
        }
        double hterm = coeffs.h[i](t, x, y, z, b_term);
        pr.residual[i] = -du_dt - drift_term - diff_term - k_term - hterm;
    }
    return pr;
}

double ResidualReport::max_abs(int i) const {
    double v = 0.0;
    for (const auto& p : probes) v = std::max(v, std::abs(p.residual[i]));
    return v;
}

double ResidualReport::median_abs(int i) const {
    std::vector<double> vals;
    vals.reserve(probes.size());
    for (const auto& p : probes) vals.push_back(std::abs(p.residual[i]));
    if (vals.empty()) return 0.0;
    std::sort(vals.begin(), vals.end());
    return vals[vals.size() / 2];
}

void ResidualReport::write_csv(std::ostream& os) const {
    os << "t,x,equation,residual,classification,fd_x,fd_t\n";
    for (const auto& p : probes) {
        for (std::size_t i = 0; i < p.residual.size(); ++i) {
            os << fmt(p.t) << ",";
            for (std::size_t c = 0; c < p.x.size(); ++c) os << (c ? ";" : "") << fmt(p.x[c]);
            os << "," << i << "," << fmt(p.residual[i]) << "," << p.classification << ","
               << fmt(p.fd_x) << "," << fmt(p.fd_t) << "\n";
        }
    }
}

ResidualReport residual_survey(const MeshSolution& sol, const ModelCoefficients& coeffs,
                               const LevyMeasure& measure,
                               const std::vector<std::pair<double, Vec>>& probes,
                               const FdSteps& fd, int panels_per_side) {
    ResidualReport rep;
    rep.probes.reserve(probes.size());
    for (const auto& [t, x] : probes)
        rep.probes.push_back(viscosity_residual(sol, coeffs, measure, t, x, fd, panels_per_side));
    return rep;
}

DiagnosticsReport terminal_consistency(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                       const std::vector<Vec>& xs) {
    DiagnosticsReport rep;
    for (int i = 0; i < coeffs.dims.m; ++i) {
        double worst = 0.0;
        Vec witness;
        for (const auto& x : xs) {
            double err = std::abs(sol.eval_layer(sol.grid.n_steps, x, i) - coeffs.g[i](x));
            if (err > worst) {
                worst = err;
                witness = x;
            }
        }
        std::string w;
        for (std::size_t c = 0; c < witness.size(); ++c)
            w += (c ? ";" : "x=") + std::to_string(witness[c]);
        rep.add("terminal_match_eq" + std::to_string(i), true, worst, 0.0, w);
    }
    return rep;
}

}  // namespace jbsde
