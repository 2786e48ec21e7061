#include "jbsde/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jbsde/report.hpp"

namespace jbsde {

namespace {

// one Gram factorization per time step, reused across the c/z/u fits
struct StepSolver {
    Eigen::MatrixXd gram;
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    double condition = 0.0;
    double ridge = 0.0;

    StepSolver(const Eigen::MatrixXd& design, double cond_cap, int step) {
        gram = design.transpose() * design;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        double lmax = es.eigenvalues().maxCoeff();
        double lmin = es.eigenvalues().minCoeff();
        if (!(lmax > 0.0) || !std::isfinite(lmax))
            throw NumericalError("solve_backward: degenerate design at step " +
                                 std::to_string(step));
        condition = std::sqrt(lmax / std::max(lmin, 0.0));
        if (!std::isfinite(condition)) condition = std::numeric_limits<double>::infinity();
        if (!(condition <= cond_cap)) {
            ridge = lmax / (cond_cap * cond_cap);
            gram.diagonal().array() += ridge;
        }
        ldlt.compute(gram);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("solve_backward: Gram factorization failed at step " +
                                 std::to_string(step) + " (condition " +
                                 std::to_string(condition) + ")");
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                          int step) const {
        if (!targets.allFinite())
            throw NumericalError("solve_backward: non-finite regression target at step " +
                                 std::to_string(step));
        Eigen::MatrixXd coef = ldlt.solve(design.transpose() * targets);
        if (!coef.allFinite())
            throw NumericalError("solve_backward: non-finite coefficients at step " +
                                 std::to_string(step));
        return coef;
    }
};

Eigen::MatrixXd build_design(const RegressionBasis& basis, const PathEnsemble& ens, int node) {
    const std::size_t P = ens.n_paths;
    const int B = basis.size();
    Eigen::MatrixXd phi(P, B);
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < static_cast<long long>(P); ++p) {
        std::vector<double> r(B);
        basis.eval(ens.state(static_cast<std::size_t>(p), node), r);
        for (int b = 0; b < B; ++b) phi(p, b) = r[b];
    }
    return phi;
}

// integral over the truncated measure of gamma-weighted shift operators:
// maps next-layer coefficients to the coefficients of the nonlocal term
struct ShiftKernels {
    Eigen::MatrixXd plain;               // gamma == 1 (compensator of the jump field)
    std::vector<Eigen::MatrixXd> gamma;  // per equation
};

ShiftKernels build_shift_kernels(const RegressionBasis& basis, const ModelCoefficients& coeffs,
                                 const LevyMeasure& measure, TruncationIndex k, double t,
                                 int panels_per_side) {
    const int B = basis.size();
    const int m = coeffs.dims.m;
    ShiftKernels kern;
    kern.plain = Eigen::MatrixXd::Zero(B, B);
    kern.gamma.assign(m, Eigen::MatrixXd::Zero(B, B));
    Vec x_dummy(coeffs.dims.k_x, 0.0);
    Vec beta_out(coeffs.dims.k_x);
    const double thr = k.threshold();
    const double R = measure.support_radius();
    if (thr >= R) return kern;

    const auto& gl = GaussLegendre::default_rule();
    const double la = std::log(thr), lb = std::log(R);
    const double h = (lb - la) / panels_per_side;
    double e[1];
    for (int side = 0; side < 2; ++side) {
        const bool pos = side == 0;
        for (int pnl = 0; pnl < panels_per_side; ++pnl) {
            const double x0 = std::exp(la + pnl * h);
            const double x1 = (pnl + 1 == panels_per_side) ? R : std::exp(la + (pnl + 1) * h);
            const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
            for (int q = 0; q < gl.order(); ++q) {
                const double r = mid + half * gl.nodes()[q];
                e[0] = pos ? r : -r;
                std::span<const double> es(e, 1);
                const double w = half * gl.weights()[q] * measure.density(es);
                if (w == 0.0) continue;
                coeffs.beta(t, x_dummy, es, beta_out);
                Eigen::MatrixXd s = basis.shift_matrix_1d(beta_out[0]);
                s.diagonal().array() -= 1.0;  // increment u(x+beta) - u(x)
                kern.plain += w * s;
                for (int i = 0; i < m; ++i)
                    kern.gamma[i] += (w * coeffs.gamma[i](t, x_dummy, es)) * s;
            }
        }
    }
    return kern;
}

bool fast_nonlocal_ok(const RegressionBasis& basis, const ModelCoefficients& coeffs) {
    return basis.supports_shift() && coeffs.traits.beta_state_independent &&
           coeffs.traits.gamma_state_independent && coeffs.dims.ell == 1 &&
           coeffs.dims.k_x == 1;
}

}  // namespace

Box design_box(const PathEnsemble& ens, double pad_frac) {
    const int kx = ens.dims.k_x;
    Box box;
    box.lo.assign(kx, std::numeric_limits<double>::infinity());
    box.hi.assign(kx, -std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        for (int j = 0; j < ens.grid.n_nodes(); ++j) {
            auto s = ens.state(p, j);
            for (int c = 0; c < kx; ++c) {
                box.lo[c] = std::min(box.lo[c], s[c]);
                box.hi[c] = std::max(box.hi[c], s[c]);
            }
        }
    }
    for (int c = 0; c < kx; ++c) {
        double w = std::max(box.hi[c] - box.lo[c], 1e-8);
        box.lo[c] -= pad_frac * w;
        box.hi[c] += pad_frac * w;
    }
    return box;
}

int MeshSolution::nearest_layer(double t) const {
    int j = static_cast<int>(std::lround((t - grid.t0) / grid.dt()));
    return std::clamp(j, 0, grid.n_steps);
}

double MeshSolution::eval_layer(int j, std::span<const double> x, int i) const {
    Eigen::VectorXd phi = basis.eval_vec(x);
    return phi.dot(layers[j].u.col(i));
}

void MeshSolution::eval_layer_all(int j, std::span<const double> x,
                                  std::span<double> y_out) const {
    Eigen::VectorXd phi = basis.eval_vec(x);
    for (int i = 0; i < dims.m; ++i) y_out[i] = phi.dot(layers[j].u.col(i));
}

double MeshSolution::eval_interp(double t, std::span<const double> x, int i) const {
    const double dt = grid.dt();
    double s = (t - grid.t0) / dt;
    int j0 = std::clamp(static_cast<int>(std::floor(s)), 0, grid.n_steps);
    int j1 = std::min(j0 + 1, grid.n_steps);
    double w = std::clamp(s - j0, 0.0, 1.0);
    if (j0 == j1) return eval_layer(j0, x, i);
    return (1.0 - w) * eval_layer(j0, x, i) + w * eval_layer(j1, x, i);
}

double MeshSolution::eval(double t, std::span<const double> x, int i, bool* extrapolated) const {
    if (extrapolated) *extrapolated = !in_design_box(x);
    if (time_interpolation) return eval_interp(t, x, i);
    return eval_layer(nearest_layer(t), x, i);
}

void MeshSolution::eval_all(double t, std::span<const double> x, std::span<double> y_out,
                            bool* extrapolated) const {
    if (extrapolated) *extrapolated = !in_design_box(x);
    if (time_interpolation) {
        for (int i = 0; i < dims.m; ++i) y_out[i] = eval_interp(t, x, i);
    } else {
        eval_layer_all(nearest_layer(t), x, y_out);
    }
}

void MeshSolution::eval_z_layer(int j, std::span<const double> x, int i,
                                std::span<double> z_out) const {
    j = std::min(j, grid.n_steps - 1);  // terminal node carries no z fit
    Eigen::VectorXd phi = basis.eval_vec(x);
    for (int l = 0; l < dims.d; ++l) z_out[l] = phi.dot(layers[j].z.col(i * dims.d + l));
}

void MeshSolution::eval_z(double t, std::span<const double> x, int i,
                          std::span<double> z_out) const {
    eval_z_layer(std::min(nearest_layer(t), grid.n_steps - 1), x, i, z_out);
}

MeshSolution solve_backward(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                            const PathEnsemble& ensemble, const RegressionBasis& basis,
                            const SolveOptions& opt) {
    const Dims dims = coeffs.dims;
    if (!(ensemble.dims == dims)) throw ConfigError("solve_backward: dimension mismatch");
    if (basis.dim() != dims.k_x) throw ConfigError("solve_backward: basis dimension mismatch");
    const int N = ensemble.grid.n_steps;
    const std::size_t P = ensemble.n_paths;
    const int B = basis.size();
    const int m = dims.m, d = dims.d;
    const double dt = ensemble.grid.dt();

    MeshSolution sol;
    sol.grid = ensemble.grid;
    sol.k = ensemble.k;
    sol.dims = dims;
    sol.basis = basis;
    sol.layers.resize(N + 1);
    sol.n_paths = P;
    sol.seed = ensemble.seed;
    sol.time_interpolation = opt.time_interpolation;
    sol.extrapolation_margin = opt.extrapolation_margin;

    const bool fast = fast_nonlocal_ok(basis, coeffs);

    // terminal layer: project the terminal condition
    Eigen::MatrixXd phi_next = build_design(basis, ensemble, N);
    {
        Eigen::MatrixXd gvals(P, m);
        for (std::size_t p = 0; p < P; ++p) {
            auto x = ensemble.state(p, N);
            for (int i = 0; i < m; ++i) gvals(p, i) = coeffs.g[i](x);
        }
        StepSolver ss(phi_next, opt.cond_cap, N);
        sol.layers[N].u = ss.solve(phi_next, gvals, N);
        sol.layers[N].z = Eigen::MatrixXd::Zero(B, m * d);
        sol.layers[N].cond_u = ss.condition;
        sol.max_condition = ss.condition;
        sol.terminal_fit_residual =
            (phi_next * sol.layers[N].u - gvals).array().abs().maxCoeff();
    }

    Vec beta_out(dims.k_x), xdisp(dims.k_x);
    for (int j = N - 1; j >= 0; --j) {
        const double t = ensemble.grid.node(j);
        Eigen::MatrixXd phi_cur = build_design(basis, ensemble, j);
        StepSolver ss(phi_cur, opt.cond_cap, j);
        sol.max_condition = std::max(sol.max_condition, ss.condition);

        // value of the next layer along the paths
        Eigen::MatrixXd u_next_vals = phi_next * sol.layers[j + 1].u;  // P x m

        // continuation: conditional expectation of the next layer
        Eigen::MatrixXd c_coef = ss.solve(phi_cur, u_next_vals, j);
        Eigen::MatrixXd c_vals = phi_cur * c_coef;  // P x m

        // gradient surrogate from Brownian-increment regression; the
        // continuation is subtracted as a control variate
        if (opt.z_by_regression) {
            Eigen::MatrixXd z_targets(P, m * d);
            for (std::size_t p = 0; p < P; ++p) {
                auto db = ensemble.db(p, j);
                for (int i = 0; i < m; ++i) {
                    double delta = u_next_vals(p, i) - c_vals(p, i);
                    for (int l = 0; l < d; ++l)
                        z_targets(p, i * d + l) = delta * db[l] / dt;
                }
            }
            sol.layers[j].z = ss.solve(phi_cur, z_targets, j);
        } else {
            // central differences of the continuation, mapped through sigma
            Eigen::MatrixXd z_targets(P, m * d);
            Vec sig(static_cast<std::size_t>(dims.k_x) * d);
            Vec xp(dims.k_x), xm(dims.k_x), php(B), phm(B);
            for (std::size_t p = 0; p < P; ++p) {
                auto x = ensemble.state(p, j);
                coeffs.sigma(t, x, sig);
                for (int i = 0; i < m; ++i) {
                    for (int l = 0; l < d; ++l) z_targets(p, i * d + l) = 0.0;
                    for (int c = 0; c < dims.k_x; ++c) {
                        double step = opt.z_fd_rel_step * basis.box().width(c);
                        std::copy(x.begin(), x.end(), xp.begin());
                        std::copy(x.begin(), x.end(), xm.begin());
                        xp[c] += step;
                        xm[c] -= step;
                        basis.eval(xp, php);
                        basis.eval(xm, phm);
                        double dudc = 0.0;
                        for (int b = 0; b < B; ++b)
                            dudc += (php[b] - phm[b]) * c_coef(b, i);
                        dudc /= 2.0 * step;
                        for (int l = 0; l < d; ++l)
                            z_targets(p, i * d + l) += sig[c * d + l] * dudc;
                    }
                }
            }
            sol.layers[j].z = ss.solve(phi_cur, z_targets, j);
        }
        Eigen::MatrixXd z_vals = phi_cur * sol.layers[j].z;  // P x (m*d)

        // nonlocal driver argument via the displaced next layer
        Eigen::MatrixXd gamma_vals(P, m);
        if (fast) {
            ShiftKernels kern =
                build_shift_kernels(basis, coeffs, measure, ensemble.k, t, opt.nonlocal_panels);
            for (int i = 0; i < m; ++i)
                gamma_vals.col(i) = phi_cur * (kern.gamma[i] * sol.layers[j + 1].u.col(i));
        } else {
            std::string error;
#pragma omp parallel for schedule(static)
            for (long long pi = 0; pi < static_cast<long long>(P); ++pi) {
                try {
                    std::size_t p = static_cast<std::size_t>(pi);
                    auto x = ensemble.state(p, j);
                    Vec bout(dims.k_x), xd(dims.k_x), phd(B);
                    Eigen::VectorXd phx = basis.eval_vec(x);
                    for (int i = 0; i < m; ++i) {
                        double base = phx.dot(sol.layers[j + 1].u.col(i));
                        double out[1];
                        measure.integrate_fixed(
                            ensemble.k, 1,
                            [&](std::span<const double> e, std::span<double> o) {
                                coeffs.beta(t, x, e, bout);
                                for (int c = 0; c < dims.k_x; ++c) xd[c] = x[c] + bout[c];
                                basis.eval(xd, phd);
                                double ud = 0.0;
                                for (int b = 0; b < B; ++b)
                                    ud += phd[b] * sol.layers[j + 1].u(b, i);
                                o[0] = coeffs.gamma[i](t, x, e) * (ud - base);
                            },
                            std::span<double>(out, 1), opt.nonlocal_panels);
                        gamma_vals(pi, i) = out[0];
                    }
                } catch (const std::exception& ex) {
#pragma omp critical
                    if (error.empty()) error = ex.what();
                }
            }
            if (!error.empty()) throw NumericalError(error);
        }

        // explicit step: driver evaluated at the continuation values
        Eigen::MatrixXd targets(P, m);
        {
            std::string error;
#pragma omp parallel for schedule(static)
            for (long long pi = 0; pi < static_cast<long long>(P); ++pi) {
                try {
                    std::size_t p = static_cast<std::size_t>(pi);
                    auto x = ensemble.state(p, j);
                    Vec y(m), z(d);
                    for (int i = 0; i < m; ++i) y[i] = c_vals(p, i);
                    for (int i = 0; i < m; ++i) {
                        for (int l = 0; l < d; ++l) z[l] = z_vals(p, i * d + l);
                        double f = coeffs.h[i](t, x, y, z, gamma_vals(p, i));
                        if (!std::isfinite(f))
                            throw NumericalError(
                                "solve_backward: non-finite driver at step " +
                                std::to_string(j) + ", equation " + std::to_string(i));
                        targets(p, i) = c_vals(p, i) + dt * f;
                    }
                } catch (const std::exception& ex) {
#pragma omp critical
                    if (error.empty()) error = ex.what();
                }
            }
            if (!error.empty()) throw NumericalError(error);
        }
        sol.layers[j].u = ss.solve(phi_cur, targets, j);
        sol.layers[j].cond_u = ss.condition;
        phi_next = std::move(phi_cur);
    }
    return sol;
}

double jump_increment_field(const MeshSolution& sol, const ModelCoefficients& coeffs, int i,
                            double t, std::span<const double> x, std::span<const double> e) {
    Vec bout(coeffs.dims.k_x), xd(coeffs.dims.k_x);
    coeffs.beta(t, x, e, bout);
    for (int c = 0; c < coeffs.dims.k_x; ++c) xd[c] = x[c] + bout[c];
    return sol.eval(t, xd, i) - sol.eval(t, x, i);
}

double nonlocal_gamma_term(const MeshSolution& sol, const ModelCoefficients& coeffs,
                           const LevyMeasure& measure, int i, int layer, double t,
                           std::span<const double> x, int panels_per_side) {
    const int kx = coeffs.dims.k_x;
    Vec bout(kx), xd(kx);
    const double base = sol.eval_layer(layer, x, i);
    double out[1];
    measure.integrate_fixed(
        sol.k, 1,
        [&](std::span<const double> e, std::span<double> o) {
            coeffs.beta(t, x, e, bout);
            for (int c = 0; c < kx; ++c) xd[c] = x[c] + bout[c];
            o[0] = coeffs.gamma[i](t, x, e) * (sol.eval_layer(layer, xd, i) - base);
        },
        std::span<double>(out, 1), panels_per_side);
    return out[0];
}

ResidualStats bsde_residual(const MeshSolution& sol, const ModelCoefficients& coeffs,
                            const LevyMeasure& measure, const PathEnsemble& fresh,
                            const SolveOptions& opt) {
    if (!(fresh.grid == sol.grid) || fresh.k.k != sol.k.k)
        throw ConfigError("bsde_residual: fresh ensemble must match the solution grid and k");
    const Dims dims = coeffs.dims;
    const int N = sol.grid.n_steps;
    const std::size_t P = fresh.n_paths;
    const int m = dims.m, d = dims.d, B = sol.basis.size();
    const double dt = sol.grid.dt();
    const bool fast = fast_nonlocal_ok(sol.basis, coeffs);

    std::vector<double> sq(m, 0.0);
    Vec y(m), z(d), bout(dims.k_x), xd(dims.k_x);

    for (int j = 0; j < N; ++j) {
        const double t = sol.grid.node(j);
        ShiftKernels kern;
        std::vector<Eigen::VectorXd> comp_coef(m), q_coef(m);
        if (fast) {
            kern = build_shift_kernels(sol.basis, coeffs, measure, sol.k, t,
                                       opt.nonlocal_panels);
            for (int i = 0; i < m; ++i) {
                comp_coef[i] = kern.plain * sol.layers[j + 1].u.col(i);
                q_coef[i] = kern.gamma[i] * sol.layers[j + 1].u.col(i);
            }
        }
        for (std::size_t p = 0; p < P; ++p) {
            auto x = fresh.state(p, j);
            auto xn = fresh.state(p, j + 1);
            Eigen::VectorXd phi = sol.basis.eval_vec(x);
            sol.eval_layer_all(j, x, y);
            auto db = fresh.db(p, j);
            const auto& train = fresh.jumps[p];

            for (int i = 0; i < m; ++i) {
                double y_next = sol.eval_layer(j + 1, xn, i);
                sol.eval_z_layer(j, x, i, z);

                // jump-increment sum over the step's marks
                double jump_sum = 0.0;
                double base = phi.dot(sol.layers[j + 1].u.col(i));
                for (std::size_t a = 0; a < train.size(); ++a) {
                    double tt = train.times[a];
                    if (tt <= t + 1e-15 || tt > sol.grid.node(j + 1) + 1e-15) continue;
                    auto e = train.mark(a);
                    coeffs.beta(t, x, e, bout);
                    for (int c = 0; c < dims.k_x; ++c) xd[c] = x[c] + bout[c];
                    jump_sum += sol.eval_layer(j + 1, xd, i) - base;
                }

                double comp, q;
                if (fast) {
                    comp = phi.dot(comp_coef[i]);
                    q = phi.dot(q_coef[i]);
                } else {
                    double out[1];
                    measure.integrate_fixed(
                        sol.k, 1,
                        [&](std::span<const double> e, std::span<double> o) {
                            coeffs.beta(t, x, e, bout);
                            for (int c = 0; c < dims.k_x; ++c) xd[c] = x[c] + bout[c];
                            o[0] = sol.eval_layer(j + 1, xd, i) - base;
                        },
                        std::span<double>(out, 1), opt.nonlocal_panels);
                    comp = out[0];
                    q = nonlocal_gamma_term(sol, coeffs, measure, i, j + 1, t, x,
                                            opt.nonlocal_panels);
                }

                double f = coeffs.h[i](t, x, y, z, q);
                double zdb = 0.0;
                for (int l = 0; l < d; ++l) zdb += z[l] * db[l];
                double eps = y_next - y[i] + dt * f - zdb - jump_sum + dt * comp;
                sq[i] += eps * eps;
            }
        }
    }
    ResidualStats rs;
    rs.n_paths = P;
    rs.n_steps = N;
    rs.dt = dt;
    rs.rms.resize(m);
    for (int i = 0; i < m; ++i) rs.rms[i] = std::sqrt(sq[i] / (double(P) * N));
    (void)B;
    return rs;
}

bool ConvergenceReport::gaps_decreasing(double n_sigma, const std::string& column) const {
    auto value = [&](const LadderRung& r) {
        if (column == "forward") return std::pair{r.forward_gap, r.forward_gap_se};
        if (column == "solution") return std::pair{r.solution_gap, r.solution_gap_se};
        if (column == "ufield") return std::pair{r.ufield_gap, r.ufield_gap_se};
        throw ConfigError("gaps_decreasing: unknown column " + column);
    };
    for (std::size_t r = 0; r + 1 < rungs.size(); ++r) {
        auto [v0, s0] = value(rungs[r]);
        auto [v1, s1] = value(rungs[r + 1]);
        if (!(v1 < v0 - n_sigma * std::sqrt(s0 * s0 + s1 * s1))) return false;
    }
    return true;
}

void ConvergenceReport::write_csv(std::ostream& os) const {
    os << "k_low,k_high,small_jump_moment_high,forward_gap,forward_gap_se,"
          "solution_gap,solution_gap_se,ufield_gap,ufield_gap_se\n";
    for (std::size_t r = 0; r < rungs.size(); ++r) {
        const auto& g = rungs[r];
        os << g.k_low << "," << g.k_high << "," << fmt(small_jump_moment[r + 1]) << ","
           << fmt(g.forward_gap) << "," << fmt(g.forward_gap_se) << ","
           << fmt(g.solution_gap) << "," << fmt(g.solution_gap_se) << ","
           << fmt(g.ufield_gap) << "," << fmt(g.ufield_gap_se) << "\n";
    }
}

ConvergenceReport ladder_study(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                               const LadderConfig& cfg) {
    if (cfg.ks.size() < 3) throw ConfigError("ladder_study: need at least three levels");
    for (std::size_t i = 0; i + 1 < cfg.ks.size(); ++i)
        if (cfg.ks[i] >= cfg.ks[i + 1])
            throw ConfigError("ladder_study: levels must be strictly increasing");
    if (measure.dim_e() != 1) throw ConfigError("ladder_study: 1-d marks only");
    const int L = static_cast<int>(cfg.ks.size());
    const int R = std::max(1, cfg.replicates);
    const int m = coeffs.dims.m;

    ConvergenceReport rep;
    rep.ks = cfg.ks;
    rep.replicates = R;
    rep.small_jump_moment.resize(L);
    for (int l = 0; l < L; ++l)
        rep.small_jump_moment[l] = measure.small_jump_second_moment(TruncationIndex(cfg.ks[l]));
    rep.rungs.resize(L - 1);

    // per-replicate rung statistics
    std::vector<std::vector<double>> fwd(L - 1), gap(L - 1), ugap(L - 1);

    for (int rep_i = 0; rep_i < R; ++rep_i) {
        std::uint64_t seed_r = cfg.seed + 7919ULL * static_cast<std::uint64_t>(rep_i);
        TruncationIndex k_top(cfg.ks.back());
        PathEnsemble reservoir = simulate_forward(coeffs, measure, k_top, cfg.grid, cfg.x0,
                                                  cfg.n_paths, seed_r);
        RegressionBasis basis = cfg.basis ? *cfg.basis
                                          : RegressionBasis::polynomial(
                                                cfg.basis_degree, design_box(reservoir));
        std::vector<Vec> probes = cfg.probe_points;
        if (probes.empty()) {
            // interior probes spanning the middle of the design box
            const Box& bb = basis.box();
            for (int q = 0; q < 5; ++q) {
                Vec x(coeffs.dims.k_x);
                for (int c = 0; c < coeffs.dims.k_x; ++c)
                    x[c] = bb.lo[c] + (0.2 + 0.15 * q) * (bb.hi[c] - bb.lo[c]);
                probes.push_back(std::move(x));
            }
        }

        PathEnsemble prev_ens;
        MeshSolution prev_sol;
        for (int l = 0; l < L; ++l) {
            TruncationIndex kl(cfg.ks[l]);
            PathEnsemble ens = simulate_filtered(coeffs, measure, kl, reservoir, cfg.x0);
            MeshSolution sol = solve_backward(coeffs, measure, ens, basis, cfg.solve);
            if (l > 0) {
                // coupled forward gap
                double sum = 0.0;
                for (std::size_t p = 0; p < ens.n_paths; ++p) {
                    double sup = 0.0;
                    for (int j = 0; j <= cfg.grid.n_steps; ++j) {
                        auto a = ens.state(p, j);
                        auto b = prev_ens.state(p, j);
                        double g2 = 0.0;
                        for (int c = 0; c < coeffs.dims.k_x; ++c)
                            g2 += (a[c] - b[c]) * (a[c] - b[c]);
                        sup = std::max(sup, g2);
                    }
                    sum += sup;
                }
                fwd[l - 1].push_back(sum / ens.n_paths);

                // solution sup gap over the probe grid at t0
                double sgap = 0.0;
                for (const auto& x : probes)
                    for (int i = 0; i < m; ++i)
                        sgap = std::max(sgap, std::abs(sol.eval_layer(0, x, i) -
                                                       prev_sol.eval_layer(0, x, i)));
                gap[l - 1].push_back(sgap);

                // jump-field gap between levels, integrated against the
                // full measure: the low level's field vanishes below its
                // own threshold
                const double thr_hi = kl.threshold();
                const double thr_lo = TruncationIndex(cfg.ks[l - 1]).threshold();
                double usum = 0.0;
                for (const auto& x : probes) {
                    for (int i = 0; i < m; ++i) {
                        auto field = [&](const MeshSolution& s, double ev) {
                            double e1[1] = {ev};
                            return jump_increment_field(s, coeffs, i, cfg.grid.t0, x,
                                                        std::span<const double>(e1, 1));
                        };
                        double band = measure.band_integral(
                            thr_hi, thr_lo, 0,
                            [&](double ev) { double u = field(sol, ev); return u * u; });
                        double above = measure.band_integral(
                            thr_lo, measure.support_radius(), 0, [&](double ev) {
                                double du = field(sol, ev) - field(prev_sol, ev);
                                return du * du;
                            });
                        usum += band + above;
                    }
                }
                ugap[l - 1].push_back(usum / (double(probes.size()) * m));
            }
            prev_ens = std::move(ens);
            prev_sol = std::move(sol);
        }
    }

    auto mean_se = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var = v.size() > 1 ? var / (v.size() - 1) : 0.0;
        return std::pair{mean, std::sqrt(var / v.size())};
    };
    for (int r = 0; r + 1 < L; ++r) {
        auto& rung = rep.rungs[r];
        rung.k_low = cfg.ks[r];
        rung.k_high = cfg.ks[r + 1];
        std::tie(rung.forward_gap, rung.forward_gap_se) = mean_se(fwd[r]);
        std::tie(rung.solution_gap, rung.solution_gap_se) = mean_se(gap[r]);
        std::tie(rung.ufield_gap, rung.ufield_gap_se) = mean_se(ugap[r]);
    }
    return rep;
}

ModulusFit continuity_modulus_probe(const MeshSolution& sol, const ConcaveModulus& rho,
                                    const PairList& pairs, double m2,
                                    std::span<const double> kappa_grid) {
    if (pairs.empty()) throw ConfigError("continuity_modulus_probe: no pairs");
    if (!(m2 > 0.0)) throw ConfigError("continuity_modulus_probe: m2 must be positive");
    const double t0 = sol.grid.t0;
    const int m = sol.dims.m;

    std::vector<double> lhs(pairs.size()), dist(pairs.size()), xnorm(pairs.size());
    for (std::size_t a = 0; a < pairs.size(); ++a) {
        const auto& [x, xp] = pairs[a];
        double worst = 0.0;
        for (int i = 0; i < m; ++i) {
            double du = sol.eval_layer(0, x, i) - sol.eval_layer(0, xp, i);
            worst = std::max(worst, du * du);
        }
        lhs[a] = worst;
        double d2 = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) d2 += (x[c] - xp[c]) * (x[c] - xp[c]);
        dist[a] = d2;
        xnorm[a] = norm2(x);
        (void)t0;
    }

    // smallest C per kappa; keep the kappa whose fitted envelope has the
    // smallest worst-case magnitude over the probes
    ModulusFit best;
    double best_score = std::numeric_limits<double>::infinity();
    for (double kappa : kappa_grid) {
        double c_fit = 0.0;
        for (std::size_t a = 0; a < pairs.size(); ++a) {
            double env = rho.rho(m2 * dist[a] * (1.0 + dist[a])) *
                         (1.0 + std::pow(xnorm[a], kappa));
            if (env > 0.0) c_fit = std::max(c_fit, lhs[a] / env);
        }
        double worst_mag = 0.0;
        for (std::size_t a = 0; a < pairs.size(); ++a)
            worst_mag = std::max(worst_mag, c_fit * (1.0 + std::pow(xnorm[a], kappa)));
        if (worst_mag < best_score) {
            best_score = worst_mag;
            best.c_fit = c_fit;
            best.kappa = kappa;
        }
    }
    best.m2 = m2;
    best.pair_lhs = lhs;
    best.pair_rhs.resize(pairs.size());
    for (std::size_t a = 0; a < pairs.size(); ++a)
        best.pair_rhs[a] = best.c_fit * rho.rho(m2 * dist[a] * (1.0 + dist[a])) *
                           (1.0 + std::pow(xnorm[a], best.kappa));
    return best;
}

JumpFieldCheck reestimate_jump_field(const MeshSolution& sol, const ModelCoefficients& coeffs,
                                     const LevyMeasure& measure, const PathEnsemble& fresh,
                                     const std::vector<Vec>& probes, int cells_per_side,
                                     const SolveOptions& opt) {
    if (!(fresh.grid == sol.grid) || fresh.k.k != sol.k.k)
        throw ConfigError("reestimate_jump_field: ensemble must match the solution");
    if (measure.dim_e() != 1) throw ConfigError("reestimate_jump_field: 1-d marks only");
    const int i = 0;  // field check runs on the first equation
    const int N = sol.grid.n_steps;
    const std::size_t P = fresh.n_paths;
    const int B = sol.basis.size();
    const double dt = sol.grid.dt();
    const double thr = sol.k.threshold();
    const double R = measure.support_radius();

    // equal-mass radial bands per side
    JumpFieldCheck chk;
    const double mass = measure.truncated_mass(sol.k);
    std::vector<double> radial_edges(cells_per_side + 1);
    radial_edges[0] = thr;
    radial_edges[cells_per_side] = R;
    for (int c = 1; c < cells_per_side; ++c) {
        double target = double(c) / cells_per_side;
        double lo = thr, hi = R;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            if (measure.truncated_radial_cdf(sol.k, mid) < target)
                lo = mid;
            else
                hi = mid;
        }
        radial_edges[c] = 0.5 * (lo + hi);
    }
    const int nc = 2 * cells_per_side;
    chk.cell_lo.resize(nc);
    chk.cell_hi.resize(nc);
    chk.cell_mass.resize(nc);
    for (int c = 0; c < cells_per_side; ++c) {
        // negative side, decreasing |e|, then positive side
        chk.cell_lo[c] = -radial_edges[cells_per_side - c];
        chk.cell_hi[c] = -radial_edges[cells_per_side - c - 1];
        chk.cell_lo[cells_per_side + c] = radial_edges[c];
        chk.cell_hi[cells_per_side + c] = radial_edges[c + 1];
    }
    for (int c = 0; c < nc; ++c) {
        double rlo = std::min(std::abs(chk.cell_lo[c]), std::abs(chk.cell_hi[c]));
        double rhi = std::max(std::abs(chk.cell_lo[c]), std::abs(chk.cell_hi[c]));
        int sign = chk.cell_hi[c] > 0.0 ? 1 : -1;
        chk.cell_mass[c] = measure.band_integral(rlo, rhi, sign, [](double) { return 1.0; });
        if (!(chk.cell_mass[c] > 0.0))
            throw NumericalError("reestimate_jump_field: empty mark cell");
    }
    (void)mass;

    // pooled regression of compensated per-cell jump counts weighted by
    // realized value increments
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(B, B);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(B, nc);
    std::vector<int> counts(nc);
    for (int j = 0; j < N; ++j) {
        const double tj = sol.grid.node(j);
        const double tn = sol.grid.node(j + 1);
        for (std::size_t p = 0; p < P; ++p) {
            auto x = fresh.state(p, j);
            auto xn = fresh.state(p, j + 1);
            Eigen::VectorXd phi = sol.basis.eval_vec(x);
            double du = sol.eval_layer(j + 1, xn, i) - sol.eval_layer(j, x, i);
            std::fill(counts.begin(), counts.end(), 0);
            const auto& train = fresh.jumps[p];
            for (std::size_t a = 0; a < train.size(); ++a) {
                double tt = train.times[a];
                if (tt <= tj + 1e-15 || tt > tn + 1e-15) continue;
                double e = train.mark(a)[0];
                for (int c = 0; c < nc; ++c)
                    if (e > chk.cell_lo[c] && e <= chk.cell_hi[c]) {
                        ++counts[c];
                        break;
                    }
            }
            gram.noalias() += phi * phi.transpose();
            for (int c = 0; c < nc; ++c) {
                double dm = counts[c] - dt * chk.cell_mass[c];
                double target = du * dm / (dt * chk.cell_mass[c]);
                rhs.col(c) += phi * target;
            }
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    double lmax = es.eigenvalues().maxCoeff();
    if (!(lmax > 0.0)) throw NumericalError("reestimate_jump_field: degenerate design");
    double cond = std::sqrt(lmax / std::max(es.eigenvalues().minCoeff(), 0.0));
    if (!(cond <= opt.cond_cap)) gram.diagonal().array() += lmax / (opt.cond_cap * opt.cond_cap);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    Eigen::MatrixXd coef = ldlt.solve(rhs);  // B x nc

    const int np = static_cast<int>(probes.size());
    chk.regression.resize(np, nc);
    chk.quadrature.resize(np, nc);
    for (int a = 0; a < np; ++a) {
        Eigen::VectorXd phi = sol.basis.eval_vec(probes[a]);
        for (int c = 0; c < nc; ++c) chk.regression(a, c) = phi.dot(coef.col(c));
        // time-averaged cell averages of the field, matching the pooled
        // regression's convention
        for (int c = 0; c < nc; ++c) {
            double rlo = std::min(std::abs(chk.cell_lo[c]), std::abs(chk.cell_hi[c]));
            double rhi = std::max(std::abs(chk.cell_lo[c]), std::abs(chk.cell_hi[c]));
            int sign = chk.cell_hi[c] > 0.0 ? 1 : -1;
            double acc = 0.0;
            for (int j = 0; j < N; ++j) {
                const double tj = sol.grid.node(j);
                acc += measure.band_integral(rlo, rhi, sign, [&](double ev) {
                    Vec bout(coeffs.dims.k_x), xd(coeffs.dims.k_x);
                    double e1[1] = {ev};
                    std::span<const double> es1(e1, 1);
                    coeffs.beta(tj, probes[a], es1, bout);
                    for (int cc = 0; cc < coeffs.dims.k_x; ++cc)
                        xd[cc] = probes[a][cc] + bout[cc];
                    return sol.eval_layer(j + 1, xd, i) -
                           sol.eval_layer(j + 1, probes[a], i);
                });
            }
            chk.quadrature(a, c) = acc / (N * chk.cell_mass[c]);
        }
    }
    double num = 0.0, den = 0.0;
    for (int a = 0; a < np; ++a)
        for (int c = 0; c < nc; ++c) {
            double diff = chk.regression(a, c) - chk.quadrature(a, c);
            num += diff * diff;
            den += chk.quadrature(a, c) * chk.quadrature(a, c);
        }
    chk.rms_discrepancy = std::sqrt(num / (double(np) * nc));
    chk.field_rms = std::sqrt(den / (double(np) * nc));
    return chk;
}

}  // namespace jbsde
