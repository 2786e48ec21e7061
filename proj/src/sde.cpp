#include "jbsde/sde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jbsde/report.hpp"

namespace jbsde {

TimeGrid TimeGrid::uniform(double t0, double T, int n_steps) {
    if (!(T > t0)) throw ConfigError("TimeGrid: T must exceed t0");
    if (n_steps < 1) throw ConfigError("TimeGrid: need at least one step");
    return TimeGrid{t0, T, n_steps};
}

void PathEnsemble::state_at(std::size_t p, double s, std::span<double> out) const {
    int j;
    if (s <= grid.t0) {
        j = 0;
    } else if (s >= grid.T) {
        j = grid.n_steps;
    } else {
        j = static_cast<int>(std::lround((s - grid.t0) / grid.dt()));
        j = std::clamp(j, 0, grid.n_steps);
    }
    auto st = state(p, j);
    std::copy(st.begin(), st.end(), out.begin());
}

std::size_t PathEnsemble::jumps_through(std::size_t p, int j) const {
    const auto& train = jumps[p];
    double cutoff = grid.node(j);
    return static_cast<std::size_t>(
        std::upper_bound(train.times.begin(), train.times.end(), cutoff) - train.times.begin());
}

void compensator_drift(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                       TruncationIndex k, double t, std::span<const double> x,
                       std::span<double> out, double quad_rel_tol) {
    const int kx = coeffs.dims.k_x;
    measure.integrate(
        k, kx,
        [&](std::span<const double> e, std::span<double> o) { coeffs.beta(t, x, e, o); }, out,
        quad_rel_tol);
}

namespace {

// one Euler path; jump trains carry absolute times in (t0, T]
void run_path(const ModelCoefficients& coeffs, TruncationIndex k, const TimeGrid& grid,
              std::span<const double> x0, const JumpTrain& train,
              std::span<const double> db_all, std::span<double> states_out,
              const std::vector<double>& comp_cache, bool comp_per_state,
              const LevyMeasure& measure, const ForwardOptions& opt, std::size_t path_index) {
    const int kx = coeffs.dims.k_x;
    const int d = coeffs.dims.d;
    const double dt = grid.dt();
    const double thr = k.threshold();

    Vec x(x0.begin(), x0.end());
    Vec drift(kx), diff(static_cast<std::size_t>(kx) * d), jump(kx), comp(kx);
    std::copy(x.begin(), x.end(), states_out.begin());

    std::size_t jidx = 0;
    for (int j = 0; j < grid.n_steps; ++j) {
        const double t = grid.node(j);
        coeffs.b(t, x, drift);
        coeffs.sigma(t, x, diff);
        if (comp_per_state) {
            measure.integrate_fixed(
                k, kx,
                [&](std::span<const double> e, std::span<double> o) { coeffs.beta(t, x, e, o); },
                comp, opt.compensator_panels);
        } else {
            std::copy(comp_cache.begin() + static_cast<std::size_t>(j) * kx,
                      comp_cache.begin() + static_cast<std::size_t>(j + 1) * kx, comp.begin());
        }

        std::span<const double> db = db_all.subspan(static_cast<std::size_t>(j) * d, d);
        Vec xn(kx);
        for (int c = 0; c < kx; ++c) {
            double diffusion = 0.0;
            for (int l = 0; l < d; ++l) diffusion += diff[c * d + l] * db[l];
            xn[c] = x[c] + drift[c] * dt + diffusion - comp[c] * dt;
        }
        const double t_next = grid.node(j + 1);
        while (jidx < train.size() && train.times[jidx] <= t_next + 1e-15) {
            auto e = train.mark(jidx);
            if (norm2(e) >= thr - 1e-15) {
                coeffs.beta(t, x, e, jump);
                for (int c = 0; c < kx; ++c) xn[c] += jump[c];
            }
            ++jidx;
        }
        if (!all_finite(xn)) {
            std::ostringstream os;
            os << "simulate_forward: non-finite state at path " << path_index << ", step "
               << j + 1;
            throw NumericalError(os.str());
        }
        x = xn;
        std::copy(x.begin(), x.end(),
                  states_out.begin() + static_cast<std::size_t>(j + 1) * kx);
    }
}

// compensator per time node when beta does not depend on the state
std::vector<double> build_comp_cache(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                                     TruncationIndex k, const TimeGrid& grid,
                                     const ForwardOptions& opt) {
    const int kx = coeffs.dims.k_x;
    std::vector<double> cache(static_cast<std::size_t>(grid.n_steps) * kx, 0.0);
    Vec x_dummy(kx, 0.0);
    if (coeffs.traits.beta_time_independent) {
        Vec c0(kx);
        measure.integrate_fixed(
            k, kx,
            [&](std::span<const double> e, std::span<double> o) {
                coeffs.beta(grid.t0, x_dummy, e, o);
            },
            c0, opt.compensator_panels);
        for (int j = 0; j < grid.n_steps; ++j)
            std::copy(c0.begin(), c0.end(), cache.begin() + static_cast<std::size_t>(j) * kx);
    } else {
        Vec cj(kx);
        for (int j = 0; j < grid.n_steps; ++j) {
            const double t = grid.node(j);
            measure.integrate_fixed(
                k, kx,
                [&](std::span<const double> e, std::span<double> o) {
                    coeffs.beta(t, x_dummy, e, o);
                },
                cj, opt.compensator_panels);
            std::copy(cj.begin(), cj.end(), cache.begin() + static_cast<std::size_t>(j) * kx);
        }
    }
    return cache;
}

}  // namespace

PathEnsemble simulate_forward(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                              TruncationIndex k, const TimeGrid& grid,
                              std::span<const double> x0, std::size_t n_paths,
                              std::uint64_t seed, const ForwardOptions& opt) {
    if (n_paths < 1) throw ConfigError("simulate_forward: need n_paths >= 1");
    if (static_cast<int>(x0.size()) != coeffs.dims.k_x)
        throw ConfigError("simulate_forward: x0 dimension mismatch");

    PathEnsemble ens;
    ens.grid = grid;
    ens.k = k;
    ens.dims = coeffs.dims;
    ens.n_paths = n_paths;
    ens.seed = seed;
    const int kx = coeffs.dims.k_x, d = coeffs.dims.d, nn = grid.n_nodes(), ns = grid.n_steps;
    ens.states.resize(n_paths * static_cast<std::size_t>(nn) * kx);
    ens.brownian.resize(n_paths * static_cast<std::size_t>(ns) * d);
    ens.jumps.resize(n_paths);

    const double sqdt = std::sqrt(grid.dt());
    const double horizon = grid.T - grid.t0;
    // warm the sampler cache before the parallel region
    (void)measure.truncated_mass(k);
    {
        RngStream warm(seed, streams::jumps, 0);
        (void)measure.sample_jumps(k, horizon, warm);
    }

    const bool comp_per_state = !coeffs.traits.beta_state_independent;
    std::vector<double> comp_cache;
    if (!comp_per_state) comp_cache = build_comp_cache(coeffs, measure, k, grid, opt);

    std::string error;  // exceptions must not cross the parallel region
#pragma omp parallel for schedule(static)
    for (long long pi = 0; pi < static_cast<long long>(n_paths); ++pi) {
        std::size_t p = static_cast<std::size_t>(pi);
        try {
            RngStream bstream(seed, streams::brownian, p);
            double* db = ens.brownian.data() + p * static_cast<std::size_t>(ns) * d;
            for (int j = 0; j < ns * d; ++j) db[j] = sqdt * bstream.next_normal();

            RngStream jstream(seed, streams::jumps, p);
            JumpTrain train = measure.sample_jumps(k, horizon, jstream);
            for (auto& tt : train.times) tt += grid.t0;  // absolute times
            ens.jumps[p] = std::move(train);

            run_path(coeffs, k, grid, x0, ens.jumps[p],
                     std::span<const double>(db, static_cast<std::size_t>(ns) * d),
                     std::span<double>(ens.states.data() + p * static_cast<std::size_t>(nn) * kx,
                                       static_cast<std::size_t>(nn) * kx),
                     comp_cache, comp_per_state, measure, opt, p);
        } catch (const std::exception& ex) {
#pragma omp critical
            if (error.empty()) error = ex.what();
        }
    }
    if (!error.empty()) throw NumericalError(error);
    return ens;
}

PathEnsemble simulate_filtered(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                               TruncationIndex k, const PathEnsemble& reservoir,
                               std::span<const double> x0, const ForwardOptions& opt) {
    if (k.k > reservoir.k.k)
        throw ConfigError("simulate_filtered: filter level must not exceed the reservoir level");
    PathEnsemble ens;
    ens.grid = reservoir.grid;
    ens.k = k;
    ens.dims = coeffs.dims;
    ens.n_paths = reservoir.n_paths;
    ens.seed = reservoir.seed;
    ens.coupling_id = "reservoir-k" + std::to_string(reservoir.k.k);
    const int kx = coeffs.dims.k_x, d = coeffs.dims.d;
    const int nn = ens.grid.n_nodes(), ns = ens.grid.n_steps;
    ens.states.resize(ens.n_paths * static_cast<std::size_t>(nn) * kx);
    ens.brownian = reservoir.brownian;
    ens.jumps.resize(ens.n_paths);

    const double thr = k.threshold();
    const bool comp_per_state = !coeffs.traits.beta_state_independent;
    std::vector<double> comp_cache;
    if (!comp_per_state) comp_cache = build_comp_cache(coeffs, measure, k, ens.grid, opt);

    std::string error;
#pragma omp parallel for schedule(static)
    for (long long pi = 0; pi < static_cast<long long>(ens.n_paths); ++pi) {
        std::size_t p = static_cast<std::size_t>(pi);
        try {
            const JumpTrain& full = reservoir.jumps[p];
            JumpTrain filt;
            filt.dim_e = full.dim_e;
            filt.k = k.k;
            for (std::size_t i = 0; i < full.size(); ++i) {
                if (norm2(full.mark(i)) >= thr) {
                    filt.times.push_back(full.times[i]);
                    auto e = full.mark(i);
                    filt.marks.insert(filt.marks.end(), e.begin(), e.end());
                }
            }
            ens.jumps[p] = std::move(filt);

            const double* db = ens.brownian.data() + p * static_cast<std::size_t>(ns) * d;
            run_path(coeffs, k, ens.grid, x0, ens.jumps[p],
                     std::span<const double>(db, static_cast<std::size_t>(ns) * d),
                     std::span<double>(ens.states.data() + p * static_cast<std::size_t>(nn) * kx,
                                       static_cast<std::size_t>(nn) * kx),
                     comp_cache, comp_per_state, measure, opt, p);
        } catch (const std::exception& ex) {
#pragma omp critical
            if (error.empty()) error = ex.what();
        }
    }
    if (!error.empty()) throw NumericalError(error);
    return ens;
}

GapStatistic coupled_truncation_gap(const ModelCoefficients& coeffs, const LevyMeasure& measure,
                                    TruncationIndex k_low, TruncationIndex k_high,
                                    const TimeGrid& grid, std::span<const double> x0,
                                    std::size_t n_paths, std::uint64_t seed,
                                    const ForwardOptions& opt) {
    if (k_low.k > k_high.k) throw ConfigError("coupled_truncation_gap: need k_low <= k_high");
    PathEnsemble high = simulate_forward(coeffs, measure, k_high, grid, x0, n_paths, seed, opt);
    PathEnsemble low = simulate_filtered(coeffs, measure, k_low, high, x0, opt);

    const int kx = coeffs.dims.k_x;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t p = 0; p < n_paths; ++p) {
        double sup = 0.0;
        for (int j = 0; j <= grid.n_steps; ++j) {
            double g = 0.0;
            auto a = high.state(p, j);
            auto b = low.state(p, j);
            for (int c = 0; c < kx; ++c) g += (a[c] - b[c]) * (a[c] - b[c]);
            sup = std::max(sup, g);
        }
        sum += sup;
        sum_sq += sup * sup;
    }
    GapStatistic gs;
    gs.n_paths = n_paths;
    gs.mean_sup_sq = sum / n_paths;
    double var = std::max(0.0, sum_sq / n_paths - gs.mean_sup_sq * gs.mean_sup_sq);
    gs.std_error = std::sqrt(var / n_paths);
    return gs;
}

namespace {

MomentFit fit_moment(const std::vector<double>& sup_pow_by_node, std::size_t n_paths,
                     const TimeGrid& grid, double denom_space,
                     const std::vector<double>& sup_pow_sq_by_node) {
    // sup_pow_by_node[j] = sum over paths of sup_{r<=j} |.|^p
    MomentFit fit;
    fit.m_p = 0.0;
    for (int j = 1; j <= grid.n_steps; ++j) {
        double mean = sup_pow_by_node[j] / n_paths;
        double denom = (grid.node(j) - grid.t0) * denom_space;
        double cand = mean / denom;
        if (cand > fit.m_p) {
            fit.m_p = cand;
            fit.argmax_time = grid.node(j);
            double var =
                std::max(0.0, sup_pow_sq_by_node[j] / n_paths - mean * mean);
            fit.std_error = std::sqrt(var / n_paths) / denom;
        }
    }
    fit.worst_residual = 0.0;
    for (int j = 1; j <= grid.n_steps; ++j) {
        double mean = sup_pow_by_node[j] / n_paths;
        double denom = (grid.node(j) - grid.t0) * denom_space;
        fit.worst_residual = std::max(fit.worst_residual, mean - fit.m_p * denom);
    }
    return fit;
}

}  // namespace

MomentFit moment_diagnostics(const PathEnsemble& ens, double p) {
    if (p < 2.0) throw ConfigError("moment_diagnostics: p must be >= 2");
    const int kx = ens.dims.k_x;
    const int nn = ens.grid.n_nodes();
    std::vector<double> acc(nn, 0.0), acc_sq(nn, 0.0);
    auto x0 = ens.state(0, 0);
    Vec start(x0.begin(), x0.end());
    for (std::size_t q = 0; q < ens.n_paths; ++q) {
        double sup = 0.0;
        for (int j = 0; j < nn; ++j) {
            auto s = ens.state(q, j);
            double dev = 0.0;
            for (int c = 0; c < kx; ++c) dev += (s[c] - start[c]) * (s[c] - start[c]);
            sup = std::max(sup, dev);
            double v = std::pow(sup, 0.5 * p);
            acc[j] += v;
            acc_sq[j] += v * v;
        }
    }
    double denom_space = 1.0 + std::pow(norm2(start), p);
    return fit_moment(acc, ens.n_paths, ens.grid, denom_space, acc_sq);
}

MomentFit coupled_moment_diagnostics(const PathEnsemble& a, const PathEnsemble& b, double p) {
    if (p < 2.0) throw ConfigError("coupled_moment_diagnostics: p must be >= 2");
    if (a.n_paths != b.n_paths || !(a.grid == b.grid))
        throw ConfigError("coupled_moment_diagnostics: ensembles not aligned");
    const int kx = a.dims.k_x;
    const int nn = a.grid.n_nodes();
    Vec xa(a.state(0, 0).begin(), a.state(0, 0).end());
    Vec xb(b.state(0, 0).begin(), b.state(0, 0).end());
    double base = 0.0;
    for (int c = 0; c < kx; ++c) base += (xa[c] - xb[c]) * (xa[c] - xb[c]);
    if (base == 0.0)
        throw ConfigError("coupled_moment_diagnostics: start points must differ");
    std::vector<double> acc(nn, 0.0), acc_sq(nn, 0.0);
    for (std::size_t q = 0; q < a.n_paths; ++q) {
        double sup = 0.0;
        for (int j = 0; j < nn; ++j) {
            auto sa = a.state(q, j);
            auto sb = b.state(q, j);
            double dev = 0.0;
            for (int c = 0; c < kx; ++c) {
                double diff = sa[c] - sb[c] - (xa[c] - xb[c]);
                dev += diff * diff;
            }
            sup = std::max(sup, dev);
            double v = std::pow(sup, 0.5 * p);
            acc[j] += v;
            acc_sq[j] += v * v;
        }
    }
    return fit_moment(acc, a.n_paths, a.grid, std::pow(base, 0.5 * p), acc_sq);
}

void write_ensemble_csv(const PathEnsemble& ens, std::ostream& os) {
    os << "path,time";
    for (int c = 0; c < ens.dims.k_x; ++c) os << ",x" << c;
    os << ",cum_jumps\n";
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        for (int j = 0; j < ens.grid.n_nodes(); ++j) {
            os << p << "," << fmt(ens.grid.node(j));
            auto s = ens.state(p, j);
            for (int c = 0; c < ens.dims.k_x; ++c) os << "," << fmt(s[c]);
            os << "," << ens.jumps_through(p, j) << "\n";
        }
    }
}

}  // namespace jbsde
