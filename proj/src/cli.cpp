#include "jbsde/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "jbsde/operators.hpp"
#include "jbsde/report.hpp"
#include "jbsde/scenario.hpp"

namespace jbsde {

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string solution_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int k = 0;
    std::vector<int> ladder;
    long long paths = 0;
    int steps = 0;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", f.config_path, "scenario file (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--out", f.out_dir, "output directory (overrides scenario)");
    cmd->add_option("--seed", f.seed, "seed override")->each([&](const std::string&) {
        f.seed_set = true;
    });
    cmd->add_option("--k", f.k, "truncation level override");
    cmd->add_option("--ladder", f.ladder, "truncation ladder override")->delimiter(',');
    cmd->add_option("--paths", f.paths, "path count override");
    cmd->add_option("--steps", f.steps, "time step count override");
    cmd->add_flag("--force", f.force, "run even if assumption validation fails");
    cmd->add_flag("--quiet", f.quiet, "suppress progress output");
}

struct Runtime {
    ScenarioConfig cfg;
    LevyMeasure measure = LevyMeasure::power_law(0.5);
    ModelCoefficients coeffs;
    std::string out_dir;
    bool quiet = false;
    bool force = false;
};

Runtime make_runtime(const CommonFlags& f) {
    LoadResult lr = load_scenario(f.config_path);
    if (!lr.ok()) {
        for (const auto& e : lr.errors) std::cerr << "config error: " << e << "\n";
        throw ConfigError("scenario validation failed (" + std::to_string(lr.errors.size()) +
                          " error(s))");
    }
    Runtime rt;
    rt.cfg = *lr.config;
    if (f.seed_set) rt.cfg.numerics.seed = f.seed;
    if (f.k > 0) rt.cfg.numerics.k = f.k;
    if (!f.ladder.empty()) rt.cfg.numerics.ladder = f.ladder;
    if (f.paths > 0) rt.cfg.numerics.n_paths = static_cast<std::size_t>(f.paths);
    if (f.steps > 0) rt.cfg.numerics.n_steps = f.steps;
    if (!f.out_dir.empty()) rt.cfg.outputs.dir = f.out_dir;
    rt.out_dir = rt.cfg.outputs.dir;
    rt.quiet = f.quiet;
    rt.force = f.force;
    rt.measure = build_measure(rt.cfg.measure, rt.cfg.dims.ell);
    rt.coeffs = build_coefficients(rt.cfg);
    return rt;
}

std::string out_path(const Runtime& rt, const std::string& file) {
    return (std::filesystem::path(rt.out_dir) / file).string();
}

// shipped scenarios must pass the assumption validators before any
// solve; --force skips the gate
DiagnosticsReport assumption_gate(const Runtime& rt) {
    SamplePlan plan;
    plan.t_hi = rt.cfg.T;
    plan.t_lo = rt.cfg.t0;
    plan.seed = rt.cfg.numerics.seed;
    DiagnosticsReport rep = validate_assumptions(rt.coeffs, rt.measure, plan);
    if (!rep.all_pass() && !rt.force) {
        for (const auto& e : rep.entries)
            if (!e.pass)
                std::cerr << "assumption failed: " << e.name << " (observed " << e.observed
                          << " > bound " << e.bound << ") at " << e.witness << "\n";
        throw ConfigError("assumption validation failed; rerun with --force to override");
    }
    return rep;
}

TimeGrid grid_of(const Runtime& rt) {
    return TimeGrid::uniform(rt.cfg.t0, rt.cfg.T, rt.cfg.numerics.n_steps);
}

PathEnsemble forward(const Runtime& rt, std::uint64_t seed) {
    TruncationIndex k(rt.cfg.numerics.k);
    return simulate_forward(rt.coeffs, rt.measure, k, grid_of(rt), rt.cfg.x0,
                            rt.cfg.numerics.n_paths, seed);
}

MeshSolution solve_pipeline(const Runtime& rt, const PathEnsemble& ens) {
    RegressionBasis basis = build_basis(rt.cfg.numerics.basis, rt.cfg.dims, &ens);
    SolveOptions opt;
    opt.quad_rel_tol = rt.cfg.numerics.quad_rel_tol;
    opt.time_interpolation = rt.cfg.numerics.time_interpolation;
    return solve_backward(rt.coeffs, rt.measure, ens, basis, opt);
}

int cmd_simulate(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    PathEnsemble ens = forward(rt, rt.cfg.numerics.seed);
    write_report_atomic(out_path(rt, "ensemble.csv"),
                        [&](std::ostream& os) { write_ensemble_csv(ens, os); });
    // terminal-state summary
    double mean = 0.0, var = 0.0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) mean += ens.state(p, ens.grid.n_steps)[0];
    mean /= ens.n_paths;
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        double v = ens.state(p, ens.grid.n_steps)[0] - mean;
        var += v * v;
    }
    var /= ens.n_paths;
    if (!f.quiet)
        std::cout << "simulate-forward: paths=" << ens.n_paths << " steps=" << ens.grid.n_steps
                  << " k=" << ens.k.k << " mean_XT=" << mean << " var_XT=" << var << "\n";
    return 0;
}

int cmd_verify_assumptions(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    SamplePlan plan;
    plan.t_hi = rt.cfg.T;
    plan.t_lo = rt.cfg.t0;
    plan.seed = rt.cfg.numerics.seed;
    DiagnosticsReport rep = validate_assumptions(rt.coeffs, rt.measure, plan);
    write_report_atomic(out_path(rt, "assumptions.csv"),
                        [&](std::ostream& os) { rep.write_csv(os); });
    int fails = 0;
    for (const auto& e : rep.entries)
        if (!e.pass) ++fails;
    if (!f.quiet)
        std::cout << "verify-assumptions: " << rep.entries.size() - fails << "/"
                  << rep.entries.size() << " checks passed\n";
    return rep.all_pass() ? 0 : 1;
}

int cmd_solve(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    assumption_gate(rt);
    PathEnsemble ens = forward(rt, rt.cfg.numerics.seed);
    MeshSolution sol = solve_pipeline(rt, ens);
    save_solution(sol, out_path(rt, "solution.json"));
    write_report_atomic(out_path(rt, "solve.csv"), [&](std::ostream& os) {
        os << "equation,u_t0_x0,terminal_fit_residual,max_condition\n";
        for (int i = 0; i < rt.cfg.dims.m; ++i)
            os << i << "," << fmt(sol.eval_layer(0, rt.cfg.x0, i)) << ","
               << fmt(sol.terminal_fit_residual) << "," << fmt(sol.max_condition) << "\n";
    });
    if (!f.quiet) {
        std::cout << "solve: u(t0,x0)=";
        for (int i = 0; i < rt.cfg.dims.m; ++i)
            std::cout << (i ? "," : "") << sol.eval_layer(0, rt.cfg.x0, i);
        std::cout << " terminal_residual=" << sol.terminal_fit_residual
                  << " cond=" << sol.max_condition << "\n";
    }
    return 0;
}

int cmd_residual(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    assumption_gate(rt);
    MeshSolution sol;
    if (!f.solution_path.empty()) {
        sol = load_solution(f.solution_path);
    } else {
        PathEnsemble ens = forward(rt, rt.cfg.numerics.seed);
        sol = solve_pipeline(rt, ens);
    }
    std::uint64_t fresh_seed = RngStream(rt.cfg.numerics.seed, streams::residual).next_u64();
    PathEnsemble fresh = forward(rt, fresh_seed);
    ResidualStats rs = bsde_residual(sol, rt.coeffs, rt.measure, fresh);
    write_report_atomic(out_path(rt, "residual.csv"), [&](std::ostream& os) {
        os << "equation,rms,n_paths,n_steps,dt\n";
        for (int i = 0; i < rt.cfg.dims.m; ++i)
            os << i << "," << fmt(rs.rms[i]) << "," << rs.n_paths << "," << rs.n_steps << ","
               << fmt(rs.dt) << "\n";
    });
    double worst = 0.0;
    for (double r : rs.rms) worst = std::max(worst, r);
    double threshold = rt.cfg.numerics.residual_rms_threshold;
    if (!f.quiet)
        std::cout << "residual: rms=" << worst << " threshold=" << threshold
                  << (worst <= threshold ? " (ok)" : " (exceeded)") << "\n";
    return worst <= threshold ? 0 : 2;
}

int cmd_ladder(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    assumption_gate(rt);
    LadderConfig lc;
    lc.ks = rt.cfg.numerics.ladder;
    if (lc.ks.empty()) lc.ks = {2, 4, 8, 16};
    int steps = rt.cfg.numerics.ladder_steps ? rt.cfg.numerics.ladder_steps
                                             : rt.cfg.numerics.n_steps;
    lc.grid = TimeGrid::uniform(rt.cfg.t0, rt.cfg.T, steps);
    lc.n_paths = rt.cfg.numerics.ladder_paths ? rt.cfg.numerics.ladder_paths
                                              : rt.cfg.numerics.n_paths;
    lc.seed = rt.cfg.numerics.seed;
    lc.replicates = rt.cfg.numerics.ladder_replicates;
    lc.x0 = rt.cfg.x0;
    lc.basis_degree = rt.cfg.numerics.basis.degree;
    ConvergenceReport rep = ladder_study(rt.coeffs, rt.measure, lc);
    write_report_atomic(out_path(rt, "ladder.csv"),
                        [&](std::ostream& os) { rep.write_csv(os); });
    if (!f.quiet) {
        std::cout << "ladder:";
        for (const auto& r : rep.rungs)
            std::cout << " gap(" << r.k_low << "," << r.k_high << ")=" << r.solution_gap;
        std::cout << "\n";
    }
    return 0;
}

int cmd_verify_viscosity(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    assumption_gate(rt);
    PathEnsemble ens = forward(rt, rt.cfg.numerics.seed);
    MeshSolution sol = solve_pipeline(rt, ens);
    // interior probes: quartile times, center band of the design box
    std::vector<std::pair<double, Vec>> probes;
    const Box& box = sol.basis.box();
    for (double frac : {0.25, 0.5, 0.75}) {
        double t = rt.cfg.t0 + frac * (rt.cfg.T - rt.cfg.t0);
        for (double xf : {0.35, 0.5, 0.65}) {
            Vec x(rt.cfg.dims.k_x);
            for (int c = 0; c < rt.cfg.dims.k_x; ++c)
                x[c] = box.lo[c] + xf * (box.hi[c] - box.lo[c]);
            probes.emplace_back(t, std::move(x));
        }
    }
    ResidualReport rep = residual_survey(sol, rt.coeffs, rt.measure, probes);
    write_report_atomic(out_path(rt, "residuals.csv"),
                        [&](std::ostream& os) { rep.write_csv(os); });
    if (!f.quiet) {
        std::cout << "verify-viscosity:";
        for (int i = 0; i < rt.cfg.dims.m; ++i)
            std::cout << " max|R_" << i << "|=" << rep.max_abs(i)
                      << " median=" << rep.median_abs(i);
        std::cout << "\n";
    }
    return 0;
}

int cmd_bench(const CommonFlags& f) {
    Runtime rt = make_runtime(f);
    assumption_gate(rt);
    using clock = std::chrono::steady_clock;
    auto tic = clock::now();
    PathEnsemble ens = forward(rt, rt.cfg.numerics.seed);
    auto t_sim = std::chrono::duration<double>(clock::now() - tic).count();
    tic = clock::now();
    MeshSolution sol = solve_pipeline(rt, ens);
    auto t_solve = std::chrono::duration<double>(clock::now() - tic).count();
    write_report_atomic(out_path(rt, "bench.csv"), [&](std::ostream& os) {
        os << "stage,seconds\n";
        os << "simulate," << fmt(t_sim) << "\n";
        os << "solve," << fmt(t_solve) << "\n";
    });
    if (!f.quiet)
        std::cout << "bench: simulate=" << t_sim << "s solve=" << t_solve << "s u(t0,x0)="
                  << sol.eval_layer(0, rt.cfg.x0, 0) << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"jump-diffusion BSDE solver for semilinear integro-PDE systems"};
    app.require_subcommand(1);

    CommonFlags f;
    auto* sim = app.add_subcommand("simulate-forward", "simulate the forward jump-diffusion");
    add_common(sim, f);
    auto* solve = app.add_subcommand("solve", "backward regression solve");
    add_common(solve, f);
    auto* residual = app.add_subcommand("residual", "out-of-sample backward-equation residual");
    add_common(residual, f);
    residual->add_option("--solution", f.solution_path, "solution artifact to check");
    auto* ladder = app.add_subcommand("ladder", "truncation-ladder convergence study");
    add_common(ladder, f);
    auto* visc = app.add_subcommand("verify-viscosity", "equation residual at probe points");
    add_common(visc, f);
    auto* assume = app.add_subcommand("verify-assumptions", "sampled assumption validation");
    add_common(assume, f);
    auto* bench = app.add_subcommand("bench", "pipeline timing");
    add_common(bench, f);

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return cmd_simulate(f);
        if (solve->parsed()) return cmd_solve(f);
        if (residual->parsed()) return cmd_residual(f);
        if (ladder->parsed()) return cmd_ladder(f);
        if (visc->parsed()) return cmd_verify_viscosity(f);
        if (assume->parsed()) return cmd_verify_assumptions(f);
        if (bench->parsed()) return cmd_bench(f);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace jbsde
