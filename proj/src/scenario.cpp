#include "jbsde/scenario.hpp"

#include <cmath>
#include <fstream>

namespace jbsde {

namespace {

double num_param(const json& params, const std::string& key, double fallback) {
    if (params.contains(key)) return params.at(key).get<double>();
    return fallback;
}

Vec vec_param(const json& params, const std::string& key, const Vec& fallback) {
    if (params.contains(key)) return params.at(key).get<Vec>();
    return fallback;
}

ConcaveModulus build_modulus(const FunctionSpec& spec, double default_slope) {
    if (!spec.modulus_name) return ConcaveModulus::linear(default_slope);
    const std::string& name = *spec.modulus_name;
    if (name == "linear")
        return ConcaveModulus::linear(num_param(spec.modulus_params, "slope", default_slope));
    if (name == "log") return ConcaveModulus::log_modulus();
    if (name == "power") {
        auto m = ConcaveModulus::power(num_param(spec.modulus_params, "p", 1.0));
        m.osgood = spec.modulus_osgood;
        return m;
    }
    throw ConfigError("unknown modulus: " + name);
}

}  // namespace

LevyMeasure build_measure(const MeasureSpec& spec, int dim_e) {
    if (dim_e != 1)
        throw ConfigError("build_measure: scenario files support 1-d mark spaces");
    if (spec.kind == "power-law")
        return LevyMeasure::power_law(spec.alpha, spec.scale, spec.radius);
    if (spec.kind == "table")
        return LevyMeasure::from_table(spec.table_r, spec.table_rho, spec.radius);
    throw ConfigError("build_measure: unknown kind " + spec.kind);
}

ModelCoefficients build_coefficients(const ScenarioConfig& cfg) {
    ModelCoefficients mc;
    mc.dims = cfg.dims;
    mc.horizon = cfg.T;
    mc.lipschitz_const = cfg.lipschitz_const;
    const int kx = cfg.dims.k_x, d = cfg.dims.d, m = cfg.dims.m, ell = cfg.dims.ell;

    // drift registry
    {
        const auto& s = cfg.b;
        if (s.name == "zero") {
            mc.b = [kx](double, std::span<const double>, std::span<double> out) {
                for (int c = 0; c < kx; ++c) out[c] = 0.0;
            };
        } else if (s.name == "constant") {
            Vec v = vec_param(s.params, "value", Vec(kx, 0.0));
            if (static_cast<int>(v.size()) != kx)
                throw ConfigError("b.constant: value must have k_x entries");
            mc.b = [v](double, std::span<const double>, std::span<double> out) {
                std::copy(v.begin(), v.end(), out.begin());
            };
        } else if (s.name == "affine") {
            Vec c0 = vec_param(s.params, "c0", Vec(kx, 0.0));
            Vec a = vec_param(s.params, "a", Vec(static_cast<std::size_t>(kx) * kx, 0.0));
            if (static_cast<int>(c0.size()) != kx ||
                static_cast<int>(a.size()) != kx * kx)
                throw ConfigError("b.affine: c0 needs k_x entries, a needs k_x*k_x");
            mc.b = [c0, a, kx](double, std::span<const double> x, std::span<double> out) {
                for (int c = 0; c < kx; ++c) {
                    double v = c0[c];
                    for (int cc = 0; cc < kx; ++cc) v += a[c * kx + cc] * x[cc];
                    out[c] = v;
                }
            };
        } else {
            throw ConfigError("unknown drift function: " + s.name);
        }
        mc.moduli.b = build_modulus(s, cfg.lipschitz_const);
    }

    // diffusion registry
    {
        const auto& s = cfg.sigma;
        const int sz = kx * d;
        if (s.name == "zero") {
            mc.sigma = [sz](double, std::span<const double>, std::span<double> out) {
                for (int c = 0; c < sz; ++c) out[c] = 0.0;
            };
        } else if (s.name == "constant") {
            Vec v = vec_param(s.params, "value", Vec(sz, 0.0));
            if (static_cast<int>(v.size()) != sz)
                throw ConfigError("sigma.constant: value must have k_x*d entries");
            mc.sigma = [v](double, std::span<const double>, std::span<double> out) {
                std::copy(v.begin(), v.end(), out.begin());
            };
        } else if (s.name == "cosine_diag") {
            // diagonal (c0 + c1 cos(x_1)); Lipschitz with constant |c1|
            double c0 = num_param(s.params, "c0", 1.0);
            double c1 = num_param(s.params, "c1", 0.25);
            mc.sigma = [c0, c1, kx, d](double, std::span<const double> x,
                                       std::span<double> out) {
                for (int c = 0; c < kx * d; ++c) out[c] = 0.0;
                double v = c0 + c1 * std::cos(x[0]);
                for (int c = 0; c < std::min(kx, d); ++c) out[c * d + c] = v;
            };
        } else {
            throw ConfigError("unknown diffusion function: " + s.name);
        }
        mc.moduli.sigma = build_modulus(s, cfg.lipschitz_const);
    }

    // jump coefficient registry
    {
        const auto& s = cfg.beta;
        if (s.name == "zero") {
            mc.beta = [kx](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) {
                for (int c = 0; c < kx; ++c) out[c] = 0.0;
            };
            mc.traits.beta_state_independent = true;
            mc.traits.beta_time_independent = true;
        } else if (s.name == "linear_e") {
            Vec mat = vec_param(s.params, "matrix", Vec(static_cast<std::size_t>(kx) * ell, 0.0));
            if (static_cast<int>(mat.size()) != kx * ell)
                throw ConfigError("beta.linear_e: matrix must have k_x*ell entries");
            mc.beta = [mat, kx, ell](double, std::span<const double>,
                                     std::span<const double> e, std::span<double> out) {
                for (int c = 0; c < kx; ++c) {
                    double v = 0.0;
                    for (int l = 0; l < ell; ++l) v += mat[c * ell + l] * e[l];
                    out[c] = v;
                }
            };
            mc.traits.beta_state_independent = true;
            mc.traits.beta_time_independent = true;
        } else if (s.name == "abs_e") {
            Vec coef = vec_param(s.params, "coef", Vec(kx, 1.0));
            if (static_cast<int>(coef.size()) != kx)
                throw ConfigError("beta.abs_e: coef must have k_x entries");
            mc.beta = [coef, kx](double, std::span<const double>, std::span<const double> e,
                                 std::span<double> out) {
                double r = norm2(e);
                for (int c = 0; c < kx; ++c) out[c] = coef[c] * r;
            };
            mc.traits.beta_state_independent = true;
            mc.traits.beta_time_independent = true;
        } else if (s.name == "sine_x_e") {
            // (c0 + c1 sin(x_1)) e_1 in every component: state dependent
            double c0 = num_param(s.params, "c0", 0.5);
            double c1 = num_param(s.params, "c1", 0.25);
            mc.beta = [c0, c1, kx](double, std::span<const double> x,
                                   std::span<const double> e, std::span<double> out) {
                double v = (c0 + c1 * std::sin(x[0])) * e[0];
                for (int c = 0; c < kx; ++c) out[c] = v;
            };
        } else {
            throw ConfigError("unknown jump coefficient: " + s.name);
        }
        mc.moduli.beta = build_modulus(s, cfg.lipschitz_const);
    }

    // per-equation gamma / terminal / driver registries
    mc.traits.gamma_state_independent = true;
    mc.traits.gamma_time_independent = true;
    for (int i = 0; i < m; ++i) {
        const auto& s = cfg.gamma[i];
        if (s.name == "zero") {
            mc.gamma.push_back(
                [](double, std::span<const double>, std::span<const double>) { return 0.0; });
        } else if (s.name == "identity_e") {
            mc.gamma.push_back(
                [](double, std::span<const double>, std::span<const double> e) { return e[0]; });
        } else if (s.name == "abs_e") {
            mc.gamma.push_back([](double, std::span<const double>, std::span<const double> e) {
                return norm2(e);
            });
        } else if (s.name == "squared_e") {
            mc.gamma.push_back([](double, std::span<const double>, std::span<const double> e) {
                return norm2_sq(e);
            });
        } else if (s.name == "capped") {
            double c = num_param(s.params, "c", 1.0);
            mc.gamma.push_back([c](double, std::span<const double>, std::span<const double> e) {
                return c * std::min(1.0, norm2(e));
            });
        } else if (s.name == "constant") {
            // violates the jump-size bound near 0; kept for validator tests
            double c = num_param(s.params, "c", 1.0);
            mc.gamma.push_back(
                [c](double, std::span<const double>, std::span<const double>) { return c; });
        } else {
            throw ConfigError("unknown gamma function: " + s.name);
        }
        mc.moduli.gamma = build_modulus(s, cfg.lipschitz_const);
    }
    for (int i = 0; i < m; ++i) {
        const auto& s = cfg.g[i];
        if (s.name == "zero") {
            mc.g.push_back([](std::span<const double>) { return 0.0; });
        } else if (s.name == "constant") {
            double c = num_param(s.params, "c", 0.0);
            mc.g.push_back([c](std::span<const double>) { return c; });
        } else if (s.name == "identity") {
            mc.g.push_back([](std::span<const double> x) { return x[0]; });
        } else if (s.name == "square") {
            mc.g.push_back([](std::span<const double> x) { return x[0] * x[0]; });
        } else if (s.name == "abs") {
            mc.g.push_back([](std::span<const double> x) { return std::abs(x[0]); });
        } else if (s.name == "sqrt_abs") {
            // fails a linear-modulus check near the origin; validator tests
            mc.g.push_back(
                [](std::span<const double> x) { return std::sqrt(std::abs(x[0])); });
        } else if (s.name == "affine") {
            double c0 = num_param(s.params, "c0", 0.0);
            Vec a = vec_param(s.params, "a", Vec(kx, 1.0));
            if (static_cast<int>(a.size()) != kx)
                throw ConfigError("g.affine: a must have k_x entries");
            mc.g.push_back([c0, a, kx](std::span<const double> x) {
                double v = c0;
                for (int c = 0; c < kx; ++c) v += a[c] * x[c];
                return v;
            });
        } else {
            throw ConfigError("unknown terminal function: " + s.name);
        }
        mc.moduli.g = build_modulus(s, cfg.lipschitz_const);
    }
    for (int i = 0; i < m; ++i) {
        const auto& s = cfg.h[i];
        if (s.name == "zero") {
            mc.h.push_back([](double, std::span<const double>, std::span<const double>,
                              std::span<const double>, double) { return 0.0; });
        } else if (s.name == "linear_y") {
            double c = num_param(s.params, "c", 0.5);
            mc.h.push_back([c, i](double, std::span<const double>, std::span<const double> y,
                                  std::span<const double>, double) { return c * y[i]; });
        } else if (s.name == "linear_q") {
            double c = num_param(s.params, "c", 1.0);
            mc.h.push_back([c](double, std::span<const double>, std::span<const double>,
                               std::span<const double>, double q) { return c * q; });
        } else if (s.name == "affine_yzq") {
            double c0 = num_param(s.params, "c0", 0.0);
            double cy = num_param(s.params, "cy", 0.0);
            double cz = num_param(s.params, "cz", 0.0);
            double cq = num_param(s.params, "cq", 0.0);
            mc.h.push_back([c0, cy, cz, cq, i](double, std::span<const double>,
                                               std::span<const double> y,
                                               std::span<const double> z, double q) {
                double zsum = 0.0;
                for (double v : z) zsum += v;
                return c0 + cy * y[i] + cz * zsum + cq * q;
            });
        } else if (s.name == "coupled_sum") {
            double c = num_param(s.params, "c", 0.5);
            mc.h.push_back([c](double, std::span<const double>, std::span<const double> y,
                               std::span<const double>, double) {
                double s = 0.0;
                for (double v : y) s += v;
                return c * s;
            });
        } else if (s.name == "quadratic_q") {
            // not globally Lipschitz in q; kept for validator tests
            mc.h.push_back([](double, std::span<const double>, std::span<const double>,
                              std::span<const double>, double q) { return q * q; });
        } else {
            throw ConfigError("unknown driver function: " + s.name);
        }
        mc.moduli.h = build_modulus(s, cfg.lipschitz_const);
    }
    return mc;
}

RegressionBasis build_basis(const BasisSpec& spec, Dims dims, const PathEnsemble* auto_from) {
    Box box;
    if (spec.auto_box) {
        if (!auto_from)
            throw ConfigError("build_basis: auto box requested without an ensemble");
        box = design_box(*auto_from);
    } else {
        box.lo = spec.box_lo;
        box.hi = spec.box_hi;
        if (static_cast<int>(box.lo.size()) != dims.k_x ||
            static_cast<int>(box.hi.size()) != dims.k_x)
            throw ConfigError("build_basis: box dimensions must match k_x");
    }
    if (spec.kind == "polynomial") return RegressionBasis::polynomial(spec.degree, box);
    if (spec.kind == "piecewise-linear")
        return RegressionBasis::piecewise_linear(spec.cells, box);
    throw ConfigError("build_basis: unknown kind " + spec.kind);
}

namespace {

void parse_function_spec(const json& j, const std::string& path, FunctionSpec& out,
                         std::vector<std::string>& errors) {
    if (!j.is_object()) {
        errors.push_back(path + ": expected an object");
        return;
    }
    if (j.contains("name"))
        out.name = j.at("name").get<std::string>();
    else
        errors.push_back(path + ".name: missing");
    if (j.contains("params")) out.params = j.at("params");
    if (j.contains("modulus")) {
        const auto& m = j.at("modulus");
        if (m.contains("name")) out.modulus_name = m.at("name").get<std::string>();
        if (m.contains("params")) out.modulus_params = m.at("params");
        if (m.contains("osgood")) out.modulus_osgood = m.at("osgood").get<bool>();
    }
}

json function_spec_to_json(const FunctionSpec& s) {
    json j;
    j["name"] = s.name;
    if (!s.params.empty()) j["params"] = s.params;
    if (s.modulus_name) {
        json m;
        m["name"] = *s.modulus_name;
        if (!s.modulus_params.empty()) m["params"] = s.modulus_params;
        m["osgood"] = s.modulus_osgood;
        j["modulus"] = m;
    }
    return j;
}

const char* known_registry[] = {
    // drift
    "zero", "constant", "affine",
    // diffusion
    "cosine_diag",
    // jump coefficient
    "linear_e", "abs_e", "sine_x_e",
    // gamma
    "identity_e", "squared_e", "capped",
    // terminal
    "identity", "square", "abs", "sqrt_abs",
    // driver
    "linear_y", "linear_q", "affine_yzq", "coupled_sum", "quadratic_q"};

bool known_name(const std::string& n) {
    for (const char* k : known_registry)
        if (n == k) return true;
    return false;
}

}  // namespace

LoadResult scenario_from_json(const json& j) {
    LoadResult res;
    ScenarioConfig cfg;
    auto& errors = res.errors;

    if (!j.is_object()) {
        errors.push_back("root: expected an object");
        return res;
    }
    if (j.contains("name")) cfg.name = j.at("name").get<std::string>();

    if (j.contains("dims")) {
        const auto& d = j.at("dims");
        cfg.dims.k_x = d.value("k_x", 1);
        cfg.dims.d = d.value("d", 1);
        cfg.dims.m = d.value("m", 1);
        cfg.dims.ell = d.value("ell", 1);
    }
    if (cfg.dims.k_x < 1) errors.push_back("dims.k_x: must be >= 1");
    if (cfg.dims.d < 1) errors.push_back("dims.d: must be >= 1");
    if (cfg.dims.m < 1) errors.push_back("dims.m: must be >= 1");
    if (cfg.dims.ell != 1)
        errors.push_back("dims.ell: scenario files support ell = 1 (mark dimension)");

    if (j.contains("measure")) {
        const auto& mj = j.at("measure");
        cfg.measure.kind = mj.value("kind", std::string("power-law"));
        cfg.measure.alpha = mj.value("alpha", 0.5);
        cfg.measure.scale = mj.value("scale", 1.0);
        cfg.measure.radius = mj.value("radius", 1.0);
        if (mj.contains("table_r")) cfg.measure.table_r = mj.at("table_r").get<Vec>();
        if (mj.contains("table_rho")) cfg.measure.table_rho = mj.at("table_rho").get<Vec>();
        if (cfg.measure.kind != "power-law" && cfg.measure.kind != "table")
            errors.push_back("measure.kind: must be power-law or table");
        if (cfg.measure.kind == "power-law" &&
            !(cfg.measure.alpha > 0.0 && cfg.measure.alpha < 2.0))
            errors.push_back("measure.alpha: must lie in (0,2)");
        if (cfg.measure.kind == "table" &&
            (cfg.measure.table_r.size() != cfg.measure.table_rho.size() ||
             cfg.measure.table_r.size() < 2))
            errors.push_back("measure.table_r/table_rho: need equal lengths >= 2");
        if (!(cfg.measure.radius > 0.0)) errors.push_back("measure.radius: must be positive");
    }

    if (j.contains("coefficients")) {
        const auto& cj = j.at("coefficients");
        if (cj.contains("b")) parse_function_spec(cj.at("b"), "coefficients.b", cfg.b, errors);
        if (cj.contains("sigma"))
            parse_function_spec(cj.at("sigma"), "coefficients.sigma", cfg.sigma, errors);
        if (cj.contains("beta"))
            parse_function_spec(cj.at("beta"), "coefficients.beta", cfg.beta, errors);
        auto parse_array = [&](const char* key, std::vector<FunctionSpec>& out) {
            if (!cj.contains(key)) return;
            const auto& arr = cj.at(key);
            if (!arr.is_array()) {
                errors.push_back(std::string("coefficients.") + key + ": expected an array");
                return;
            }
            for (std::size_t i = 0; i < arr.size(); ++i) {
                FunctionSpec fs;
                parse_function_spec(arr[i],
                                    std::string("coefficients.") + key + "[" +
                                        std::to_string(i) + "]",
                                    fs, errors);
                out.push_back(std::move(fs));
            }
        };
        parse_array("gamma", cfg.gamma);
        parse_array("g", cfg.g);
        parse_array("h", cfg.h);
        cfg.lipschitz_const = cj.value("lipschitz_const", 1.0);
    }
    // default singletons, then enforce per-equation counts
    if (cfg.gamma.empty()) cfg.gamma.assign(1, FunctionSpec{"identity_e"});
    if (cfg.g.empty()) cfg.g.assign(1, FunctionSpec{"identity"});
    if (cfg.h.empty()) cfg.h.assign(1, FunctionSpec{"zero"});
    auto check_count = [&](const char* key, std::size_t n) {
        if (static_cast<int>(n) != cfg.dims.m)
            errors.push_back(std::string("coefficients.") + key + ": expected " +
                             std::to_string(cfg.dims.m) + " entries (dims.m), got " +
                             std::to_string(n));
    };
    check_count("gamma", cfg.gamma.size());
    check_count("g", cfg.g.size());
    check_count("h", cfg.h.size());

    auto check_known = [&](const FunctionSpec& s, const std::string& path) {
        if (!known_name(s.name)) errors.push_back(path + ": unknown registry name " + s.name);
    };
    check_known(cfg.b, "coefficients.b");
    check_known(cfg.sigma, "coefficients.sigma");
    check_known(cfg.beta, "coefficients.beta");
    for (std::size_t i = 0; i < cfg.gamma.size(); ++i)
        check_known(cfg.gamma[i], "coefficients.gamma[" + std::to_string(i) + "]");
    for (std::size_t i = 0; i < cfg.g.size(); ++i)
        check_known(cfg.g[i], "coefficients.g[" + std::to_string(i) + "]");
    for (std::size_t i = 0; i < cfg.h.size(); ++i)
        check_known(cfg.h[i], "coefficients.h[" + std::to_string(i) + "]");

    if (j.contains("time")) {
        cfg.t0 = j.at("time").value("t0", 0.0);
        cfg.T = j.at("time").value("T", 1.0);
    }
    if (!(cfg.T > cfg.t0)) errors.push_back("time: T must exceed t0");
    if (j.contains("x0")) cfg.x0 = j.at("x0").get<Vec>();
    if (static_cast<int>(cfg.x0.size()) != cfg.dims.k_x)
        errors.push_back("x0: must have dims.k_x entries");

    if (j.contains("numerics")) {
        const auto& nj = j.at("numerics");
        cfg.numerics.n_steps = nj.value("n_steps", 50);
        cfg.numerics.n_paths = nj.value("n_paths", std::size_t(10000));
        cfg.numerics.k = nj.value("k", 8);
        if (nj.contains("ladder")) cfg.numerics.ladder = nj.at("ladder").get<std::vector<int>>();
        cfg.numerics.ladder_paths = nj.value("ladder_paths", std::size_t(0));
        cfg.numerics.ladder_steps = nj.value("ladder_steps", 0);
        cfg.numerics.ladder_replicates = nj.value("ladder_replicates", 3);
        cfg.numerics.seed = nj.value("seed", std::uint64_t(1));
        cfg.numerics.quad_rel_tol = nj.value("quad_rel_tol", 1e-8);
        cfg.numerics.residual_rms_threshold = nj.value("residual_rms_threshold", 0.05);
        cfg.numerics.time_interpolation = nj.value("time_interpolation", false);
        if (nj.contains("basis")) {
            const auto& bj = nj.at("basis");
            cfg.numerics.basis.kind = bj.value("kind", std::string("polynomial"));
            cfg.numerics.basis.degree = bj.value("degree", 3);
            cfg.numerics.basis.cells = bj.value("cells", 8);
            cfg.numerics.basis.auto_box = bj.value("auto_box", true);
            if (bj.contains("box_lo")) cfg.numerics.basis.box_lo = bj.at("box_lo").get<Vec>();
            if (bj.contains("box_hi")) cfg.numerics.basis.box_hi = bj.at("box_hi").get<Vec>();
        }
    }
    if (cfg.numerics.n_steps < 1) errors.push_back("numerics.n_steps: must be >= 1");
    if (cfg.numerics.n_paths < 1) errors.push_back("numerics.n_paths: must be >= 1");
    if (cfg.numerics.k < 1) errors.push_back("numerics.k: must be >= 1");
    for (std::size_t i = 0; i + 1 < cfg.numerics.ladder.size(); ++i)
        if (cfg.numerics.ladder[i] >= cfg.numerics.ladder[i + 1]) {
            errors.push_back("numerics.ladder: not strictly increasing");
            break;
        }
    if (cfg.numerics.basis.kind != "polynomial" &&
        cfg.numerics.basis.kind != "piecewise-linear")
        errors.push_back("numerics.basis.kind: unknown kind " + cfg.numerics.basis.kind);
    if (!cfg.numerics.basis.auto_box &&
        (static_cast<int>(cfg.numerics.basis.box_lo.size()) != cfg.dims.k_x ||
         static_cast<int>(cfg.numerics.basis.box_hi.size()) != cfg.dims.k_x))
        errors.push_back("numerics.basis: explicit box must have k_x bounds per side");

    if (j.contains("outputs")) {
        cfg.outputs.dir = j.at("outputs").value("dir", std::string("out"));
        if (j.at("outputs").contains("formats"))
            cfg.outputs.formats = j.at("outputs").at("formats").get<std::vector<std::string>>();
    }

    if (errors.empty()) res.config = std::move(cfg);
    return res;
}

LoadResult load_scenario(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        LoadResult r;
        r.errors.push_back("cannot open scenario file: " + path);
        return r;
    }
    json j;
    try {
        is >> j;
    } catch (const std::exception& ex) {
        LoadResult r;
        r.errors.push_back(std::string("parse error: ") + ex.what());
        return r;
    }
    return scenario_from_json(j);
}

json scenario_to_json(const ScenarioConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["dims"] = {{"k_x", cfg.dims.k_x}, {"d", cfg.dims.d}, {"m", cfg.dims.m},
                 {"ell", cfg.dims.ell}};
    json mj;
    mj["kind"] = cfg.measure.kind;
    mj["alpha"] = cfg.measure.alpha;
    mj["scale"] = cfg.measure.scale;
    mj["radius"] = cfg.measure.radius;
    if (!cfg.measure.table_r.empty()) {
        mj["table_r"] = cfg.measure.table_r;
        mj["table_rho"] = cfg.measure.table_rho;
    }
    j["measure"] = mj;
    json cj;
    cj["b"] = function_spec_to_json(cfg.b);
    cj["sigma"] = function_spec_to_json(cfg.sigma);
    cj["beta"] = function_spec_to_json(cfg.beta);
    cj["gamma"] = json::array();
    for (const auto& s : cfg.gamma) cj["gamma"].push_back(function_spec_to_json(s));
    cj["g"] = json::array();
    for (const auto& s : cfg.g) cj["g"].push_back(function_spec_to_json(s));
    cj["h"] = json::array();
    for (const auto& s : cfg.h) cj["h"].push_back(function_spec_to_json(s));
    cj["lipschitz_const"] = cfg.lipschitz_const;
    j["coefficients"] = cj;
    j["time"] = {{"t0", cfg.t0}, {"T", cfg.T}};
    j["x0"] = cfg.x0;
    json nj;
    nj["n_steps"] = cfg.numerics.n_steps;
    nj["n_paths"] = cfg.numerics.n_paths;
    nj["k"] = cfg.numerics.k;
    if (!cfg.numerics.ladder.empty()) nj["ladder"] = cfg.numerics.ladder;
    if (cfg.numerics.ladder_paths) nj["ladder_paths"] = cfg.numerics.ladder_paths;
    if (cfg.numerics.ladder_steps) nj["ladder_steps"] = cfg.numerics.ladder_steps;
    nj["ladder_replicates"] = cfg.numerics.ladder_replicates;
    json bj;
    bj["kind"] = cfg.numerics.basis.kind;
    bj["degree"] = cfg.numerics.basis.degree;
    bj["cells"] = cfg.numerics.basis.cells;
    bj["auto_box"] = cfg.numerics.basis.auto_box;
    if (!cfg.numerics.basis.box_lo.empty()) {
        bj["box_lo"] = cfg.numerics.basis.box_lo;
        bj["box_hi"] = cfg.numerics.basis.box_hi;
    }
    nj["basis"] = bj;
    nj["seed"] = cfg.numerics.seed;
    nj["quad_rel_tol"] = cfg.numerics.quad_rel_tol;
    nj["residual_rms_threshold"] = cfg.numerics.residual_rms_threshold;
    nj["time_interpolation"] = cfg.numerics.time_interpolation;
    j["numerics"] = nj;
    j["outputs"] = {{"dir", cfg.outputs.dir}, {"formats", cfg.outputs.formats}};
    return j;
}

void save_solution(const MeshSolution& sol, const std::string& path) {
    json j;
    j["grid"] = {{"t0", sol.grid.t0}, {"T", sol.grid.T}, {"n_steps", sol.grid.n_steps}};
    j["k"] = sol.k.k;
    j["dims"] = {{"k_x", sol.dims.k_x}, {"d", sol.dims.d}, {"m", sol.dims.m},
                 {"ell", sol.dims.ell}};
    json bj;
    bj["kind"] =
        sol.basis.kind() == RegressionBasis::Kind::polynomial ? "polynomial" : "piecewise-linear";
    bj["degree"] = sol.basis.degree();
    bj["cells"] = sol.basis.cells();
    bj["box_lo"] = sol.basis.box().lo;
    bj["box_hi"] = sol.basis.box().hi;
    j["basis"] = bj;
    j["n_paths"] = sol.n_paths;
    j["seed"] = sol.seed;
    j["time_interpolation"] = sol.time_interpolation;
    j["extrapolation_margin"] = sol.extrapolation_margin;
    j["terminal_fit_residual"] = sol.terminal_fit_residual;
    j["max_condition"] = sol.max_condition;
    json layers = json::array();
    for (const auto& L : sol.layers) {
        json lj;
        std::vector<double> u(L.u.data(), L.u.data() + L.u.size());
        std::vector<double> z(L.z.data(), L.z.data() + L.z.size());
        lj["u"] = u;
        lj["z"] = z;
        lj["cond"] = L.cond_u;
        layers.push_back(std::move(lj));
    }
    j["layers"] = layers;
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write solution file: " + path);
    os << j.dump(0) << "\n";
}

MeshSolution load_solution(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open solution file: " + path);
    json j;
    is >> j;
    MeshSolution sol;
    sol.grid = TimeGrid::uniform(j.at("grid").at("t0").get<double>(),
                                 j.at("grid").at("T").get<double>(),
                                 j.at("grid").at("n_steps").get<int>());
    sol.k = TruncationIndex(j.at("k").get<int>());
    sol.dims.k_x = j.at("dims").at("k_x").get<int>();
    sol.dims.d = j.at("dims").at("d").get<int>();
    sol.dims.m = j.at("dims").at("m").get<int>();
    sol.dims.ell = j.at("dims").at("ell").get<int>();
    Box box{j.at("basis").at("box_lo").get<Vec>(), j.at("basis").at("box_hi").get<Vec>()};
    if (j.at("basis").at("kind").get<std::string>() == "polynomial")
        sol.basis = RegressionBasis::polynomial(j.at("basis").at("degree").get<int>(), box);
    else
        sol.basis = RegressionBasis::piecewise_linear(j.at("basis").at("cells").get<int>(), box);
    sol.n_paths = j.at("n_paths").get<std::size_t>();
    sol.seed = j.at("seed").get<std::uint64_t>();
    sol.time_interpolation = j.at("time_interpolation").get<bool>();
    sol.extrapolation_margin = j.at("extrapolation_margin").get<double>();
    sol.terminal_fit_residual = j.at("terminal_fit_residual").get<double>();
    sol.max_condition = j.at("max_condition").get<double>();
    const int B = sol.basis.size(), m = sol.dims.m, d = sol.dims.d;
    for (const auto& lj : j.at("layers")) {
        LayerFit L;
        Vec u = lj.at("u").get<Vec>();
        Vec z = lj.at("z").get<Vec>();
        if (static_cast<int>(u.size()) != B * m || static_cast<int>(z.size()) != B * m * d)
            throw ConfigError("load_solution: layer size mismatch");
        L.u = Eigen::Map<Eigen::MatrixXd>(u.data(), B, m);
        L.z = Eigen::Map<Eigen::MatrixXd>(z.data(), B, m * d);
        L.cond_u = lj.at("cond").get<double>();
        sol.layers.push_back(std::move(L));
    }
    if (static_cast<int>(sol.layers.size()) != sol.grid.n_nodes())
        throw ConfigError("load_solution: layer count mismatch");
    return sol;
}

}  // namespace jbsde
