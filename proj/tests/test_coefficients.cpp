#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jbsde/coefficients.hpp"
#include "jbsde/rng.hpp"

using namespace jbsde;

namespace {

// single-equation model with pluggable pieces, defaults all trivial
ModelCoefficients make_model() {
    ModelCoefficients mc;
    mc.dims = Dims{1, 1, 1, 1};
    mc.b = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    mc.sigma = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    mc.beta = [](double, std::span<const double>, std::span<const double> e,
                 std::span<double> out) { out[0] = e[0]; };
    mc.traits.beta_state_independent = true;
    mc.traits.beta_time_independent = true;
    mc.traits.gamma_state_independent = true;
    mc.traits.gamma_time_independent = true;
    mc.gamma = {[](double, std::span<const double>, std::span<const double> e) { return e[0]; }};
    mc.g = {[](std::span<const double> x) { return x[0]; }};
    mc.h = {[](double, std::span<const double>, std::span<const double>,
               std::span<const double>, double) { return 0.0; }};
    return mc;
}

// fourth/fifth-order embedded Runge-Kutta oracle for y' = c rho(y)
double rk45_envelope(double a0, double c, const std::function<double(double)>& rho, double t_end,
                     double tol) {
    double t = 0.0, y = a0, h = 1e-4;
    auto f = [&](double y_) { return c * rho(y_); };
    while (t < t_end) {
        h = std::min(h, t_end - t);
        double k1 = f(y);
        double k2 = f(y + h * k1 / 4.0);
        double k3 = f(y + h * (3.0 * k1 + 9.0 * k2) / 32.0);
        double k4 = f(y + h * (1932.0 * k1 - 7200.0 * k2 + 7296.0 * k3) / 2197.0);
        double k5 = f(y + h * (439.0 * k1 / 216.0 - 8.0 * k2 + 3680.0 * k3 / 513.0 -
                               845.0 * k4 / 4104.0));
        double k6 = f(y + h * (-8.0 * k1 / 27.0 + 2.0 * k2 - 3544.0 * k3 / 2565.0 +
                               1859.0 * k4 / 4104.0 - 11.0 * k5 / 40.0));
        double y4 = y + h * (25.0 * k1 / 216.0 + 1408.0 * k3 / 2565.0 + 2197.0 * k4 / 4104.0 -
                             k5 / 5.0);
        double y5 = y + h * (16.0 * k1 / 135.0 + 6656.0 * k3 / 12825.0 +
                             28561.0 * k4 / 56430.0 - 9.0 * k5 / 50.0 + 2.0 * k6 / 55.0);
        double err = std::abs(y5 - y4);
        double scale = tol * std::max(1e-12, std::abs(y));
        if (err <= scale) {
            t += h;
            y = y5;
        }
        h *= std::clamp(0.9 * std::pow(scale / std::max(err, 1e-300), 0.2), 0.2, 5.0);
    }
    return y;
}

PairList line_pairs(double lo, double hi, int n, double sep) {
    PairList pairs;
    for (int i = 0; i < n; ++i) {
        double x = lo + (hi - lo) * i / (n - 1);
        pairs.push_back({{x}, {x + sep}});
    }
    return pairs;
}

}  // namespace

TEST_CASE("effective driver composes the integrated nonlocal argument") {
    auto measure = LevyMeasure::power_law(0.5);
    TruncationIndex k(4);
    Vec x{0.3}, y{2.0}, z{0.1};

    auto mc = make_model();
    // zeta == 0 collapses to the plain driver value
    mc.h = {[](double, std::span<const double>, std::span<const double> y_,
               std::span<const double>, double q) { return 3.0 * y_[0] + q; }};
    double v0 = effective_driver(mc, measure, k, 0, 0.0, x, y, z,
                                 [](std::span<const double>) { return 0.0; });
    CHECK(v0 == doctest::Approx(6.0).epsilon(1e-12));

    // h = q with gamma == 1 and zeta == 1 returns the truncated mass
    mc.h = {[](double, std::span<const double>, std::span<const double>,
               std::span<const double>, double q) { return q; }};
    mc.gamma = {[](double, std::span<const double>, std::span<const double>) { return 1.0; }};
    double v1 = effective_driver(mc, measure, k, 0, 0.0, x, y, z,
                                 [](std::span<const double>) { return 1.0; });
    CHECK(v1 == doctest::Approx(4.0).epsilon(1e-8));

    // h = c y + q with gamma = e^2: the quadrature oracle gives 7/6
    mc.h = {[](double, std::span<const double>, std::span<const double> y_,
               std::span<const double>, double q) { return 0.5 * y_[0] + q; }};
    mc.gamma = {
        [](double, std::span<const double>, std::span<const double> e) { return e[0] * e[0]; }};
    double v2 = effective_driver(mc, measure, k, 0, 0.0, x, y, z,
                                 [](std::span<const double>) { return 1.0; });
    CHECK(v2 == doctest::Approx(0.5 * 2.0 + 7.0 / 6.0).epsilon(1e-8));
}

TEST_CASE("assumption validation passes the clean linear model") {
    auto measure = LevyMeasure::power_law(0.5);
    auto mc = make_model();
    SamplePlan plan;
    plan.n_points = 4000;
    plan.n_pairs = 4000;
    auto rep = validate_assumptions(mc, measure, plan);
    CHECK(rep.all_pass());
    CHECK(rep.find("beta_jump_bound") != nullptr);
    CHECK(rep.find("beta_jump_bound")->observed <= 1.0 + 1e-9);
}

TEST_CASE("assumption validation flags a superlinear driver") {
    auto measure = LevyMeasure::power_law(0.5);
    auto mc = make_model();
    mc.h = {[](double, std::span<const double>, std::span<const double>,
               std::span<const double>, double q) { return q * q; }};
    SamplePlan plan;
    plan.n_points = 2000;
    plan.n_pairs = 2000;
    auto rep = validate_assumptions(mc, measure, plan);
    CHECK_FALSE(rep.all_pass());
    const auto* e = rep.find("driver_lipschitz_yzq");
    REQUIRE(e != nullptr);
    CHECK_FALSE(e->pass);
    CHECK(e->observed > 1.0);
    CHECK_FALSE(e->witness.empty());
}

TEST_CASE("assumption validation catches a square-root terminal with a linear modulus") {
    auto measure = LevyMeasure::power_law(0.5);
    auto mc = make_model();
    mc.g = {[](std::span<const double> x) { return std::sqrt(std::abs(x[0])); }};
    SamplePlan plan;
    plan.n_points = 2000;
    plan.n_pairs = 20000;
    auto rep = validate_assumptions(mc, measure, plan);
    const auto* e = rep.find("terminal_modulus");
    REQUIRE(e != nullptr);
    CHECK_FALSE(e->pass);

    // brute-force oracle on a fine grid near the origin: some pair must
    // violate the linear modulus by a wide margin
    double worst = 0.0;
    for (int i = 1; i <= 2000; ++i) {
        double x = 1e-6 * i;
        double xp = x + 1e-6;
        double ratio = std::abs(std::sqrt(x) - std::sqrt(xp)) / (xp - x);
        worst = std::max(worst, ratio);
    }
    CHECK(worst > 100.0);
    CHECK(e->observed > 10.0);
}

TEST_CASE("two-sided modulus check on slope cases") {
    auto id = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
    auto twice = [](std::span<const double> x, std::span<double> out) { out[0] = 2.0 * x[0]; };
    auto pairs = line_pairs(-3.0, 3.0, 50, 0.37);

    auto r1 = mao_distance_test(id, 1, ConcaveModulus::linear(1.0), 2.0, pairs);
    CHECK(r1.entries.front().pass);
    CHECK(r1.entries.front().observed == doctest::Approx(1.0).epsilon(1e-12));

    auto r2 = mao_distance_test(twice, 1, ConcaveModulus::linear(1.0), 2.0, pairs);
    CHECK_FALSE(r2.entries.front().pass);
    CHECK(r2.entries.front().observed == doctest::Approx(2.0).epsilon(1e-12));

    auto r3 = mao_distance_test(twice, 1, ConcaveModulus::linear(4.0), 2.0, pairs);
    CHECK(r3.entries.front().pass);
    CHECK(r3.entries.front().observed == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("modulus check reduces to a Lipschitz test for linear moduli") {
    // slope L against rho(u) = s^2 u: pass exactly when s >= L
    auto pairs = line_pairs(-2.0, 2.0, 40, 0.11);
    for (double L : {0.5, 1.0, 2.0, 3.5}) {
        auto f = [L](std::span<const double> x, std::span<double> out) { out[0] = L * x[0]; };
        auto pass_at = [&](double slope) {
            return mao_distance_test(f, 1, ConcaveModulus::linear(slope * slope), 2.0, pairs)
                .entries.front()
                .pass;
        };
        CHECK(pass_at(L));
        CHECK(pass_at(L * 1.01));
        CHECK_FALSE(pass_at(L * 0.99));
    }
}

TEST_CASE("one-sided modulus check") {
    auto pairs = line_pairs(-3.0, 3.0, 50, 0.41);
    // f(x) = -x has negative signed differences: passes any tiny modulus
    auto neg = [](std::span<const double> x, std::span<double> out) { out[0] = -x[0]; };
    auto r1 = one_sided_mao_test(neg, ConcaveModulus::linear(1e-12), 2.0, pairs);
    CHECK(r1.find("mao_one_sided")->pass);

    auto id = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
    auto r2 = one_sided_mao_test(id, ConcaveModulus::linear(1.0), 2.0, pairs);
    CHECK(r2.find("mao_one_sided")->pass);
    CHECK(r2.find("mao_one_sided")->observed == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-sided pass implies one-sided pass on random cases") {
    RngStream rng(2024, streams::validation);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        // random smooth scalar map and random linear modulus
        double a = 4.0 * rng.next_double() - 2.0;
        double bsin = 2.0 * rng.next_double() - 1.0;
        double freq = 0.5 + 2.0 * rng.next_double();
        double slope = std::pow(10.0, 2.0 * rng.next_double() - 1.0);
        auto f = [&](std::span<const double> x, std::span<double> out) {
            out[0] = a * x[0] + bsin * std::sin(freq * x[0]);
        };
        PairList pairs;
        for (int i = 0; i < 40; ++i) {
            double x = 6.0 * rng.next_double() - 3.0;
            double d = std::pow(10.0, -4.0 * rng.next_double());
            pairs.push_back({{x}, {x + d}});
        }
        auto rho = ConcaveModulus::linear(slope);
        bool two = mao_distance_test(f, 1, rho, 2.0, pairs).entries.front().pass;
        auto one_rep = one_sided_mao_test(f, rho, 2.0, pairs);
        bool one = one_rep.find("mao_one_sided")->pass;
        CHECK(one_rep.find("one_sided_implied_by_two_sided")->pass);
        if (two) {
            CHECK(one);
            ++checked;
        }
    }
    CHECK(checked > 20);  // the sample must actually exercise the implication
}

TEST_CASE("comparison envelope: exponential case is exact") {
    auto lin = ConcaveModulus::linear(1.0);
    CHECK(bihari_envelope(1.0, 1.0, lin, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-9));

    for (double a0 : {1e-4, 0.1, 1.0, 3.0, 10.0}) {
        for (double c : {0.1, 0.5, 1.0, 2.0, 3.0}) {
            for (double t : {0.1, 0.5, 1.0, 2.0, 3.0}) {
                double got = bihari_envelope(a0, c, lin, t);
                CHECK(got == doctest::Approx(a0 * std::exp(c * t)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("comparison envelope: degenerate and error cases") {
    auto lin = ConcaveModulus::linear(2.0);
    CHECK(bihari_envelope(0.0, 1.0, lin, 5.0) == 0.0);
    CHECK(bihari_envelope(0.7, 1.0, lin, 0.0) == doctest::Approx(0.7));

    auto root = ConcaveModulus::power(0.5);  // the Osgood integral converges
    CHECK_THROWS_AS(bihari_envelope(0.0, 1.0, root, 1.0), ConfigError);
}

TEST_CASE("comparison envelope: log modulus against an adaptive ODE oracle") {
    auto logm = ConcaveModulus::log_modulus();
    double got = bihari_envelope(1e-4, 1.0, logm, 1.0);
    double oracle = rk45_envelope(1e-4, 1.0, logm.rho, 1.0, 1e-10);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-7));

    got = bihari_envelope(1e-4, 2.0, logm, 1.5);
    oracle = rk45_envelope(1e-4, 2.0, logm.rho, 1.5, 1e-10);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-7));
}

TEST_CASE("comparison envelope is monotone in each argument") {
    auto logm = ConcaveModulus::log_modulus();
    double base = bihari_envelope(1e-3, 1.0, logm, 1.0);
    CHECK(bihari_envelope(2e-3, 1.0, logm, 1.0) >= base);
    CHECK(bihari_envelope(1e-3, 1.5, logm, 1.0) >= base);
    CHECK(bihari_envelope(1e-3, 1.0, logm, 1.4) >= base);
}

TEST_CASE("modulus shape checks") {
    CHECK(check_modulus(ConcaveModulus::linear(2.0)).ok);
    CHECK(check_modulus(ConcaveModulus::log_modulus()).ok);
    CHECK(check_modulus(ConcaveModulus::power(0.5)).ok);

    auto convex = ConcaveModulus::custom(
        "square", [](double u) { return u * u; }, false);
    CHECK_FALSE(check_modulus(convex).ok);
}
