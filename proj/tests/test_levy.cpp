#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "jbsde/levy.hpp"

using namespace jbsde;

namespace {

// closed forms for the reference family (alpha, scale=1, radius=1):
// mass above 1/k and second moment below 1/k
double ref_mass(double alpha, int k) {
    return 2.0 * (std::pow(k, alpha) - 1.0) / alpha;
}
double ref_small_moment(double alpha, int k) {
    return 2.0 * std::pow(1.0 / k, 2.0 - alpha) / (2.0 - alpha);
}

LevyMeasure quad_only_reference(double alpha) {
    // same density, no analytic moments: exercises the quadrature route
    return LevyMeasure::from_density(
        [alpha](double e) {
            double r = std::abs(e);
            return (r > 0.0 && r <= 1.0) ? std::pow(r, -1.0 - alpha) : 0.0;
        },
        1.0);
}

}  // namespace

TEST_CASE("truncated mass of the reference measure") {
    auto m = LevyMeasure::power_law(0.5);
    CHECK(m.truncated_mass(TruncationIndex(4)) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(m.truncated_mass(TruncationIndex(1)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.truncated_mass(TruncationIndex(16)) == doctest::Approx(12.0).epsilon(1e-12));

    // quadrature agrees with the closed form
    auto q = quad_only_reference(0.5);
    CHECK(q.truncated_mass(TruncationIndex(4)) == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(q.truncated_mass(TruncationIndex(16)) == doctest::Approx(12.0).epsilon(1e-9));
}

TEST_CASE("small-jump second moment") {
    auto m = LevyMeasure::power_law(0.5);
    CHECK(m.small_jump_second_moment(TruncationIndex(4)) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(m.small_jump_second_moment(TruncationIndex(1)) ==
          doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(m.small_jump_second_moment(TruncationIndex(1 << 20)) < 1e-8);

    auto q = quad_only_reference(0.5);
    CHECK(q.small_jump_second_moment(TruncationIndex(4)) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-8));
    CHECK(q.small_jump_second_moment(TruncationIndex(1)) ==
          doctest::Approx(4.0 / 3.0).epsilon(1e-8));
}

TEST_CASE("mass diverges and moments are monotone along the ladder") {
    auto m = LevyMeasure::power_law(0.7);
    double prev_mass = -1.0, prev_moment = 1e300;
    for (int k : {1, 2, 4, 8, 16, 32, 64}) {
        double mass = m.truncated_mass(TruncationIndex(k));
        double mom = m.small_jump_second_moment(TruncationIndex(k));
        CHECK(mass >= prev_mass);
        CHECK(mom <= prev_moment);
        prev_mass = mass;
        prev_moment = mom;
    }
    // unbounded total mass: any fixed bound is exceeded for large k
    CHECK(m.truncated_mass(TruncationIndex(1 << 20)) > 1e3);
    // integrability of 1 ^ |e|^2 still holds
    CHECK(m.one_wedge_e2_mass() == doctest::Approx(2.0 / 1.3).epsilon(1e-9));
}

TEST_CASE("second-moment decomposition over the truncation shell") {
    // shell integral of e^2 plus the small-jump part recovers the full
    // second moment when the support sits inside the unit ball
    auto m = LevyMeasure::power_law(0.5);
    TruncationIndex k(4);
    double shell[1];
    m.integrate(
        k, 1,
        [](std::span<const double> e, std::span<double> o) { o[0] = e[0] * e[0]; },
        std::span<double>(shell, 1), 1e-10);
    double full = m.small_jump_second_moment(TruncationIndex(1));  // support in unit ball
    CHECK(shell[0] + m.small_jump_second_moment(k) == doctest::Approx(full).epsilon(1e-8));
}

TEST_CASE("quadrature against the truncated measure") {
    auto m = LevyMeasure::power_law(0.5);
    TruncationIndex k(4);
    double out[1];
    m.integrate(
        k, 1, [](std::span<const double>, std::span<double> o) { o[0] = 1.0; },
        std::span<double>(out, 1), 1e-10);
    CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-9));

    m.integrate(
        k, 1, [](std::span<const double> e, std::span<double> o) { o[0] = e[0]; },
        std::span<double>(out, 1), 1e-10);
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-9));

    m.integrate(
        k, 1, [](std::span<const double> e, std::span<double> o) { o[0] = e[0] * e[0]; },
        std::span<double>(out, 1), 1e-10);
    CHECK(out[0] == doctest::Approx(7.0 / 6.0).epsilon(1e-9));

    // fixed-panel variant matches the adaptive one
    double fixed[1];
    m.integrate_fixed(
        k, 1, [](std::span<const double> e, std::span<double> o) { o[0] = e[0] * e[0]; },
        std::span<double>(fixed, 1), 8);
    CHECK(fixed[0] == doctest::Approx(out[0]).epsilon(1e-10));
}

TEST_CASE("non-finite integrand is reported") {
    auto m = LevyMeasure::power_law(0.5);
    double out[1];
    CHECK_THROWS_AS(m.integrate(
                        TruncationIndex(4), 1,
                        [](std::span<const double> e, std::span<double> o) {
                            o[0] = 1.0 / (std::abs(e[0]) - 0.5);
                        },
                        std::span<double>(out, 1), 1e-10),
                    NumericalError);
}

TEST_CASE("jump sampling: empty, Poisson count, symmetry") {
    auto m = LevyMeasure::power_law(0.5);

    // threshold above the support radius: zero mass, empty train
    RngStream s0(1, streams::jumps, 0);
    auto empty = m.sample_jumps(TruncationIndex(1), 1.0, s0);
    CHECK(empty.size() == 0);

    // mean count matches the truncated mass
    TruncationIndex k(4);
    const int n_draws = 100000;
    double total = 0.0, mark_sum = 0.0;
    std::size_t marks = 0;
    for (int i = 0; i < n_draws; ++i) {
        RngStream s(123, streams::jumps, i);
        auto train = m.sample_jumps(k, 1.0, s);
        total += double(train.size());
        for (std::size_t a = 0; a < train.size(); ++a) mark_sum += train.mark(a)[0];
        marks += train.size();
        for (std::size_t a = 0; a + 1 < train.times.size(); ++a)
            CHECK(train.times[a] <= train.times[a + 1]);
        for (std::size_t a = 0; a < train.size(); ++a)
            CHECK(std::abs(train.mark(a)[0]) >= 0.25 - 1e-12);
    }
    double mean = total / n_draws;
    CHECK(std::abs(mean - 4.0) < 3.0 * std::sqrt(4.0 / n_draws));
    // symmetric density: mark mean is zero within 3 standard errors
    double mark_mean = mark_sum / double(marks);
    double mark_var = 7.0 / 6.0 / 4.0;  // second moment / mass
    CHECK(std::abs(mark_mean) < 3.0 * std::sqrt(mark_var / double(marks)));
}

TEST_CASE("sampled radial law passes a KS test at the 1% level") {
    auto m = LevyMeasure::power_law(0.5);
    TruncationIndex k(4);
    std::vector<double> radii;
    radii.reserve(12000);
    int stream_id = 0;
    while (radii.size() < 10000) {
        RngStream s(777, streams::jumps, stream_id++);
        auto train = m.sample_jumps(k, 10.0, s);
        for (std::size_t a = 0; a < train.size(); ++a)
            radii.push_back(std::abs(train.mark(a)[0]));
    }
    radii.resize(10000);
    std::sort(radii.begin(), radii.end());
    double dmax = 0.0;
    const double n = double(radii.size());
    for (std::size_t i = 0; i < radii.size(); ++i) {
        double f = m.truncated_radial_cdf(k, radii[i]);
        dmax = std::max(dmax, std::abs(f - (i + 1) / n));
        dmax = std::max(dmax, std::abs(f - i / n));
    }
    // asymptotic 1% critical value
    CHECK(dmax < 1.62762 / std::sqrt(n));
}

TEST_CASE("tabulated density reproduces power-law moments approximately") {
    const double alpha = 0.5;
    std::vector<double> grid, vals;
    for (int i = 0; i <= 400; ++i) {
        double r = std::pow(10.0, -6.0 + 6.0 * i / 400.0);
        grid.push_back(r);
        vals.push_back(std::pow(r, -1.0 - alpha));
    }
    auto tab = LevyMeasure::from_table(grid, vals, 1.0);
    CHECK(tab.truncated_mass(TruncationIndex(4)) == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(tab.small_jump_second_moment(TruncationIndex(4)) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-3));

    RngStream s(5, streams::jumps, 0);
    auto train = tab.sample_jumps(TruncationIndex(4), 50.0, s);
    CHECK(train.size() > 100);
    for (std::size_t a = 0; a < train.size(); ++a)
        CHECK(std::abs(train.mark(a)[0]) >= 0.25 - 1e-9);
}

TEST_CASE("isotropic planar measure: mass and moments") {
    // profile r^(-3) on r <= 1: mass above thr = 2 pi (1/thr - 1),
    // second moment below thr = 2 pi thr
    auto m2 = LevyMeasure::isotropic_2d([](double r) { return std::pow(r, -3.0); }, 1.0);
    CHECK(m2.dim_e() == 2);
    CHECK(m2.truncated_mass(TruncationIndex(4)) ==
          doctest::Approx(2.0 * M_PI * 3.0).epsilon(1e-8));
    CHECK(m2.small_jump_second_moment(TruncationIndex(4)) ==
          doctest::Approx(2.0 * M_PI * 0.25).epsilon(1e-8));

    // odd integrand vanishes by symmetry of the direction average
    double out[1];
    m2.integrate(
        TruncationIndex(4), 1,
        [](std::span<const double> e, std::span<double> o) { o[0] = e[0]; },
        std::span<double>(out, 1), 1e-9);
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-10));

    RngStream s(9, streams::jumps, 0);
    auto train = m2.sample_jumps(TruncationIndex(2), 1.0, s);
    for (std::size_t a = 0; a < train.size(); ++a) {
        double r = std::hypot(train.mark(a)[0], train.mark(a)[1]);
        CHECK(r >= 0.5 - 1e-12);
        CHECK(r <= 1.0 + 1e-12);
    }
}
