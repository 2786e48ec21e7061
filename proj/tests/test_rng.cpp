#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "jbsde/rng.hpp"

using namespace jbsde;

TEST_CASE("streams are deterministic and stateless") {
    RngStream a(42, streams::brownian, 7);
    RngStream b(42, streams::brownian, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    // skipping ahead equals drawing and discarding
    RngStream c(42, streams::brownian, 7);
    c.skip(50);
    RngStream d(42, streams::brownian, 7);
    for (int i = 0; i < 50; ++i) d.next_u64();
    CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("different streams are decorrelated") {
    RngStream a(42, streams::brownian, 0);
    RngStream b(42, streams::brownian, 1);
    RngStream c(43, streams::brownian, 0);
    const int n = 20000;
    double cab = 0.0, cac = 0.0;
    for (int i = 0; i < n; ++i) {
        double ua = a.next_double() - 0.5;
        double ub = b.next_double() - 0.5;
        double uc = c.next_double() - 0.5;
        cab += ua * ub;
        cac += ua * uc;
    }
    // correlation of iid uniforms ~ N(0, 1/(12 sqrt(n)))
    CHECK(std::abs(cab / n) < 5.0 / (12.0 * std::sqrt(double(n))));
    CHECK(std::abs(cac / n) < 5.0 / (12.0 * std::sqrt(double(n))));
}

TEST_CASE("uniform moments") {
    RngStream s(1, 2, 3);
    const int n = 200000;
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double u = s.next_double();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
        m1 += u;
        m2 += u * u;
    }
    m1 /= n;
    m2 /= n;
    CHECK(m1 == doctest::Approx(0.5).epsilon(0.005));
    CHECK(m2 == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

TEST_CASE("normal transform hits exact quantiles") {
    CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(inverse_normal_cdf(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
    CHECK(inverse_normal_cdf(0.0013498980316301035) == doctest::Approx(-3.0).epsilon(1e-9));

    RngStream s(7, 7, 7);
    const int n = 200000;
    double m1 = 0.0, m2 = 0.0, m4 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = s.next_normal();
        m1 += z;
        m2 += z * z;
        m4 += z * z * z * z;
    }
    m1 /= n;
    m2 /= n;
    m4 /= n;
    CHECK(std::abs(m1) < 3.0 / std::sqrt(double(n)));
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.02));
    CHECK(m4 == doctest::Approx(3.0).epsilon(0.05));
}
