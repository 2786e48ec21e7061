#include "jbsde/modulus.hpp"

#include <cmath>

#include "jbsde/quadrature.hpp"

namespace jbsde {

ConcaveModulus ConcaveModulus::linear(double slope) {
    if (!(slope > 0.0)) throw ConfigError("modulus: slope must be positive");
    ConcaveModulus m;
    m.name = "linear";
    m.rho = [slope](double u) { return slope * u; };
    m.osgood = true;
    return m;
}

ConcaveModulus ConcaveModulus::log_modulus() {
    ConcaveModulus m;
    m.name = "log";
    const double knee = std::exp(-1.0);
    m.rho = [knee](double u) {
        if (u <= 0.0) return 0.0;
        if (u < knee) return u * std::log(1.0 / u);
        return knee;  // flat continuation keeps the modulus concave
    };
    m.osgood = true;
    return m;
}

ConcaveModulus ConcaveModulus::power(double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("modulus: power exponent must be in (0,1]");
    ConcaveModulus m;
    m.name = "power";
    m.rho = [p](double u) { return u <= 0.0 ? 0.0 : std::pow(u, p); };
    m.osgood = (p >= 1.0);
    return m;
}

ConcaveModulus ConcaveModulus::custom(std::string name, std::function<double(double)> rho,
                                      bool osgood) {
    ConcaveModulus m;
    m.name = std::move(name);
    m.rho = std::move(rho);
    m.osgood = osgood;
    return m;
}

ModulusCheck check_modulus(const ConcaveModulus& m, int n_grid, double u_max) {
    ModulusCheck r;
    if (std::abs(m.rho(0.0)) > 1e-14) {
        return {false, "rho(0) != 0", 0.0};
    }
    double prev = 0.0;
    for (int i = 1; i <= n_grid; ++i) {
        // geometric grid covers both the origin and the bulk
        double u = u_max * std::pow(10.0, -8.0 * (1.0 - double(i) / n_grid));
        double v = m.rho(u);
        if (!(v > 0.0)) return {false, "rho not positive", u};
        if (v + 1e-14 * (1.0 + std::abs(v)) < prev) return {false, "rho not nondecreasing", u};
        prev = v;
    }
    for (int i = 1; i < n_grid; ++i) {
        double a = u_max * double(i) / n_grid;
        double b = u_max * double(i + 1) / n_grid;
        double lhs = m.rho(0.5 * (a + b));
        double rhs = 0.5 * (m.rho(a) + m.rho(b));
        if (lhs + 1e-12 * (1.0 + std::abs(rhs)) < rhs)
            return {false, "rho not midpoint concave", 0.5 * (a + b)};
    }
    return r;
}

double bihari_envelope(double a0, double c, const ConcaveModulus& rho, double t) {
    if (a0 < 0.0 || c <= 0.0 || t < 0.0)
        throw ConfigError("bihari_envelope: require a0 >= 0, c > 0, t >= 0");
    if (a0 == 0.0) {
        if (rho.osgood) return 0.0;  // zero stays zero under an Osgood modulus
        throw ConfigError(
            "bihari_envelope: a0 = 0 with a non-Osgood modulus has no determined envelope");
    }
    if (t == 0.0) return a0;

    const double target = c * t;
    const GaussLegendre gl(32);
    const double ratio = std::pow(2.0, 1.0 / 16.0);  // ~4.4% growth per panel
    const int max_panels = 200000;

    auto panel_integral = [&](double u0, double u1) {
        double mid = 0.5 * (u0 + u1), half = 0.5 * (u1 - u0);
        double s = 0.0;
        for (int q = 0; q < gl.order(); ++q) {
            double u = mid + half * gl.nodes()[q];
            double r = rho.rho(u);
            if (!(r > 0.0))
                throw NumericalError("bihari_envelope: rho not positive at u=" +
                                     std::to_string(u));
            s += half * gl.weights()[q] / r;
        }
        return s;
    };

    double lo = a0, acc = 0.0;
    for (int p = 0; p < max_panels; ++p) {
        double hi = lo * ratio;
        double seg = panel_integral(lo, hi);
        if (acc + seg >= target) {
            // bisect for u with acc + G(lo,u) = target
            double a = lo, b = hi;
            for (int it = 0; it < 200; ++it) {
                double mid = 0.5 * (a + b);
                double g = panel_integral(lo, mid);
                if (acc + g < target)
                    a = mid;
                else
                    b = mid;
                if ((b - a) <= 1e-14 * b) break;
            }
            return 0.5 * (a + b);
        }
        acc += seg;
        lo = hi;
        if (!std::isfinite(lo) || lo > 1e300)
            throw NumericalError("bihari_envelope: envelope exceeds representable range");
    }
    throw NumericalError("bihari_envelope: panel budget exhausted");
}

}  // namespace jbsde
