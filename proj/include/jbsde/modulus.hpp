#pragma once

#include <functional>
#include <string>

#include "jbsde/common.hpp"

namespace jbsde {

// Concave continuity modulus rho: nondecreasing, concave, rho(0)=0 and
// rho(u)>0 for u>0.  Whether the Osgood integral of 1/rho diverges at 0
// cannot be certified numerically, so it is a declared attribute.
struct ConcaveModulus {
    std::string name = "linear";
    std::function<double(double)> rho;
    bool osgood = true;

    static ConcaveModulus linear(double slope = 1.0);
    // u * ln(1/u) below 1/e, continued by its value at 1/e above
    static ConcaveModulus log_modulus();
    // u^p with p in (0,1]; the Osgood integral converges for p < 1
    static ConcaveModulus power(double p);
    static ConcaveModulus custom(std::string name, std::function<double(double)> rho,
                                 bool osgood);
};

struct ModulusCheck {
    bool ok = true;
    std::string what;
    double at_u = 0.0;
};

// sampled shape checks: rho(0)=0, monotone, midpoint concave, positive
ModulusCheck check_modulus(const ConcaveModulus& m, int n_grid = 256, double u_max = 10.0);

// Comparison bound y(t) with y' = c*rho(y), y(0)=a0, computed by
// accumulating G(u) = int_{a0}^{u} ds/rho(s) over geometric panels and
// inverting G(y) = c*t by bisection inside the final panel.
double bihari_envelope(double a0, double c, const ConcaveModulus& rho, double t);

}  // namespace jbsde
