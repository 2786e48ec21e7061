#pragma once

#include <functional>
#include <span>
#include <vector>

namespace jbsde {

// Gauss-Legendre rule on [-1,1]; nodes found by Newton iteration on the
// Legendre recurrence at construction.
class GaussLegendre {
public:
    explicit GaussLegendre(int order);
    int order() const { return static_cast<int>(nodes_.size()); }
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }

    // shared default rule (order 16)
    static const GaussLegendre& default_rule();

private:
    std::vector<double> nodes_, weights_;
};

struct QuadResult {
    double value = 0.0;
    int panels = 0;
    double est_error = 0.0;
    bool converged = true;
};

// Integral of f over [a,b], 0 < a < b, with geometrically spaced panels.
// The log spacing resolves power-law behaviour near a.
double integrate_log_panels(const std::function<double(double)>& f, double a, double b,
                            int panels, const GaussLegendre& gl = GaussLegendre::default_rule());

// Doubles the panel count until successive values agree to rel_tol.
QuadResult integrate_log_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol = 1e-10, int max_panels = 4096,
                                  const GaussLegendre& gl = GaussLegendre::default_rule());

// Vector-valued variant: f fills out[0..dim); convergence is tested per
// component relative to the largest component magnitude.
struct VecQuadResult {
    std::vector<double> value;
    int panels = 0;
    double est_error = 0.0;
    bool converged = true;
};
VecQuadResult integrate_log_adaptive_vec(int dim,
                                         const std::function<void(double, std::span<double>)>& f,
                                         double a, double b, double rel_tol = 1e-10,
                                         int max_panels = 4096,
                                         const GaussLegendre& gl = GaussLegendre::default_rule());

}  // namespace jbsde
