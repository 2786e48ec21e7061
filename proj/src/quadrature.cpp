#include "jbsde/quadrature.hpp"

#include <cmath>
#include <stdexcept>

#include "jbsde/common.hpp"

namespace jbsde {

GaussLegendre::GaussLegendre(int order) {
    if (order < 2) throw ConfigError("GaussLegendre: order must be >= 2");
    nodes_.resize(order);
    weights_.resize(order);
    const int n = order;
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Chebyshev-based initial guess, then Newton on P_n
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int j = 2; j <= n; ++j) {
                double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes_[i] = -x;
        nodes_[n - 1 - i] = x;
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights_[i] = w;
        weights_[n - 1 - i] = w;
    }
}

const GaussLegendre& GaussLegendre::default_rule() {
    static const GaussLegendre rule(16);
    return rule;
}

namespace {

inline void check_bounds(double a, double b) {
    if (!(a > 0.0) || !(b > a))
        throw ConfigError("integrate_log_panels: require 0 < a < b");
}

}  // namespace

double integrate_log_panels(const std::function<double(double)>& f, double a, double b,
                            int panels, const GaussLegendre& gl) {
    check_bounds(a, b);
    const double la = std::log(a), lb = std::log(b);
    const double h = (lb - la) / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double x0 = std::exp(la + p * h);
        const double x1 = (p + 1 == panels) ? b : std::exp(la + (p + 1) * h);
        const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
        for (int q = 0; q < gl.order(); ++q) {
            const double x = mid + half * gl.nodes()[q];
            const double v = f(x);
            if (!std::isfinite(v))
                throw NumericalError("quadrature: integrand not finite at node x=" +
                                     std::to_string(x));
            total += half * gl.weights()[q] * v;
        }
    }
    return total;
}

QuadResult integrate_log_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol, int max_panels, const GaussLegendre& gl) {
    check_bounds(a, b);
    QuadResult r;
    int panels = 2;
    double prev = integrate_log_panels(f, a, b, panels, gl);
    while (true) {
        panels *= 2;
        double cur = integrate_log_panels(f, a, b, panels, gl);
        // cancellation-aware scale: the integral of |f| bounds the
        // attainable accuracy for odd-ish integrands
        double abs_scale =
            integrate_log_panels([&](double x) { return std::abs(f(x)); }, a, b, panels, gl);
        double err = std::abs(cur - prev);
        double scale = std::max({std::abs(cur), abs_scale, 1e-300});
        r.value = cur;
        r.panels = panels;
        r.est_error = err;
        if (err <= rel_tol * scale || err <= 1e-300) return r;
        if (panels >= max_panels) {
            r.converged = false;
            return r;
        }
        prev = cur;
    }
}

VecQuadResult integrate_log_adaptive_vec(int dim,
                                         const std::function<void(double, std::span<double>)>& f,
                                         double a, double b, double rel_tol, int max_panels,
                                         const GaussLegendre& gl) {
    check_bounds(a, b);
    auto run = [&](int panels, std::span<double> out, std::span<double> abs_out) {
        for (int i = 0; i < dim; ++i) out[i] = 0.0;
        for (int i = 0; i < dim; ++i) abs_out[i] = 0.0;
        std::vector<double> tmp(dim);
        const double la = std::log(a), lb = std::log(b);
        const double h = (lb - la) / panels;
        for (int p = 0; p < panels; ++p) {
            const double x0 = std::exp(la + p * h);
            const double x1 = (p + 1 == panels) ? b : std::exp(la + (p + 1) * h);
            const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
            for (int q = 0; q < gl.order(); ++q) {
                const double x = mid + half * gl.nodes()[q];
                f(x, tmp);
                for (int i = 0; i < dim; ++i) {
                    if (!std::isfinite(tmp[i]))
                        throw NumericalError(
                            "quadrature: integrand component " + std::to_string(i) +
                            " not finite at node x=" + std::to_string(x));
                    out[i] += half * gl.weights()[q] * tmp[i];
                    abs_out[i] += half * gl.weights()[q] * std::abs(tmp[i]);
                }
            }
        }
    };

    VecQuadResult r;
    r.value.assign(dim, 0.0);
    std::vector<double> prev(dim), cur(dim), abs_cur(dim);
    int panels = 2;
    run(panels, prev, abs_cur);
    while (true) {
        panels *= 2;
        run(panels, cur, abs_cur);
        double err = 0.0, scale = 1e-300;
        for (int i = 0; i < dim; ++i) {
            err = std::max(err, std::abs(cur[i] - prev[i]));
            scale = std::max({scale, std::abs(cur[i]), abs_cur[i]});
        }
        r.value = cur;
        r.panels = panels;
        r.est_error = err;
        if (err <= rel_tol * scale || err <= 1e-300) return r;
        if (panels >= max_panels) {
            r.converged = false;
            return r;
        }
        prev = cur;
    }
}

}  // namespace jbsde
