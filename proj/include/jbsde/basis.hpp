#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "jbsde/common.hpp"

namespace jbsde {

struct Box {
    Vec lo, hi;
    int dim() const { return static_cast<int>(lo.size()); }
    double width(int c) const { return hi[c] - lo[c]; }
    bool contains(std::span<const double> x, double margin_frac = 0.0) const {
        for (int c = 0; c < dim(); ++c) {
            double m = margin_frac * width(c);
            if (x[c] < lo[c] - m || x[c] > hi[c] + m) return false;
        }
        return true;
    }
    bool operator==(const Box&) const = default;
};

// Finite function dictionary for the conditional-expectation regressions.
// Polynomial: all monomials of total degree <= degree in box-normalized
// coordinates, ordered by total degree then lexicographically.
// Piecewise-linear: hat functions on a uniform 1-d partition of the box.
class RegressionBasis {
public:
    enum class Kind { polynomial, piecewise_linear };

    static RegressionBasis polynomial(int degree, Box box);
    static RegressionBasis piecewise_linear(int cells, Box box);

    Kind kind() const { return kind_; }
    int degree() const { return degree_; }
    int cells() const { return cells_; }
    const Box& box() const { return box_; }
    int dim() const { return box_.dim(); }
    int size() const { return size_; }

    void eval(std::span<const double> x, std::span<double> out) const;
    Eigen::VectorXd eval_vec(std::span<const double> x) const;

    // coefficient-space representation of u -> u(. + delta) for 1-d
    // polynomial bases: coef(u(.+delta)) = S(delta) * coef(u)
    Eigen::MatrixXd shift_matrix_1d(double delta) const;
    bool supports_shift() const { return kind_ == Kind::polynomial && dim() == 1; }

    const std::vector<std::vector<int>>& multi_indices() const { return multi_indices_; }
    bool operator==(const RegressionBasis& o) const {
        return kind_ == o.kind_ && degree_ == o.degree_ && cells_ == o.cells_ && box_ == o.box_;
    }

private:
    RegressionBasis() = default;
    Kind kind_ = Kind::polynomial;
    int degree_ = 3;
    int cells_ = 8;
    int size_ = 0;
    Box box_;
    std::vector<std::vector<int>> multi_indices_;  // polynomial only
};

struct LeastSquares {
    Eigen::MatrixXd coef;    // basis-size x n_rhs
    double condition = 0.0;  // of the design, sqrt of the Gram eigenvalue ratio
    double ridge = 0.0;      // regularization actually applied
};

// Normal-equation solve with ridge fallback once the design condition
// number exceeds cond_cap; degenerate designs raise NumericalError.
LeastSquares solve_least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                                 double cond_cap = 1e8);

}  // namespace jbsde
