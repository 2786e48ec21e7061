#include "jbsde/basis.hpp"

#include <algorithm>
#include <cmath>

namespace jbsde {

namespace {

void enumerate_indices(int dim, int degree, std::vector<int>& cur,
                       std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == dim) {
        out.push_back(cur);
        return;
    }
    int used = 0;
    for (int v : cur) used += v;
    for (int p = 0; p <= degree - used; ++p) {
        cur.push_back(p);
        enumerate_indices(dim, degree, cur, out);
        cur.pop_back();
    }
}

}  // namespace

RegressionBasis RegressionBasis::polynomial(int degree, Box box) {
    if (degree < 0 || degree > 31) throw ConfigError("RegressionBasis: degree must be in [0,31]");
    if (box.dim() < 1 || box.dim() > 8 || box.lo.size() != box.hi.size())
        throw ConfigError("RegressionBasis: bad box");
    for (int c = 0; c < box.dim(); ++c)
        if (!(box.hi[c] > box.lo[c])) throw ConfigError("RegressionBasis: empty box side");
    RegressionBasis b;
    b.kind_ = Kind::polynomial;
    b.degree_ = degree;
    b.box_ = std::move(box);
    std::vector<int> cur;
    enumerate_indices(b.box_.dim(), degree, cur, b.multi_indices_);
    // order: total degree first, then lexicographic
    std::sort(b.multi_indices_.begin(), b.multi_indices_.end(),
              [](const std::vector<int>& a, const std::vector<int>& bb) {
                  int sa = 0, sb = 0;
                  for (int v : a) sa += v;
                  for (int v : bb) sb += v;
                  if (sa != sb) return sa < sb;
                  return a < bb;
              });
    b.size_ = static_cast<int>(b.multi_indices_.size());
    return b;
}

RegressionBasis RegressionBasis::piecewise_linear(int cells, Box box) {
    if (cells < 1) throw ConfigError("RegressionBasis: need at least one cell");
    if (box.dim() != 1)
        throw ConfigError("RegressionBasis: piecewise-linear basis supports 1-d states only");
    RegressionBasis b;
    b.kind_ = Kind::piecewise_linear;
    b.cells_ = cells;
    b.box_ = std::move(box);
    b.size_ = cells + 1;  // hat functions at the knots
    return b;
}

void RegressionBasis::eval(std::span<const double> x, std::span<double> out) const {
    const int dim = box_.dim();
    if (kind_ == Kind::polynomial) {
        // normalized coordinates keep the Gram matrix well conditioned
        double xn[8];
        double pows[8][32];
        for (int c = 0; c < dim; ++c) {
            xn[c] = (2.0 * x[c] - box_.lo[c] - box_.hi[c]) / box_.width(c);
            pows[c][0] = 1.0;
            for (int p = 1; p <= degree_; ++p) pows[c][p] = pows[c][p - 1] * xn[c];
        }
        for (int i = 0; i < size_; ++i) {
            double v = 1.0;
            const auto& mi = multi_indices_[i];
            for (int c = 0; c < dim; ++c) v *= pows[c][mi[c]];
            out[i] = v;
        }
        return;
    }
    // 1-d hats; clamped beyond the box so evaluation extrapolates flat
    double t = (x[0] - box_.lo[0]) / box_.width(0) * cells_;
    t = std::clamp(t, 0.0, static_cast<double>(cells_));
    int cell = std::min(static_cast<int>(t), cells_ - 1);
    double w = t - cell;
    for (int i = 0; i < size_; ++i) out[i] = 0.0;
    out[cell] = 1.0 - w;
    out[cell + 1] = w;
}

Eigen::VectorXd RegressionBasis::eval_vec(std::span<const double> x) const {
    Eigen::VectorXd v(size_);
    eval(x, std::span<double>(v.data(), static_cast<std::size_t>(size_)));
    return v;
}

Eigen::MatrixXd RegressionBasis::shift_matrix_1d(double delta) const {
    if (!supports_shift())
        throw ConfigError("shift_matrix_1d: requires a 1-d polynomial basis");
    const int n = size_;
    const double dn = 2.0 * delta / box_.width(0);  // displacement in normalized units
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    // (x + d)^p expanded over x^i with binomial weights; multi-indices
    // are sorted by degree so index == power in 1-d
    std::vector<std::vector<double>> binom(n, std::vector<double>(n, 0.0));
    for (int p = 0; p < n; ++p) {
        binom[p][0] = 1.0;
        for (int i = 1; i <= p; ++i)
            binom[p][i] = binom[p - 1][i - 1] + (i <= p - 1 ? binom[p - 1][i] : 0.0);
    }
    for (int p = 0; p < n; ++p) {
        double dpow = 1.0;
        for (int i = p; i >= 0; --i) {
            s(i, p) = binom[p][i] * dpow;
            dpow *= dn;
        }
    }
    return s;
}

LeastSquares solve_least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                                 double cond_cap) {
    const Eigen::Index nb = design.cols();
    Eigen::MatrixXd gram = design.transpose() * design;
    Eigen::MatrixXd rhs = design.transpose() * targets;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success)
        throw NumericalError("least squares: Gram eigendecomposition failed");
    double lmax = es.eigenvalues().maxCoeff();
    double lmin = es.eigenvalues().minCoeff();
    if (!(lmax > 0.0) || !std::isfinite(lmax))
        throw NumericalError("least squares: degenerate design matrix (zero or non-finite)");

    LeastSquares out;
    double cond = std::sqrt(lmax / std::max(lmin, 0.0));
    out.condition = std::isfinite(cond) ? cond : std::numeric_limits<double>::infinity();
    Eigen::MatrixXd reg = gram;
    if (!(out.condition <= cond_cap)) {
        out.ridge = lmax / (cond_cap * cond_cap);
        reg.diagonal().array() += out.ridge;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("least squares: factorization failed after regularization");
    out.coef = ldlt.solve(rhs);
    if (!out.coef.allFinite())
        throw NumericalError("least squares: non-finite coefficients");
    (void)nb;
    return out;
}

}  // namespace jbsde
