#pragma once

#include <functional>

#include "jbsde/bsde.hpp"

namespace jbsde::testing {

// MeshSolution whose layers are dense least-squares fits of a given
// field; exact whenever the field lies in the basis span per layer
inline MeshSolution make_solution_from(
    const TimeGrid& grid, TruncationIndex k, Dims dims, const RegressionBasis& basis,
    const std::function<double(double t, double x, int i)>& field,
    const std::function<double(double t, double x, int i)>& z_field = nullptr) {
    MeshSolution sol;
    sol.grid = grid;
    sol.k = k;
    sol.dims = dims;
    sol.basis = basis;
    sol.layers.resize(grid.n_nodes());
    const int B = basis.size();
    const int n_fit = std::max(4 * B, 64);
    Eigen::MatrixXd phi(n_fit, B);
    std::vector<double> row(B);
    Vec xs(n_fit);
    for (int a = 0; a < n_fit; ++a) {
        xs[a] = basis.box().lo[0] +
                (basis.box().hi[0] - basis.box().lo[0]) * (a + 0.5) / n_fit;
        double xv[1] = {xs[a]};
        basis.eval(std::span<const double>(xv, 1), row);
        for (int b = 0; b < B; ++b) phi(a, b) = row[b];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi);
    for (int j = 0; j < grid.n_nodes(); ++j) {
        double t = grid.node(j);
        sol.layers[j].u.resize(B, dims.m);
        sol.layers[j].z = Eigen::MatrixXd::Zero(B, dims.m * dims.d);
        for (int i = 0; i < dims.m; ++i) {
            Eigen::VectorXd target(n_fit);
            for (int a = 0; a < n_fit; ++a) target(a) = field(t, xs[a], i);
            sol.layers[j].u.col(i) = qr.solve(target);
            if (z_field) {
                for (int l = 0; l < dims.d; ++l) {
                    for (int a = 0; a < n_fit; ++a) target(a) = z_field(t, xs[a], i);
                    sol.layers[j].z.col(i * dims.d + l) = qr.solve(target);
                }
            }
        }
    }
    return sol;
}

}  // namespace jbsde::testing
