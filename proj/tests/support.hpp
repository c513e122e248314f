#pragma once

#include "rgflow/model.hpp"

#include <cmath>

namespace rgflow::testing {

/// Small double-precision model moved off the identity initialization.
inline RgFlow<double> random_model(int L, int m, int C, std::vector<int> n_layer, Index hidden = 8, int n_res = 1,
                                   unsigned long long seed = 1, double perturb = 0.05,
                                   PriorKind prior = PriorKind::laplacian) {
    ModelConfig cfg;
    cfg.L = L;
    cfg.m = m;
    cfg.C = C;
    cfg.n_layer = std::move(n_layer);
    cfg.hidden = hidden;
    cfg.n_res = n_res;
    cfg.prior.kind = prior;
    RgFlow<double> model(cfg);
    Rng rng(seed);
    model.init(rng);
    perturb_parameters(model.parameters(), rng, perturb);
    return model;
}

template <typename Scalar>
Mat<Scalar> random_normal(Index rows, Index cols, unsigned long long seed, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Mat<Scalar> out(rows, cols);
    for (Index k = 0; k < out.size(); ++k) out.data()[k] = Scalar(n(rng));
    return out;
}

/// Full Jacobian of f at x (column vector) by central differences.
template <typename F>
Mat<double> numerical_jacobian(F&& f, const Vec<double>& x, double eps = 1e-5) {
    const Vec<double> y0 = f(x);
    Mat<double> J(y0.size(), x.size());
    for (Index k = 0; k < x.size(); ++k) {
        Vec<double> xp = x, xm = x;
        xp(k) += eps;
        xm(k) -= eps;
        J.col(k) = (f(xp) - f(xm)) / (2 * eps);
    }
    return J;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace rgflow::testing
