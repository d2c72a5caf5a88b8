#pragma once

// Trust-region Newton minimizer with an exact dense subproblem solve. Meant
// for low-dimensional problems (ability calibration has d <= 16), where an
// eigendecomposition per step is cheap and gives near-exact steps.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace irtkit {

struct TrustRegionOptions {
    int max_iters = 100;
    double grad_tol = 1e-10;
    double initial_radius = 1.0;
    double max_radius = 1e6;
    double accept_ratio = 1e-4;
};

struct TrustRegionResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

// Solve min g^T s + 0.5 s^T H s subject to ||s|| <= radius through the
// eigendecomposition of H. Returns the step and the model decrease.
inline Eigen::VectorXd trust_region_step(const Eigen::MatrixXd& hessian,
                                         const Eigen::VectorXd& grad, double radius) {
    using Eigen::VectorXd;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian);
    const VectorXd& evals = eig.eigenvalues();
    const VectorXd g_hat = eig.eigenvectors().transpose() * grad;

    const double lambda_min = evals.minCoeff();
    auto step_norm = [&](double shift) {
        double norm2 = 0.0;
        for (Eigen::Index i = 0; i < evals.size(); ++i) {
            const double denom = evals(i) + shift;
            norm2 += (g_hat(i) * g_hat(i)) / (denom * denom);
        }
        return std::sqrt(norm2);
    };
    auto build_step = [&](double shift) {
        VectorXd s_hat(evals.size());
        for (Eigen::Index i = 0; i < evals.size(); ++i)
            s_hat(i) = -g_hat(i) / (evals(i) + shift);
        return VectorXd(eig.eigenvectors() * s_hat);
    };

    // Interior Newton step when H is positive definite and the step fits.
    if (lambda_min > 0.0 && step_norm(0.0) <= radius) return build_step(0.0);

    // Otherwise find shift > max(0, -lambda_min) with ||s(shift)|| = radius.
    double lo = std::max(0.0, -lambda_min) + 1e-14;
    double hi = std::max(lo * 2.0, 1e-6);
    while (step_norm(hi) > radius && hi < 1e16) hi *= 4.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (step_norm(mid) > radius)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;
    }
    return build_step(hi);
}

}  // namespace detail

// fgh(x, grad, hessian) evaluates the objective and writes both derivatives.
template <typename FGH>
TrustRegionResult trust_region_minimize(FGH&& fgh, Eigen::VectorXd x,
                                        const TrustRegionOptions& opts = {}) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const auto n = x.size();

    VectorXd grad(n);
    MatrixXd hessian(n, n);
    double f = fgh(x, grad, hessian);
    double radius = opts.initial_radius;

    TrustRegionResult result;
    result.x = x;
    result.f = f;

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        if (grad.cwiseAbs().maxCoeff() <= opts.grad_tol) {
            result.converged = true;
            break;
        }

        const VectorXd step = detail::trust_region_step(hessian, grad, radius);
        const double model_decrease = -(grad.dot(step) + 0.5 * step.dot(hessian * step));
        if (!(model_decrease > 0.0) || !step.allFinite()) {
            radius *= 0.25;
            if (radius < 1e-14) break;
            continue;
        }

        VectorXd grad_new(n);
        MatrixXd hessian_new(n, n);
        const VectorXd x_new = x + step;
        const double f_new = fgh(x_new, grad_new, hessian_new);
        const double actual_decrease = f - f_new;
        const double ratio = actual_decrease / model_decrease;

        if (std::isfinite(f_new) && ratio > opts.accept_ratio) {
            x = x_new;
            f = f_new;
            grad = grad_new;
            hessian = hessian_new;
            result.iterations = iter + 1;
        }

        if (ratio < 0.25) {
            radius *= 0.25;
        } else if (ratio > 0.75 && step.norm() >= 0.99 * radius) {
            radius = std::min(2.0 * radius, opts.max_radius);
        }
        if (radius < 1e-14) break;
    }

    result.x = x;
    result.f = f;
    return result;
}

}  // namespace irtkit
