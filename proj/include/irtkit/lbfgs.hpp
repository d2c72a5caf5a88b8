#pragma once

// Limited-memory BFGS with Armijo backtracking, optional box projection, and
// optional orthant-wise handling of per-coordinate L1 penalties. Drives the
// joint fit over all abilities and item parameters at once; the line search
// only ever accepts a decrease, which keeps the recorded objective history
// monotone.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

namespace irtkit {

struct LbfgsOptions {
    int max_iters = 50;
    int history = 8;
    double grad_tol = 1e-9;      // on the max-norm of the (projected) gradient
    double f_rel_tol = 1e-12;    // relative objective change
    double armijo_c1 = 1e-4;
    int max_line_search = 40;
    // Optional box constraints; empty means unconstrained. Trial points are
    // projected onto the box inside the line search.
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    // Optional per-coordinate L1 weights owned by the solver. When set, fg
    // must return only the smooth part; the solver adds the penalty, steers
    // with pseudo-gradients, and clamps sign-crossing coordinates to zero so
    // exact zeros are reachable.
    Eigen::VectorXd l1_weight;
    bool record_history = false;  // keep the objective value of every iterate
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> history;  // populated when record_history is set
};

// fg(x, grad) evaluates the (smooth part of the) objective and writes its
// gradient.
template <typename FG>
LbfgsResult lbfgs_minimize(FG&& fg, Eigen::VectorXd x, const LbfgsOptions& opts = {}) {
    using Eigen::VectorXd;
    const auto n = x.size();

    const bool bounded = opts.lower.size() == n && opts.upper.size() == n;
    const bool l1 = opts.l1_weight.size() == n;
    auto project = [&](VectorXd v) {
        if (bounded) v = v.cwiseMax(opts.lower).cwiseMin(opts.upper);
        return v;
    };
    auto l1_term = [&](const VectorXd& point) {
        return l1 ? opts.l1_weight.cwiseProduct(point.cwiseAbs()).sum() : 0.0;
    };
    // Composite subdifferential choice: on either side of zero the penalty
    // slope applies; at zero a coordinate only "opens" when the smooth pull
    // exceeds the penalty weight.
    auto pseudo_gradient = [&](const VectorXd& point, const VectorXd& g) -> VectorXd {
        VectorXd v = g;
        if (!l1) return v;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lam = opts.l1_weight(i);
            if (lam <= 0.0) continue;
            if (point(i) > 0.0)
                v(i) = g(i) + lam;
            else if (point(i) < 0.0)
                v(i) = g(i) - lam;
            else if (g(i) > lam)
                v(i) = g(i) - lam;
            else if (g(i) < -lam)
                v(i) = g(i) + lam;
            else
                v(i) = 0.0;
        }
        return v;
    };
    // Max-norm of the projected gradient: components pointing out of the box
    // at an active bound carry no information.
    auto projected_grad_norm = [&](const VectorXd& point, const VectorXd& g) {
        double norm = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double gi = g(i);
            if (bounded) {
                if (point(i) <= opts.lower(i) && gi > 0.0) gi = 0.0;
                if (point(i) >= opts.upper(i) && gi < 0.0) gi = 0.0;
            }
            norm = std::max(norm, std::abs(gi));
        }
        return norm;
    };
    // An L1 step may not cross zero: coordinates that change sign against
    // their orthant are clamped to exactly zero.
    auto orthant_project = [&](VectorXd trial, const VectorXd& from, const VectorXd& pg) {
        if (!l1) return trial;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (opts.l1_weight(i) <= 0.0) continue;
            const double ref = from(i) != 0.0 ? from(i) : -pg(i);
            if (trial(i) * ref < 0.0) trial(i) = 0.0;
        }
        return trial;
    };

    x = project(x);
    VectorXd grad(n), grad_new(n);
    double f = fg(x, grad) + l1_term(x);
    VectorXd pg = pseudo_gradient(x, grad);

    std::deque<VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    LbfgsResult result;
    result.x = x;
    result.f = f;
    if (opts.record_history) result.history.push_back(f);

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        if (projected_grad_norm(x, pg) <= opts.grad_tol) {
            result.converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        VectorXd q = pg;
        std::vector<double> alpha_coef(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha_coef[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha_coef[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha_coef[i] - beta) * s_hist[i];
        }
        VectorXd direction = -q;
        if (l1) {
            // Keep only coordinates moving downhill for the composite
            // objective; the rest stay where they are this step.
            for (Eigen::Index i = 0; i < n; ++i)
                if (direction(i) * pg(i) >= 0.0) direction(i) = 0.0;
        }

        double dir_deriv = pg.dot(direction);
        if (dir_deriv >= 0.0) {
            // Not a descent direction; fall back to steepest descent and drop
            // the history.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            direction = -pg;
            dir_deriv = -pg.squaredNorm();
        }

        // Backtracking line search: classic Armijo on free steps, plain
        // decrease when the box clips the trial point, and a projection-aware
        // Armijo bound when L1 orthant clamping is active.
        double step = iter == 0 ? std::min(1.0, 1.0 / pg.cwiseAbs().maxCoeff()) : 1.0;
        double f_new = f;
        VectorXd x_new = x;
        bool accepted = false;
        for (int ls = 0; ls < opts.max_line_search; ++ls) {
            const VectorXd raw = x + step * direction;
            x_new = orthant_project(project(raw), x, pg);
            f_new = fg(x_new, grad_new) + l1_term(x_new);
            double required;
            if (l1) {
                required = f + opts.armijo_c1 * pg.dot(x_new - x);
            } else {
                const bool clipped = bounded && (x_new - raw).cwiseAbs().maxCoeff() > 0.0;
                required = clipped ? f - 1e-12 * std::max(1.0, std::abs(f))
                                   : f + opts.armijo_c1 * step * dir_deriv;
            }
            if (std::isfinite(f_new) && f_new <= required &&
                (x_new.array() != x.array()).any()) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const VectorXd s = x_new - x;
        const VectorXd y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double f_prev = f;
        x = x_new;
        f = f_new;
        grad = grad_new;
        pg = pseudo_gradient(x, grad);
        result.iterations = iter + 1;
        if (opts.record_history) result.history.push_back(f);

        if (std::abs(f_prev - f) <= opts.f_rel_tol * std::max(1.0, std::abs(f_prev))) {
            result.converged = true;
            break;
        }
    }

    result.x = x;
    result.f = f;
    return result;
}

}  // namespace irtkit
