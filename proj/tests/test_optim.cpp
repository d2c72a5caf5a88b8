#include <cmath>

#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>

#include "irtkit/lbfgs.hpp"
#include "irtkit/trust_region.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// f(x) = 0.5 x'Ax - b'x with A symmetric positive definite; minimum at A^-1 b.
struct Quadratic {
    MatrixXd a;
    VectorXd b;

    double operator()(const VectorXd& x, VectorXd& grad) const {
        grad = a * x - b;
        return 0.5 * x.dot(a * x) - b.dot(x);
    }
};

double rosenbrock(const VectorXd& x, VectorXd& grad) {
    const double u = x(1) - x(0) * x(0);
    grad.resize(2);
    grad(0) = -400.0 * x(0) * u - 2.0 * (1.0 - x(0));
    grad(1) = 200.0 * u;
    return 100.0 * u * u + (1.0 - x(0)) * (1.0 - x(0));
}

}  // namespace

TEST_CASE("lbfgs solves a quadratic to high precision", "[optim][lbfgs]") {
    Quadratic q;
    q.a = MatrixXd(3, 3);
    q.a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
    q.b = VectorXd(3);
    q.b << 1, -2, 0.5;

    irtkit::LbfgsOptions opts;
    opts.max_iters = 100;
    const auto res = irtkit::lbfgs_minimize(q, VectorXd::Zero(3), opts);
    const VectorXd expected = q.a.ldlt().solve(q.b);
    REQUIRE((res.x - expected).norm() < 1e-7);
    REQUIRE(res.converged);
}

TEST_CASE("lbfgs reaches the Rosenbrock minimum", "[optim][lbfgs]") {
    irtkit::LbfgsOptions opts;
    opts.max_iters = 500;
    VectorXd x0(2);
    x0 << -1.2, 1.0;
    const auto res = irtkit::lbfgs_minimize(rosenbrock, x0, opts);
    REQUIRE(std::abs(res.x(0) - 1.0) < 1e-5);
    REQUIRE(std::abs(res.x(1) - 1.0) < 1e-5);
}

TEST_CASE("lbfgs never increases the objective", "[optim][lbfgs]") {
    Quadratic q;
    q.a = MatrixXd(2, 2);
    q.a << 100, 0, 0, 1;
    q.b = VectorXd::Ones(2);

    double last = std::numeric_limits<double>::infinity();
    auto tracked = [&](const VectorXd& x, VectorXd& grad) {
        return q(x, grad);
    };
    irtkit::LbfgsOptions opts;
    opts.max_iters = 60;
    VectorXd x = VectorXd::Constant(2, 5.0);
    for (int step = 0; step < 10; ++step) {
        irtkit::LbfgsOptions one = opts;
        one.max_iters = 1;
        const auto res = irtkit::lbfgs_minimize(tracked, x, one);
        REQUIRE(res.f <= last + 1e-12);
        last = res.f;
        x = res.x;
    }
}

TEST_CASE("box constraints clamp the solution to the feasible region", "[optim][lbfgs]") {
    // Unconstrained minimum of (x0-3)^2 + (x1+2)^2 is (3, -2); box it away.
    auto fg = [](const VectorXd& x, VectorXd& grad) {
        grad.resize(2);
        grad(0) = 2.0 * (x(0) - 3.0);
        grad(1) = 2.0 * (x(1) + 2.0);
        return (x(0) - 3.0) * (x(0) - 3.0) + (x(1) + 2.0) * (x(1) + 2.0);
    };
    irtkit::LbfgsOptions opts;
    opts.max_iters = 200;
    opts.lower = VectorXd::Constant(2, -1.0);
    opts.upper = VectorXd::Constant(2, 1.0);
    const auto res = irtkit::lbfgs_minimize(fg, VectorXd::Zero(2), opts);
    REQUIRE(res.x(0) == Catch::Approx(1.0).margin(1e-8));
    REQUIRE(res.x(1) == Catch::Approx(-1.0).margin(1e-8));
}

TEST_CASE("box constraints are inactive when the minimum is interior", "[optim][lbfgs]") {
    auto fg = [](const VectorXd& x, VectorXd& grad) {
        grad = 2.0 * x;
        return x.squaredNorm();
    };
    irtkit::LbfgsOptions opts;
    opts.max_iters = 100;
    opts.lower = VectorXd::Constant(2, -5.0);
    opts.upper = VectorXd::Constant(2, 5.0);
    const auto res = irtkit::lbfgs_minimize(fg, VectorXd::Constant(2, 3.0), opts);
    REQUIRE(res.x.norm() < 1e-7);
}

TEST_CASE("trust region step respects the radius", "[optim][trust-region]") {
    MatrixXd h(2, 2);
    h << 1, 0, 0, -2;  // indefinite forces a boundary step
    VectorXd g(2);
    g << 1.0, 0.5;
    const VectorXd s = irtkit::detail::trust_region_step(h, g, 0.7);
    REQUIRE(s.norm() <= 0.7 + 1e-8);

    // Strongly convex with a tiny gradient: interior Newton step.
    MatrixXd pd(2, 2);
    pd << 4, 0, 0, 4;
    VectorXd small(2);
    small << 0.04, 0.0;
    const VectorXd newton = irtkit::detail::trust_region_step(pd, small, 10.0);
    REQUIRE((newton + pd.ldlt().solve(small)).norm() < 1e-10);
}

TEST_CASE("trust region minimizes a convex quadratic exactly", "[optim][trust-region]") {
    MatrixXd a(3, 3);
    a << 5, 1, 0, 1, 4, 1, 0, 1, 3;
    VectorXd b(3);
    b << 1, 2, -1;
    auto fgh = [&](const VectorXd& x, VectorXd& grad, MatrixXd& hess) {
        grad = a * x - b;
        hess = a;
        return 0.5 * x.dot(a * x) - b.dot(x);
    };
    const auto res = irtkit::trust_region_minimize(fgh, VectorXd::Zero(3));
    REQUIRE((res.x - a.ldlt().solve(b)).norm() < 1e-8);
    REQUIRE(res.converged);
}

TEST_CASE("trust region handles Rosenbrock from the standard start", "[optim][trust-region]") {
    auto fgh = [](const VectorXd& x, VectorXd& grad, MatrixXd& hess) {
        const double u = x(1) - x(0) * x(0);
        grad.resize(2);
        grad(0) = -400.0 * x(0) * u - 2.0 * (1.0 - x(0));
        grad(1) = 200.0 * u;
        hess.resize(2, 2);
        hess(0, 0) = -400.0 * u + 800.0 * x(0) * x(0) + 2.0;
        hess(0, 1) = hess(1, 0) = -400.0 * x(0);
        hess(1, 1) = 200.0;
        return 100.0 * u * u + (1.0 - x(0)) * (1.0 - x(0));
    };
    VectorXd x0(2);
    x0 << -1.2, 1.0;
    irtkit::TrustRegionOptions opts;
    opts.max_iters = 200;
    const auto res = irtkit::trust_region_minimize(fgh, x0, opts);
    REQUIRE((res.x - VectorXd::Ones(2)).norm() < 1e-6);
}
