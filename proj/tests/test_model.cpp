#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "irtkit/error.hpp"
#include "irtkit/model.hpp"

using irtkit::AbilityVector;
using irtkit::Error;
using irtkit::ItemParams;
using irtkit::LossConfig;
using irtkit::Matrix;
using irtkit::Vector;

namespace {

ItemParams make_item(double alpha, double delta, std::initializer_list<double> loadings) {
    ItemParams item;
    item.alpha = alpha;
    item.delta = delta;
    item.loadings = Vector(static_cast<Eigen::Index>(loadings.size()));
    Eigen::Index i = 0;
    for (double v : loadings) item.loadings(i++) = v;
    return item;
}

AbilityVector make_ability(double theta_g, std::initializer_list<double> theta) {
    AbilityVector a;
    a.theta_g = theta_g;
    a.theta = Vector(static_cast<Eigen::Index>(theta.size()));
    Eigen::Index i = 0;
    for (double v : theta) a.theta(i++) = v;
    return a;
}

}  // namespace

TEST_CASE("sigmoid reference values", "[model]") {
    REQUIRE(irtkit::sigmoid(0.0) == 0.5);
    REQUIRE(irtkit::sigmoid(1.0) == Catch::Approx(0.7310585786300049).epsilon(1e-15));
    REQUIRE(irtkit::sigmoid(-2.0) == Catch::Approx(0.11920292202211755).epsilon(1e-15));
    REQUIRE(irtkit::sigmoid(0.5) + irtkit::sigmoid(-0.5) == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("response probability composes the nested logit", "[model]") {
    const auto item = make_item(2.0, 0.5, {0.3, -0.1});
    const auto ability = make_ability(1.0, {0.2, 0.4});
    const double z = 2.0 * (1.0 + (0.3 * 0.2 - 0.1 * 0.4) - 0.5);
    REQUIRE(irtkit::full_logit(ability, item) == Catch::Approx(z).epsilon(1e-15));
    REQUIRE(irtkit::predict_prob(ability, item) == Catch::Approx(irtkit::sigmoid(z)).epsilon(1e-15));
    REQUIRE(irtkit::general_logit(ability, item) == Catch::Approx(2.0 * (1.0 - 0.5)).epsilon(1e-15));
}

TEST_CASE("unidimensional case drops the inner product", "[model]") {
    const auto item = make_item(1.5, -0.2, {});
    const auto ability = make_ability(0.7, {});
    REQUIRE(irtkit::predict_prob(ability, item) ==
            Catch::Approx(irtkit::sigmoid(1.5 * (0.7 + 0.2))).epsilon(1e-15));
}

TEST_CASE("dimension mismatches are shape errors", "[model]") {
    const auto item = make_item(1.0, 0.0, {0.1, 0.2});
    const auto ability = make_ability(0.0, {0.5});
    REQUIRE_THROWS_MATCHES(irtkit::predict_prob(ability, item), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "shape"; }));
}

TEST_CASE("log-likelihood reference values", "[model]") {
    REQUIRE(irtkit::bernoulli_loglik(1, 0.0) == Catch::Approx(-0.6931471805599453).epsilon(1e-15));
    REQUIRE(irtkit::bernoulli_loglik(1, 1.0) == Catch::Approx(-0.31326168751822286).epsilon(1e-15));
    REQUIRE(irtkit::bernoulli_loglik(0, 1.0) ==
            Catch::Approx(std::log(1.0 - irtkit::sigmoid(1.0))).epsilon(1e-14));
}

TEST_CASE("clipping bounds the log-likelihood", "[model]") {
    const double floor = std::log(1e-10);
    REQUIRE(irtkit::bernoulli_loglik(1, -1000.0) == Catch::Approx(floor).epsilon(1e-12));
    REQUIRE(irtkit::bernoulli_loglik(0, 1000.0) >= floor - 1e-9);
    REQUIRE(std::isfinite(irtkit::bernoulli_loglik(0, 1e8)));
}

TEST_CASE("nested loss adds the weighted general-factor term", "[model]") {
    // alpha=1, delta=0, K=[1], theta_g=1, theta=[-0.5], r=1, lambda=0.5:
    // z_full = 0.5, z_g = 1. Frozen against a direct evaluation of
    // log(sigmoid(0.5)) + 0.5 * log(sigmoid(1)).
    const auto item = make_item(1.0, 0.0, {1.0});
    const auto ability = make_ability(1.0, {-0.5});
    LossConfig cfg;
    cfg.lambda_nested = 0.5;
    REQUIRE(irtkit::nested_loss(1, ability, item, cfg) ==
            Catch::Approx(-0.630707827939218).epsilon(1e-14));

    cfg.lambda_nested = 0.0;
    REQUIRE(irtkit::nested_loss(1, ability, item, cfg) ==
            Catch::Approx(irtkit::bernoulli_loglik(1, 0.5)).epsilon(1e-14));
}

TEST_CASE("scalar information reference value and peak", "[model]") {
    auto item = make_item(1.0, 0.0, {});
    // alpha^2 p (1-p) at theta - delta = 2.
    REQUIRE(irtkit::fisher_scalar(2.0, item) == Catch::Approx(0.10499358540350662).epsilon(1e-14));
    REQUIRE(irtkit::fisher_scalar(0.0, item) == Catch::Approx(0.25).epsilon(1e-15));

    item.alpha = 1.7;
    item.delta = 0.3;
    const double peak = irtkit::fisher_scalar(item.delta, item);
    for (double off : {-2.0, -0.5, -0.01, 0.01, 0.5, 2.0})
        REQUIRE(irtkit::fisher_scalar(item.delta + off, item) < peak);
    REQUIRE(peak == Catch::Approx(1.7 * 1.7 * 0.25).epsilon(1e-15));
}

TEST_CASE("scalar information rejects multidimensional items", "[model]") {
    const auto item = make_item(1.0, 0.0, {0.4});
    REQUIRE_THROWS_MATCHES(irtkit::fisher_scalar(0.0, item), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "shape"; }));
}

TEST_CASE("information matrix is the scaled outer product", "[model]") {
    const auto item = make_item(1.3, 0.2, {0.5, -0.25});
    const auto ability = make_ability(0.4, {0.1, 0.6});
    const Matrix info = irtkit::fisher_matrix(ability, item);
    REQUIRE(info.rows() == 3);
    REQUIRE(info.cols() == 3);

    const double p = irtkit::predict_prob(ability, item);
    const double w = 1.3 * 1.3 * p * (1.0 - p);
    const Vector k_tilde = item.augmented_loading();
    REQUIRE(k_tilde(0) == 1.0);
    const Matrix expected = w * (k_tilde * k_tilde.transpose());
    REQUIRE((info - expected).cwiseAbs().maxCoeff() < 1e-14);

    // Rank one and positive semidefinite.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
    REQUIRE(eig.eigenvalues().minCoeff() > -1e-14);
    REQUIRE(eig.eigenvalues()(0) < 1e-12);
    REQUIRE(eig.eigenvalues()(1) < 1e-12);
    REQUIRE(eig.eigenvalues()(2) > 0.0);

    REQUIRE(irtkit::fisher_trace(ability, item) == Catch::Approx(info.trace()).epsilon(1e-13));
}

TEST_CASE("trace information reduces to the scalar case", "[model]") {
    const auto item = make_item(0.8, -0.4, {});
    const auto ability = make_ability(1.1, {});
    REQUIRE(irtkit::fisher_trace(ability, item) ==
            Catch::Approx(irtkit::fisher_scalar(1.1, item)).epsilon(1e-14));
}

TEST_CASE("loss config validation", "[model]") {
    LossConfig cfg;
    cfg.validate();  // defaults are legal

    auto expect_config_error = [](LossConfig bad) {
        REQUIRE_THROWS_MATCHES(bad.validate(), Error,
                               Catch::Matchers::Predicate<Error>(
                                   [](const Error& e) { return e.category() == "config"; }));
    };
    LossConfig bad = cfg;
    bad.lambda_nested = -0.1;
    expect_config_error(bad);
    bad = cfg;
    bad.lambda_l1 = -1.0;
    expect_config_error(bad);
    bad = cfg;
    bad.clip_eps = 0.0;
    expect_config_error(bad);
    bad = cfg;
    bad.clip_eps = 0.5;
    expect_config_error(bad);
}

TEST_CASE("ability stacking round-trips", "[model]") {
    const auto ability = make_ability(0.3, {1.0, -2.0, 0.5});
    const Vector stacked = ability.stacked();
    REQUIRE(stacked.size() == 4);
    REQUIRE(stacked(0) == 0.3);
    const AbilityVector back = AbilityVector::from_stacked(stacked);
    REQUIRE(back.theta_g == ability.theta_g);
    REQUIRE(back.theta == ability.theta);
}
