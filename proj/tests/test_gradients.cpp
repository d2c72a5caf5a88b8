#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "irtkit/gradients.hpp"
#include "irtkit/model.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"

using irtkit::AbilityMap;
using irtkit::AbilityVector;
using irtkit::ItemParams;
using irtkit::ItemParamsMap;
using irtkit::LossConfig;
using irtkit::Record;
using irtkit::Rng;
using irtkit::Vector;

namespace {

struct Problem {
    ItemParamsMap items;
    AbilityMap abilities;
    std::vector<Record> batch;
};

// Random dense problem: every model answers every item.
Problem random_problem(int n_models, int n_items, int k, Rng& rng) {
    Problem prob;
    for (int m = 0; m < n_models; ++m) {
        AbilityVector a;
        a.theta_g = rng.normal();
        a.theta = Vector(k);
        for (int d = 0; d < k; ++d) a.theta(d) = rng.normal();
        prob.abilities.emplace("m" + std::to_string(m), std::move(a));
    }
    for (int x = 0; x < n_items; ++x) {
        ItemParams p;
        p.alpha = 0.3 + 2.0 * rng.uniform01();
        p.delta = rng.normal();
        p.loadings = Vector(k);
        // Mix exact zeros in so the L1 subgradient path is exercised.
        for (int d = 0; d < k; ++d) p.loadings(d) = rng.bernoulli(0.3) ? 0.0 : rng.normal();
        prob.items.emplace("x" + std::to_string(x), std::move(p));
    }
    for (int m = 0; m < n_models; ++m) {
        for (int x = 0; x < n_items; ++x) {
            Record r;
            r.model_id = "m" + std::to_string(m);
            r.dataset_id = "ds";
            r.task_id = "t";
            r.item_id = "x" + std::to_string(x);
            r.correct = rng.bernoulli(0.5);
            prob.batch.push_back(r);
        }
    }
    return prob;
}

double fd_slope(const std::function<double(double)>& set_and_eval, double base, double h) {
    const double up = set_and_eval(base + h);
    const double down = set_and_eval(base - h);
    set_and_eval(base);
    return (up - down) / (2.0 * h);
}

}  // namespace

TEST_CASE("objective matches a direct evaluation on a tiny case", "[gradients]") {
    ItemParamsMap items;
    ItemParams p;
    p.alpha = 1.0;
    p.delta = 0.0;
    p.loadings = Vector::Constant(1, 1.0);
    items.emplace("x", p);
    AbilityMap abilities;
    AbilityVector a;
    a.theta_g = 1.0;
    a.theta = Vector::Constant(1, -0.5);
    abilities.emplace("m", a);
    Record rec;
    rec.model_id = "m";
    rec.dataset_id = "d";
    rec.task_id = "t";
    rec.item_id = "x";
    rec.correct = 1;
    LossConfig cfg;
    cfg.lambda_nested = 0.5;
    cfg.lambda_l1 = 0.01;

    // -nested_loss + 0.5 * ||(1, -0.5)||^2 + 0.01 * |1|
    const double expected = 0.630707827939218 + 0.5 * 1.25 + 0.01;
    REQUIRE(irtkit::regularized_objective(std::vector<Record>{rec}, items, abilities, cfg) ==
            Catch::Approx(expected).epsilon(1e-13));
}

TEST_CASE("analytic gradients match central differences", "[gradients]") {
    Rng rng(2024);
    LossConfig cfg;
    cfg.lambda_nested = 0.7;
    cfg.lambda_l1 = 0.0;  // L1 kinks are checked separately
    const double h = 1e-6;

    for (int trial = 0; trial < 5; ++trial) {
        Problem prob = random_problem(4, 5, 3, rng);
        const auto grads = irtkit::loss_gradients(prob.batch, prob.items, prob.abilities, cfg);

        auto objective = [&] {
            return irtkit::regularized_objective(prob.batch, prob.items, prob.abilities, cfg);
        };

        for (auto& [id, item] : prob.items) {
            const auto& g = grads.items.at(id);
            REQUIRE(fd_slope([&](double v) { item.delta = v; return objective(); }, item.delta, h) ==
                    Catch::Approx(g.d_delta).margin(1e-4));
            REQUIRE(fd_slope([&](double v) { item.alpha = v; return objective(); }, item.alpha, h) ==
                    Catch::Approx(g.d_alpha).margin(1e-4));
            for (int d = 0; d < item.loadings.size(); ++d) {
                REQUIRE(fd_slope([&](double v) { item.loadings(d) = v; return objective(); },
                                 item.loadings(d), h) ==
                        Catch::Approx(g.d_loadings(d)).margin(1e-4));
            }
        }
        for (auto& [id, ability] : prob.abilities) {
            const Vector& g = grads.abilities.at(id);
            REQUIRE(fd_slope([&](double v) { ability.theta_g = v; return objective(); },
                             ability.theta_g, h) == Catch::Approx(g(0)).margin(1e-4));
            for (int d = 0; d < ability.theta.size(); ++d) {
                REQUIRE(fd_slope([&](double v) { ability.theta(d) = v; return objective(); },
                                 ability.theta(d), h) == Catch::Approx(g(d + 1)).margin(1e-4));
            }
        }
    }
}

TEST_CASE("L1 penalty contributes its subgradient away from zero", "[gradients]") {
    Rng rng(77);
    Problem prob = random_problem(3, 3, 2, rng);
    LossConfig base_cfg;
    base_cfg.lambda_nested = 0.0;
    base_cfg.lambda_l1 = 0.0;
    LossConfig l1_cfg = base_cfg;
    l1_cfg.lambda_l1 = 0.25;

    const auto smooth = irtkit::loss_gradients(prob.batch, prob.items, prob.abilities, base_cfg);
    const auto penalized = irtkit::loss_gradients(prob.batch, prob.items, prob.abilities, l1_cfg);
    for (const auto& [id, item] : prob.items) {
        for (int d = 0; d < item.loadings.size(); ++d) {
            const double expected =
                item.loadings(d) == 0.0 ? 0.0 : 0.25 * (item.loadings(d) > 0.0 ? 1.0 : -1.0);
            REQUIRE(penalized.items.at(id).d_loadings(d) - smooth.items.at(id).d_loadings(d) ==
                    Catch::Approx(expected).margin(1e-12));
        }
    }
}

TEST_CASE("ability gradient includes the Gaussian prior pull", "[gradients]") {
    // No observations: the gradient is exactly the ability itself.
    ItemParamsMap items;
    AbilityMap abilities;
    AbilityVector a;
    a.theta_g = 2.0;
    a.theta = Vector::Constant(2, -1.5);
    abilities.emplace("m", a);
    const auto grads =
        irtkit::loss_gradients(std::vector<Record>{}, items, abilities, LossConfig{});
    REQUIRE((grads.abilities.at("m") - a.stacked()).norm() < 1e-15);
}
