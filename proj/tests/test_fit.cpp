#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/model.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"

using irtkit::AbilityVector;
using irtkit::Error;
using irtkit::FittedModel;
using irtkit::FitOptions;
using irtkit::ItemParams;
using irtkit::LossConfig;
using irtkit::Record;
using irtkit::RecordStore;
using irtkit::Rng;
using irtkit::Vector;

namespace {

Record make_record(const std::string& model, const std::string& task, const std::string& item,
                   int correct) {
    Record r;
    r.model_id = model;
    r.dataset_id = "ds";
    r.task_id = task;
    r.item_id = item;
    r.correct = correct;
    r.input_tokens = 10;
    r.output_tokens = 5;
    return r;
}

// Synthetic unidimensional world: theta and delta on fixed grids, responses
// Bernoulli under the 2PL with alpha = 1.
struct SyntheticWorld {
    RecordStore store;
    std::vector<double> theta;
    std::set<std::string> models;
};

SyntheticWorld synthetic_1d(int n_models, int n_items, std::uint64_t seed) {
    SyntheticWorld world;
    Rng rng(seed);
    std::vector<double> delta(n_items);
    world.theta.resize(n_models);
    for (int m = 0; m < n_models; ++m) world.theta[m] = rng.normal();
    for (int x = 0; x < n_items; ++x) delta[x] = rng.normal();
    for (int m = 0; m < n_models; ++m) {
        const std::string model = "m" + std::to_string(100 + m);
        world.models.insert(model);
        for (int x = 0; x < n_items; ++x) {
            const double p = irtkit::sigmoid(world.theta[m] - delta[x]);
            world.store.add(
                make_record(model, "t", "x" + std::to_string(1000 + x), rng.bernoulli(p)));
        }
    }
    return world;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("degenerate filtering separates constant items", "[fit]") {
    RecordStore store;
    store.add(make_record("m1", "t", "mixed", 1));
    store.add(make_record("m2", "t", "mixed", 0));
    store.add(make_record("m1", "t", "all-one", 1));
    store.add(make_record("m2", "t", "all-one", 1));
    store.add(make_record("m1", "t", "all-zero", 0));
    store.add(make_record("m2", "t", "all-zero", 0));
    store.add(make_record("m3", "t", "test-only", 1));

    const std::set<std::string> train = {"m1", "m2"};
    const auto [kept, degenerate] = irtkit::filter_degenerate(store, train);
    REQUIRE(kept == std::set<std::string>{"mixed"});
    REQUIRE(degenerate == std::map<std::string, int>{{"all-one", 1}, {"all-zero", 0}});
}

TEST_CASE("fitting with no usable items is an error", "[fit]") {
    RecordStore store;
    store.add(make_record("m1", "t", "x", 1));
    store.add(make_record("m2", "t", "x", 1));
    const std::set<std::string> train = {"m1", "m2"};
    REQUIRE_THROWS_MATCHES(irtkit::fit_joint(store, train, 0, LossConfig{}, 1), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "empty-fit"; }));
}

TEST_CASE("fitting fewer than two models is an error", "[fit]") {
    RecordStore store;
    store.add(make_record("m1", "t", "x1", 1));
    store.add(make_record("m1", "t", "x2", 0));
    store.add(make_record("m2", "t", "x1", 0));
    const std::set<std::string> train = {"m1"};
    REQUIRE_THROWS_MATCHES(irtkit::fit_joint(store, train, 0, LossConfig{}, 1), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "insufficient-data"; }));
}

TEST_CASE("the objective history is monotone non-increasing", "[fit]") {
    const auto world = synthetic_1d(12, 40, 5);
    FitOptions opts;
    opts.max_outer_steps = 30;
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 2, LossConfig{}, 9, opts);
    REQUIRE(fitted.meta.objective_history.size() >= 2);
    for (std::size_t i = 1; i < fitted.meta.objective_history.size(); ++i)
        REQUIRE(fitted.meta.objective_history[i] <=
                fitted.meta.objective_history[i - 1] + 1e-8);
    REQUIRE(fitted.meta.final_objective == fitted.meta.objective_history.back());
}

TEST_CASE("fits are reproducible for a fixed seed", "[fit]") {
    const auto world = synthetic_1d(10, 30, 21);
    FitOptions opts;
    opts.max_outer_steps = 15;
    const FittedModel a = irtkit::fit_joint(world.store, world.models, 2, LossConfig{}, 3, opts);
    const FittedModel b = irtkit::fit_joint(world.store, world.models, 2, LossConfig{}, 3, opts);
    REQUIRE(a.meta.final_objective == b.meta.final_objective);
    for (const auto& [id, p] : a.item_params) {
        const ItemParams& q = b.item_params.at(id);
        REQUIRE(p.alpha == q.alpha);
        REQUIRE(p.delta == q.delta);
        REQUIRE(p.loadings == q.loadings);
    }
    for (const auto& [id, ability] : a.abilities) {
        REQUIRE(ability.theta_g == b.abilities.at(id).theta_g);
        REQUIRE(ability.theta == b.abilities.at(id).theta);
    }
}

TEST_CASE("discriminations respect their bounds", "[fit]") {
    const auto world = synthetic_1d(8, 25, 13);
    FitOptions opts;
    opts.max_outer_steps = 10;
    opts.alpha_min = 0.05;
    opts.alpha_max = 20.0;
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 1, LossConfig{}, 2, opts);
    for (const auto& [id, p] : fitted.item_params) {
        REQUIRE(p.alpha >= 0.05);
        REQUIRE(p.alpha <= 20.0);
    }
}

TEST_CASE("the 1PL variant pins every discrimination at one", "[fit]") {
    const auto world = synthetic_1d(8, 25, 17);
    FitOptions opts;
    opts.max_outer_steps = 10;
    opts.alpha_fixed = true;
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 0, LossConfig{}, 2, opts);
    for (const auto& [id, p] : fitted.item_params) REQUIRE(p.alpha == 1.0);
}

TEST_CASE("a huge L1 weight collapses the loadings", "[fit]") {
    const auto world = synthetic_1d(10, 30, 29);
    LossConfig cfg;
    cfg.lambda_l1 = 1000.0;
    FitOptions opts;
    opts.max_outer_steps = 300;
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 2, cfg, 4, opts);
    for (const auto& [id, p] : fitted.item_params)
        REQUIRE(p.loadings.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("recovered abilities track the generating abilities", "[fit]") {
    const auto world = synthetic_1d(40, 200, 31);
    LossConfig cfg;
    cfg.lambda_nested = 0.0;
    FitOptions opts;
    opts.max_outer_steps = 80;
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 0, cfg, 6, opts);

    std::vector<double> truth, estimate;
    int m = 0;
    for (const auto& model : world.models) {
        truth.push_back(world.theta[m++]);
        estimate.push_back(fitted.abilities.at(model).theta_g);
    }
    REQUIRE(pearson(truth, estimate) > 0.95);
}

TEST_CASE("prediction honors degenerate majorities", "[fit]") {
    RecordStore store;
    store.add(make_record("m1", "t", "mixed", 1));
    store.add(make_record("m2", "t", "mixed", 0));
    store.add(make_record("m1", "t", "easy", 1));
    store.add(make_record("m2", "t", "easy", 1));
    const std::set<std::string> train = {"m1", "m2"};
    const FittedModel fitted = irtkit::fit_joint(store, train, 0, LossConfig{}, 1);

    AbilityVector weak;
    weak.theta_g = -10.0;
    weak.theta = Vector(0);
    REQUIRE(fitted.predict(weak, "easy") == 1.0);
    REQUIRE(fitted.predict(weak, "mixed") < 0.5);
    REQUIRE_THROWS_MATCHES(fitted.predict(weak, "unseen"), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "missing-data"; }));
}

TEST_CASE("empirical prior has the closed-form two-point covariance", "[fit]") {
    FittedModel fitted;
    fitted.k = 1;
    AbilityVector up, down;
    up.theta_g = 1.0;
    up.theta = Vector::Constant(1, 2.0);
    down.theta_g = -1.0;
    down.theta = Vector::Constant(1, -2.0);
    fitted.abilities.emplace("a", up);
    fitted.abilities.emplace("b", down);

    const auto prior = irtkit::empirical_prior(fitted, 1e-4);
    REQUIRE(prior.mu.norm() < 1e-15);
    // Sample covariance with n - 1 = 1: v v' * 2, plus the ridge.
    irtkit::Matrix expected(2, 2);
    expected << 2.0, 4.0, 4.0, 8.0;
    expected += 1e-4 * irtkit::Matrix::Identity(2, 2);
    REQUIRE((prior.sigma - expected).cwiseAbs().maxCoeff() < 1e-12);

    FittedModel lone;
    lone.k = 1;
    lone.abilities.emplace("a", up);
    REQUIRE_THROWS_MATCHES(irtkit::empirical_prior(lone), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "insufficient-data"; }));
}

TEST_CASE("MAP with no observations returns the prior mean", "[fit]") {
    const auto world = synthetic_1d(10, 30, 41);
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 1, LossConfig{}, 8,
                                                 FitOptions{.max_outer_steps = 10});
    const auto prior = irtkit::empirical_prior(fitted);
    const AbilityVector a = irtkit::map_calibrate(fitted, prior, std::vector<Record>{});
    REQUIRE((a.stacked() - prior.mu).norm() < 1e-12);
}

TEST_CASE("MAP solves the posterior stationarity condition", "[fit]") {
    const auto world = synthetic_1d(12, 60, 43);
    const FittedModel fitted = irtkit::fit_joint(world.store, world.models, 1, LossConfig{}, 8,
                                                 FitOptions{.max_outer_steps = 15});
    const auto prior = irtkit::empirical_prior(fitted);

    // Calibrate on the first model's first 20 records.
    const std::string target = *world.models.begin();
    std::vector<Record> observed;
    for (std::size_t idx : world.store.by_model(target)) {
        observed.push_back(world.store.record(idx));
        if (observed.size() == 20) break;
    }
    const AbilityVector a = irtkit::map_calibrate(fitted, prior, observed);

    // Gradient of the negative log posterior at the solution; degenerate
    // items carry no likelihood term, mirroring the calibration itself.
    Vector grad = prior.sigma.ldlt().solve(a.stacked() - prior.mu);
    for (const Record& rec : observed) {
        if (fitted.is_degenerate(rec.item_id)) continue;
        const ItemParams& item = fitted.item_params.at(rec.item_id);
        const double p = irtkit::predict_prob(a, item);
        grad += item.alpha * (p - rec.correct) * item.augmented_loading();
    }
    REQUIRE(grad.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("MAP skips degenerate items and rejects unknown ones", "[fit]") {
    RecordStore store;
    store.add(make_record("m1", "t", "mixed", 1));
    store.add(make_record("m2", "t", "mixed", 0));
    store.add(make_record("m1", "t", "easy", 1));
    store.add(make_record("m2", "t", "easy", 1));
    const std::set<std::string> train = {"m1", "m2"};
    const FittedModel fitted = irtkit::fit_joint(store, train, 0, LossConfig{}, 1);
    const auto prior = irtkit::empirical_prior(fitted);

    // Only a degenerate observation: behaves like no observations.
    const AbilityVector a =
        irtkit::map_calibrate(fitted, prior, std::vector<Record>{make_record("new", "t", "easy", 1)});
    REQUIRE((a.stacked() - prior.mu).norm() < 1e-12);

    REQUIRE_THROWS_MATCHES(
        irtkit::map_calibrate(fitted, prior,
                              std::vector<Record>{make_record("new", "t", "never-seen", 1)}),
        Error,
        Catch::Matchers::Predicate<Error>(
            [](const Error& e) { return e.category() == "missing-data"; }));
}
