#include <set>
#include <string>

#include <catch2/catch_amalgamated.hpp>

#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/model_io.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"

using irtkit::Error;
using irtkit::FittedModel;
using irtkit::Record;
using irtkit::RecordStore;
using irtkit::Rng;

namespace {

FittedModel small_fit() {
    RecordStore store;
    Rng rng(3);
    std::set<std::string> models;
    for (int m = 0; m < 6; ++m) {
        const std::string model = "m" + std::to_string(m);
        models.insert(model);
        for (int x = 0; x < 12; ++x) {
            Record r;
            r.model_id = model;
            r.dataset_id = "ds";
            r.task_id = "t";
            r.item_id = "x" + std::to_string(x);
            r.correct = rng.bernoulli(0.4 + 0.05 * m);
            store.add(r);
        }
    }
    irtkit::FitOptions opts;
    opts.max_outer_steps = 8;
    return irtkit::fit_joint(store, models, 2, irtkit::LossConfig{}, 11, opts);
}

}  // namespace

TEST_CASE("fitted models round-trip losslessly through JSON", "[model-io]") {
    const FittedModel fitted = small_fit();
    const auto j = irtkit::fitted_model_to_json(fitted);
    const FittedModel back = irtkit::fitted_model_from_json(nlohmann::json::parse(j.dump()));

    REQUIRE(back.k == fitted.k);
    REQUIRE(back.cfg.lambda_nested == fitted.cfg.lambda_nested);
    REQUIRE(back.cfg.lambda_l1 == fitted.cfg.lambda_l1);
    REQUIRE(back.cfg.clip_eps == fitted.cfg.clip_eps);
    REQUIRE(back.options.alpha_fixed == fitted.options.alpha_fixed);
    REQUIRE(back.meta.seed == fitted.meta.seed);
    REQUIRE(back.meta.final_objective == fitted.meta.final_objective);
    REQUIRE(back.meta.objective_history == fitted.meta.objective_history);
    REQUIRE(back.degenerate_items == fitted.degenerate_items);

    REQUIRE(back.item_params.size() == fitted.item_params.size());
    for (const auto& [id, p] : fitted.item_params) {
        const auto& q = back.item_params.at(id);
        REQUIRE(q.alpha == p.alpha);
        REQUIRE(q.delta == p.delta);
        REQUIRE(q.loadings == p.loadings);
    }
    REQUIRE(back.abilities.size() == fitted.abilities.size());
    for (const auto& [id, a] : fitted.abilities) {
        REQUIRE(back.abilities.at(id).theta_g == a.theta_g);
        REQUIRE(back.abilities.at(id).theta == a.theta);
    }

    // Serializing the round-tripped model reproduces the bytes.
    REQUIRE(irtkit::fitted_model_to_json(back).dump() == j.dump());
}

TEST_CASE("priors round-trip losslessly through JSON", "[model-io]") {
    const FittedModel fitted = small_fit();
    const auto prior = irtkit::empirical_prior(fitted);
    const auto j = irtkit::prior_to_json(prior);
    const auto back = irtkit::prior_from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back.mu == prior.mu);
    REQUIRE(back.sigma == prior.sigma);
}

TEST_CASE("unsupported versions and malformed documents are parse errors", "[model-io]") {
    auto expect_parse = [](const nlohmann::json& j) {
        REQUIRE_THROWS_MATCHES(irtkit::fitted_model_from_json(j), Error,
                               Catch::Matchers::Predicate<Error>(
                                   [](const Error& e) { return e.category() == "parse"; }));
    };
    expect_parse(nlohmann::json::object());
    auto j = irtkit::fitted_model_to_json(small_fit());
    j["format_version"] = 99;
    expect_parse(j);

    REQUIRE_THROWS_MATCHES(irtkit::prior_from_json(nlohmann::json::object()), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "parse"; }));
}
