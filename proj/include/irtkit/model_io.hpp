#pragma once

// Lossless JSON serialization for fitted models and empirical priors.

#include <string>

#include <nlohmann/json.hpp>

#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/model.hpp"

namespace irtkit {

inline constexpr int kFittedModelFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json vector_to_json(const Vector& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Vector vector_from_json(const nlohmann::json& arr) {
    Vector v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

}  // namespace detail

inline nlohmann::ordered_json fitted_model_to_json(const FittedModel& model) {
    nlohmann::ordered_json j;
    j["format_version"] = kFittedModelFormatVersion;
    j["k"] = model.k;
    j["config"] = {{"lambda_nested", model.cfg.lambda_nested},
                   {"lambda_l1", model.cfg.lambda_l1},
                   {"clip_eps", model.cfg.clip_eps}};
    j["options"] = {{"max_outer_steps", model.options.max_outer_steps},
                    {"rel_tol", model.options.rel_tol},
                    {"alpha_min", model.options.alpha_min},
                    {"alpha_max", model.options.alpha_max},
                    {"alpha_fixed", model.options.alpha_fixed}};
    j["meta"] = {{"seed", model.meta.seed},
                 {"outer_iterations", model.meta.outer_iterations},
                 {"final_objective", model.meta.final_objective},
                 {"objective_history", model.meta.objective_history}};
    nlohmann::ordered_json items = nlohmann::ordered_json::object();
    for (const auto& [id, p] : model.item_params) {
        items[id] = {{"alpha", p.alpha},
                     {"delta", p.delta},
                     {"loadings", detail::vector_to_json(p.loadings)}};
    }
    j["items"] = std::move(items);
    nlohmann::ordered_json abilities = nlohmann::ordered_json::object();
    for (const auto& [id, a] : model.abilities) {
        abilities[id] = {{"theta_g", a.theta_g}, {"theta", detail::vector_to_json(a.theta)}};
    }
    j["abilities"] = std::move(abilities);
    j["degenerate_items"] = model.degenerate_items;
    return j;
}

inline FittedModel fitted_model_from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kFittedModelFormatVersion)
            fail("parse", "unsupported model format version " + std::to_string(version));
        FittedModel model;
        model.k = j.at("k").get<int>();
        const auto& cfg = j.at("config");
        model.cfg.lambda_nested = cfg.at("lambda_nested").get<double>();
        model.cfg.lambda_l1 = cfg.at("lambda_l1").get<double>();
        model.cfg.clip_eps = cfg.at("clip_eps").get<double>();
        const auto& opts = j.at("options");
        model.options.max_outer_steps = opts.at("max_outer_steps").get<int>();
        model.options.rel_tol = opts.at("rel_tol").get<double>();
        model.options.alpha_min = opts.at("alpha_min").get<double>();
        model.options.alpha_max = opts.at("alpha_max").get<double>();
        model.options.alpha_fixed = opts.at("alpha_fixed").get<bool>();
        const auto& meta = j.at("meta");
        model.meta.seed = meta.at("seed").get<std::uint64_t>();
        model.meta.outer_iterations = meta.at("outer_iterations").get<int>();
        model.meta.final_objective = meta.at("final_objective").get<double>();
        model.meta.objective_history = meta.at("objective_history").get<std::vector<double>>();
        for (const auto& [id, p] : j.at("items").items()) {
            ItemParams item;
            item.alpha = p.at("alpha").get<double>();
            item.delta = p.at("delta").get<double>();
            item.loadings = detail::vector_from_json(p.at("loadings"));
            if (item.loadings.size() != model.k)
                fail("shape", "item '" + id + "' has " + std::to_string(item.loadings.size()) +
                                  " loadings, expected " + std::to_string(model.k));
            model.item_params.emplace(id, std::move(item));
        }
        for (const auto& [id, a] : j.at("abilities").items()) {
            AbilityVector ability;
            ability.theta_g = a.at("theta_g").get<double>();
            ability.theta = detail::vector_from_json(a.at("theta"));
            if (ability.theta.size() != model.k)
                fail("shape", "ability '" + id + "' has dimension " +
                                  std::to_string(ability.theta.size()) + ", expected " +
                                  std::to_string(model.k));
            model.abilities.emplace(id, std::move(ability));
        }
        model.degenerate_items = j.at("degenerate_items").get<std::map<std::string, int>>();
        return model;
    } catch (const nlohmann::json::exception& e) {
        fail("parse", std::string("malformed fitted model: ") + e.what());
    }
}

inline nlohmann::ordered_json prior_to_json(const EmpiricalPrior& prior) {
    nlohmann::ordered_json j;
    j["mu"] = detail::vector_to_json(prior.mu);
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < prior.sigma.rows(); ++r)
        rows.push_back(detail::vector_to_json(prior.sigma.row(r).transpose()));
    j["sigma"] = std::move(rows);
    return j;
}

inline EmpiricalPrior prior_from_json(const nlohmann::json& j) {
    try {
        EmpiricalPrior prior;
        prior.mu = detail::vector_from_json(j.at("mu"));
        const auto& rows = j.at("sigma");
        const int d = static_cast<int>(prior.mu.size());
        if (static_cast<int>(rows.size()) != d)
            fail("shape", "prior covariance row count does not match mu");
        prior.sigma.resize(d, d);
        for (int r = 0; r < d; ++r) {
            const Vector row = detail::vector_from_json(rows[r]);
            if (row.size() != d) fail("shape", "prior covariance is not square");
            prior.sigma.row(r) = row.transpose();
        }
        return prior;
    } catch (const nlohmann::json::exception& e) {
        fail("parse", std::string("malformed prior: ") + e.what());
    }
}

}  // namespace irtkit
