#pragma once

// Analytic gradients of the regularized fitting objective.
//
// The minimized objective over a batch of records is
//
//   J = sum_records [ -loglik(r, z_full) - lambda_nested * loglik(r, z_g) ]
//       + 0.5 * sum_models ||stacked ability||^2
//       + lambda_l1 * sum_items ||loadings||_1
//
// with residuals e = p - r for each logit. The L1 subgradient at exactly
// zero is taken as zero.

#include <map>
#include <string>

#include "irtkit/model.hpp"
#include "irtkit/records.hpp"

namespace irtkit {

using ItemParamsMap = std::map<std::string, ItemParams>;
using AbilityMap = std::map<std::string, AbilityVector>;

struct ItemGradient {
    double d_alpha = 0.0;
    double d_delta = 0.0;
    Vector d_loadings;
};

struct GradientSet {
    std::map<std::string, ItemGradient> items;
    std::map<std::string, Vector> abilities;  // stacked [general, specific...]
};

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Objective value over a batch; the prior applies to every ability in
// `abilities` and the L1 term to every item in `item_params`, whether or not
// the batch touches them.
template <typename Records>
double regularized_objective(const Records& batch, const ItemParamsMap& item_params,
                             const AbilityMap& abilities, const LossConfig& cfg) {
    double obj = 0.0;
    for (const Record& r : batch) {
        const ItemParams& item = item_params.at(r.item_id);
        const AbilityVector& ability = abilities.at(r.model_id);
        obj -= nested_loss(r.correct, ability, item, cfg);
    }
    for (const auto& [model_id, ability] : abilities) obj += 0.5 * ability.stacked().squaredNorm();
    for (const auto& [item_id, item] : item_params) obj += cfg.lambda_l1 * item.loadings.cwiseAbs().sum();
    return obj;
}

// Analytic gradient of regularized_objective with respect to every
// parameter. Batches must reference only non-degenerate items.
template <typename Records>
GradientSet loss_gradients(const Records& batch, const ItemParamsMap& item_params,
                           const AbilityMap& abilities, const LossConfig& cfg) {
    GradientSet g;
    for (const auto& [item_id, item] : item_params) {
        ItemGradient ig;
        ig.d_loadings = Vector::Zero(item.loadings.size());
        for (Eigen::Index d = 0; d < item.loadings.size(); ++d)
            ig.d_loadings(d) = cfg.lambda_l1 * sign_or_zero(item.loadings(d));
        g.items.emplace(item_id, std::move(ig));
    }
    for (const auto& [model_id, ability] : abilities) g.abilities.emplace(model_id, ability.stacked());

    for (const Record& rec : batch) {
        const ItemParams& item = item_params.at(rec.item_id);
        const AbilityVector& ability = abilities.at(rec.model_id);
        if (item.degenerate_majority.has_value())
            fail("shape", "gradient batch references degenerate item '" + rec.item_id + "'");
        check_dims(ability, item);

        const double inner = item.loadings.size() > 0 ? item.loadings.dot(ability.theta) : 0.0;
        const double z_full = item.alpha * (ability.theta_g + inner - item.delta);
        const double z_g = item.alpha * (ability.theta_g - item.delta);
        const double e_full = sigmoid(z_full) - rec.correct;
        const double e_g = sigmoid(z_g) - rec.correct;
        const double lam = cfg.lambda_nested;

        ItemGradient& ig = g.items.at(rec.item_id);
        ig.d_delta += -item.alpha * (e_full + lam * e_g);
        ig.d_alpha += e_full * (ability.theta_g + inner - item.delta) +
                      lam * e_g * (ability.theta_g - item.delta);
        ig.d_loadings += item.alpha * e_full * ability.theta;

        Vector& ag = g.abilities.at(rec.model_id);
        ag(0) += item.alpha * (e_full + lam * e_g);
        ag.tail(ag.size() - 1) += item.alpha * e_full * item.loadings;
    }
    return g;
}

}  // namespace irtkit
