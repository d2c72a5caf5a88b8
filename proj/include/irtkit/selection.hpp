#pragma once

// Calibration item selection: Fisher information and V-optimal scoring with
// Woodbury covariance updates, cost discounting, and the baseline strategies
// (random, uniform over tasks, minimum cost, anchor clustering).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/kmeans.hpp"
#include "irtkit/model.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"

namespace irtkit {

enum class Strategy { random, uniform_task, min_cost, fisher, voptimal, anchor_binary, anchor_irt };

inline Strategy strategy_from_string(const std::string& name) {
    if (name == "random") return Strategy::random;
    if (name == "uniform_task") return Strategy::uniform_task;
    if (name == "min_cost") return Strategy::min_cost;
    if (name == "fisher") return Strategy::fisher;
    if (name == "voptimal") return Strategy::voptimal;
    if (name == "anchor_binary") return Strategy::anchor_binary;
    if (name == "anchor_irt") return Strategy::anchor_irt;
    fail("config", "unknown selection strategy '" + name + "'");
}

inline std::string strategy_to_string(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::uniform_task: return "uniform_task";
        case Strategy::min_cost: return "min_cost";
        case Strategy::fisher: return "fisher";
        case Strategy::voptimal: return "voptimal";
        case Strategy::anchor_binary: return "anchor_binary";
        case Strategy::anchor_irt: return "anchor_irt";
    }
    fail("config", "unknown selection strategy");
}

struct SelectorSpec {
    Strategy strategy = Strategy::random;
    bool adaptive = false;
    bool cost_discount = false;
    std::uint64_t seed = 0;
};

struct SelectionState {
    Matrix c;                           // posterior ability covariance
    std::vector<std::string> selected;  // in pick order, no duplicates
    AbilityVector current_ability;
    double token_spent = 0.0;
};

struct PredictionMatrix {
    Matrix m;
};

// M = sum over target items of alpha^2 K~ K~'.
template <typename ItemSet>
PredictionMatrix prediction_matrix(const FittedModel& model, const ItemSet& target_items) {
    if (target_items.empty()) fail("empty-target", "prediction matrix needs at least one target item");
    const int d = model.k + 1;
    PredictionMatrix pm;
    pm.m = Matrix::Zero(d, d);
    for (const auto& item_id : target_items) {
        auto it = model.item_params.find(item_id);
        if (it == model.item_params.end())
            fail("missing-data", "target item '" + std::string(item_id) + "' has no fitted parameters");
        const Vector k_tilde = it->second.augmented_loading();
        pm.m += (it->second.alpha * it->second.alpha) * (k_tilde * k_tilde.transpose());
    }
    return pm;
}

// Expected reduction in target prediction variance from observing `item`:
// (w a^2 c' M c) / (1 + w a^2 K~' c) with c = C K~ and w = p (1 - p).
inline double voptimal_score(const SelectionState& state, const ItemParams& item,
                             const PredictionMatrix& m, const AbilityVector& ability) {
    const Vector k_tilde = item.augmented_loading();
    const Vector c = state.c * k_tilde;
    const double p = predict_prob(ability, item);
    const double w = p * (1.0 - p);
    const double wa2 = w * item.alpha * item.alpha;
    return wa2 * c.dot(m.m * c) / (1.0 + wa2 * k_tilde.dot(c));
}

// Rank-1 posterior covariance update after observing `item` at `ability`:
// C <- C - w a^2 C K~ K~' C / (1 + w a^2 K~' C K~).
inline SelectionState woodbury_update(const SelectionState& state, const ItemParams& item,
                                      const AbilityVector& ability) {
    const Vector k_tilde = item.augmented_loading();
    const double p = predict_prob(ability, item);
    const double wa2 = p * (1.0 - p) * item.alpha * item.alpha;
    const Vector c = state.c * k_tilde;
    const double denom = 1.0 + wa2 * k_tilde.dot(c);
    if (denom <= 0.0)
        fail("numerical", "non-positive Woodbury denominator " + std::to_string(denom));
    SelectionState next = state;
    next.c -= (wa2 / denom) * (c * c.transpose());
    return next;
}

inline double cost_discount(double score, double tau_bar) {
    if (std::isnan(tau_bar) || tau_bar <= 0.0)
        fail("config", "cost discounting requires a positive mean item cost");
    return score / tau_bar;
}

struct SelectionChoice {
    std::string item_id;
    double score = 0.0;
};

namespace detail {

// Strict-improvement argmax over candidates visited in sorted order, so ties
// resolve to the lexicographically smallest item id.
template <typename Score>
SelectionChoice argmax_choice(const std::set<std::string>& candidates, Score&& score) {
    SelectionChoice best;
    bool have = false;
    for (const auto& id : candidates) {
        const double s = score(id);
        if (std::isnan(s)) continue;
        if (!have || s > best.score) {
            best.item_id = id;
            best.score = s;
            have = true;
        }
    }
    if (!have) fail("exhausted", "no scoreable candidate items remain");
    return best;
}

}  // namespace detail

// Picks the next calibration item. Deterministic given (spec.seed, session,
// candidates): randomized strategies draw from a stream derived from the seed
// and the number of items already selected.
inline SelectionChoice select_next(const SelectionState& session, const SelectorSpec& spec,
                                   const std::set<std::string>& candidates,
                                   const FittedModel& model, const PredictionMatrix& m,
                                   const TokenStats& token_stats,
                                   const std::map<std::string, std::string>& item_task) {
    if (candidates.empty()) fail("exhausted", "no candidate items remain");
    for (const auto& id : session.selected)
        if (candidates.count(id) > 0)
            fail("conflict", "candidate '" + id + "' was already selected");

    Rng rng = Rng(spec.seed).derive(session.selected.size());

    switch (spec.strategy) {
        case Strategy::random: {
            auto it = candidates.begin();
            std::advance(it, static_cast<long>(rng.below(candidates.size())));
            return {*it, 1.0 / static_cast<double>(candidates.size())};
        }
        case Strategy::uniform_task: {
            // Round-robin over tasks: draw uniformly among the least-covered
            // tasks that still have candidates, then uniformly within it.
            std::map<std::string, std::vector<std::string>> per_task;
            for (const auto& id : candidates) {
                auto it = item_task.find(id);
                if (it == item_task.end()) fail("missing-data", "item '" + id + "' has no task");
                per_task[it->second].push_back(id);
            }
            std::map<std::string, std::size_t> coverage;
            for (const auto& [task, ids] : per_task) coverage[task] = 0;
            for (const auto& id : session.selected) {
                auto it = item_task.find(id);
                if (it != item_task.end() && coverage.count(it->second) > 0) ++coverage[it->second];
            }
            std::size_t least = std::numeric_limits<std::size_t>::max();
            for (const auto& [task, n] : coverage) least = std::min(least, n);
            std::vector<std::string> tied;
            for (const auto& [task, n] : coverage)
                if (n == least) tied.push_back(task);
            const std::string& task = tied[rng.below(tied.size())];
            const auto& pool = per_task.at(task);
            return {pool[rng.below(pool.size())], -static_cast<double>(least)};
        }
        case Strategy::min_cost:
            // Scored as negated cost so the shared argmax keeps tie handling.
            return detail::argmax_choice(candidates, [&](const std::string& id) {
                return -token_stats.cost_or_inf(id);
            });
        case Strategy::fisher:
        case Strategy::voptimal: {
            const bool discount = spec.cost_discount;
            bool any_priced = !discount;
            if (discount)
                for (const auto& id : candidates)
                    if (std::isfinite(token_stats.cost_or_inf(id))) {
                        any_priced = true;
                        break;
                    }
            if (!any_priced)
                fail("exhausted", "cost discounting left no priced candidate items");
            return detail::argmax_choice(candidates, [&](const std::string& id) {
                auto it = model.item_params.find(id);
                if (it == model.item_params.end())
                    fail("missing-data", "candidate item '" + id + "' has no fitted parameters");
                double score;
                if (spec.strategy == Strategy::fisher)
                    score = fisher_trace(session.current_ability, it->second);
                else
                    score = voptimal_score(session, it->second, m, session.current_ability);
                if (discount) {
                    const double tau = token_stats.cost_or_inf(id);
                    if (!std::isfinite(tau)) return std::numeric_limits<double>::quiet_NaN();
                    score = cost_discount(score, tau);
                }
                return score;
            });
        }
        case Strategy::anchor_binary:
        case Strategy::anchor_irt:
            fail("config", "anchor strategies pick a full set upfront via anchor_select");
    }
    fail("config", "unknown selection strategy");
}

// Reference ability for static selection: the median general ability for
// unidimensional fits, the mean ability vector otherwise.
inline AbilityVector static_reference_ability(const FittedModel& model) {
    if (model.abilities.empty())
        fail("insufficient-data", "static selection requires fitted training abilities");
    if (model.k == 0) {
        std::vector<double> thetas;
        thetas.reserve(model.abilities.size());
        for (const auto& [id, a] : model.abilities) thetas.push_back(a.theta_g);
        std::sort(thetas.begin(), thetas.end());
        const std::size_t n = thetas.size();
        AbilityVector ref;
        ref.theta = Vector(0);
        ref.theta_g = n % 2 == 1 ? thetas[n / 2] : 0.5 * (thetas[n / 2 - 1] + thetas[n / 2]);
        return ref;
    }
    Vector mean = Vector::Zero(model.k + 1);
    for (const auto& [id, a] : model.abilities) mean += a.stacked();
    mean /= static_cast<double>(model.abilities.size());
    return AbilityVector::from_stacked(mean);
}

enum class AnchorRepresentation { binary, irt };

// Clusters items with k-means (k = N) and returns the item nearest each
// centroid; a duplicate nearest item falls back to the next-nearest unused
// one. Items are embedded either as their train-model response vector or as
// their concatenated loadings and difficulty.
inline std::vector<std::string> anchor_select(const std::set<std::string>& items,
                                              AnchorRepresentation representation,
                                              const FittedModel& model, const RecordStore& store,
                                              int n, std::uint64_t seed) {
    if (n <= 0) fail("capacity", "anchor selection needs a positive budget");
    if (static_cast<std::size_t>(n) > items.size())
        fail("capacity", "anchor budget " + std::to_string(n) + " exceeds the " +
                             std::to_string(items.size()) + " candidate items");

    const std::vector<std::string> ids(items.begin(), items.end());
    Eigen::MatrixXd points;
    if (representation == AnchorRepresentation::binary) {
        std::vector<std::string> train_models;
        for (const auto& [id, a] : model.abilities) train_models.push_back(id);
        points.resize(static_cast<Eigen::Index>(ids.size()),
                      static_cast<Eigen::Index>(train_models.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = 0; j < train_models.size(); ++j) {
                const Record* rec = store.find(train_models[j], ids[i]);
                if (rec == nullptr)
                    fail("missing-data", "item '" + ids[i] + "' has no response from model '" +
                                             train_models[j] + "'");
                points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rec->correct;
            }
        }
    } else {
        points.resize(static_cast<Eigen::Index>(ids.size()), model.k + 1);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto it = model.item_params.find(ids[i]);
            if (it == model.item_params.end())
                fail("missing-data", "item '" + ids[i] + "' has no fitted parameters");
            points.row(static_cast<Eigen::Index>(i)).head(model.k) = it->second.loadings.transpose();
            points(static_cast<Eigen::Index>(i), model.k) = it->second.delta;
        }
    }

    const KmeansResult clusters = kmeans(points, n, Rng(seed).derive(0xa2c4));
    std::vector<std::string> picked;
    std::set<std::size_t> used;
    for (int c = 0; c < n; ++c) {
        std::size_t best = ids.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (used.count(i) > 0) continue;
            const double d = (points.row(static_cast<Eigen::Index>(i)) - clusters.centroids.row(c))
                                 .squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        used.insert(best);
        picked.push_back(ids[best]);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

}  // namespace irtkit
