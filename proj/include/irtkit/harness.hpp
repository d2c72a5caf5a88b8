#pragma once

// Evaluation harness: the three paradigms (prediction, selection, adaptation)
// over a split plan, task-level MAE metrics, synthetic world generation with
// known ground truth, and factor-count screening by parallel analysis.
//
// Grading is replay-only: every response comes from the ingested store.
// Held-out items must never be observed during calibration; a violation is a
// logic error that aborts the run rather than a recoverable condition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "irtkit/baselines.hpp"
#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/model.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"
#include "irtkit/selection.hpp"
#include "irtkit/splits.hpp"

namespace irtkit {

enum class ParadigmKind { prediction, selection, adaptation };
enum class Assessor { mirt, irt2pl, irt1pl, sample_mean, eb, ridge };
enum class PredictionTargets { both, extrapolation };

inline ParadigmKind paradigm_from_string(const std::string& name) {
    if (name == "prediction") return ParadigmKind::prediction;
    if (name == "selection") return ParadigmKind::selection;
    if (name == "adaptation") return ParadigmKind::adaptation;
    fail("config", "unknown paradigm '" + name + "'");
}

inline std::string paradigm_to_string(ParadigmKind kind) {
    switch (kind) {
        case ParadigmKind::prediction: return "prediction";
        case ParadigmKind::selection: return "selection";
        case ParadigmKind::adaptation: return "adaptation";
    }
    fail("config", "unknown paradigm");
}

inline Assessor assessor_from_string(const std::string& name) {
    if (name == "mirt") return Assessor::mirt;
    if (name == "irt2pl") return Assessor::irt2pl;
    if (name == "irt1pl") return Assessor::irt1pl;
    if (name == "sample_mean") return Assessor::sample_mean;
    if (name == "eb") return Assessor::eb;
    if (name == "ridge") return Assessor::ridge;
    fail("config", "unknown assessor '" + name + "'");
}

inline std::string assessor_to_string(Assessor a) {
    switch (a) {
        case Assessor::mirt: return "mirt";
        case Assessor::irt2pl: return "irt2pl";
        case Assessor::irt1pl: return "irt1pl";
        case Assessor::sample_mean: return "sample_mean";
        case Assessor::eb: return "eb";
        case Assessor::ridge: return "ridge";
    }
    fail("config", "unknown assessor");
}

inline bool is_irt_assessor(Assessor a) {
    return a == Assessor::mirt || a == Assessor::irt2pl || a == Assessor::irt1pl;
}

struct ParadigmSpec {
    ParadigmKind kind = ParadigmKind::prediction;
    int n = 16;  // calibration item budget per test model
    SelectorSpec selector;
    Assessor assessor = Assessor::mirt;
    std::vector<std::uint64_t> seeds = {0};
    PredictionTargets targets = PredictionTargets::both;
    double shrink_lambda = 5.0;
    double ridge_penalty = 1.0;
};

struct TraceEntry {
    int step = 0;
    std::string item_id;
    double score = 0.0;
    double tau_bar = 0.0;  // infinity when no train model priced the item
    double cum_tokens = 0.0;
};

struct CellResult {
    std::string model_id;
    std::string task_id;
    double predicted = 0.0;
    double empirical = 0.0;
    bool extrapolation = false;
};

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<CellResult> cells;
    double mae_interpolation_pct = 0.0;
    double mae_extrapolation_pct = 0.0;
    double token_cost = 0.0;
    std::map<std::string, std::vector<TraceEntry>> traces;  // per test model
};

struct Report {
    ParadigmKind kind = ParadigmKind::prediction;
    int n = 0;
    std::string strategy;
    std::string assessor;
    bool adaptive = false;
    bool cost_discount = false;
    std::vector<RunResult> runs;
    double mean_interpolation_pct = 0.0;
    double mean_extrapolation_pct = 0.0;
    double mean_token_cost = 0.0;
};

// Task-level mean absolute error in percent: for each model, average over its
// held-out tasks of |empirical mean - predicted mean|, then average the
// per-model values.
inline double mae_task(const std::map<std::pair<std::string, std::string>, double>& predictions,
                       const RecordStore& heldout) {
    if (heldout.empty()) fail("missing-data", "no held-out records to score");
    double model_total = 0.0;
    std::size_t n_models = 0;
    for (const auto& model : heldout.models()) {
        std::map<std::string, std::pair<double, std::size_t>> per_task;
        for (std::size_t idx : heldout.by_model(model)) {
            const Record& r = heldout.record(idx);
            auto& [sum, count] = per_task[r.task_id];
            sum += r.correct;
            ++count;
        }
        double task_total = 0.0;
        for (const auto& [task, agg] : per_task) {
            auto it = predictions.find({model, task});
            if (it == predictions.end())
                fail("coverage", "no prediction for model '" + model + "' task '" + task + "'");
            const double empirical = agg.first / static_cast<double>(agg.second);
            task_total += std::abs(empirical - it->second);
        }
        model_total += task_total / static_cast<double>(per_task.size());
        ++n_models;
    }
    return 100.0 * model_total / static_cast<double>(n_models);
}

namespace detail {

struct HarnessContext {
    const SplitPlan* plan = nullptr;
    const FittedModel* fitted = nullptr;
    const RecordStore* store = nullptr;
    TokenStats token_stats;
    std::map<std::string, std::string> item_task;
    std::map<std::string, double> train_task_mean;
    std::vector<std::string> test_models;       // sorted, present in the store
    std::set<std::string> heldout_union;        // all held-out item ids
    std::set<std::string> calibration_pool;     // selectable items (not held out)
    EmpiricalPrior prior;
    bool has_prior = false;
};

inline HarnessContext build_context(const SplitPlan& plan, const FittedModel& fitted,
                                    const RecordStore& store, const ParadigmSpec& spec) {
    HarnessContext ctx;
    ctx.plan = &plan;
    ctx.fitted = &fitted;
    ctx.store = &store;
    ctx.token_stats = TokenStats(store, plan.train_models);

    for (const auto& item : store.items()) ctx.item_task[item] = store.task_of(item);

    for (const auto& task : store.tasks()) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t idx : store.by_task(task)) {
            const Record& r = store.record(idx);
            if (plan.train_models.count(r.model_id) == 0) continue;
            sum += r.correct;
            ++n;
        }
        ctx.train_task_mean[task] = n > 0 ? sum / static_cast<double>(n) : 0.5;
    }

    for (const auto& model : store.models())
        if (plan.test_models.count(model) > 0) ctx.test_models.push_back(model);
    if (ctx.test_models.empty()) fail("missing-data", "no test models present in the store");

    for (const auto& [task, items] : plan.heldout_items)
        ctx.heldout_union.insert(items.begin(), items.end());

    for (const auto& task : plan.calibration_tasks) {
        if (ctx.train_task_mean.count(task) == 0) continue;
        for (const auto& item : store.items_of_task(task))
            if (!plan.is_heldout(task, item)) ctx.calibration_pool.insert(item);
    }
    if (ctx.calibration_pool.empty())
        fail("missing-data", "calibration tasks contain no selectable items");

    if (is_irt_assessor(spec.assessor)) {
        ctx.prior = empirical_prior(fitted);
        ctx.has_prior = true;
    }
    return ctx;
}

inline void assert_no_leakage(const std::vector<Record>& observed,
                              const std::set<std::string>& heldout) {
    for (const Record& r : observed)
        if (heldout.count(r.item_id) > 0)
            throw std::logic_error("leakage: held-out item '" + r.item_id +
                                   "' was observed during calibration");
}

// Items of the pool the test model can actually be graded on, narrowed to
// parameter-known items for strategies that need them.
inline std::set<std::string> candidate_pool(const HarnessContext& ctx, const std::string& model,
                                            Strategy strategy) {
    const bool needs_params = strategy == Strategy::fisher || strategy == Strategy::voptimal ||
                              strategy == Strategy::anchor_irt;
    std::set<std::string> pool;
    for (const auto& item : ctx.calibration_pool) {
        if (!ctx.store->has_pair(model, item)) continue;
        if (needs_params && !ctx.fitted->has_item(item)) continue;
        pool.insert(item);
    }
    return pool;
}

inline PredictionMatrix build_prediction_matrix(const HarnessContext& ctx,
                                                PredictionTargets targets) {
    std::set<std::string> target_items;
    for (const auto& [item, params] : ctx.fitted->item_params) {
        const std::string& task = ctx.item_task.count(item) > 0 ? ctx.item_task.at(item) : "";
        if (targets == PredictionTargets::extrapolation &&
            ctx.plan->extrapolation_tasks.count(task) == 0)
            continue;
        target_items.insert(item);
    }
    return prediction_matrix(*ctx.fitted, target_items);
}

// Runs one selection session for one test model, returning the observed
// records in pick order plus the trace.
inline std::pair<std::vector<Record>, std::vector<TraceEntry>> observe_items(
    const HarnessContext& ctx, const ParadigmSpec& spec, const std::string& model,
    std::uint64_t session_seed, const PredictionMatrix& m) {
    SelectorSpec selector = spec.selector;
    selector.seed = session_seed;
    if (spec.kind == ParadigmKind::prediction) {
        selector.strategy = Strategy::random;
        selector.cost_discount = false;
    }
    selector.adaptive = spec.kind == ParadigmKind::adaptation;

    std::set<std::string> candidates = candidate_pool(ctx, model, selector.strategy);
    if (candidates.size() < static_cast<std::size_t>(spec.n))
        fail("exhausted", "budget " + std::to_string(spec.n) + " exceeds the " +
                              std::to_string(candidates.size()) + " candidate items for model '" +
                              model + "'");

    std::vector<Record> observed;
    std::vector<TraceEntry> trace;
    auto observe = [&](const std::string& item_id, double score) {
        const Record* rec = ctx.store->find(model, item_id);
        if (rec == nullptr) fail("missing-data", "no record for model '" + model + "' item '" + item_id + "'");
        observed.push_back(*rec);
        TraceEntry entry;
        entry.step = static_cast<int>(observed.size());
        entry.item_id = item_id;
        entry.score = score;
        entry.tau_bar = ctx.token_stats.cost_or_inf(item_id);
        entry.cum_tokens = eval_token_cost(observed);
        trace.push_back(entry);
    };

    if (selector.strategy == Strategy::anchor_binary || selector.strategy == Strategy::anchor_irt) {
        const auto rep = selector.strategy == Strategy::anchor_binary ? AnchorRepresentation::binary
                                                                      : AnchorRepresentation::irt;
        const auto picked =
            anchor_select(candidates, rep, *ctx.fitted, *ctx.store, spec.n, selector.seed);
        for (const auto& item : picked) observe(item, 0.0);
        return {std::move(observed), std::move(trace)};
    }

    SelectionState session;
    const int d = ctx.fitted->k + 1;
    session.c = ctx.has_prior ? ctx.prior.sigma : Matrix::Identity(d, d);
    session.current_ability = selector.adaptive && ctx.has_prior
                                  ? AbilityVector::from_stacked(ctx.prior.mu)
                                  : static_reference_ability(*ctx.fitted);

    for (int step = 0; step < spec.n; ++step) {
        const SelectionChoice choice =
            select_next(session, selector, candidates, *ctx.fitted, m, ctx.token_stats,
                        ctx.item_task);
        candidates.erase(choice.item_id);
        observe(choice.item_id, choice.score);
        session.selected.push_back(choice.item_id);
        session.token_spent = eval_token_cost(observed);

        if (selector.adaptive && ctx.has_prior) {
            session.current_ability = map_calibrate(*ctx.fitted, ctx.prior, observed);
            if (ctx.fitted->has_item(choice.item_id))
                session = woodbury_update(session, ctx.fitted->item_params.at(choice.item_id),
                                          session.current_ability);
        } else if (selector.strategy == Strategy::voptimal) {
            if (ctx.fitted->has_item(choice.item_id))
                session = woodbury_update(session, ctx.fitted->item_params.at(choice.item_id),
                                          session.current_ability);
        }
    }
    return {std::move(observed), std::move(trace)};
}

// Predicted mean for one (model, task) over exactly the held-out items the
// model was graded on.
inline double predict_task_mean(const HarnessContext& ctx, const ParadigmSpec& spec,
                                const std::vector<Record>& observed, const std::string& task,
                                const std::vector<const Record*>& heldout_records,
                                const AbilityVector& ability) {
    switch (spec.assessor) {
        case Assessor::mirt:
        case Assessor::irt2pl:
        case Assessor::irt1pl: {
            double sum = 0.0;
            for (const Record* r : heldout_records) {
                if (ctx.fitted->has_item(r->item_id) || ctx.fitted->is_degenerate(r->item_id))
                    sum += ctx.fitted->predict(ability, r->item_id);
                else
                    sum += ctx.train_task_mean.at(task);
            }
            return sum / static_cast<double>(heldout_records.size());
        }
        case Assessor::sample_mean:
            return sample_mean_predict(observed, task, ctx.train_task_mean.at(task));
        case Assessor::eb: {
            ShrinkageConfig cfg;
            cfg.lambda = spec.shrink_lambda;
            return eb_shrinkage_predict(observed, task, ctx.train_task_mean.at(task), cfg);
        }
        case Assessor::ridge: {
            // Features are the observed items in a fixed sorted order; train
            // rows are the train models with a response on every feature.
            std::vector<std::string> features;
            for (const Record& r : observed) features.push_back(r.item_id);
            std::sort(features.begin(), features.end());
            features.erase(std::unique(features.begin(), features.end()), features.end());
            if (features.empty()) return ctx.train_task_mean.at(task);

            std::vector<std::string> rows;
            for (const auto& m : ctx.plan->train_models) {
                bool complete = true;
                for (const auto& f : features)
                    if (!ctx.store->has_pair(m, f)) {
                        complete = false;
                        break;
                    }
                if (complete) rows.push_back(m);
            }
            if (rows.size() < 2)
                fail("insufficient-data",
                     "ridge baseline needs 2 train models with complete responses on the "
                     "observed items");

            Eigen::MatrixXd x(rows.size(), features.size());
            Eigen::VectorXd y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t j = 0; j < features.size(); ++j)
                    x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        ctx.store->find(rows[i], features[j])->correct;
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t idx : ctx.store->by_task(task)) {
                    const Record& r = ctx.store->record(idx);
                    if (r.model_id != rows[i]) continue;
                    sum += r.correct;
                    ++n;
                }
                y(static_cast<Eigen::Index>(i)) =
                    n > 0 ? sum / static_cast<double>(n) : ctx.train_task_mean.at(task);
            }
            Eigen::VectorXd x_test(features.size());
            for (std::size_t j = 0; j < features.size(); ++j) {
                const Record* rec = ctx.store->find(observed.front().model_id, features[j]);
                x_test(static_cast<Eigen::Index>(j)) = rec->correct;
            }
            return ridge_fit_predict(x, y, x_test, spec.ridge_penalty);
        }
    }
    fail("config", "unknown assessor");
}

}  // namespace detail

// Executes the paradigm once per seed and aggregates. The fitted model must
// come from plan.train_models only; test models are calibrated on selected
// non-held-out calibration items and scored on held-out items.
inline Report run_paradigm(const SplitPlan& plan, const ParadigmSpec& spec,
                           const FittedModel& fitted, const RecordStore& store) {
    if (spec.n < 0) fail("config", "item budget must be non-negative");
    if (spec.seeds.empty()) fail("config", "at least one seed is required");
    if (spec.kind == ParadigmKind::adaptation && !is_irt_assessor(spec.assessor))
        fail("config", "adaptation requires an IRT-family assessor");
    if (spec.assessor == Assessor::mirt && fitted.k == 0)
        fail("config", "mirt assessor requires a fitted model with K > 0");
    if ((spec.assessor == Assessor::irt2pl || spec.assessor == Assessor::irt1pl) && fitted.k != 0)
        fail("config", "unidimensional assessors require a fitted model with K = 0");
    if (spec.assessor == Assessor::irt1pl && !fitted.options.alpha_fixed)
        fail("config", "irt1pl requires a model fitted with fixed discriminations");

    detail::HarnessContext ctx = detail::build_context(plan, fitted, store, spec);

    const bool wants_m = spec.selector.strategy == Strategy::voptimal &&
                         spec.kind != ParadigmKind::prediction;
    PredictionMatrix m;
    m.m = Matrix::Zero(fitted.k + 1, fitted.k + 1);
    if (wants_m) m = detail::build_prediction_matrix(ctx, spec.targets);

    Report report;
    report.kind = spec.kind;
    report.n = spec.n;
    report.strategy = strategy_to_string(spec.kind == ParadigmKind::prediction
                                             ? Strategy::random
                                             : spec.selector.strategy);
    report.assessor = assessor_to_string(spec.assessor);
    report.adaptive = spec.kind == ParadigmKind::adaptation;
    report.cost_discount = spec.selector.cost_discount && spec.kind != ParadigmKind::prediction;

    for (const std::uint64_t seed : spec.seeds) {
        RunResult run;
        run.seed = seed;
        std::map<std::pair<std::string, std::string>, double> interp_preds, extrap_preds;
        RecordStore interp_heldout, extrap_heldout;

        Rng seeder(seed);
        for (std::size_t mi = 0; mi < ctx.test_models.size(); ++mi) {
            const std::string& model = ctx.test_models[mi];
            const std::uint64_t session_seed = seeder.derive(0x5e55 + mi).next_u64();

            auto [observed, trace] = detail::observe_items(ctx, spec, model, session_seed, m);
            detail::assert_no_leakage(observed, ctx.heldout_union);
            run.token_cost += eval_token_cost(observed);
            run.traces[model] = std::move(trace);

            AbilityVector ability;
            if (ctx.has_prior) ability = map_calibrate(fitted, ctx.prior, observed);

            // Collect the model's held-out records per task and predict.
            std::map<std::string, std::vector<const Record*>> per_task;
            for (std::size_t idx : store.by_model(model)) {
                const Record& r = store.record(idx);
                if (plan.is_heldout(r.task_id, r.item_id)) per_task[r.task_id].push_back(&r);
            }
            for (const auto& [task, records] : per_task) {
                const bool extrap = plan.extrapolation_tasks.count(task) > 0;
                const double predicted =
                    detail::predict_task_mean(ctx, spec, observed, task, records, ability);
                double sum = 0.0;
                for (const Record* r : records) sum += r->correct;
                const double empirical = sum / static_cast<double>(records.size());

                CellResult cell;
                cell.model_id = model;
                cell.task_id = task;
                cell.predicted = predicted;
                cell.empirical = empirical;
                cell.extrapolation = extrap;
                run.cells.push_back(cell);

                auto& preds = extrap ? extrap_preds : interp_preds;
                auto& heldout = extrap ? extrap_heldout : interp_heldout;
                preds[{model, task}] = predicted;
                for (const Record* r : records) heldout.add(*r);
            }
        }
        run.mae_interpolation_pct =
            interp_heldout.empty() ? 0.0 : mae_task(interp_preds, interp_heldout);
        run.mae_extrapolation_pct =
            extrap_heldout.empty() ? 0.0 : mae_task(extrap_preds, extrap_heldout);
        report.runs.push_back(std::move(run));
    }

    for (const RunResult& run : report.runs) {
        report.mean_interpolation_pct += run.mae_interpolation_pct;
        report.mean_extrapolation_pct += run.mae_extrapolation_pct;
        report.mean_token_cost += run.token_cost;
    }
    const double n_runs = static_cast<double>(report.runs.size());
    report.mean_interpolation_pct /= n_runs;
    report.mean_extrapolation_pct /= n_runs;
    report.mean_token_cost /= n_runs;
    return report;
}

struct CostProfile {
    double base_tokens = 400.0;   // median per-item token cost
    double task_sigma = 0.8;      // log-scale spread of per-task cost scales
    double item_sigma = 0.4;      // log-scale spread of items within a task
    double input_fraction = 0.6;  // share of an item's tokens billed as input
};

struct SyntheticWorld {
    RecordStore store;
    std::map<std::string, AbilityVector> true_abilities;
    std::map<std::string, ItemParams> true_items;
    std::map<std::string, double> item_tokens;
    int k = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string padded(const std::string& prefix, int value, int width) {
    std::string digits = std::to_string(value);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return prefix + digits;
}

}  // namespace detail

// Generates a complete response matrix from a nested MIRT ground truth:
// abilities N(0, I), per-task sparse loadings on 1 or 2 specific factors,
// difficulties N(0, 1), discriminations log-normal(0, 0.3) within bounds, and
// per-item token costs log-normal around a per-task scale.
inline SyntheticWorld synthesize(int n_models, int n_tasks, int items_per_task, int k,
                                 const CostProfile& cost, std::uint64_t seed) {
    if (n_models <= 0 || n_tasks <= 0 || items_per_task <= 0 || k < 0)
        fail("config", "synthetic world dimensions must be positive");

    SyntheticWorld world;
    world.k = k;
    world.seed = seed;
    Rng ability_rng = Rng(seed).derive(1);
    Rng item_rng = Rng(seed).derive(2);
    Rng cost_rng = Rng(seed).derive(3);
    Rng response_rng = Rng(seed).derive(4);

    for (int m = 0; m < n_models; ++m) {
        AbilityVector a;
        a.theta_g = ability_rng.normal();
        a.theta = Vector(k);
        for (int d = 0; d < k; ++d) a.theta(d) = ability_rng.normal();
        world.true_abilities.emplace(detail::padded("model-", m, 3), std::move(a));
    }

    for (int t = 0; t < n_tasks; ++t) {
        const std::string task = detail::padded("task-", t, 3);
        // Each task loads on one or two specific factors with its own weight.
        std::vector<int> active;
        std::vector<double> weight;
        if (k > 0) {
            active.push_back(static_cast<int>(item_rng.below(static_cast<std::uint64_t>(k))));
            if (k > 1 && item_rng.bernoulli(0.5)) {
                int second = static_cast<int>(item_rng.below(static_cast<std::uint64_t>(k)));
                while (second == active[0])
                    second = static_cast<int>(item_rng.below(static_cast<std::uint64_t>(k)));
                active.push_back(second);
            }
            for (std::size_t i = 0; i < active.size(); ++i)
                weight.push_back(item_rng.uniform(0.4, 1.2));
        }
        const double task_scale = cost.base_tokens * cost_rng.lognormal(0.0, cost.task_sigma);

        for (int x = 0; x < items_per_task; ++x) {
            const std::string item = task + "/" + detail::padded("item-", x, 4);
            ItemParams params;
            params.delta = item_rng.normal();
            params.alpha = std::clamp(item_rng.lognormal(0.0, 0.3), 0.05, 20.0);
            params.loadings = Vector::Zero(k);
            for (std::size_t i = 0; i < active.size(); ++i)
                params.loadings(active[i]) = weight[i] + item_rng.normal(0.0, 0.1);

            const double tokens = std::max(2.0, task_scale * cost_rng.lognormal(0.0, cost.item_sigma));
            world.item_tokens[item] = tokens;
            const auto input = static_cast<std::int64_t>(tokens * cost.input_fraction);
            const auto output = std::max<std::int64_t>(1, static_cast<std::int64_t>(tokens) - input);

            for (const auto& [model, ability] : world.true_abilities) {
                Record r;
                r.model_id = model;
                r.dataset_id = "synthetic";
                r.task_id = task;
                r.item_id = item;
                r.correct = response_rng.bernoulli(predict_prob(ability, params));
                r.input_tokens = input;
                r.output_tokens = output;
                world.store.add(r);
            }
            world.true_items.emplace(item, std::move(params));
        }
    }
    return world;
}

struct FactorScreen {
    std::vector<double> eigenvalues;          // descending
    std::vector<double> variance_explained;   // eigenvalue / trace
    std::vector<double> threshold;            // 95th percentile per rank
    int suggested_k = 0;
    std::vector<std::string> warnings;
};

// Eigen-decomposes the model-by-model correlation of the train response
// matrix and compares against eigenvalues of column-permuted matrices
// (parallel analysis at the 95th percentile). suggested_k counts the leading
// real eigenvalues above their rank's threshold.
template <typename ModelSet>
FactorScreen factor_screen(const RecordStore& store, const ModelSet& train_models, int n_shuffles,
                           std::uint64_t seed) {
    std::vector<std::string> models;
    for (const auto& m : store.models())
        if (train_models.count(m) > 0) models.push_back(m);
    const int n = static_cast<int>(models.size());
    if (n < 2) fail("insufficient-data", "factor screening requires at least 2 train models");
    if (n_shuffles <= 0) fail("config", "parallel analysis needs a positive shuffle count");

    FactorScreen screen;
    const std::vector<std::string> items = store.items();
    std::map<std::string, int> model_index;
    for (int i = 0; i < n; ++i) model_index[models[i]] = i;

    // Response matrix with column-mean imputation for missing pairs.
    std::vector<std::string> kept_items;
    for (const auto& item : items) {
        bool any = false;
        for (std::size_t idx : store.by_item(item)) {
            if (model_index.count(store.record(idx).model_id) > 0) {
                any = true;
                break;
            }
        }
        if (any) kept_items.push_back(item);
    }
    const int p = static_cast<int>(kept_items.size());
    if (p == 0) fail("missing-data", "no items answered by the train models");

    Eigen::MatrixXd responses(n, p);
    std::size_t imputed = 0;
    {
        std::map<std::string, int> item_index;
        for (int j = 0; j < p; ++j) item_index[kept_items[j]] = j;
        Eigen::MatrixXd present = Eigen::MatrixXd::Zero(n, p);
        responses.setZero();
        for (const Record& r : store.records()) {
            auto mi = model_index.find(r.model_id);
            auto xi = item_index.find(r.item_id);
            if (mi == model_index.end() || xi == item_index.end()) continue;
            responses(mi->second, xi->second) = r.correct;
            present(mi->second, xi->second) = 1.0;
        }
        for (int j = 0; j < p; ++j) {
            const double count = present.col(j).sum();
            const double mean = responses.col(j).sum() / count;
            for (int i = 0; i < n; ++i) {
                if (present(i, j) == 0.0) {
                    responses(i, j) = mean;
                    ++imputed;
                }
            }
        }
    }
    if (imputed > 0)
        screen.warnings.push_back("mean-imputed " + std::to_string(imputed) +
                                  " missing responses for screening");

    auto correlation_eigenvalues = [n, p](const Eigen::MatrixXd& mat) {
        Eigen::VectorXd mean = mat.rowwise().mean();
        Eigen::MatrixXd centered = mat.colwise() - mean;
        Eigen::VectorXd sd = (centered.array().square().rowwise().sum() / p).sqrt();
        for (int i = 0; i < n; ++i)
            if (sd(i) < 1e-12) sd(i) = 1.0;  // constant row: zero correlation
        Eigen::MatrixXd corr = (centered * centered.transpose()) / static_cast<double>(p);
        corr = sd.cwiseInverse().asDiagonal() * corr * sd.cwiseInverse().asDiagonal();
        for (int i = 0; i < n; ++i) corr(i, i) = 1.0;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
        return Eigen::VectorXd(eig.eigenvalues().reverse());
    };

    const Eigen::VectorXd real_eigs = correlation_eigenvalues(responses);
    screen.eigenvalues.assign(real_eigs.data(), real_eigs.data() + n);
    const double trace = real_eigs.sum();
    for (double v : screen.eigenvalues) screen.variance_explained.push_back(v / trace);

    // Null distribution: permute each item column independently.
    std::vector<std::vector<double>> null_eigs(n);
    Rng rng = Rng(seed).derive(0x9a11);
    Eigen::MatrixXd shuffled = responses;
    std::vector<int> order(n);
    for (int s = 0; s < n_shuffles; ++s) {
        for (int j = 0; j < p; ++j) {
            for (int i = 0; i < n; ++i) order[i] = i;
            rng.shuffle(order);
            for (int i = 0; i < n; ++i) shuffled(i, j) = responses(order[i], j);
        }
        const Eigen::VectorXd eigs = correlation_eigenvalues(shuffled);
        for (int r = 0; r < n; ++r) null_eigs[r].push_back(eigs(r));
    }
    for (int r = 0; r < n; ++r) {
        std::sort(null_eigs[r].begin(), null_eigs[r].end());
        const auto idx = static_cast<std::size_t>(
            std::ceil(0.95 * static_cast<double>(n_shuffles)) - 1);
        screen.threshold.push_back(null_eigs[r][std::min(idx, null_eigs[r].size() - 1)]);
    }
    for (int r = 0; r < n; ++r) {
        if (screen.eigenvalues[r] > screen.threshold[r])
            ++screen.suggested_k;
        else
            break;
    }
    return screen;
}

inline nlohmann::ordered_json report_to_json(const Report& report) {
    nlohmann::ordered_json j;
    j["paradigm"] = paradigm_to_string(report.kind);
    j["budget"] = report.n;
    j["strategy"] = report.strategy;
    j["assessor"] = report.assessor;
    j["adaptive"] = report.adaptive;
    j["cost_discount"] = report.cost_discount;
    j["mean_mae_interpolation_pct"] = report.mean_interpolation_pct;
    j["mean_mae_extrapolation_pct"] = report.mean_extrapolation_pct;
    j["mean_token_cost"] = report.mean_token_cost;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const RunResult& run : report.runs) {
        nlohmann::ordered_json rj;
        rj["seed"] = run.seed;
        rj["mae_interpolation_pct"] = run.mae_interpolation_pct;
        rj["mae_extrapolation_pct"] = run.mae_extrapolation_pct;
        rj["token_cost"] = run.token_cost;
        nlohmann::ordered_json cells = nlohmann::ordered_json::array();
        for (const CellResult& cell : run.cells) {
            cells.push_back({{"model", cell.model_id},
                             {"task", cell.task_id},
                             {"predicted", cell.predicted},
                             {"empirical", cell.empirical},
                             {"extrapolation", cell.extrapolation}});
        }
        rj["cells"] = std::move(cells);
        nlohmann::ordered_json traces = nlohmann::ordered_json::object();
        for (const auto& [model, entries] : run.traces) {
            nlohmann::ordered_json tj = nlohmann::ordered_json::array();
            for (const TraceEntry& e : entries) {
                tj.push_back({{"step", e.step},
                              {"item", e.item_id},
                              {"score", e.score},
                              {"tau_bar", std::isfinite(e.tau_bar) ? nlohmann::ordered_json(e.tau_bar)
                                                                   : nlohmann::ordered_json(nullptr)},
                              {"cum_tokens", e.cum_tokens}});
            }
            traces[model] = std::move(tj);
        }
        rj["traces"] = std::move(traces);
        runs.push_back(std::move(rj));
    }
    j["runs"] = std::move(runs);
    return j;
}

// Tabular export: one row per run with the budget, spend, and MAE columns.
inline std::string report_to_csv(const Report& report) {
    std::ostringstream out;
    out << "step,N,tokens,mae_interpolation,mae_extrapolation\n";
    int step = 0;
    for (const RunResult& run : report.runs) {
        out << step++ << ',' << report.n << ',' << nlohmann::json(run.token_cost).dump() << ','
            << nlohmann::json(run.mae_interpolation_pct).dump() << ','
            << nlohmann::json(run.mae_extrapolation_pct).dump() << '\n';
    }
    return out.str();
}

}  // namespace irtkit
