#pragma once

// Command-line front end. Subcommands: ingest, fit, calibrate, select,
// evaluate, simulate, screen. Every option can come from a --config JSON
// file; explicit flags win over config values, which win over defaults.
// Outputs are written atomically and embed the resolved configuration.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "irtkit/baselines.hpp"
#include "irtkit/config.hpp"
#include "irtkit/error.hpp"
#include "irtkit/fit.hpp"
#include "irtkit/harness.hpp"
#include "irtkit/model_io.hpp"
#include "irtkit/records.hpp"
#include "irtkit/selection.hpp"
#include "irtkit/splits.hpp"

namespace irtkit {
namespace cli {

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    std::istringstream in(text);
    while (std::getline(in, current, ',')) {
        if (!current.empty()) out.push_back(current);
    }
    return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& part : split_list(text)) {
        try {
            seeds.push_back(std::stoull(part));
        } catch (const std::exception&) {
            fail("config", "invalid seed '" + part + "' in seed list");
        }
    }
    if (seeds.empty()) fail("config", "seed list is empty");
    return seeds;
}

inline RecordStore load_store(const std::string& path) {
    std::ifstream in(resolve_path(path));
    if (!in) fail("io", "cannot open records file '" + path + "'");
    RecordStore store = ingest_records(in);
    for (const auto& warning : store.warnings()) std::cerr << "warning: " << warning << "\n";
    return store;
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(resolve_path(path));
    if (!in) fail("io", "cannot open '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        fail("parse", "'" + path + "': " + e.what());
    }
}

inline nlohmann::ordered_json provenance(const std::string& command,
                                         nlohmann::ordered_json config) {
    nlohmann::ordered_json p;
    p["command"] = command;
    p["config"] = std::move(config);
    return p;
}

inline CLI::App* find_subcommand(CLI::App& app, const std::string& name) {
    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        if (sub->get_name() == name) return sub;
    return nullptr;
}

inline std::string safe_file_component(const std::string& text) {
    std::string out = text;
    for (char& c : out)
        if (std::isalnum(static_cast<unsigned char>(c)) == 0 && c != '.' && c != '_' && c != '-')
            c = '_';
    return out;
}

// Settings structs, one per subcommand. Defaults here are the single source
// of truth for both the CLI and config files.

struct SimulateArgs {
    int models = 20;
    int tasks = 8;
    int items_per_task = 200;
    int k = 3;
    std::uint64_t seed = 0;
    double base_tokens = 400.0;
    double task_sigma = 0.8;
    double item_sigma = 0.4;
    double input_fraction = 0.6;
    std::string output;
    std::string truth;
};

struct IngestArgs {
    std::string input;  // comma-separated list
    std::string output;
};

struct FitArgs {
    std::string records;
    std::string plan;
    std::string train_models;  // comma-separated; empty = all models
    int k = 3;
    double lambda_nested = 1.0;
    double lambda_l1 = 0.01;
    double clip_eps = 1e-10;
    bool alpha_fixed = false;
    double alpha_min = 0.05;
    double alpha_max = 20.0;
    int max_outer = 1000;
    double rel_tol = 1e-9;
    std::uint64_t seed = 0;
    std::string output;
};

struct CalibrateArgs {
    std::string model;
    std::string observations;
    std::string target_model;
    int max_steps = 100;
    std::string output;
};

struct SelectArgs {
    std::string model;
    std::string records;
    std::string plan;
    std::string strategy = "voptimal";
    int budget = 16;
    bool adaptive = false;
    bool cost_discount = false;
    std::string targets = "both";
    std::string target_model;
    std::uint64_t seed = 0;
    std::string output;
};

struct EvaluateArgs {
    std::string records;
    std::string plan;
    std::string model;
    int test_models = 10;
    int calibration_tasks = 4;
    int heldout_per_task = 128;
    std::uint64_t split_seed = 0;
    int partitions = 1;
    std::string paradigm = "prediction";
    std::string strategy = "random";
    int budget = 16;
    std::string assessor = "mirt";
    bool cost_discount = false;
    std::string targets = "both";
    std::string seeds = "0";
    int k = 3;
    double lambda_nested = 1.0;
    double lambda_l1 = 0.01;
    double clip_eps = 1e-10;
    bool alpha_fixed = false;
    int max_outer = 1000;
    double rel_tol = 1e-9;
    std::uint64_t fit_seed = 0;
    double shrink_lambda = 5.0;
    double ridge_penalty = 1.0;
    int jobs = 1;
    std::string output_dir;
};

struct ScreenArgs {
    std::string records;
    std::string train_models;  // empty = all
    int shuffles = 100;
    std::uint64_t seed = 0;
    std::string output;
};

inline LossConfig make_loss_config(double lambda_nested, double lambda_l1, double clip_eps) {
    LossConfig cfg;
    cfg.lambda_nested = lambda_nested;
    cfg.lambda_l1 = lambda_l1;
    cfg.clip_eps = clip_eps;
    cfg.validate();
    return cfg;
}

inline int cmd_simulate(const SimulateArgs& args) {
    CostProfile cost;
    cost.base_tokens = args.base_tokens;
    cost.task_sigma = args.task_sigma;
    cost.item_sigma = args.item_sigma;
    cost.input_fraction = args.input_fraction;
    const SyntheticWorld world =
        synthesize(args.models, args.tasks, args.items_per_task, args.k, cost, args.seed);

    std::ostringstream lines;
    serialize_records(world.store, lines);
    write_file_atomic(args.output, lines.str());

    nlohmann::ordered_json config{{"models", args.models},
                                  {"tasks", args.tasks},
                                  {"items_per_task", args.items_per_task},
                                  {"k", args.k},
                                  {"seed", args.seed},
                                  {"base_tokens", args.base_tokens},
                                  {"task_sigma", args.task_sigma},
                                  {"item_sigma", args.item_sigma},
                                  {"input_fraction", args.input_fraction},
                                  {"output", args.output},
                                  {"truth", args.truth}};
    nlohmann::ordered_json meta;
    meta["provenance"] = provenance("simulate", config);
    meta["records"] = world.store.size();
    write_file_atomic(args.output + ".meta.json", meta.dump(2) + "\n");

    if (!args.truth.empty()) {
        nlohmann::ordered_json truth;
        truth["provenance"] = provenance("simulate", config);
        truth["k"] = world.k;
        truth["seed"] = world.seed;
        nlohmann::ordered_json abilities = nlohmann::ordered_json::object();
        for (const auto& [id, a] : world.true_abilities) {
            abilities[id] = {{"theta_g", a.theta_g}, {"theta", detail::vector_to_json(a.theta)}};
        }
        truth["abilities"] = std::move(abilities);
        nlohmann::ordered_json items = nlohmann::ordered_json::object();
        for (const auto& [id, p] : world.true_items) {
            items[id] = {{"alpha", p.alpha},
                         {"delta", p.delta},
                         {"loadings", detail::vector_to_json(p.loadings)},
                         {"tokens", world.item_tokens.at(id)}};
        }
        truth["items"] = std::move(items);
        write_file_atomic(args.truth, truth.dump(2) + "\n");
    }
    std::cerr << "wrote " << world.store.size() << " records to " << args.output << "\n";
    return 0;
}

inline int cmd_ingest(const IngestArgs& args) {
    RecordStore store;
    std::set<std::string> unknown;
    for (const auto& path : split_list(args.input)) {
        std::ifstream in(resolve_path(path));
        if (!in) fail("io", "cannot open records file '" + path + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
            store.add(parse_record_line(line, line_no, &unknown));
        }
    }
    if (store.empty()) fail("missing-data", "no records ingested");
    for (const auto& field : unknown)
        std::cerr << "warning: ignoring unknown field '" << field << "'\n";

    std::ostringstream lines;
    serialize_records(store, lines);
    write_file_atomic(args.output, lines.str());

    nlohmann::ordered_json meta;
    meta["provenance"] =
        provenance("ingest", {{"input", args.input}, {"output", args.output}});
    meta["records"] = store.size();
    meta["models"] = store.models().size();
    meta["tasks"] = store.tasks().size();
    meta["items"] = store.items().size();
    nlohmann::ordered_json warn = nlohmann::ordered_json::array();
    for (const auto& field : unknown) warn.push_back("unknown field '" + field + "'");
    meta["warnings"] = std::move(warn);
    write_file_atomic(args.output + ".meta.json", meta.dump(2) + "\n");
    std::cerr << "ingested " << store.size() << " records from " << store.models().size()
              << " models\n";
    return 0;
}

inline std::set<std::string> resolve_train_models(const RecordStore& store,
                                                  const std::string& train_models,
                                                  const std::string& plan_path) {
    if (!plan_path.empty()) {
        const SplitPlan plan = split_plan_from_json(load_json(plan_path));
        return plan.train_models;
    }
    if (!train_models.empty()) {
        const auto listed = split_list(train_models);
        return {listed.begin(), listed.end()};
    }
    const auto all = store.models();
    return {all.begin(), all.end()};
}

inline nlohmann::ordered_json fit_config_echo(const FitArgs& args) {
    return {{"records", args.records},
            {"plan", args.plan},
            {"train_models", args.train_models},
            {"k", args.k},
            {"lambda_nested", args.lambda_nested},
            {"lambda_l1", args.lambda_l1},
            {"clip_eps", args.clip_eps},
            {"alpha_fixed", args.alpha_fixed},
            {"alpha_min", args.alpha_min},
            {"alpha_max", args.alpha_max},
            {"max_outer", args.max_outer},
            {"rel_tol", args.rel_tol},
            {"seed", args.seed},
            {"output", args.output}};
}

inline int cmd_fit(const FitArgs& args) {
    const RecordStore store = load_store(args.records);
    const std::set<std::string> train = resolve_train_models(store, args.train_models, args.plan);
    const LossConfig cfg = make_loss_config(args.lambda_nested, args.lambda_l1, args.clip_eps);
    FitOptions options;
    options.max_outer_steps = args.max_outer;
    options.rel_tol = args.rel_tol;
    options.alpha_min = args.alpha_min;
    options.alpha_max = args.alpha_max;
    options.alpha_fixed = args.alpha_fixed;

    const FittedModel fitted = fit_joint(store, train, args.k, cfg, args.seed, options);

    nlohmann::ordered_json out;
    out["provenance"] = provenance("fit", fit_config_echo(args));
    out["model"] = fitted_model_to_json(fitted);
    write_file_atomic(args.output, out.dump(2) + "\n");
    std::cerr << "fitted " << fitted.item_params.size() << " items, "
              << fitted.abilities.size() << " abilities in " << fitted.meta.outer_iterations
              << " outer steps\n";
    return 0;
}

inline FittedModel load_fitted_model(const std::string& path) {
    nlohmann::json j = load_json(path);
    if (j.contains("model")) j = j.at("model");
    return fitted_model_from_json(j);
}

inline int cmd_calibrate(const CalibrateArgs& args) {
    const FittedModel fitted = load_fitted_model(args.model);
    const RecordStore observations = load_store(args.observations);

    std::string target = args.target_model;
    if (target.empty()) {
        const auto models = observations.models();
        if (models.size() != 1)
            fail("config", "observations hold " + std::to_string(models.size()) +
                               " models; pass --target-model");
        target = models[0];
    }
    if (!observations.has_model(target))
        fail("missing-data", "no observations for model '" + target + "'");

    std::vector<Record> observed;
    for (std::size_t idx : observations.by_model(target))
        observed.push_back(observations.record(idx));

    const EmpiricalPrior prior = empirical_prior(fitted);
    const AbilityVector ability = map_calibrate(fitted, prior, observed, args.max_steps);

    nlohmann::ordered_json out;
    out["provenance"] = provenance("calibrate", {{"model", args.model},
                                                 {"observations", args.observations},
                                                 {"target_model", target},
                                                 {"max_steps", args.max_steps},
                                                 {"output", args.output}});
    out["model_id"] = target;
    out["n_observed"] = observed.size();
    out["ability"] = {{"theta_g", ability.theta_g}, {"theta", detail::vector_to_json(ability.theta)}};
    write_file_atomic(args.output, out.dump(2) + "\n");
    std::cerr << "calibrated '" << target << "' from " << observed.size() << " observations\n";
    return 0;
}

inline int cmd_select(const SelectArgs& args) {
    const FittedModel fitted = load_fitted_model(args.model);
    const RecordStore store = load_store(args.records);
    const Strategy strategy = strategy_from_string(args.strategy);
    if (args.budget <= 0) fail("config", "selection budget must be positive");
    const PredictionTargets targets = args.targets == "extrapolation"
                                          ? PredictionTargets::extrapolation
                                          : PredictionTargets::both;
    if (args.targets != "both" && args.targets != "extrapolation")
        fail("config", "targets must be 'both' or 'extrapolation'");
    if (args.adaptive && args.target_model.empty())
        fail("config", "adaptive selection needs --target-model to replay responses");

    SplitPlan plan;
    bool have_plan = false;
    if (!args.plan.empty()) {
        plan = split_plan_from_json(load_json(args.plan));
        have_plan = true;
    }
    if (targets == PredictionTargets::extrapolation && !have_plan)
        fail("config", "targets=extrapolation needs a --plan naming extrapolation tasks");

    const std::set<std::string> train = have_plan
                                            ? plan.train_models
                                            : [&] {
                                                  const auto all = store.models();
                                                  return std::set<std::string>(all.begin(),
                                                                               all.end());
                                              }();
    const TokenStats token_stats(store, train);
    std::map<std::string, std::string> item_task;
    for (const auto& item : store.items()) item_task[item] = store.task_of(item);

    const bool needs_params = strategy == Strategy::fisher || strategy == Strategy::voptimal ||
                              strategy == Strategy::anchor_irt;
    std::set<std::string> candidates;
    for (const auto& item : store.items()) {
        const std::string& task = item_task.at(item);
        if (have_plan) {
            if (plan.calibration_tasks.count(task) == 0) continue;
            if (plan.is_heldout(task, item)) continue;
        }
        if (needs_params && !fitted.has_item(item)) continue;
        if (args.adaptive && !store.has_pair(args.target_model, item)) continue;
        candidates.insert(item);
    }
    if (candidates.size() < static_cast<std::size_t>(args.budget))
        fail("exhausted", "budget " + std::to_string(args.budget) + " exceeds the " +
                              std::to_string(candidates.size()) + " candidate items");

    SelectorSpec selector;
    selector.strategy = strategy;
    selector.adaptive = args.adaptive;
    selector.cost_discount = args.cost_discount;
    selector.seed = args.seed;

    const EmpiricalPrior prior = empirical_prior(fitted);
    PredictionMatrix m;
    m.m = Matrix::Zero(fitted.k + 1, fitted.k + 1);
    if (strategy == Strategy::voptimal) {
        std::set<std::string> target_items;
        for (const auto& kv : fitted.item_params) {
            const std::string& item = kv.first;
            if (targets == PredictionTargets::extrapolation) {
                auto it = item_task.find(item);
                if (it == item_task.end() || plan.extrapolation_tasks.count(it->second) == 0)
                    continue;
            }
            target_items.insert(item);
        }
        m = prediction_matrix(fitted, target_items);
    }

    std::vector<TraceEntry> trace;
    std::vector<std::string> picked;
    if (strategy == Strategy::anchor_binary || strategy == Strategy::anchor_irt) {
        const auto rep = strategy == Strategy::anchor_binary ? AnchorRepresentation::binary
                                                             : AnchorRepresentation::irt;
        picked = anchor_select(candidates, rep, fitted, store, args.budget, args.seed);
        for (std::size_t i = 0; i < picked.size(); ++i) {
            TraceEntry e;
            e.step = static_cast<int>(i + 1);
            e.item_id = picked[i];
            e.tau_bar = token_stats.cost_or_inf(picked[i]);
            trace.push_back(e);
        }
    } else {
        SelectionState session;
        session.c = prior.sigma;
        session.current_ability = args.adaptive ? AbilityVector::from_stacked(prior.mu)
                                                : static_reference_ability(fitted);
        std::vector<Record> observed;
        for (int step = 0; step < args.budget; ++step) {
            const SelectionChoice choice =
                select_next(session, selector, candidates, fitted, m, token_stats, item_task);
            candidates.erase(choice.item_id);
            session.selected.push_back(choice.item_id);
            picked.push_back(choice.item_id);

            TraceEntry e;
            e.step = step + 1;
            e.item_id = choice.item_id;
            e.score = choice.score;
            e.tau_bar = token_stats.cost_or_inf(choice.item_id);
            if (args.adaptive) {
                const Record* rec = store.find(args.target_model, choice.item_id);
                if (rec == nullptr)
                    fail("missing-data", "no record for model '" + args.target_model +
                                             "' item '" + choice.item_id + "'");
                observed.push_back(*rec);
                session.current_ability = map_calibrate(fitted, prior, observed);
                session.token_spent = eval_token_cost(observed);
            }
            e.cum_tokens = session.token_spent;
            if (fitted.has_item(choice.item_id))
                session = woodbury_update(session, fitted.item_params.at(choice.item_id),
                                          session.current_ability);
            trace.push_back(e);
        }
    }

    nlohmann::ordered_json out;
    out["provenance"] = provenance("select", {{"model", args.model},
                                              {"records", args.records},
                                              {"plan", args.plan},
                                              {"strategy", args.strategy},
                                              {"budget", args.budget},
                                              {"adaptive", args.adaptive},
                                              {"cost_discount", args.cost_discount},
                                              {"targets", args.targets},
                                              {"target_model", args.target_model},
                                              {"seed", args.seed},
                                              {"output", args.output}});
    out["items"] = picked;
    nlohmann::ordered_json tj = nlohmann::ordered_json::array();
    for (const TraceEntry& e : trace) {
        tj.push_back({{"step", e.step},
                      {"item", e.item_id},
                      {"score", e.score},
                      {"tau_bar", std::isfinite(e.tau_bar) ? nlohmann::ordered_json(e.tau_bar)
                                                           : nlohmann::ordered_json(nullptr)},
                      {"cum_tokens", e.cum_tokens}});
    }
    out["trace"] = std::move(tj);
    write_file_atomic(args.output, out.dump(2) + "\n");
    std::cerr << "selected " << picked.size() << " items\n";
    return 0;
}

inline nlohmann::ordered_json evaluate_config_echo(const EvaluateArgs& args) {
    return {{"records", args.records},
            {"plan", args.plan},
            {"model", args.model},
            {"test_models", args.test_models},
            {"calibration_tasks", args.calibration_tasks},
            {"heldout_per_task", args.heldout_per_task},
            {"split_seed", args.split_seed},
            {"partitions", args.partitions},
            {"paradigm", args.paradigm},
            {"strategy", args.strategy},
            {"budget", args.budget},
            {"assessor", args.assessor},
            {"cost_discount", args.cost_discount},
            {"targets", args.targets},
            {"seeds", args.seeds},
            {"k", args.k},
            {"lambda_nested", args.lambda_nested},
            {"lambda_l1", args.lambda_l1},
            {"clip_eps", args.clip_eps},
            {"alpha_fixed", args.alpha_fixed},
            {"max_outer", args.max_outer},
            {"rel_tol", args.rel_tol},
            {"fit_seed", args.fit_seed},
            {"shrink_lambda", args.shrink_lambda},
            {"ridge_penalty", args.ridge_penalty},
            {"jobs", args.jobs},
            {"output_dir", args.output_dir}};
}

inline int cmd_evaluate(const EvaluateArgs& args) {
    if (args.partitions <= 0) fail("config", "partitions must be positive");
    if (args.jobs <= 0) fail("config", "jobs must be positive");
    if (!args.plan.empty() && args.partitions != 1)
        fail("config", "an explicit --plan runs a single partition");
    if (args.targets != "both" && args.targets != "extrapolation")
        fail("config", "targets must be 'both' or 'extrapolation'");

    const RecordStore store = load_store(args.records);

    ParadigmSpec spec;
    spec.kind = paradigm_from_string(args.paradigm);
    spec.n = args.budget;
    spec.selector.strategy = strategy_from_string(args.strategy);
    spec.selector.cost_discount = args.cost_discount;
    spec.assessor = assessor_from_string(args.assessor);
    spec.seeds = parse_seed_list(args.seeds);
    spec.targets = args.targets == "extrapolation" ? PredictionTargets::extrapolation
                                                   : PredictionTargets::both;
    spec.shrink_lambda = args.shrink_lambda;
    spec.ridge_penalty = args.ridge_penalty;

    const LossConfig cfg = make_loss_config(args.lambda_nested, args.lambda_l1, args.clip_eps);
    FitOptions options;
    options.max_outer_steps = args.max_outer;
    options.rel_tol = args.rel_tol;
    options.alpha_fixed = args.alpha_fixed;

    struct PartitionResult {
        SplitPlan plan;
        Report report;
    };
    std::vector<PartitionResult> results;

    for (int p = 0; p < args.partitions; ++p) {
        PartitionResult result;
        if (!args.plan.empty()) {
            result.plan = split_plan_from_json(load_json(args.plan));
        } else {
            result.plan = make_splits(store, args.test_models, args.calibration_tasks,
                                      args.heldout_per_task, args.split_seed + p);
        }

        FittedModel fitted;
        if (!args.model.empty()) {
            if (args.partitions != 1)
                fail("config", "a prefitted --model runs a single partition");
            fitted = load_fitted_model(args.model);
        } else {
            const int fit_k = spec.assessor == Assessor::irt2pl || spec.assessor == Assessor::irt1pl
                                  ? 0
                                  : args.k;
            FitOptions part_options = options;
            part_options.alpha_fixed = args.alpha_fixed || spec.assessor == Assessor::irt1pl;
            fitted = fit_joint(store, result.plan.train_models, fit_k, cfg,
                               args.fit_seed + static_cast<std::uint64_t>(p), part_options);
        }

        if (args.jobs == 1 || spec.seeds.size() == 1) {
            result.report = run_paradigm(result.plan, spec, fitted, store);
        } else {
            // Seeds are independent; run them in worker threads and merge in
            // seed order so the report is identical to the sequential one.
            std::vector<Report> partial(spec.seeds.size());
            std::vector<std::exception_ptr> errors(spec.seeds.size());
            std::vector<std::thread> workers;
            for (int w = 0; w < std::min<int>(args.jobs, static_cast<int>(spec.seeds.size())); ++w)
                workers.emplace_back([&, w] {
                    for (std::size_t i = static_cast<std::size_t>(w); i < spec.seeds.size();
                         i += static_cast<std::size_t>(args.jobs)) {
                        try {
                            ParadigmSpec one = spec;
                            one.seeds = {spec.seeds[i]};
                            partial[i] = run_paradigm(result.plan, one, fitted, store);
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                });
            for (auto& t : workers) t.join();
            for (const auto& err : errors)
                if (err) std::rethrow_exception(err);
            result.report = partial.front();
            result.report.runs.clear();
            result.report.mean_interpolation_pct = 0.0;
            result.report.mean_extrapolation_pct = 0.0;
            result.report.mean_token_cost = 0.0;
            for (const Report& r : partial)
                result.report.runs.push_back(r.runs.front());
            for (const RunResult& run : result.report.runs) {
                result.report.mean_interpolation_pct += run.mae_interpolation_pct;
                result.report.mean_extrapolation_pct += run.mae_extrapolation_pct;
                result.report.mean_token_cost += run.token_cost;
            }
            const double n_runs = static_cast<double>(result.report.runs.size());
            result.report.mean_interpolation_pct /= n_runs;
            result.report.mean_extrapolation_pct /= n_runs;
            result.report.mean_token_cost /= n_runs;
        }
        results.push_back(std::move(result));
    }

    // Trace files, one per (partition, seed, model); the report references
    // them instead of inlining.
    const std::string dir = args.output_dir.empty() ? "." : args.output_dir;
    nlohmann::ordered_json partitions = nlohmann::ordered_json::array();
    std::ostringstream csv;
    csv << "step,N,tokens,mae_interpolation,mae_extrapolation\n";
    int step = 0;
    double agg_interp = 0.0, agg_extrap = 0.0, agg_tokens = 0.0;
    for (std::size_t p = 0; p < results.size(); ++p) {
        Report& report = results[p].report;
        nlohmann::ordered_json pj = report_to_json(report);
        nlohmann::ordered_json& runs = pj.at("runs");
        for (std::size_t r = 0; r < report.runs.size(); ++r) {
            RunResult& run = report.runs[r];
            nlohmann::ordered_json refs = nlohmann::ordered_json::object();
            for (const auto& [model, entries] : run.traces) {
                std::ostringstream lines;
                for (const TraceEntry& e : entries) {
                    nlohmann::ordered_json ej{
                        {"step", e.step},
                        {"item", e.item_id},
                        {"score", e.score},
                        {"tau_bar", std::isfinite(e.tau_bar) ? nlohmann::ordered_json(e.tau_bar)
                                                             : nlohmann::ordered_json(nullptr)},
                        {"cum_tokens", e.cum_tokens}};
                    lines << ej.dump() << '\n';
                }
                const std::string name = "trace-p" + std::to_string(p) + "-s" +
                                         std::to_string(run.seed) + "-" +
                                         safe_file_component(model) + ".jsonl";
                write_file_atomic(dir + "/traces/" + name, lines.str());
                refs[model] = "traces/" + name;
            }
            runs[r]["traces"] = std::move(refs);
            csv << step++ << ',' << report.n << ',' << nlohmann::json(run.token_cost).dump()
                << ',' << nlohmann::json(run.mae_interpolation_pct).dump() << ','
                << nlohmann::json(run.mae_extrapolation_pct).dump() << '\n';
        }
        pj["split"] = split_plan_to_json(results[p].plan);
        partitions.push_back(std::move(pj));
        agg_interp += report.mean_interpolation_pct;
        agg_extrap += report.mean_extrapolation_pct;
        agg_tokens += report.mean_token_cost;
    }

    nlohmann::ordered_json out;
    out["provenance"] = provenance("evaluate", evaluate_config_echo(args));
    out["aggregate"] = {{"partitions", results.size()},
                        {"mean_mae_interpolation_pct", agg_interp / results.size()},
                        {"mean_mae_extrapolation_pct", agg_extrap / results.size()},
                        {"mean_token_cost", agg_tokens / results.size()}};
    out["partitions"] = std::move(partitions);
    write_file_atomic(dir + "/report.json", out.dump(2) + "\n");
    write_file_atomic(dir + "/report.csv", csv.str());
    std::cerr << "mean extrapolation MAE "
              << agg_extrap / static_cast<double>(results.size()) << "% over "
              << results.size() << " partition(s)\n";
    return 0;
}

inline int cmd_screen(const ScreenArgs& args) {
    const RecordStore store = load_store(args.records);
    const std::set<std::string> train = resolve_train_models(store, args.train_models, "");
    const FactorScreen screen = factor_screen(store, train, args.shuffles, args.seed);
    for (const auto& warning : screen.warnings) std::cerr << "warning: " << warning << "\n";

    nlohmann::ordered_json out;
    out["provenance"] = provenance("screen", {{"records", args.records},
                                              {"train_models", args.train_models},
                                              {"shuffles", args.shuffles},
                                              {"seed", args.seed},
                                              {"output", args.output}});
    out["eigenvalues"] = screen.eigenvalues;
    out["variance_explained"] = screen.variance_explained;
    out["threshold_95"] = screen.threshold;
    out["suggested_k"] = screen.suggested_k;
    out["warnings"] = screen.warnings;
    write_file_atomic(args.output, out.dump(2) + "\n");
    std::cerr << "suggested K = " << screen.suggested_k << "\n";
    return 0;
}

// Injects config-file values as synthetic argv tokens ahead of the user's
// flags; TakeLast multi-option policy makes explicit flags win.
inline std::vector<std::string> inject_config(CLI::App& app, const std::vector<std::string>& args) {
    std::string subcommand;
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (subcommand.empty() && !a.empty() && a[0] != '-') {
            subcommand = a;
            continue;
        }
        if (a == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
    }
    if (config_path.empty() || subcommand.empty()) return args;

    CLI::App* sub = find_subcommand(app, subcommand);
    if (sub == nullptr) return args;  // let CLI11 report the bad subcommand

    const nlohmann::json cfg = load_config_file(config_path);
    std::vector<std::string> option_names;
    for (const CLI::Option* o : sub->get_options())
        for (const std::string& lname : o->get_lnames()) option_names.push_back(lname);

    std::vector<std::string> injected;
    injected.push_back(subcommand);
    for (const auto& [key, value] : cfg.items()) {
        if (std::find(option_names.begin(), option_names.end(), key) == option_names.end()) {
            const std::string suggestion = nearest_key(key, option_names);
            fail("config", "unknown config key '" + key + "'" +
                               (suggestion.empty() ? "" : "; did you mean '" + suggestion + "'?"));
        }
        injected.push_back("--" + key);
        injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    // Re-append the original tokens minus the subcommand's first occurrence.
    bool skipped = false;
    for (const auto& a : args) {
        if (!skipped && a == subcommand) {
            skipped = true;
            continue;
        }
        injected.push_back(a);
    }
    return injected;
}

inline int run(int argc, char** argv) {
    CLI::App app{"Latent-ability estimation and adaptive item selection"};
    app.require_subcommand(1);

    auto opt = [](CLI::Option* o) { return o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast); };

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic world");
    std::string sim_config;
    opt(simulate->add_option("--config", sim_config, "JSON config file"));
    opt(simulate->add_option("--models", sim.models, "Number of models"));
    opt(simulate->add_option("--tasks", sim.tasks, "Number of tasks"));
    opt(simulate->add_option("--items-per-task", sim.items_per_task, "Items per task"));
    opt(simulate->add_option("--k", sim.k, "Specific factors"));
    opt(simulate->add_option("--seed", sim.seed, "World seed"));
    opt(simulate->add_option("--base-tokens", sim.base_tokens, "Median item token cost"));
    opt(simulate->add_option("--task-sigma", sim.task_sigma, "Per-task cost log-sd"));
    opt(simulate->add_option("--item-sigma", sim.item_sigma, "Within-task cost log-sd"));
    opt(simulate->add_option("--input-fraction", sim.input_fraction, "Input share of tokens"));
    opt(simulate->add_option("--output", sim.output, "Records output path")->required());
    opt(simulate->add_option("--truth", sim.truth, "Ground-truth output path"));

    IngestArgs ing;
    CLI::App* ingest = app.add_subcommand("ingest", "Validate and normalize record files");
    std::string ing_config;
    opt(ingest->add_option("--config", ing_config, "JSON config file"));
    opt(ingest->add_option("--input", ing.input, "Comma-separated record files")->required());
    opt(ingest->add_option("--output", ing.output, "Normalized output path")->required());

    FitArgs fit;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit item and ability parameters");
    std::string fit_config;
    opt(fit_cmd->add_option("--config", fit_config, "JSON config file"));
    opt(fit_cmd->add_option("--records", fit.records, "Records file")->required());
    opt(fit_cmd->add_option("--plan", fit.plan, "Split plan (train models)"));
    opt(fit_cmd->add_option("--train-models", fit.train_models, "Comma-separated train models"));
    opt(fit_cmd->add_option("--k", fit.k, "Specific factors"));
    opt(fit_cmd->add_option("--lambda-nested", fit.lambda_nested, "Nested loss weight"));
    opt(fit_cmd->add_option("--lambda-l1", fit.lambda_l1, "Loading L1 weight"));
    opt(fit_cmd->add_option("--clip-eps", fit.clip_eps, "Probability clip"));
    opt(fit_cmd->add_option("--alpha-fixed", fit.alpha_fixed, "Pin discriminations at 1"));
    opt(fit_cmd->add_option("--alpha-min", fit.alpha_min, "Discrimination lower bound"));
    opt(fit_cmd->add_option("--alpha-max", fit.alpha_max, "Discrimination upper bound"));
    opt(fit_cmd->add_option("--max-outer", fit.max_outer, "Outer iteration cap"));
    opt(fit_cmd->add_option("--rel-tol", fit.rel_tol, "Relative objective tolerance"));
    opt(fit_cmd->add_option("--seed", fit.seed, "Initialization seed"));
    opt(fit_cmd->add_option("--output", fit.output, "Model output path")->required());

    CalibrateArgs cal;
    CLI::App* calibrate = app.add_subcommand("calibrate", "MAP-estimate a new model's ability");
    std::string cal_config;
    opt(calibrate->add_option("--config", cal_config, "JSON config file"));
    opt(calibrate->add_option("--model", cal.model, "Fitted model file")->required());
    opt(calibrate->add_option("--observations", cal.observations, "Observed records")->required());
    opt(calibrate->add_option("--target-model", cal.target_model, "Model id to calibrate"));
    opt(calibrate->add_option("--max-steps", cal.max_steps, "Trust-region iteration cap"));
    opt(calibrate->add_option("--output", cal.output, "Ability output path")->required());

    SelectArgs sel;
    CLI::App* select = app.add_subcommand("select", "Choose calibration items");
    std::string sel_config;
    opt(select->add_option("--config", sel_config, "JSON config file"));
    opt(select->add_option("--model", sel.model, "Fitted model file")->required());
    opt(select->add_option("--records", sel.records, "Records file")->required());
    opt(select->add_option("--plan", sel.plan, "Split plan restricting candidates"));
    opt(select->add_option("--strategy", sel.strategy, "Selection strategy"));
    opt(select->add_option("--budget", sel.budget, "Items to select"));
    opt(select->add_option("--adaptive", sel.adaptive, "Recalibrate after each pick"));
    opt(select->add_option("--cost-discount", sel.cost_discount, "Divide scores by mean cost"));
    opt(select->add_option("--targets", sel.targets, "Prediction targets: both|extrapolation"));
    opt(select->add_option("--target-model", sel.target_model, "Model to replay adaptively"));
    opt(select->add_option("--seed", sel.seed, "Selection seed"));
    opt(select->add_option("--output", sel.output, "Selection output path")->required());

    EvaluateArgs ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "Run an evaluation paradigm");
    std::string ev_config;
    opt(evaluate->add_option("--config", ev_config, "JSON config file"));
    opt(evaluate->add_option("--records", ev.records, "Records file")->required());
    opt(evaluate->add_option("--plan", ev.plan, "Explicit split plan"));
    opt(evaluate->add_option("--model", ev.model, "Prefitted model file"));
    opt(evaluate->add_option("--test-models", ev.test_models, "Held-out model count"));
    opt(evaluate->add_option("--calibration-tasks", ev.calibration_tasks, "Calibration task count"));
    opt(evaluate->add_option("--heldout-per-task", ev.heldout_per_task, "Held-out items per task"));
    opt(evaluate->add_option("--split-seed", ev.split_seed, "First split seed"));
    opt(evaluate->add_option("--partitions", ev.partitions, "Cross-validation partitions"));
    opt(evaluate->add_option("--paradigm", ev.paradigm, "prediction|selection|adaptation"));
    opt(evaluate->add_option("--strategy", ev.strategy, "Selection strategy"));
    opt(evaluate->add_option("--budget", ev.budget, "Calibration item budget"));
    opt(evaluate->add_option("--assessor", ev.assessor, "Performance predictor"));
    opt(evaluate->add_option("--cost-discount", ev.cost_discount, "Divide scores by mean cost"));
    opt(evaluate->add_option("--targets", ev.targets, "Prediction targets: both|extrapolation"));
    opt(evaluate->add_option("--seeds", ev.seeds, "Comma-separated paradigm seeds"));
    opt(evaluate->add_option("--k", ev.k, "Specific factors"));
    opt(evaluate->add_option("--lambda-nested", ev.lambda_nested, "Nested loss weight"));
    opt(evaluate->add_option("--lambda-l1", ev.lambda_l1, "Loading L1 weight"));
    opt(evaluate->add_option("--clip-eps", ev.clip_eps, "Probability clip"));
    opt(evaluate->add_option("--alpha-fixed", ev.alpha_fixed, "Pin discriminations at 1"));
    opt(evaluate->add_option("--max-outer", ev.max_outer, "Outer iteration cap"));
    opt(evaluate->add_option("--rel-tol", ev.rel_tol, "Relative objective tolerance"));
    opt(evaluate->add_option("--fit-seed", ev.fit_seed, "Fit initialization seed"));
    opt(evaluate->add_option("--shrink-lambda", ev.shrink_lambda, "EB shrinkage strength"));
    opt(evaluate->add_option("--ridge-penalty", ev.ridge_penalty, "Ridge penalty"));
    opt(evaluate->add_option("--jobs", ev.jobs, "Parallel paradigm runs"));
    opt(evaluate->add_option("--output-dir", ev.output_dir, "Report directory")->required());

    ScreenArgs scr;
    CLI::App* screen = app.add_subcommand("screen", "Screen the factor count");
    std::string scr_config;
    opt(screen->add_option("--config", scr_config, "JSON config file"));
    opt(screen->add_option("--records", scr.records, "Records file")->required());
    opt(screen->add_option("--train-models", scr.train_models, "Comma-separated train models"));
    opt(screen->add_option("--shuffles", scr.shuffles, "Parallel-analysis permutations"));
    opt(screen->add_option("--seed", scr.seed, "Permutation seed"));
    opt(screen->add_option("--output", scr.output, "Screen output path")->required());

    const std::vector<std::string> raw(argv + 1, argv + argc);
    try {
        std::vector<std::string> args = inject_config(app, raw);
        // CLI11's vector overload consumes tokens from the back.
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);

        if (simulate->parsed()) return cmd_simulate(sim);
        if (ingest->parsed()) return cmd_ingest(ing);
        if (fit_cmd->parsed()) return cmd_fit(fit);
        if (calibrate->parsed()) return cmd_calibrate(cal);
        if (select->parsed()) return cmd_select(sel);
        if (evaluate->parsed()) return cmd_evaluate(ev);
        if (screen->parsed()) return cmd_screen(scr);
        fail("config", "no subcommand given");
    } catch (const CLI::CallForHelp&) {
        CLI::App* sub = raw.empty() ? nullptr : find_subcommand(app, raw.front());
        std::cout << (sub != nullptr ? sub->help() : app.help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error category=" << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cli
}  // namespace irtkit
