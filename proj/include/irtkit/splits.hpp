#pragma once

// Reproducible train/test model partitions and calibration/extrapolation
// task partitions, with per-task held-out item sets. Held-out items are the
// only items metrics are computed on and must never be observed by an
// assessor.

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irtkit/error.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"

namespace irtkit {

struct SplitPlan {
    std::set<std::string> train_models;
    std::set<std::string> test_models;
    std::set<std::string> calibration_tasks;
    std::set<std::string> extrapolation_tasks;
    // Only tasks holding the full requested holdout appear here; smaller
    // tasks stay selectable for calibration but are dropped from metrics.
    std::map<std::string, std::set<std::string>> heldout_items;
    int heldout_per_task = 128;
    std::uint64_t seed = 0;

    bool operator==(const SplitPlan&) const = default;

    bool is_heldout(const std::string& task_id, const std::string& item_id) const {
        auto it = heldout_items.find(task_id);
        return it != heldout_items.end() && it->second.count(item_id) > 0;
    }
};

// Uniform random partition of models and tasks under `seed`, plus a
// without-replacement holdout sample per task. Deterministic for fixed
// inputs: ids are sorted before shuffling.
inline SplitPlan make_splits(const RecordStore& store, int n_test_models, int n_calibration_tasks,
                             int heldout_per_task, std::uint64_t seed) {
    const std::vector<std::string> models = store.models();
    const std::vector<std::string> tasks = store.tasks();
    if (n_test_models < 0 || n_calibration_tasks < 0 || heldout_per_task < 0)
        fail("capacity", "split counts must be non-negative");
    if (static_cast<std::size_t>(n_test_models) > models.size())
        fail("capacity", "requested " + std::to_string(n_test_models) + " test models but only " +
                             std::to_string(models.size()) + " models available");
    if (static_cast<std::size_t>(n_calibration_tasks) > tasks.size())
        fail("capacity", "requested " + std::to_string(n_calibration_tasks) +
                             " calibration tasks but only " + std::to_string(tasks.size()) +
                             " tasks available");

    Rng rng(seed);
    SplitPlan plan;
    plan.seed = seed;
    plan.heldout_per_task = heldout_per_task;

    std::vector<std::string> shuffled_models = models;
    rng.derive(1).shuffle(shuffled_models);
    for (std::size_t i = 0; i < shuffled_models.size(); ++i) {
        if (i < static_cast<std::size_t>(n_test_models))
            plan.test_models.insert(shuffled_models[i]);
        else
            plan.train_models.insert(shuffled_models[i]);
    }

    std::vector<std::string> shuffled_tasks = tasks;
    rng.derive(2).shuffle(shuffled_tasks);
    for (std::size_t i = 0; i < shuffled_tasks.size(); ++i) {
        if (i < static_cast<std::size_t>(n_calibration_tasks))
            plan.calibration_tasks.insert(shuffled_tasks[i]);
        else
            plan.extrapolation_tasks.insert(shuffled_tasks[i]);
    }

    Rng holdout_rng = rng.derive(3);
    for (const auto& task : tasks) {
        const std::vector<std::string> items = store.items_of_task(task);
        if (items.size() < static_cast<std::size_t>(heldout_per_task)) continue;
        auto picked = holdout_rng.sample(items, static_cast<std::size_t>(heldout_per_task));
        plan.heldout_items[task] = std::set<std::string>(picked.begin(), picked.end());
    }
    return plan;
}

inline nlohmann::ordered_json split_plan_to_json(const SplitPlan& plan) {
    nlohmann::ordered_json j;
    j["seed"] = plan.seed;
    j["heldout_per_task"] = plan.heldout_per_task;
    j["train_models"] = plan.train_models;
    j["test_models"] = plan.test_models;
    j["calibration_tasks"] = plan.calibration_tasks;
    j["extrapolation_tasks"] = plan.extrapolation_tasks;
    nlohmann::ordered_json held;
    for (const auto& [task, items] : plan.heldout_items) held[task] = items;
    j["heldout_items"] = std::move(held);
    return j;
}

inline SplitPlan split_plan_from_json(const nlohmann::json& j) {
    SplitPlan plan;
    try {
        plan.seed = j.at("seed").get<std::uint64_t>();
        plan.heldout_per_task = j.at("heldout_per_task").get<int>();
        plan.train_models = j.at("train_models").get<std::set<std::string>>();
        plan.test_models = j.at("test_models").get<std::set<std::string>>();
        plan.calibration_tasks = j.at("calibration_tasks").get<std::set<std::string>>();
        plan.extrapolation_tasks = j.at("extrapolation_tasks").get<std::set<std::string>>();
        for (const auto& [task, items] : j.at("heldout_items").items())
            plan.heldout_items[task] = items.get<std::set<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        fail("parse", std::string("invalid split plan: ") + e.what());
    }
    return plan;
}

}  // namespace irtkit
