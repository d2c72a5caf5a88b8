#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "irtkit/error.hpp"
#include "irtkit/records.hpp"
#include "irtkit/splits.hpp"

using irtkit::Error;
using irtkit::Record;
using irtkit::RecordStore;
using irtkit::SplitPlan;

namespace {

// 6 models answering 3 tasks of 8, 8, and 2 items.
RecordStore toy_store() {
    RecordStore store;
    const std::vector<std::pair<std::string, int>> tasks = {{"t-a", 8}, {"t-b", 8}, {"t-c", 2}};
    for (int m = 0; m < 6; ++m) {
        for (const auto& [task, n_items] : tasks) {
            for (int x = 0; x < n_items; ++x) {
                Record r;
                r.model_id = "model-" + std::to_string(m);
                r.dataset_id = "ds";
                r.task_id = task;
                r.item_id = task + "/item-" + std::to_string(x);
                r.correct = (m + x) % 2;
                r.input_tokens = 10;
                r.output_tokens = 5;
                store.add(r);
            }
        }
    }
    return store;
}

}  // namespace

TEST_CASE("splits partition models and tasks", "[splits]") {
    const auto store = toy_store();
    const SplitPlan plan = irtkit::make_splits(store, 2, 1, 4, 99);

    REQUIRE(plan.test_models.size() == 2);
    REQUIRE(plan.train_models.size() == 4);
    std::set<std::string> all_models;
    std::set_union(plan.train_models.begin(), plan.train_models.end(), plan.test_models.begin(),
                   plan.test_models.end(), std::inserter(all_models, all_models.begin()));
    const auto models = store.models();
    REQUIRE(all_models == std::set<std::string>(models.begin(), models.end()));
    std::set<std::string> overlap;
    std::set_intersection(plan.train_models.begin(), plan.train_models.end(),
                          plan.test_models.begin(), plan.test_models.end(),
                          std::inserter(overlap, overlap.begin()));
    REQUIRE(overlap.empty());

    REQUIRE(plan.calibration_tasks.size() == 1);
    REQUIRE(plan.extrapolation_tasks.size() == 2);
    std::set<std::string> all_tasks;
    std::set_union(plan.calibration_tasks.begin(), plan.calibration_tasks.end(),
                   plan.extrapolation_tasks.begin(), plan.extrapolation_tasks.end(),
                   std::inserter(all_tasks, all_tasks.begin()));
    const auto tasks = store.tasks();
    REQUIRE(all_tasks == std::set<std::string>(tasks.begin(), tasks.end()));
}

TEST_CASE("holdouts have the requested size and skip small tasks", "[splits]") {
    const auto store = toy_store();
    const SplitPlan plan = irtkit::make_splits(store, 2, 1, 4, 99);

    REQUIRE(plan.heldout_items.count("t-a") == 1);
    REQUIRE(plan.heldout_items.count("t-b") == 1);
    REQUIRE(plan.heldout_items.count("t-c") == 0);  // only 2 items, needs 4
    for (const auto& [task, items] : plan.heldout_items) {
        REQUIRE(items.size() == 4);
        for (const auto& item : items) REQUIRE(store.task_of(item) == task);
    }
    REQUIRE(plan.is_heldout("t-a", *plan.heldout_items.at("t-a").begin()));
    REQUIRE_FALSE(plan.is_heldout("t-c", "t-c/item-0"));
}

TEST_CASE("splits are deterministic in the seed", "[splits]") {
    const auto store = toy_store();
    const SplitPlan a = irtkit::make_splits(store, 2, 1, 4, 7);
    const SplitPlan b = irtkit::make_splits(store, 2, 1, 4, 7);
    const SplitPlan c = irtkit::make_splits(store, 2, 1, 4, 8);
    REQUIRE(a == b);
    REQUIRE(a != c);
}

TEST_CASE("oversized split requests are capacity errors", "[splits]") {
    const auto store = toy_store();
    auto check = [&](int test_models, int cal_tasks) {
        try {
            irtkit::make_splits(store, test_models, cal_tasks, 4, 1);
            FAIL("expected a capacity error");
        } catch (const Error& e) {
            REQUIRE(e.category() == "capacity");
        }
    };
    check(7, 1);
    check(2, 4);
}

TEST_CASE("split plans round-trip through JSON", "[splits]") {
    const auto store = toy_store();
    const SplitPlan plan = irtkit::make_splits(store, 2, 1, 4, 42);
    const auto j = irtkit::split_plan_to_json(plan);
    const SplitPlan back = irtkit::split_plan_from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back == plan);
}

TEST_CASE("malformed split plans are parse errors", "[splits]") {
    REQUIRE_THROWS_MATCHES(irtkit::split_plan_from_json(nlohmann::json::object()), Error,
                           Catch::Matchers::Predicate<Error>(
                               [](const Error& e) { return e.category() == "parse"; }));
}
