#pragma once

// Item-level response records: ingestion, validation, indexing, token
// statistics. A record is one graded (model, item) outcome plus the token
// counts of producing it. Stores are immutable once ingested; missing
// responses are represented by absence, never imputed.

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "irtkit/error.hpp"

namespace irtkit {

struct Record {
    std::string model_id;
    std::string dataset_id;
    std::string task_id;
    std::string item_id;
    int correct = 0;  // 0 or 1
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;

    bool operator==(const Record&) const = default;
};

// Sum of input and output tokens for one record: tau(m, x).
inline double record_tokens(const Record& r) {
    return static_cast<double>(r.input_tokens + r.output_tokens);
}

// Evaluation cost of a record sequence. Input tokens are billed at half the
// rate of output tokens.
template <typename Range>
double eval_token_cost(const Range& records) {
    double total = 0.0;
    for (const Record& r : records)
        total += 0.5 * static_cast<double>(r.input_tokens) + static_cast<double>(r.output_tokens);
    return total;
}

class RecordStore {
public:
    RecordStore() = default;

    void add(const Record& r) {
        validate(r);
        const std::string key = pair_key(r.model_id, r.item_id);
        if (!pair_keys_.insert(key).second)
            fail("conflict", "duplicate record for model '" + r.model_id + "' item '" + r.item_id + "'");

        auto task_it = item_task_.find(r.item_id);
        if (task_it == item_task_.end()) {
            item_task_.emplace(r.item_id, r.task_id);
        } else if (task_it->second != r.task_id) {
            fail("conflict", "item '" + r.item_id + "' assigned to task '" + task_it->second +
                                 "' and task '" + r.task_id + "'");
        }
        auto ds_it = task_dataset_.find(r.task_id);
        if (ds_it == task_dataset_.end()) {
            task_dataset_.emplace(r.task_id, r.dataset_id);
        } else if (ds_it->second != r.dataset_id) {
            fail("conflict", "task '" + r.task_id + "' assigned to dataset '" + ds_it->second +
                                 "' and dataset '" + r.dataset_id + "'");
        }

        const std::size_t idx = records_.size();
        records_.push_back(r);
        by_model_[r.model_id].push_back(idx);
        by_task_[r.task_id].push_back(idx);
        by_item_[r.item_id].push_back(idx);
        task_items_[r.task_id].insert(r.item_id);
    }

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::vector<Record>& records() const { return records_; }
    const Record& record(std::size_t i) const { return records_[i]; }

    // Sorted id views; all deterministic iteration goes through these.
    std::vector<std::string> models() const { return sorted_keys(by_model_); }
    std::vector<std::string> tasks() const { return sorted_keys(by_task_); }
    std::vector<std::string> items() const { return sorted_keys(by_item_); }

    const std::vector<std::size_t>& by_model(const std::string& model_id) const {
        return lookup(by_model_, model_id, "model");
    }
    const std::vector<std::size_t>& by_task(const std::string& task_id) const {
        return lookup(by_task_, task_id, "task");
    }
    const std::vector<std::size_t>& by_item(const std::string& item_id) const {
        return lookup(by_item_, item_id, "item");
    }

    bool has_model(const std::string& id) const { return by_model_.count(id) > 0; }
    bool has_item(const std::string& id) const { return by_item_.count(id) > 0; }
    bool has_pair(const std::string& model_id, const std::string& item_id) const {
        return pair_keys_.count(pair_key(model_id, item_id)) > 0;
    }

    const Record* find(const std::string& model_id, const std::string& item_id) const {
        if (!has_pair(model_id, item_id)) return nullptr;
        for (std::size_t idx : by_item(item_id))
            if (records_[idx].model_id == model_id) return &records_[idx];
        return nullptr;
    }

    const std::string& task_of(const std::string& item_id) const {
        auto it = item_task_.find(item_id);
        if (it == item_task_.end()) fail("missing-data", "unknown item '" + item_id + "'");
        return it->second;
    }

    std::vector<std::string> items_of_task(const std::string& task_id) const {
        auto it = task_items_.find(task_id);
        if (it == task_items_.end()) fail("missing-data", "unknown task '" + task_id + "'");
        return {it->second.begin(), it->second.end()};
    }

    const std::vector<std::string>& warnings() const { return warnings_; }
    void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

private:
    static void validate(const Record& r) {
        if (r.correct != 0 && r.correct != 1)
            fail("parse", "field 'correct' must be 0 or 1, got " + std::to_string(r.correct));
        if (r.input_tokens < 0)
            fail("parse", "field 'input_tokens' must be non-negative");
        if (r.output_tokens < 0)
            fail("parse", "field 'output_tokens' must be non-negative");
        if (r.model_id.empty() || r.task_id.empty() || r.item_id.empty() || r.dataset_id.empty())
            fail("parse", "record ids must be non-empty");
    }

    static std::string pair_key(const std::string& m, const std::string& x) {
        return m + '\x1f' + x;
    }

    template <typename Map>
    static std::vector<std::string> sorted_keys(const Map& m) {
        std::vector<std::string> keys;
        keys.reserve(m.size());
        for (const auto& [k, v] : m) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        return keys;
    }

    template <typename Map>
    static const std::vector<std::size_t>& lookup(const Map& m, const std::string& id,
                                                  const char* kind) {
        auto it = m.find(id);
        if (it == m.end()) fail("missing-data", std::string("unknown ") + kind + " '" + id + "'");
        return it->second;
    }

    std::vector<Record> records_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_model_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_task_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_item_;
    std::unordered_map<std::string, std::string> item_task_;
    std::unordered_map<std::string, std::string> task_dataset_;
    std::unordered_map<std::string, std::set<std::string>> task_items_;
    std::unordered_set<std::string> pair_keys_;
    std::vector<std::string> warnings_;
};

namespace detail {

inline std::int64_t require_count(const nlohmann::json& j, const char* field, std::size_t line_no) {
    if (!j.contains(field))
        fail("parse", "line " + std::to_string(line_no) + ": missing field '" + field + "'");
    const auto& v = j.at(field);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        fail("parse", "line " + std::to_string(line_no) + ": field '" + field + "' must be an integer");
    return v.get<std::int64_t>();
}

inline std::string require_string(const nlohmann::json& j, const char* field, std::size_t line_no) {
    if (!j.contains(field))
        fail("parse", "line " + std::to_string(line_no) + ": missing field '" + field + "'");
    const auto& v = j.at(field);
    if (!v.is_string())
        fail("parse", "line " + std::to_string(line_no) + ": field '" + field + "' must be a string");
    return v.get<std::string>();
}

}  // namespace detail

// Parses one record file line. Accepts `correct` as 0/1 integer or boolean.
inline Record parse_record_line(const std::string& line, std::size_t line_no,
                                std::set<std::string>* unknown_fields = nullptr) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail("parse", "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object())
        fail("parse", "line " + std::to_string(line_no) + ": expected an object");

    static const std::set<std::string> known = {"model",   "dataset",      "task",
                                                "item",    "correct",      "input_tokens",
                                                "output_tokens"};
    if (unknown_fields) {
        for (const auto& [key, value] : j.items())
            if (!known.count(key)) unknown_fields->insert(key);
    }

    Record r;
    r.model_id = detail::require_string(j, "model", line_no);
    r.dataset_id = detail::require_string(j, "dataset", line_no);
    r.task_id = detail::require_string(j, "task", line_no);
    r.item_id = detail::require_string(j, "item", line_no);

    const auto& c = j.at("correct");
    if (c.is_boolean()) {
        r.correct = c.get<bool>() ? 1 : 0;
    } else if (c.is_number_integer() || c.is_number_unsigned()) {
        const auto v = c.get<std::int64_t>();
        if (v != 0 && v != 1)
            fail("parse", "line " + std::to_string(line_no) + ": field 'correct' must be 0 or 1, got " +
                              std::to_string(v));
        r.correct = static_cast<int>(v);
    } else if (!j.contains("correct")) {
        fail("parse", "line " + std::to_string(line_no) + ": missing field 'correct'");
    } else {
        fail("parse", "line " + std::to_string(line_no) + ": field 'correct' must be 0 or 1");
    }

    const auto in = detail::require_count(j, "input_tokens", line_no);
    const auto out = detail::require_count(j, "output_tokens", line_no);
    if (in < 0) fail("parse", "line " + std::to_string(line_no) + ": field 'input_tokens' must be non-negative");
    if (out < 0) fail("parse", "line " + std::to_string(line_no) + ": field 'output_tokens' must be non-negative");
    r.input_tokens = in;
    r.output_tokens = out;
    return r;
}

// Streaming ingestion of line-delimited records. Blank lines are skipped;
// unknown fields are ignored and surfaced once each via store warnings.
inline RecordStore ingest_records(std::istream& in) {
    RecordStore store;
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> unknown;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        store.add(parse_record_line(line, line_no, &unknown));
    }
    for (const auto& field : unknown)
        store.add_warning("ignoring unknown field '" + field + "'");
    return store;
}

inline RecordStore ingest_records(const std::string& text) {
    std::istringstream in(text);
    return ingest_records(in);
}

// Writes records one object per line in insertion order with a fixed key
// order, so ingest(serialize(store)) reproduces the store byte for byte.
inline void serialize_records(const RecordStore& store, std::ostream& out) {
    for (const Record& r : store.records()) {
        nlohmann::ordered_json j;
        j["model"] = r.model_id;
        j["dataset"] = r.dataset_id;
        j["task"] = r.task_id;
        j["item"] = r.item_id;
        j["correct"] = r.correct;
        j["input_tokens"] = r.input_tokens;
        j["output_tokens"] = r.output_tokens;
        out << j.dump() << '\n';
    }
}

// Mean token cost of `item` over the given models, restricted to models that
// actually answered it.
template <typename ModelSet>
double mean_item_cost(const RecordStore& store, const std::string& item_id, const ModelSet& models) {
    if (!store.has_item(item_id)) fail("missing-data", "no records for item '" + item_id + "'");
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t idx : store.by_item(item_id)) {
        const Record& r = store.record(idx);
        if (models.count(r.model_id) == 0) continue;
        total += record_tokens(r);
        ++n;
    }
    if (n == 0)
        fail("missing-data", "item '" + item_id + "' unanswered by the given models");
    return total / static_cast<double>(n);
}

// Per-item mean token costs over the training models. Items no train model
// answered carry no mean and are treated as infinitely expensive.
class TokenStats {
public:
    TokenStats() = default;

    template <typename ModelSet>
    TokenStats(const RecordStore& store, const ModelSet& train_models) {
        for (const auto& item : store.items()) {
            double total = 0.0;
            std::size_t n = 0;
            for (std::size_t idx : store.by_item(item)) {
                const Record& r = store.record(idx);
                if (train_models.count(r.model_id) == 0) continue;
                total += record_tokens(r);
                ++n;
            }
            if (n > 0)
                mean_cost_[item] = total / static_cast<double>(n);
            else
                unpriced_.insert(item);
        }
    }

    std::optional<double> mean_cost(const std::string& item_id) const {
        auto it = mean_cost_.find(item_id);
        if (it == mean_cost_.end()) return std::nullopt;
        return it->second;
    }

    double cost_or_inf(const std::string& item_id) const {
        auto it = mean_cost_.find(item_id);
        return it == mean_cost_.end() ? std::numeric_limits<double>::infinity() : it->second;
    }

    const std::set<std::string>& unpriced_items() const { return unpriced_; }

private:
    std::unordered_map<std::string, double> mean_cost_;
    std::set<std::string> unpriced_;
};

}  // namespace irtkit
