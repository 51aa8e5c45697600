#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradalign/errors.hpp"
#include "gradalign/grpo.hpp"
#include "gradalign/metrics.hpp"
#include "gradalign/policy.hpp"
#include "gradalign/selector.hpp"

namespace gradalign {

// Mid-run snapshot: everything the step loop needs to resume byte-identically.
// RNG streams are derived per site from (seed, purpose, step, id), so no
// generator state needs saving beyond the positions recorded here.
struct Checkpoint {
    static constexpr int kVersion = 1;

    std::uint64_t seed = 0;
    int step_done = -1; // last completed step
    PolicyParams params;
    OptimizerState opt;

    int round_index = -1;
    std::vector<int> selected_ids;
    bool round_degenerate = false;

    std::vector<int> batch_order;
    std::size_t batch_cursor = 0;
    std::int64_t batch_cycle = 0;

    RolloutLedger round_ledger;
    std::vector<MetricRecord> records;
    std::vector<RoundBudget> budgets;
};

namespace detail {

inline nlohmann::json to_json(const MetricRecord& r) {
    nlohmann::json j;
    j["kind"] = r.kind == MetricRecord::Kind::EVAL ? "EVAL" : "ROUND";
    j["step"] = r.step;
    j["selector"] = r.selector;
    j["metric"] = r.metric;
    j["seed"] = r.seed;
    if (r.round_index) j["round_index"] = *r.round_index;
    if (r.val_acc) j["val_acc"] = *r.val_acc;
    if (r.test_acc) j["test_acc"] = *r.test_acc;
    if (r.corrupted_ratio) j["corrupted_ratio"] = *r.corrupted_ratio;
    if (r.target_ratio) j["target_ratio"] = *r.target_ratio;
    if (r.degenerate_flag) j["degenerate_flag"] = *r.degenerate_flag;
    if (r.score_min) j["score_min"] = *r.score_min;
    if (r.score_median) j["score_median"] = *r.score_median;
    if (r.score_max) j["score_max"] = *r.score_max;
    if (!r.selected_ids.empty()) j["selected_ids"] = r.selected_ids;
    return j;
}

inline MetricRecord metric_record_from_json(const nlohmann::json& j) {
    MetricRecord r;
    r.kind = j.at("kind").get<std::string>() == "EVAL" ? MetricRecord::Kind::EVAL
                                                       : MetricRecord::Kind::ROUND;
    r.step = j.at("step").get<int>();
    r.selector = j.at("selector").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("round_index")) r.round_index = j["round_index"].get<int>();
    if (j.contains("val_acc")) r.val_acc = j["val_acc"].get<double>();
    if (j.contains("test_acc")) r.test_acc = j["test_acc"].get<double>();
    if (j.contains("corrupted_ratio")) r.corrupted_ratio = j["corrupted_ratio"].get<double>();
    if (j.contains("target_ratio")) r.target_ratio = j["target_ratio"].get<double>();
    if (j.contains("degenerate_flag")) r.degenerate_flag = j["degenerate_flag"].get<int>();
    if (j.contains("score_min")) r.score_min = j["score_min"].get<double>();
    if (j.contains("score_median")) r.score_median = j["score_median"].get<double>();
    if (j.contains("score_max")) r.score_max = j["score_max"].get<double>();
    if (j.contains("selected_ids")) r.selected_ids = j["selected_ids"].get<std::vector<int>>();
    return r;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    nlohmann::json j;
    j["version"] = Checkpoint::kVersion;
    j["seed"] = cp.seed;
    j["step_done"] = cp.step_done;
    j["params"] = {{"answer_count", cp.params.answer_count},
                   {"feature_dim", cp.params.feature_dim},
                   {"weights", cp.params.weights},
                   {"snapshot_tag", cp.params.snapshot_tag}};
    j["opt"] = {{"m", cp.opt.m}, {"v", cp.opt.v}, {"t", cp.opt.t}};
    j["round"] = {{"index", cp.round_index},
                  {"selected_ids", cp.selected_ids},
                  {"degenerate", cp.round_degenerate}};
    j["batch"] = {{"order", cp.batch_order},
                  {"cursor", cp.batch_cursor},
                  {"cycle", cp.batch_cycle}};
    j["ledger"] = {{"validation", cp.round_ledger.validation},
                   {"candidate", cp.round_ledger.candidate},
                   {"training", cp.round_ledger.training}};
    nlohmann::json budgets = nlohmann::json::array();
    for (const RoundBudget& b : cp.budgets)
        budgets.push_back({{"round_index", b.round_index},
                           {"validation", b.validation},
                           {"candidate", b.candidate},
                           {"training", b.training}});
    j["budgets"] = std::move(budgets);
    nlohmann::json records = nlohmann::json::array();
    for (const MetricRecord& r : cp.records) records.push_back(detail::to_json(r));
    j["records"] = std::move(records);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open checkpoint for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw config_error("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("bad checkpoint json: " + std::string(e.what()));
    }
    if (j.value("version", 0) != Checkpoint::kVersion)
        throw config_error("unsupported checkpoint version in " + path);
    Checkpoint cp;
    cp.seed = j.at("seed").get<std::uint64_t>();
    cp.step_done = j.at("step_done").get<int>();
    const auto& p = j.at("params");
    cp.params.answer_count = p.at("answer_count").get<int>();
    cp.params.feature_dim = p.at("feature_dim").get<int>();
    cp.params.weights = p.at("weights").get<std::vector<double>>();
    cp.params.snapshot_tag = p.at("snapshot_tag").get<std::int64_t>();
    const auto& o = j.at("opt");
    cp.opt.m = o.at("m").get<std::vector<double>>();
    cp.opt.v = o.at("v").get<std::vector<double>>();
    cp.opt.t = o.at("t").get<std::int64_t>();
    const auto& r = j.at("round");
    cp.round_index = r.at("index").get<int>();
    cp.selected_ids = r.at("selected_ids").get<std::vector<int>>();
    cp.round_degenerate = r.at("degenerate").get<bool>();
    const auto& b = j.at("batch");
    cp.batch_order = b.at("order").get<std::vector<int>>();
    cp.batch_cursor = b.at("cursor").get<std::size_t>();
    cp.batch_cycle = b.at("cycle").get<std::int64_t>();
    const auto& l = j.at("ledger");
    cp.round_ledger.validation = l.at("validation").get<std::int64_t>();
    cp.round_ledger.candidate = l.at("candidate").get<std::int64_t>();
    cp.round_ledger.training = l.at("training").get<std::int64_t>();
    for (const auto& jb : j.at("budgets"))
        cp.budgets.push_back({jb.at("round_index").get<int>(),
                              jb.at("validation").get<std::int64_t>(),
                              jb.at("candidate").get<std::int64_t>(),
                              jb.at("training").get<std::int64_t>()});
    for (const auto& jr : j.at("records")) cp.records.push_back(detail::metric_record_from_json(jr));
    return cp;
}

} // namespace gradalign
