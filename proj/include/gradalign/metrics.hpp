#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/textio.hpp"

namespace gradalign {

// One row of the metrics file. EVAL rows carry oracle accuracies; ROUND rows
// carry per-selection-round diagnostics. Absent fields stay unset and
// serialize as empty cells, never as zeros.
struct MetricRecord {
    enum class Kind { EVAL, ROUND };

    Kind kind = Kind::EVAL;
    int step = 0;
    std::optional<int> round_index;
    std::string selector;
    std::string metric;
    std::optional<double> val_acc;
    std::optional<double> test_acc;
    std::optional<double> corrupted_ratio;
    std::optional<double> target_ratio;
    std::optional<int> degenerate_flag;
    std::uint64_t seed = 0;
    std::optional<double> score_min;
    std::optional<double> score_median;
    std::optional<double> score_max;
    std::vector<int> selected_ids;
};

inline constexpr std::string_view kMetricsHeader =
    "kind,step,round_index,selector,metric,val_acc,test_acc,corrupted_ratio,"
    "target_ratio,degenerate_flag,seed,score_min,score_median,score_max,selected_ids";

// Per-round rollout accounting, compared against the closed-form budget.
struct RoundBudget {
    int round_index = 0;
    std::int64_t validation = 0;
    std::int64_t candidate = 0;
    std::int64_t training = 0;

    std::int64_t total() const { return validation + candidate + training; }
};

// Per-candidate scoring detail of one round; in-memory diagnostics for the
// ablations, never serialized.
struct RoundDetail {
    int round_index = 0;
    std::vector<int> candidate_ids;
    std::vector<double> scores;
    std::vector<double> pass_rates;
    std::vector<std::uint8_t> corrupted; // ground-truth flag per candidate
    bool degenerate = false;
};

struct RunMetrics {
    std::vector<MetricRecord> records;
    std::vector<RoundBudget> budgets;
    std::vector<RoundDetail> round_details;
    bool stopped_at_checkpoint = false;

    std::optional<double> final_val_acc() const {
        for (auto it = records.rbegin(); it != records.rend(); ++it)
            if (it->kind == MetricRecord::Kind::EVAL) return it->val_acc;
        return std::nullopt;
    }
    std::optional<double> final_test_acc() const {
        for (auto it = records.rbegin(); it != records.rend(); ++it)
            if (it->kind == MetricRecord::Kind::EVAL) return it->test_acc;
        return std::nullopt;
    }
};

namespace detail {

inline std::string cell(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

inline std::string cell(const std::optional<int>& v) {
    return v ? std::to_string(*v) : std::string();
}

} // namespace detail

inline std::string format_metric_record(const MetricRecord& r) {
    std::string out;
    out += r.kind == MetricRecord::Kind::EVAL ? "EVAL" : "ROUND";
    out += ',' + std::to_string(r.step);
    out += ',' + detail::cell(r.round_index);
    out += ',' + r.selector;
    out += ',' + r.metric;
    out += ',' + detail::cell(r.val_acc);
    out += ',' + detail::cell(r.test_acc);
    out += ',' + detail::cell(r.corrupted_ratio);
    out += ',' + detail::cell(r.target_ratio);
    out += ',' + detail::cell(r.degenerate_flag);
    out += ',' + std::to_string(r.seed);
    out += ',' + detail::cell(r.score_min);
    out += ',' + detail::cell(r.score_median);
    out += ',' + detail::cell(r.score_max);
    out += ',';
    for (std::size_t i = 0; i < r.selected_ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(r.selected_ids[i]);
    }
    return out;
}

inline std::string format_metrics(std::span<const MetricRecord> records) {
    std::string out(kMetricsHeader);
    out += '\n';
    for (const MetricRecord& r : records) {
        out += format_metric_record(r);
        out += '\n';
    }
    return out;
}

inline void export_metrics(std::span<const MetricRecord> records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open metrics file for writing: " + path);
    out << format_metrics(records);
    if (!out) throw config_error("failed writing metrics file: " + path);
}

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw config_error("metrics file is empty: " + path);
    if (trim(line) != kMetricsHeader)
        throw config_error("metrics file has an unexpected header: " + path);
    std::vector<MetricRecord> out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto cells = split(trim(line), ',');
        if (cells.size() != 15)
            throw config_error("metrics file: expected 15 columns, got " +
                               std::to_string(cells.size()));
        MetricRecord r;
        if (cells[0] == "EVAL") r.kind = MetricRecord::Kind::EVAL;
        else if (cells[0] == "ROUND") r.kind = MetricRecord::Kind::ROUND;
        else throw config_error("metrics file: unknown kind '" + std::string(cells[0]) + "'");
        r.step = static_cast<int>(parse_int(cells[1], "step"));
        if (!cells[2].empty()) r.round_index = static_cast<int>(parse_int(cells[2], "round_index"));
        r.selector = std::string(cells[3]);
        r.metric = std::string(cells[4]);
        if (!cells[5].empty()) r.val_acc = parse_double(cells[5], "val_acc");
        if (!cells[6].empty()) r.test_acc = parse_double(cells[6], "test_acc");
        if (!cells[7].empty()) r.corrupted_ratio = parse_double(cells[7], "corrupted_ratio");
        if (!cells[8].empty()) r.target_ratio = parse_double(cells[8], "target_ratio");
        if (!cells[9].empty()) r.degenerate_flag = static_cast<int>(parse_int(cells[9], "degenerate_flag"));
        r.seed = static_cast<std::uint64_t>(parse_int(cells[10], "seed"));
        if (!cells[11].empty()) r.score_min = parse_double(cells[11], "score_min");
        if (!cells[12].empty()) r.score_median = parse_double(cells[12], "score_median");
        if (!cells[13].empty()) r.score_max = parse_double(cells[13], "score_max");
        if (!cells[14].empty())
            for (std::string_view tok : split(cells[14], ';'))
                r.selected_ids.push_back(static_cast<int>(parse_int(tok, "selected_ids")));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation for the report subcommand.
// ---------------------------------------------------------------------------

struct SelectorSummary {
    std::string selector;
    std::string metric;
    int runs = 0;
    double mean_final_val_acc = 0.0;
    double mean_final_test_acc = 0.0;
    std::optional<double> mean_corrupted_ratio;
    std::optional<double> mean_target_ratio;
    int degenerate_rounds = 0;
};

inline std::vector<SelectorSummary> summarize_metrics(std::span<const MetricRecord> records) {
    struct Acc {
        std::map<std::uint64_t, std::pair<int, const MetricRecord*>> last_eval; // seed -> (step, rec)
        double corrupted_sum = 0.0;
        int corrupted_n = 0;
        double target_sum = 0.0;
        int target_n = 0;
        int degenerate = 0;
    };
    std::map<std::pair<std::string, std::string>, Acc> by_run;
    for (const MetricRecord& r : records) {
        Acc& acc = by_run[{r.selector, r.metric}];
        if (r.kind == MetricRecord::Kind::EVAL) {
            auto& slot = acc.last_eval[r.seed];
            if (slot.second == nullptr || r.step >= slot.first) slot = {r.step, &r};
        } else {
            if (r.corrupted_ratio) {
                acc.corrupted_sum += *r.corrupted_ratio;
                ++acc.corrupted_n;
            }
            if (r.target_ratio) {
                acc.target_sum += *r.target_ratio;
                ++acc.target_n;
            }
            if (r.degenerate_flag && *r.degenerate_flag) ++acc.degenerate;
        }
    }
    std::vector<SelectorSummary> out;
    for (const auto& [key, acc] : by_run) {
        SelectorSummary s;
        s.selector = key.first;
        s.metric = key.second;
        double val = 0.0, test = 0.0;
        int n = 0;
        for (const auto& [seed, slot] : acc.last_eval) {
            if (!slot.second) continue;
            val += slot.second->val_acc.value_or(0.0);
            test += slot.second->test_acc.value_or(0.0);
            ++n;
        }
        s.runs = n;
        if (n > 0) {
            s.mean_final_val_acc = val / n;
            s.mean_final_test_acc = test / n;
        }
        if (acc.corrupted_n > 0) s.mean_corrupted_ratio = acc.corrupted_sum / acc.corrupted_n;
        if (acc.target_n > 0) s.mean_target_ratio = acc.target_sum / acc.target_n;
        s.degenerate_rounds = acc.degenerate;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace gradalign
