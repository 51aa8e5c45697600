#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/problem.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/selector.hpp"

namespace gradalign {

enum class SelectorKind { GRADALIGN, RANDOM, ACC_GREEDY, ALIGN, DIRECT_VAL };

inline std::string_view to_string(SelectorKind k) {
    switch (k) {
        case SelectorKind::GRADALIGN: return "gradalign";
        case SelectorKind::RANDOM: return "random";
        case SelectorKind::ACC_GREEDY: return "accgreedy";
        case SelectorKind::ALIGN: return "align";
        case SelectorKind::DIRECT_VAL: return "direct-val";
    }
    return "?";
}

inline SelectorKind selector_kind_from_string(std::string_view s) {
    if (s == "gradalign") return SelectorKind::GRADALIGN;
    if (s == "random") return SelectorKind::RANDOM;
    if (s == "accgreedy") return SelectorKind::ACC_GREEDY;
    if (s == "align") return SelectorKind::ALIGN;
    if (s == "direct-val") return SelectorKind::DIRECT_VAL;
    throw config_error("unknown selector: '" + std::string(s) + "'");
}

// Uniform sample without replacement of floor(M/q) ids. Lower bound baseline.
inline std::vector<int> random_select(std::span<const int> ids, int selection_ratio,
                                      RngStream& rng) {
    if (ids.empty()) throw input_error("random_select: empty pool");
    if (selection_ratio <= 1) throw input_error("random_select: q must be > 1");
    std::vector<int> shuffled(ids.begin(), ids.end());
    rng.shuffle(shuffled);
    shuffled.resize(selection_count(static_cast<int>(ids.size()), selection_ratio));
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

// Pass rates closest to 50%, ties by ascending id. Reads nothing but the
// empirical pass rates.
inline std::vector<int> acc_greedy_select(std::span<const double> pass_rates,
                                          std::span<const int> ids, int selection_ratio) {
    if (pass_rates.size() != ids.size()) throw input_error("acc_greedy_select: length mismatch");
    if (ids.empty()) throw input_error("acc_greedy_select: empty pool");
    for (double r : pass_rates)
        if (r < 0.0 || r > 1.0) throw input_error("acc_greedy_select: pass rate outside [0,1]");
    std::vector<double> closeness(pass_rates.size());
    for (std::size_t i = 0; i < pass_rates.size(); ++i) closeness[i] = -std::fabs(pass_rates[i] - 0.5);
    return select_top_fraction(closeness, ids, selection_ratio);
}

struct AlignSelection {
    std::vector<int> selected_ids;
    std::vector<double> scores; // empty when the round degenerated
    bool degenerate = false;    // zero pool-mean gradient; fell back to random
};

// Intra-pool gradient coherence: score each candidate by cosine similarity to
// the mean of all candidate gradients. No validation input by construction.
inline AlignSelection align_select(std::span<const GradientVec> candidate_gradients,
                                   std::span<const int> ids, int selection_ratio,
                                   RngStream& fallback_rng) {
    if (candidate_gradients.size() != ids.size()) throw input_error("align_select: length mismatch");
    if (candidate_gradients.empty()) throw input_error("align_select: empty pool");
    std::vector<std::pair<std::int64_t, GradientVec>> entries;
    entries.reserve(candidate_gradients.size());
    for (std::size_t i = 0; i < candidate_gradients.size(); ++i)
        entries.emplace_back(ids[i], candidate_gradients[i]);
    const GradientVec pool_mean = mean_by_id(std::move(entries));

    AlignSelection out;
    if (l2_norm(pool_mean) < kCosineNormFloor) {
        out.degenerate = true;
        std::vector<int> shuffled(ids.begin(), ids.end());
        fallback_rng.shuffle(shuffled);
        shuffled.resize(selection_count(static_cast<int>(ids.size()), selection_ratio));
        std::sort(shuffled.begin(), shuffled.end());
        out.selected_ids = std::move(shuffled);
        return out;
    }
    out.scores.resize(candidate_gradients.size());
    for (std::size_t i = 0; i < candidate_gradients.size(); ++i)
        out.scores[i] = cosine_similarity(candidate_gradients[i], pool_mean);
    out.selected_ids = select_top_fraction(out.scores, ids, selection_ratio);
    return out;
}

// Training batch for the direct-validation ablation: n_train problems drawn
// uniformly from the validation set, without replacement when it is large
// enough, with replacement otherwise. The candidate pool is ignored entirely.
inline std::vector<int> direct_val_batch(std::span<const Problem> validation_problems,
                                         int n_train, RngStream& rng) {
    if (validation_problems.empty()) throw input_error("direct_val_batch: empty validation set");
    if (n_train < 1) throw input_error("direct_val_batch: n_train must be >= 1");
    const int n = static_cast<int>(validation_problems.size());
    std::vector<int> batch;
    batch.reserve(n_train);
    if (n_train <= n) {
        std::vector<int> ids(n);
        for (int i = 0; i < n; ++i) ids[i] = validation_problems[i].id;
        rng.shuffle(ids);
        ids.resize(n_train);
        return ids;
    }
    for (int i = 0; i < n_train; ++i)
        batch.push_back(validation_problems[rng.next_below(static_cast<std::uint64_t>(n))].id);
    return batch;
}

} // namespace gradalign
