#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/grpo.hpp"
#include "gradalign/policy.hpp"
#include "gradalign/reward_oracle.hpp"
#include "gradalign/rng.hpp"

namespace gradalign {

enum class AlignmentMetric { COSINE, INNER_PRODUCT };

inline std::string_view to_string(AlignmentMetric m) {
    return m == AlignmentMetric::COSINE ? "cosine" : "inner_product";
}

inline AlignmentMetric alignment_metric_from_string(std::string_view s) {
    if (s == "cosine") return AlignmentMetric::COSINE;
    if (s == "inner_product") return AlignmentMetric::INNER_PRODUCT;
    throw config_error("unknown alignment metric: '" + std::string(s) + "'");
}

struct SelectionConfig {
    int pool_size = 128;         // M
    int selection_ratio = 4;     // q; floor(M/q) candidates survive, minimum 1
    int selection_interval = 10; // U optimizer steps between rounds
    int k_v = 16;                // rollouts per validation problem
    int k_r = 4;                 // rollouts per candidate problem
    AlignmentMetric metric = AlignmentMetric::COSINE;
    // Candidate and validation gradients use normalized advantages by
    // default; raw-centered is available since per-group direction is the
    // same either way.
    bool use_normalized_advantages = true;

    void validate() const {
        if (pool_size < 1) throw config_error("selection: pool_size must be >= 1");
        if (selection_ratio <= 1) throw config_error("selection: selection_ratio q must be > 1");
        if (selection_interval < 1) throw config_error("selection: selection_interval must be >= 1");
        if (k_v < 2) throw config_error("selection: k_v must be >= 2");
        if (k_r < 2) throw config_error("selection: k_r must be >= 2");
        if (k_r > k_v) throw config_error("selection: k_r must be <= k_v");
    }
};

inline int selection_count(int pool_size, int selection_ratio) {
    return std::max(1, pool_size / selection_ratio);
}

// Rollout bookkeeping, split by purpose so budget accounting and selector
// isolation are checkable.
struct RolloutLedger {
    std::int64_t validation = 0;
    std::int64_t candidate = 0;
    std::int64_t training = 0;

    std::int64_t total() const { return validation + candidate + training; }
    void reset() { validation = candidate = training = 0; }
};

// Derives the per-site RNG streams of one selection round from the run seed.
struct RoundStreams {
    std::uint64_t seed = 0;
    std::uint64_t round = 0;

    RngStream validation(int problem_id) const {
        return derive_stream(seed, "validation", round, static_cast<std::uint64_t>(problem_id));
    }
    RngStream candidate(int problem_id) const {
        return derive_stream(seed, "candidate", round, static_cast<std::uint64_t>(problem_id));
    }
    RngStream fallback() const { return derive_stream(seed, "fallback", round); }
};

// One scoring-and-selection episode.
struct SelectionRound {
    int round_index = 0;
    std::vector<int> candidate_ids;
    std::vector<double> scores;
    std::vector<int> selected_ids;
    double validation_gradient_norm = 0.0;
    std::vector<double> per_candidate_pass_rate;
    bool degenerate = false; // zero validation gradient; selection fell back to random
};

namespace detail {

// Shared gradient pipeline: rewards -> advantages -> surrogate gradient.
// All-equal rewards give the exact zero gradient.
inline GradientVec group_gradient(const PolicyParams& params, const Problem& problem,
                                  const RolloutGroup& group, const GRPOConfig& grpo,
                                  bool use_normalized) {
    const AdvantageSet adv = compute_advantages(group.rewards, grpo);
    if (adv.group_std == 0.0) return GradientVec(params.size());
    return surrogate_gradient(params, problem, group,
                              use_normalized ? adv.normalized : adv.raw_centered);
}

} // namespace detail

struct ValidationGradientResult {
    GradientVec gradient;
    // All validation groups had zero reward variance; the mean is the zero
    // vector and the round cannot rank candidates.
    bool degenerate = false;
};

// Fresh-rollout estimate of the validation policy gradient: per problem,
// roll out k_v answers under the current params, score them against the
// reference, and average the per-problem surrogate gradients. Rollouts are
// regenerated on every call so estimates are never stale.
inline ValidationGradientResult validation_gradient(const PolicyParams& params,
                                                    std::span<const Problem> validation_problems,
                                                    int k_v, const GRPOConfig& grpo,
                                                    bool use_normalized,
                                                    const RoundStreams& streams,
                                                    RolloutLedger* ledger = nullptr) {
    if (validation_problems.empty()) throw input_error("validation_gradient: empty validation set");
    if (k_v < 2) throw input_error("validation_gradient: k_v must be >= 2");
    bool any_variance = false;
    std::vector<std::pair<std::int64_t, GradientVec>> grads;
    grads.reserve(validation_problems.size());
    for (const Problem& problem : validation_problems) {
        if (!problem.corruption.is_clean())
            throw input_error("validation_gradient: validation problem " + std::to_string(problem.id) +
                              " is corrupted");
        RngStream rng = streams.validation(problem.id);
        RolloutGroup group = sample_answers(params, problem, k_v, rng);
        group.rewards.reserve(k_v);
        for (int answer : group.answers)
            group.rewards.push_back(answer == problem.reference_answer ? 1.0 : 0.0);
        if (ledger) ledger->validation += k_v;
        const AdvantageSet adv = compute_advantages(group.rewards, grpo);
        if (adv.group_std > 0.0) any_variance = true;
        grads.emplace_back(problem.id,
                           adv.group_std == 0.0
                               ? GradientVec(params.size())
                               : surrogate_gradient(params, problem, group,
                                                    use_normalized ? adv.normalized
                                                                   : adv.raw_centered));
    }
    ValidationGradientResult out{mean_by_id(std::move(grads)), !any_variance};
    return out;
}

struct CandidateEstimate {
    GradientVec gradient;
    double pass_rate = 0.0;
};

// Same pipeline for a single candidate, with rewards from the scenario's
// judge (possibly corrupted). The pass rate comes from the same k_r rollouts,
// so every selector sees the same information budget.
inline CandidateEstimate candidate_gradient(const PolicyParams& params, const Problem& problem,
                                            int k_r, const RewardOracle& oracle,
                                            const GRPOConfig& grpo, bool use_normalized,
                                            RngStream& rng, RolloutLedger* ledger = nullptr) {
    if (k_r < 2) throw input_error("candidate_gradient: k_r must be >= 2");
    RolloutGroup group = sample_answers(params, problem, k_r, rng);
    group.rewards.reserve(k_r);
    double pass = 0.0;
    for (int answer : group.answers) {
        const double r = oracle.judge(problem, answer, rng);
        group.rewards.push_back(r);
        pass += r;
    }
    if (ledger) ledger->candidate += k_r;
    return {detail::group_gradient(params, problem, group, grpo, use_normalized),
            pass / static_cast<double>(k_r)};
}

// Pass rate alone from k_r rollouts; consumes the stream exactly like
// candidate_gradient so selectors sharing a seed see identical rollouts.
inline double candidate_pass_rate(const PolicyParams& params, const Problem& problem, int k_r,
                                  const RewardOracle& oracle, RngStream& rng,
                                  RolloutLedger* ledger = nullptr) {
    if (k_r < 2) throw input_error("candidate_pass_rate: k_r must be >= 2");
    const RolloutGroup group = sample_answers(params, problem, k_r, rng);
    double pass = 0.0;
    for (int answer : group.answers) pass += oracle.judge(problem, answer, rng);
    if (ledger) ledger->candidate += k_r;
    return pass / static_cast<double>(k_r);
}

inline double alignment_score(const GradientVec& g, const GradientVec& validation_grad,
                              AlignmentMetric metric) {
    if (g.size() != validation_grad.size())
        throw config_error("alignment_score: gradient length mismatch");
    return metric == AlignmentMetric::COSINE ? cosine_similarity(g, validation_grad)
                                             : dot(g, validation_grad);
}

// Top floor(M/q) ids by score (minimum 1), ties broken by ascending id.
// Returns the selected ids in ascending order.
inline std::vector<int> select_top_fraction(std::span<const double> scores,
                                            std::span<const int> ids, int selection_ratio) {
    if (scores.size() != ids.size()) throw input_error("select_top_fraction: length mismatch");
    if (scores.empty()) throw input_error("select_top_fraction: empty pool");
    if (selection_ratio <= 1) throw input_error("select_top_fraction: q must be > 1");
    const int n_select = selection_count(static_cast<int>(ids.size()), selection_ratio);
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<int> selected;
    selected.reserve(n_select);
    for (int i = 0; i < n_select; ++i) selected.push_back(ids[order[i]]);
    std::sort(selected.begin(), selected.end());
    return selected;
}

// One full GradAlign round: fresh validation gradient, per-candidate
// gradients and alignment scores, top-fraction selection. A zero validation
// gradient degenerates the round; selection falls back to a random subset
// and the round is flagged.
inline SelectionRound run_selection_round(const PolicyParams& params,
                                          std::span<const Problem> pool,
                                          std::span<const Problem> validation_problems,
                                          const SelectionConfig& cfg, const GRPOConfig& grpo,
                                          const RewardOracle& oracle, const RoundStreams& streams,
                                          RolloutLedger* ledger = nullptr) {
    cfg.validate();
    if (static_cast<int>(pool.size()) != cfg.pool_size)
        throw input_error("run_selection_round: pool size " + std::to_string(pool.size()) +
                          " != configured pool_size " + std::to_string(cfg.pool_size));

    SelectionRound round;
    round.round_index = static_cast<int>(streams.round);

    const ValidationGradientResult val = validation_gradient(
        params, validation_problems, cfg.k_v, grpo, cfg.use_normalized_advantages, streams, ledger);
    round.validation_gradient_norm = l2_norm(val.gradient);

    round.candidate_ids.reserve(pool.size());
    round.scores.reserve(pool.size());
    round.per_candidate_pass_rate.reserve(pool.size());
    for (const Problem& problem : pool) {
        RngStream rng = streams.candidate(problem.id);
        const CandidateEstimate est = candidate_gradient(
            params, problem, cfg.k_r, oracle, grpo, cfg.use_normalized_advantages, rng, ledger);
        round.candidate_ids.push_back(problem.id);
        round.scores.push_back(alignment_score(est.gradient, val.gradient, cfg.metric));
        round.per_candidate_pass_rate.push_back(est.pass_rate);
    }

    if (round.validation_gradient_norm < kCosineNormFloor) {
        round.degenerate = true;
        std::vector<int> shuffled = round.candidate_ids;
        RngStream rng = streams.fallback();
        rng.shuffle(shuffled);
        shuffled.resize(selection_count(cfg.pool_size, cfg.selection_ratio));
        std::sort(shuffled.begin(), shuffled.end());
        round.selected_ids = std::move(shuffled);
    } else {
        round.selected_ids = select_top_fraction(round.scores, round.candidate_ids,
                                                 cfg.selection_ratio);
    }
    return round;
}

} // namespace gradalign
