#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gradalign/baselines.hpp"
#include "gradalign/checkpoint.hpp"
#include "gradalign/config.hpp"
#include "gradalign/errors.hpp"
#include "gradalign/grpo.hpp"
#include "gradalign/metrics.hpp"
#include "gradalign/oracle.hpp"
#include "gradalign/scenarios.hpp"
#include "gradalign/selector.hpp"

namespace gradalign {

// ---------------------------------------------------------------------------
// Round diagnostics.
// ---------------------------------------------------------------------------

inline double corrupted_selection_ratio(std::span<const int> selected_ids,
                                        const std::unordered_set<int>& corrupted_ids) {
    if (selected_ids.empty()) throw input_error("corrupted_selection_ratio: empty selection");
    int hits = 0;
    for (int id : selected_ids) hits += corrupted_ids.count(id) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(selected_ids.size());
}

inline double corrupted_selection_ratio(const SelectionRound& round,
                                        const std::unordered_set<int>& corrupted_ids) {
    return corrupted_selection_ratio(round.selected_ids, corrupted_ids);
}

inline double domain_selection_ratio(std::span<const int> selected_ids,
                                     std::span<const Problem> pool, DomainTag tag) {
    if (selected_ids.empty()) throw input_error("domain_selection_ratio: empty selection");
    std::unordered_map<int, DomainTag> tags;
    tags.reserve(pool.size());
    for (const Problem& p : pool) tags.emplace(p.id, p.domain_tag);
    int hits = 0;
    for (int id : selected_ids) {
        auto it = tags.find(id);
        if (it == tags.end()) throw input_error("domain_selection_ratio: id not in pool");
        hits += it->second == tag ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(selected_ids.size());
}

inline double domain_selection_ratio(const SelectionRound& round, std::span<const Problem> pool,
                                     DomainTag tag) {
    return domain_selection_ratio(round.selected_ids, pool, tag);
}

// ---------------------------------------------------------------------------
// Rollout budget. Per round: validation rollouts (GradAlign only), candidate
// rollouts (anything that scores the pool), and the training rollouts of the
// steps inside the round.
// ---------------------------------------------------------------------------

inline std::array<std::int64_t, 3> expected_round_parts(const ExperimentConfig& cfg,
                                                        int steps_in_round) {
    std::int64_t validation = 0;
    std::int64_t candidate = 0;
    switch (cfg.selector) {
        case SelectorKind::GRADALIGN:
            validation = static_cast<std::int64_t>(cfg.validation_size) * cfg.selection.k_v;
            candidate = static_cast<std::int64_t>(cfg.scenario.pool_size) * cfg.selection.k_r;
            break;
        case SelectorKind::ACC_GREEDY:
        case SelectorKind::ALIGN:
            candidate = static_cast<std::int64_t>(cfg.scenario.pool_size) * cfg.selection.k_r;
            break;
        case SelectorKind::RANDOM:
        case SelectorKind::DIRECT_VAL:
            break;
    }
    const std::int64_t training = static_cast<std::int64_t>(steps_in_round) * cfg.n_train *
                                  cfg.rollouts_per_training_problem;
    return {validation, candidate, training};
}

inline std::int64_t expected_round_rollouts(const ExperimentConfig& cfg, int steps_in_round) {
    const auto parts = expected_round_parts(cfg, steps_in_round);
    return parts[0] + parts[1] + parts[2];
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

struct RunOptions {
    std::string resume_path;       // resume from this checkpoint
    std::string checkpoint_path;   // save here after checkpoint_at_step completes
    int checkpoint_at_step = -1;
    bool stop_after_checkpoint = false;
    std::string dump_pools_dir;    // write per-round pool files + ground-truth sidecar
};

namespace detail {

// Draws batches from the selected set without replacement, reshuffling each
// time the set is exhausted. Reshuffle streams are keyed by cycle index so
// the cycler state is fully captured by (order, cursor, cycle).
struct BatchCycler {
    std::vector<int> order;
    std::size_t cursor = 0;
    std::int64_t cycle = 0;

    void reset(std::vector<int> ids, std::uint64_t seed, int round) {
        std::sort(ids.begin(), ids.end());
        order = std::move(ids);
        cycle = 0;
        cursor = 0;
        reshuffle(seed, round);
    }

    std::vector<int> next(int n, std::uint64_t seed, int round) {
        std::vector<int> batch;
        batch.reserve(n);
        while (static_cast<int>(batch.size()) < n) {
            if (cursor == order.size()) {
                ++cycle;
                std::sort(order.begin(), order.end());
                reshuffle(seed, round);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        return batch;
    }

private:
    void reshuffle(std::uint64_t seed, int round) {
        RngStream rng = derive_stream(seed, "batch-shuffle", static_cast<std::uint64_t>(round),
                                      static_cast<std::uint64_t>(cycle));
        rng.shuffle(order);
    }
};

inline void score_stats(std::span<const double> scores, MetricRecord& rec) {
    if (scores.empty()) return;
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    rec.score_min = sorted.front();
    rec.score_max = sorted.back();
    const std::size_t n = sorted.size();
    rec.score_median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

} // namespace detail

inline RunMetrics run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
    cfg.validate();
    Scenario scenario(cfg.scenario, cfg.seed, cfg.validation_size, cfg.test_size);
    const AccuracyOracle acc_oracle;

    PolicyParams params = scenario.initial_params();
    const ReferencePolicy reference(params);
    OptimizerState opt;
    opt.reset(params.size());

    RunMetrics metrics;
    detail::BatchCycler cycler;
    RolloutLedger round_ledger;
    int round_index = -1;
    std::vector<int> selected_ids;
    bool round_degenerate = false;
    std::vector<Problem> pool;
    std::unordered_map<int, const Problem*> problems_by_id;

    const int interval = cfg.selection.selection_interval;
    const std::string selector_name(to_string(cfg.selector));
    const std::string metric_name(to_string(cfg.selection.metric));

    auto rebuild_index = [&]() {
        problems_by_id.clear();
        for (const Problem& p : pool) problems_by_id.emplace(p.id, &p);
        for (const Problem& p : scenario.validation()) problems_by_id.emplace(p.id, &p);
    };

    int start_step = 0;
    if (!opts.resume_path.empty()) {
        Checkpoint cp = load_checkpoint(opts.resume_path);
        if (cp.seed != cfg.seed) throw config_error("checkpoint seed does not match config seed");
        params = std::move(cp.params);
        opt = std::move(cp.opt);
        round_index = cp.round_index;
        selected_ids = cp.selected_ids;
        round_degenerate = cp.round_degenerate;
        cycler.order = std::move(cp.batch_order);
        cycler.cursor = cp.batch_cursor;
        cycler.cycle = cp.batch_cycle;
        round_ledger = cp.round_ledger;
        metrics.records = std::move(cp.records);
        metrics.budgets = std::move(cp.budgets);
        start_step = cp.step_done + 1;
        if (round_index >= 0 && cfg.selector != SelectorKind::DIRECT_VAL)
            pool = scenario.draw_pool(cfg.fixed_pool ? 0 : round_index);
    }
    rebuild_index();

    auto record_eval = [&](int step) {
        MetricRecord rec;
        rec.kind = MetricRecord::Kind::EVAL;
        rec.step = step;
        rec.selector = selector_name;
        rec.metric = metric_name;
        rec.seed = cfg.seed;
        rec.val_acc = acc_oracle.expected_accuracy(params, scenario.validation());
        rec.test_acc = acc_oracle.expected_accuracy(params, scenario.test());
        metrics.records.push_back(std::move(rec));
    };

    auto finalize_round = [&](int round, int steps_in_round) {
        if (round < 0) return;
        metrics.budgets.push_back(
            {round, round_ledger.validation, round_ledger.candidate, round_ledger.training});
        const auto expected = expected_round_parts(cfg, steps_in_round);
        if (round_ledger.validation != expected[0] || round_ledger.candidate != expected[1] ||
            round_ledger.training != expected[2])
            throw numeric_error("budget accounting mismatch at round " + std::to_string(round) +
                                ": measured " + std::to_string(round_ledger.total()) +
                                " rollouts, expected " +
                                std::to_string(expected[0] + expected[1] + expected[2]));
    };

    auto begin_round = [&](int round, int step) {
        if (cfg.selector == SelectorKind::DIRECT_VAL) return;
        pool = scenario.draw_pool(cfg.fixed_pool ? 0 : round);
        rebuild_index();
        if (!opts.dump_pools_dir.empty() && !(cfg.fixed_pool && round > 0))
            write_pool_file(opts.dump_pools_dir + "/pool_round_" + std::to_string(round) + ".txt",
                            pool, /*include_corruption=*/false);

        std::vector<int> pool_ids;
        pool_ids.reserve(pool.size());
        for (const Problem& p : pool) pool_ids.push_back(p.id);

        MetricRecord rec;
        rec.kind = MetricRecord::Kind::ROUND;
        rec.step = step;
        rec.round_index = round;
        rec.selector = selector_name;
        rec.metric = metric_name;
        rec.seed = cfg.seed;
        rec.degenerate_flag = 0;

        const RoundStreams streams{cfg.seed, static_cast<std::uint64_t>(round)};
        RoundDetail det;
        det.round_index = round;

        switch (cfg.selector) {
            case SelectorKind::GRADALIGN: {
                SelectionRound sr = run_selection_round(params, pool, scenario.validation(),
                                                        cfg.selection, cfg.grpo, scenario.oracle(),
                                                        streams, &round_ledger);
                selected_ids = sr.selected_ids;
                round_degenerate = sr.degenerate;
                rec.degenerate_flag = sr.degenerate ? 1 : 0;
                detail::score_stats(sr.scores, rec);
                det.candidate_ids = std::move(sr.candidate_ids);
                det.scores = std::move(sr.scores);
                det.pass_rates = std::move(sr.per_candidate_pass_rate);
                det.degenerate = sr.degenerate;
                break;
            }
            case SelectorKind::RANDOM: {
                RngStream rng = derive_stream(cfg.seed, "random-select",
                                              static_cast<std::uint64_t>(round));
                selected_ids = random_select(pool_ids, cfg.selection.selection_ratio, rng);
                round_degenerate = false;
                break;
            }
            case SelectorKind::ACC_GREEDY: {
                std::vector<double> rates;
                rates.reserve(pool.size());
                for (const Problem& p : pool) {
                    RngStream rng = streams.candidate(p.id);
                    rates.push_back(candidate_pass_rate(params, p, cfg.selection.k_r,
                                                        scenario.oracle(), rng, &round_ledger));
                }
                selected_ids = acc_greedy_select(rates, pool_ids, cfg.selection.selection_ratio);
                round_degenerate = false;
                det.candidate_ids = pool_ids;
                det.pass_rates = std::move(rates);
                break;
            }
            case SelectorKind::ALIGN: {
                std::vector<GradientVec> grads;
                std::vector<double> rates;
                grads.reserve(pool.size());
                rates.reserve(pool.size());
                for (const Problem& p : pool) {
                    RngStream rng = streams.candidate(p.id);
                    CandidateEstimate est =
                        candidate_gradient(params, p, cfg.selection.k_r, scenario.oracle(),
                                           cfg.grpo, cfg.selection.use_normalized_advantages, rng,
                                           &round_ledger);
                    grads.push_back(std::move(est.gradient));
                    rates.push_back(est.pass_rate);
                }
                RngStream fallback = streams.fallback();
                AlignSelection sel =
                    align_select(grads, pool_ids, cfg.selection.selection_ratio, fallback);
                selected_ids = std::move(sel.selected_ids);
                round_degenerate = sel.degenerate;
                rec.degenerate_flag = sel.degenerate ? 1 : 0;
                detail::score_stats(sel.scores, rec);
                det.candidate_ids = pool_ids;
                det.scores = std::move(sel.scores);
                det.pass_rates = std::move(rates);
                det.degenerate = sel.degenerate;
                break;
            }
            case SelectorKind::DIRECT_VAL:
                break;
        }

        rec.selected_ids = selected_ids;
        if (cfg.scenario.kind == ScenarioKind::NOISY_REWARDS)
            rec.corrupted_ratio = corrupted_selection_ratio(selected_ids, scenario.corrupted_ids());
        if (cfg.scenario.kind == ScenarioKind::IMBALANCED)
            rec.target_ratio = domain_selection_ratio(selected_ids, pool, DomainTag::TARGET);
        if (!det.candidate_ids.empty()) {
            det.corrupted.reserve(det.candidate_ids.size());
            for (int id : det.candidate_ids)
                det.corrupted.push_back(scenario.oracle().is_corrupted(id) ? 1 : 0);
            metrics.round_details.push_back(std::move(det));
        }
        metrics.records.push_back(std::move(rec));
        cycler.reset(selected_ids, cfg.seed, round);
    };

    auto train_step = [&](int step) {
        const std::vector<int> batch = [&] {
            if (cfg.selector == SelectorKind::DIRECT_VAL) {
                RngStream rng = derive_stream(cfg.seed, "direct-val-batch",
                                              static_cast<std::uint64_t>(step));
                return direct_val_batch(scenario.validation(), cfg.n_train, rng);
            }
            return cycler.next(cfg.n_train, cfg.seed, round_index);
        }();

        const int k = cfg.rollouts_per_training_problem;
        struct BatchEntry {
            const Problem* problem;
            RolloutGroup group;
        };
        std::vector<BatchEntry> entries;
        entries.reserve(batch.size());
        for (std::size_t pos = 0; pos < batch.size(); ++pos) {
            const int id = batch[pos];
            auto it = problems_by_id.find(id);
            if (it == problems_by_id.end())
                throw input_error("training batch references unknown problem " + std::to_string(id));
            const Problem& problem = *it->second;
            // position enters the stream key so with-replacement duplicates
            // get independent rollouts
            RngStream rng = derive_stream(cfg.seed, "train", static_cast<std::uint64_t>(step),
                                          (static_cast<std::uint64_t>(pos) << 32) |
                                              static_cast<std::uint32_t>(id));
            RolloutGroup group = sample_answers(params, problem, k, rng);
            group.rewards.reserve(k);
            for (int answer : group.answers)
                group.rewards.push_back(scenario.oracle().judge(problem, answer, rng));
            round_ledger.training += k;
            entries.push_back({&problem, std::move(group)});
        }

        try {
            if (cfg.grpo.inner_epochs == 1 && cfg.grpo.beta_kl == 0.0) {
                std::vector<std::pair<std::int64_t, GradientVec>> grads;
                grads.reserve(entries.size());
                for (const BatchEntry& e : entries) {
                    const std::vector<double> adv = advantage_vector(e.group.rewards, cfg.grpo);
                    grads.emplace_back(e.problem->id,
                                       surrogate_gradient(params, *e.problem, e.group, adv));
                }
                optimizer_step(opt, params, mean_by_id(std::move(grads)), cfg.grpo);
            } else {
                const PolicyParams old_params = params;
                for (int epoch = 0; epoch < cfg.grpo.inner_epochs; ++epoch) {
                    std::vector<std::pair<std::int64_t, GradientVec>> grads;
                    grads.reserve(entries.size());
                    for (const BatchEntry& e : entries) {
                        const std::vector<double> adv = advantage_vector(e.group.rewards, cfg.grpo);
                        auto [loss, grad] = clipped_loss_and_gradient(
                            params, old_params, reference, *e.problem, e.group, adv, cfg.grpo);
                        (void)loss;
                        grads.emplace_back(e.problem->id, std::move(grad));
                    }
                    optimizer_step(opt, params, mean_by_id(std::move(grads)), cfg.grpo);
                }
            }
        } catch (const numeric_error& e) {
            throw numeric_error("step " + std::to_string(step) + ": " + e.what());
        }
    };

    for (int step = start_step; step < cfg.total_steps; ++step) {
        if (step % cfg.eval_every == 0) record_eval(step);
        if (step % interval == 0) {
            const int round = step / interval;
            if (round > 0) finalize_round(round - 1, interval);
            round_ledger.reset();
            round_index = round;
            begin_round(round, step);
        }
        train_step(step);
        if (step == opts.checkpoint_at_step && !opts.checkpoint_path.empty()) {
            Checkpoint cp;
            cp.seed = cfg.seed;
            cp.step_done = step;
            cp.params = params;
            cp.opt = opt;
            cp.round_index = round_index;
            cp.selected_ids = selected_ids;
            cp.round_degenerate = round_degenerate;
            cp.batch_order = cycler.order;
            cp.batch_cursor = cycler.cursor;
            cp.batch_cycle = cycler.cycle;
            cp.round_ledger = round_ledger;
            cp.records = metrics.records;
            cp.budgets = metrics.budgets;
            save_checkpoint(opts.checkpoint_path, cp);
            if (opts.stop_after_checkpoint) {
                metrics.stopped_at_checkpoint = true;
                return metrics;
            }
        }
    }

    record_eval(cfg.total_steps);
    finalize_round(round_index, cfg.total_steps - round_index * interval);
    if (!opts.dump_pools_dir.empty())
        scenario.write_ground_truth(opts.dump_pools_dir + "/ground_truth.txt");
    return metrics;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

inline std::optional<double> pearson_correlation(std::span<const double> x,
                                                 std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw input_error("pearson: need two equal-length vectors");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double cxy = 0.0, cxx = 0.0, cyy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cxy += (x[i] - mx) * (y[i] - my);
        cxx += (x[i] - mx) * (x[i] - mx);
        cyy += (y[i] - my) * (y[i] - my);
    }
    if (cxx < 1e-24 || cyy < 1e-24) return std::nullopt; // constant vector: undefined
    return cxy / std::sqrt(cxx * cyy);
}

struct SampleSizeCorrelation {
    int k_v = 0;
    std::optional<double> pearson; // missing when a score vector was constant
};

// Score the round-0 candidate pool twice with independent seeds at each k_v
// and report how well the two rankings agree.
inline std::vector<SampleSizeCorrelation> ablate_sample_size(
    const ExperimentConfig& cfg, std::span<const int> kv_list,
    std::pair<std::uint64_t, std::uint64_t> seed_pair) {
    if (kv_list.size() < 2) throw input_error("ablate_sample_size: need at least two k_v values");
    for (std::size_t i = 0; i + 1 < kv_list.size(); ++i)
        if (kv_list[i] >= kv_list[i + 1])
            throw input_error("ablate_sample_size: kv_list must be strictly ascending");
    if (kv_list.front() < 2) throw input_error("ablate_sample_size: k_v must be >= 2");
    cfg.validate();

    Scenario scenario(cfg.scenario, cfg.seed, cfg.validation_size, cfg.test_size);
    const std::vector<Problem> pool = scenario.draw_pool(0);
    const PolicyParams params = scenario.initial_params();

    auto scores_for = [&](std::uint64_t seed, int k) {
        const RoundStreams streams{seed, 0};
        const ValidationGradientResult val =
            validation_gradient(params, scenario.validation(), k, cfg.grpo,
                                cfg.selection.use_normalized_advantages, streams);
        std::vector<double> scores;
        scores.reserve(pool.size());
        for (const Problem& p : pool) {
            RngStream rng = streams.candidate(p.id);
            const CandidateEstimate est =
                candidate_gradient(params, p, k, scenario.oracle(), cfg.grpo,
                                   cfg.selection.use_normalized_advantages, rng);
            scores.push_back(alignment_score(est.gradient, val.gradient, cfg.selection.metric));
        }
        return scores;
    };

    std::vector<SampleSizeCorrelation> out;
    out.reserve(kv_list.size());
    for (int k : kv_list) {
        const std::vector<double> a = scores_for(seed_pair.first, k);
        const std::vector<double> b = scores_for(seed_pair.second, k);
        out.push_back({k, pearson_correlation(a, b)});
    }
    return out;
}

struct MetricAblationResult {
    RunMetrics cosine_run;
    RunMetrics inner_run;
    std::vector<double> clean_scores_cosine;
    std::vector<double> corrupted_scores_cosine;
    std::vector<double> clean_scores_inner;
    std::vector<double> corrupted_scores_inner;
};

inline std::optional<double> mean_corrupted_ratio(const RunMetrics& metrics) {
    double sum = 0.0;
    int n = 0;
    for (const MetricRecord& r : metrics.records)
        if (r.kind == MetricRecord::Kind::ROUND && r.corrupted_ratio) {
            sum += *r.corrupted_ratio;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

inline std::optional<double> mean_target_ratio(const RunMetrics& metrics) {
    double sum = 0.0;
    int n = 0;
    for (const MetricRecord& r : metrics.records)
        if (r.kind == MetricRecord::Kind::ROUND && r.target_ratio) {
            sum += *r.target_ratio;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

// Two matched runs differing only in the alignment metric, with the per-round
// clean/corrupted score distributions pulled out for the histogram analysis.
inline MetricAblationResult ablate_metric(const ExperimentConfig& cfg) {
    if (cfg.scenario.kind != ScenarioKind::NOISY_REWARDS)
        throw config_error("ablate_metric requires the noisy_rewards scenario");
    ExperimentConfig cosine_cfg = cfg;
    cosine_cfg.selector = SelectorKind::GRADALIGN;
    cosine_cfg.selection.metric = AlignmentMetric::COSINE;
    ExperimentConfig inner_cfg = cosine_cfg;
    inner_cfg.selection.metric = AlignmentMetric::INNER_PRODUCT;

    MetricAblationResult out;
    out.cosine_run = run_experiment(cosine_cfg);
    out.inner_run = run_experiment(inner_cfg);

    auto collect = [](const RunMetrics& run, std::vector<double>& clean,
                      std::vector<double>& corrupted) {
        for (const RoundDetail& det : run.round_details) {
            if (det.scores.empty() || det.degenerate) continue;
            for (std::size_t i = 0; i < det.scores.size(); ++i)
                (det.corrupted[i] ? corrupted : clean).push_back(det.scores[i]);
        }
    };
    collect(out.cosine_run, out.clean_scores_cosine, out.corrupted_scores_cosine);
    collect(out.inner_run, out.clean_scores_inner, out.corrupted_scores_inner);
    return out;
}

// ---------------------------------------------------------------------------
// Score-distribution separation (scale-free, comparable across metrics).
// ---------------------------------------------------------------------------

inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw input_error("quantile of empty vector");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

struct ScoreSeparation {
    double clean_median = 0.0;
    double corrupted_median = 0.0;
    double standardized = 0.0; // median gap over pooled IQR
};

inline ScoreSeparation score_separation(std::vector<double> clean, std::vector<double> corrupted) {
    if (clean.empty() || corrupted.empty())
        throw input_error("score_separation: both groups must be non-empty");
    ScoreSeparation out;
    out.clean_median = quantile(clean, 0.5);
    out.corrupted_median = quantile(corrupted, 0.5);
    std::vector<double> pooled = clean;
    pooled.insert(pooled.end(), corrupted.begin(), corrupted.end());
    const double iqr = quantile(pooled, 0.75) - quantile(pooled, 0.25);
    out.standardized = (out.clean_median - out.corrupted_median) / std::max(iqr, 1e-12);
    return out;
}

} // namespace gradalign
