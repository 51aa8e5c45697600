#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/problem.hpp"
#include "gradalign/rng.hpp"

namespace gradalign {

// Linear-softmax policy over a discrete answer space: logit(a) = W[a,:] . x.
// Weights are stored flattened, row-major by answer index then feature index;
// GradientVec shares this layout.
struct PolicyParams {
    int answer_count = 0;
    int feature_dim = 0;
    std::vector<double> weights;
    // Bumped by the optimizer on every step; rollout groups are stamped with
    // the tag they were sampled under so stale groups can be rejected.
    std::int64_t snapshot_tag = 0;

    PolicyParams() = default;
    PolicyParams(int answers, int dim)
        : answer_count(answers), feature_dim(dim),
          weights(static_cast<std::size_t>(answers) * static_cast<std::size_t>(dim), 0.0) {}

    std::size_t size() const { return weights.size(); }
    double weight(int answer, int feature) const {
        return weights[static_cast<std::size_t>(answer) * feature_dim + feature];
    }
    double& weight(int answer, int feature) {
        return weights[static_cast<std::size_t>(answer) * feature_dim + feature];
    }
};

// k sampled answers with binary rewards for one problem under one policy
// snapshot. rewards may be empty until a judge fills them in.
struct RolloutGroup {
    int problem_id = 0;
    std::vector<int> answers;
    std::vector<double> rewards;
    std::int64_t policy_snapshot_tag = 0;

    int k() const { return static_cast<int>(answers.size()); }

    void validate(const Problem& problem) const {
        if (problem_id != problem.id) throw input_error("rollout group bound to a different problem");
        if (!rewards.empty() && rewards.size() != answers.size())
            throw input_error("rollout group: answers and rewards length mismatch");
        for (int a : answers)
            if (a < 0 || a >= problem.answer_count)
                throw input_error("rollout group: answer out of range for problem " + std::to_string(problem.id));
    }
};

inline void check_dims(const PolicyParams& params, const Problem& problem) {
    if (params.feature_dim != problem.feature_dim())
        throw config_error("feature length " + std::to_string(problem.feature_dim()) +
                           " does not match policy dim " + std::to_string(params.feature_dim));
    if (params.answer_count != problem.answer_count)
        throw config_error("answer_count " + std::to_string(problem.answer_count) +
                           " does not match policy answer_count " + std::to_string(params.answer_count));
}

inline std::vector<double> logits(const PolicyParams& params, const Problem& problem) {
    check_dims(params, problem);
    std::vector<double> out(params.answer_count, 0.0);
    for (int a = 0; a < params.answer_count; ++a) {
        double s = 0.0;
        for (int j = 0; j < params.feature_dim; ++j) s += params.weight(a, j) * problem.features[j];
        out[a] = s;
    }
    return out;
}

// Softmax with max-shift so adversarially large weights cannot overflow.
inline std::vector<double> softmax(std::span<const double> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double total = 0.0;
    for (std::size_t a = 0; a < z.size(); ++a) {
        p[a] = std::exp(z[a] - zmax);
        total += p[a];
    }
    for (double& v : p) v /= total;
    return p;
}

inline std::vector<double> answer_probabilities(const PolicyParams& params, const Problem& problem) {
    return softmax(logits(params, problem));
}

inline double log_prob(const PolicyParams& params, const Problem& problem, int answer) {
    if (answer < 0 || answer >= problem.answer_count)
        throw input_error("log_prob: answer " + std::to_string(answer) + " out of range");
    const std::vector<double> z = logits(params, problem);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - zmax);
    return (z[answer] - zmax) - std::log(total);
}

// Closed-form softmax score function: block a = (1[a = answer] - p_a) * x.
inline GradientVec grad_log_prob(const PolicyParams& params, const Problem& problem, int answer) {
    if (answer < 0 || answer >= problem.answer_count)
        throw input_error("grad_log_prob: answer " + std::to_string(answer) + " out of range");
    const std::vector<double> p = answer_probabilities(params, problem);
    GradientVec g(params.size());
    for (int a = 0; a < params.answer_count; ++a) {
        const double coef = (a == answer ? 1.0 : 0.0) - p[a];
        const std::size_t base = static_cast<std::size_t>(a) * params.feature_dim;
        for (int j = 0; j < params.feature_dim; ++j)
            g[base + j] = coef * problem.features[j];
    }
    return g;
}

// k i.i.d. draws from the policy. Rewards are left empty; stamp carries the
// policy snapshot for on-policy checks downstream.
inline RolloutGroup sample_answers(const PolicyParams& params, const Problem& problem,
                                   int k, RngStream& rng) {
    if (k < 1) throw input_error("sample_answers: k must be >= 1");
    const std::vector<double> p = answer_probabilities(params, problem);
    RolloutGroup group;
    group.problem_id = problem.id;
    group.policy_snapshot_tag = params.snapshot_tag;
    group.answers.reserve(k);
    for (int i = 0; i < k; ++i) group.answers.push_back(rng.categorical(p));
    return group;
}

} // namespace gradalign
