#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/policy.hpp"

namespace gradalign {

enum class OptimizerKind { SGD, ADAMW };
enum class BaselineMode { GROUP_MEAN, LEAVE_ONE_OUT, NONE };

struct GRPOConfig {
    double epsilon_adv = 1e-8;   // advantage denominator epsilon
    double epsilon_clip = 0.2;   // ratio clipping epsilon
    double beta_kl = 0.0;
    double learning_rate = 1e-6;
    OptimizerKind optimizer = OptimizerKind::ADAMW;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    BaselineMode baseline_mode = BaselineMode::GROUP_MEAN;
    // 1 keeps training strictly on-policy; >1 reuses each batch with the
    // clipped objective against the sampling snapshot.
    int inner_epochs = 1;

    void validate() const {
        if (epsilon_adv <= 0.0) throw config_error("grpo: epsilon_adv must be > 0");
        if (epsilon_clip <= 0.0 || epsilon_clip >= 1.0) throw config_error("grpo: epsilon_clip must be in (0,1)");
        if (beta_kl < 0.0) throw config_error("grpo: beta_kl must be >= 0");
        if (learning_rate <= 0.0) throw config_error("grpo: learning_rate must be > 0");
        if (inner_epochs < 1) throw config_error("grpo: inner_epochs must be >= 1");
    }
};

// Group statistics of one rollout group. Centering uses the in-group mean and
// the population (1/k) variance.
struct AdvantageSet {
    std::vector<double> raw_centered;  // r_j - mean(r)
    std::vector<double> normalized;    // raw_centered / (std + epsilon_adv)
    double group_mean = 0.0;
    double group_std = 0.0;
    double epsilon_adv = 0.0;
};

inline AdvantageSet compute_advantages(std::span<const double> rewards, const GRPOConfig& cfg) {
    const std::size_t k = rewards.size();
    if (k < 2) throw input_error("compute_advantages: group statistics need k >= 2");
    AdvantageSet out;
    out.epsilon_adv = cfg.epsilon_adv;
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(k);
    out.group_mean = mean;
    double var = 0.0;
    out.raw_centered.reserve(k);
    for (double r : rewards) {
        const double c = r - mean;
        out.raw_centered.push_back(c);
        var += c * c;
    }
    var /= static_cast<double>(k);
    out.group_std = std::sqrt(var);
    out.normalized.reserve(k);
    if (out.group_std == 0.0) {
        out.normalized.assign(k, 0.0);
    } else {
        const double inv = 1.0 / (out.group_std + cfg.epsilon_adv);
        for (double c : out.raw_centered) out.normalized.push_back(c * inv);
    }
    return out;
}

// Advantage vector for the configured baseline. GROUP_MEAN gives the standard
// normalized GRPO advantage; LEAVE_ONE_OUT subtracts the mean of the other
// samples without normalization, which makes the estimator exactly unbiased;
// NONE passes rewards through.
inline std::vector<double> advantage_vector(std::span<const double> rewards, const GRPOConfig& cfg) {
    switch (cfg.baseline_mode) {
        case BaselineMode::GROUP_MEAN:
            return compute_advantages(rewards, cfg).normalized;
        case BaselineMode::LEAVE_ONE_OUT: {
            const std::size_t k = rewards.size();
            if (k < 2) throw input_error("leave-one-out baseline needs k >= 2");
            double total = 0.0;
            for (double r : rewards) total += r;
            std::vector<double> adv(k);
            for (std::size_t j = 0; j < k; ++j)
                adv[j] = rewards[j] - (total - rewards[j]) / static_cast<double>(k - 1);
            return adv;
        }
        case BaselineMode::NONE:
            return std::vector<double>(rewards.begin(), rewards.end());
    }
    throw config_error("unknown baseline mode");
}

// (1/k) sum_j A_j grad log pi(y_j | x). This is the g used everywhere in
// selection. The group must have been sampled under `params`.
inline GradientVec surrogate_gradient(const PolicyParams& params, const Problem& problem,
                                      const RolloutGroup& group, std::span<const double> advantages) {
    group.validate(problem);
    if (group.policy_snapshot_tag != params.snapshot_tag)
        throw on_policy_error("surrogate_gradient: group sampled under snapshot " +
                              std::to_string(group.policy_snapshot_tag) + ", params are at " +
                              std::to_string(params.snapshot_tag));
    if (advantages.size() != group.answers.size())
        throw input_error("surrogate_gradient: advantage length mismatch");
    const std::vector<double> p = answer_probabilities(params, problem);
    const int k = group.k();
    // Accumulate per-answer advantage mass, then form the gradient once:
    // sum_j A_j grad log pi(y_j) = sum_a [c_a - (sum_j A_j) p_a] x with
    // c_a = sum over j with y_j = a of A_j.
    std::vector<double> mass(params.answer_count, 0.0);
    double total_adv = 0.0;
    for (int j = 0; j < k; ++j) {
        mass[group.answers[j]] += advantages[j];
        total_adv += advantages[j];
    }
    GradientVec g(params.size());
    const double inv_k = 1.0 / static_cast<double>(k);
    for (int a = 0; a < params.answer_count; ++a) {
        const double coef = (mass[a] - total_adv * p[a]) * inv_k;
        const std::size_t base = static_cast<std::size_t>(a) * params.feature_dim;
        for (int j = 0; j < params.feature_dim; ++j)
            g[base + j] = coef * problem.features[j];
    }
    return g;
}

// Frozen snapshot taken at run start; the KL term regularizes toward it.
struct ReferencePolicy {
    PolicyParams params;
    explicit ReferencePolicy(PolicyParams p) : params(std::move(p)) {}
};

inline double kl_divergence(const PolicyParams& params, const ReferencePolicy& ref,
                            const Problem& problem) {
    const std::vector<double> p = answer_probabilities(params, problem);
    const std::vector<double> q = answer_probabilities(ref.params, problem);
    double kl = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a)
        if (p[a] > 0.0) kl += p[a] * (std::log(p[a]) - std::log(q[a]));
    return kl;
}

// d KL / d W[b,:] = p_b ((log p_b - log q_b) - KL) x.
inline GradientVec kl_gradient(const PolicyParams& params, const ReferencePolicy& ref,
                               const Problem& problem) {
    const std::vector<double> p = answer_probabilities(params, problem);
    const std::vector<double> q = answer_probabilities(ref.params, problem);
    double kl = 0.0;
    std::vector<double> log_ratio(p.size(), 0.0);
    for (std::size_t a = 0; a < p.size(); ++a) {
        log_ratio[a] = std::log(p[a]) - std::log(q[a]);
        kl += p[a] * log_ratio[a];
    }
    GradientVec g(params.size());
    for (int a = 0; a < params.answer_count; ++a) {
        const double coef = p[a] * (log_ratio[a] - kl);
        const std::size_t base = static_cast<std::size_t>(a) * params.feature_dim;
        for (int j = 0; j < params.feature_dim; ++j)
            g[base + j] = coef * problem.features[j];
    }
    return g;
}

// Clipped objective with KL regularization for one group:
//   mean_j min(rho_j A_j, clip(rho_j, 1-eps, 1+eps) A_j) - beta_kl KL(pi || pi_ref)
// with its exact gradient. The group must have been sampled under old_params.
// With params == old_params and beta_kl == 0 this reduces to the surrogate.
inline std::pair<double, GradientVec> clipped_loss_and_gradient(
    const PolicyParams& params, const PolicyParams& old_params, const ReferencePolicy& ref,
    const Problem& problem, const RolloutGroup& group, std::span<const double> advantages,
    const GRPOConfig& cfg) {
    group.validate(problem);
    if (group.policy_snapshot_tag != old_params.snapshot_tag)
        throw on_policy_error("clipped objective: group was not sampled under old_params");
    if (advantages.size() != group.answers.size())
        throw input_error("clipped objective: advantage length mismatch");

    const int k = group.k();
    const double lo = 1.0 - cfg.epsilon_clip;
    const double hi = 1.0 + cfg.epsilon_clip;
    double loss = 0.0;
    GradientVec grad(params.size());
    const double inv_k = 1.0 / static_cast<double>(k);
    for (int j = 0; j < k; ++j) {
        const int y = group.answers[j];
        const double adv = advantages[j];
        const double ratio = std::exp(log_prob(params, problem, y) - log_prob(old_params, problem, y));
        const double unclipped = ratio * adv;
        const double clipped = std::clamp(ratio, lo, hi) * adv;
        if (unclipped <= clipped) {
            loss += unclipped * inv_k;
            // d/dtheta (rho A) = A rho grad log pi
            grad.add_scaled(grad_log_prob(params, problem, y), adv * ratio * inv_k);
        } else {
            // clip saturated: the clipped value is constant in theta
            loss += clipped * inv_k;
        }
    }
    if (cfg.beta_kl > 0.0) {
        loss -= cfg.beta_kl * kl_divergence(params, ref, problem);
        grad.add_scaled(kl_gradient(params, ref, problem), -cfg.beta_kl);
    }
    return {loss, grad};
}

// ---------------------------------------------------------------------------
// Optimizer. All gradients in this project are ascent directions on expected
// reward; the step adds the lr-scaled update.
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

inline void optimizer_step(OptimizerState& state, PolicyParams& params,
                           const GradientVec& gradient, const GRPOConfig& cfg) {
    if (gradient.size() != params.size()) throw config_error("optimizer_step: gradient length mismatch");
    if (!all_finite(gradient)) throw numeric_error("optimizer_step: non-finite gradient");
    const double lr = cfg.learning_rate;
    switch (cfg.optimizer) {
        case OptimizerKind::SGD:
            for (std::size_t i = 0; i < params.size(); ++i)
                params.weights[i] += lr * gradient[i];
            break;
        case OptimizerKind::ADAMW: {
            if (state.m.size() != params.size()) state.reset(params.size());
            ++state.t;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double g = gradient[i];
                state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
                state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
                const double m_hat = state.m[i] / bc1;
                const double v_hat = state.v[i] / bc2;
                // decoupled weight decay, ascent form
                params.weights[i] += lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
                params.weights[i] -= lr * cfg.weight_decay * params.weights[i];
            }
            break;
        }
    }
    ++params.snapshot_tag;
}

} // namespace gradalign
