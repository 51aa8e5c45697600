#pragma once

#include <span>
#include <string>

#include "gradalign/errors.hpp"
#include "gradalign/gradient.hpp"
#include "gradalign/policy.hpp"

namespace gradalign {

// Closed-form accuracy oracle for clean problems. Expected accuracy per
// problem is exactly the softmax probability of the reference answer, so the
// quantity the policy gradient estimates is available analytically. Defined
// for clean rewards only: corrupted problems are rejected.
struct AccuracyOracle {
    double expected_accuracy(const PolicyParams& params, std::span<const Problem> problems) const {
        require_clean(problems);
        double total = 0.0;
        for (const Problem& p : problems)
            total += answer_probabilities(params, p)[p.reference_answer];
        return total / static_cast<double>(problems.size());
    }

    // d p_ref / d W[a,:] = p_ref (1[a = ref] - p_a) x, averaged over problems.
    GradientVec expected_accuracy_gradient(const PolicyParams& params,
                                           std::span<const Problem> problems) const {
        require_clean(problems);
        GradientVec g(params.size());
        for (const Problem& problem : problems) {
            const std::vector<double> p = answer_probabilities(params, problem);
            const double p_ref = p[problem.reference_answer];
            for (int a = 0; a < params.answer_count; ++a) {
                const double coef = p_ref * ((a == problem.reference_answer ? 1.0 : 0.0) - p[a]);
                const std::size_t base = static_cast<std::size_t>(a) * params.feature_dim;
                for (int j = 0; j < params.feature_dim; ++j)
                    g[base + j] += coef * problem.features[j];
            }
        }
        g.scale(1.0 / static_cast<double>(problems.size()));
        return g;
    }

private:
    static void require_clean(std::span<const Problem> problems) {
        if (problems.empty()) throw input_error("accuracy oracle: empty problem set");
        for (const Problem& p : problems)
            if (!p.corruption.is_clean())
                throw input_error("accuracy oracle: problem " + std::to_string(p.id) +
                                  " has corrupted rewards");
    }
};

} // namespace gradalign
