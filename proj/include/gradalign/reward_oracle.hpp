#pragma once

#include <string>
#include <unordered_map>

#include "gradalign/errors.hpp"
#include "gradalign/problem.hpp"
#include "gradalign/rng.hpp"

namespace gradalign {

// Binary reward judge. Clean problems score 1 exactly when the answer matches
// the reference; corrupted problems draw Bernoulli(p) independent of the
// answer. The corruption map is the ground truth for diagnostics and is never
// handed to selectors; they only get judge().
class RewardOracle {
public:
    void register_problem(int id, Corruption corruption) {
        modes_[id] = corruption;
    }

    bool knows(int id) const { return modes_.count(id) != 0; }

    double judge(const Problem& problem, int answer, RngStream& rng) const {
        auto it = modes_.find(problem.id);
        if (it == modes_.end())
            throw input_error("judge: unknown problem id " + std::to_string(problem.id));
        if (answer < 0 || answer >= problem.answer_count)
            throw input_error("judge: answer out of range for problem " + std::to_string(problem.id));
        const Corruption& c = it->second;
        if (c.is_clean()) return answer == problem.reference_answer ? 1.0 : 0.0;
        return rng.bernoulli(c.p) ? 1.0 : 0.0;
    }

    bool is_corrupted(int id) const {
        auto it = modes_.find(id);
        return it != modes_.end() && !it->second.is_clean();
    }

    // Ground-truth view, read by harness diagnostics only.
    const std::unordered_map<int, Corruption>& corruption_map() const { return modes_; }

private:
    std::unordered_map<int, Corruption> modes_;
};

} // namespace gradalign
