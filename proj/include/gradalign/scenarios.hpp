#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/oracle.hpp"
#include "gradalign/policy.hpp"
#include "gradalign/problem.hpp"
#include "gradalign/reward_oracle.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/textio.hpp"

namespace gradalign {

enum class ScenarioKind { NOISY_REWARDS, IMBALANCED, LOW_UTILITY };

inline std::string_view to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::NOISY_REWARDS: return "noisy_rewards";
        case ScenarioKind::IMBALANCED: return "imbalanced";
        case ScenarioKind::LOW_UTILITY: return "low_utility";
    }
    return "?";
}

inline ScenarioKind scenario_kind_from_string(std::string_view s) {
    if (s == "noisy_rewards") return ScenarioKind::NOISY_REWARDS;
    if (s == "imbalanced") return ScenarioKind::IMBALANCED;
    if (s == "low_utility") return ScenarioKind::LOW_UTILITY;
    throw config_error("unknown scenario kind: '" + std::string(s) + "'");
}

// How problems occupy feature space. Each domain has a small dictionary of
// skill directions; a problem's features are one skill plus isotropic noise,
// so problems sharing a skill have genuinely coherent gradients. TARGET and
// OFFTOPIC domains live on disjoint coordinate halves, so their policy
// gradients are exactly orthogonal under the linear-softmax policy.
struct FeatureGeometry {
    int feature_dim = 8;
    int answer_count = 4;
    double feature_scale = 1.0; // overall scale of feature vectors
    double teacher_scale = 1.0; // std of teacher weight entries
    int skill_count = 4;        // skill directions per domain cluster
    double skill_noise = 0.5;   // rms of the per-problem deviation from its skill

    void validate() const {
        if (feature_dim < 2) throw config_error("geometry: feature_dim must be >= 2");
        if (answer_count < 2) throw config_error("geometry: answer_count must be >= 2");
        if (feature_scale <= 0.0) throw config_error("geometry: feature_scale must be > 0");
        if (teacher_scale <= 0.0) throw config_error("geometry: teacher_scale must be > 0");
        if (skill_count < 1) throw config_error("geometry: skill_count must be >= 1");
        if (skill_noise < 0.0) throw config_error("geometry: skill_noise must be >= 0");
    }
};

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::NOISY_REWARDS;
    int pool_size = 128;
    double corrupt_fraction = 0.5; // NOISY_REWARDS
    double bernoulli_p = 0.5;      // NOISY_REWARDS
    double target_fraction = 0.10; // IMBALANCED
    double easy_fraction = 0.5;    // LOW_UTILITY
    FeatureGeometry geometry;

    void validate() const {
        geometry.validate();
        if (pool_size < 2) throw config_error("scenario: pool_size must be >= 2");
        if (corrupt_fraction < 0.0 || corrupt_fraction > 1.0)
            throw config_error("scenario: corrupt_fraction must be in [0,1]");
        if (bernoulli_p <= 0.0 || bernoulli_p >= 1.0)
            throw config_error("scenario: bernoulli_p must be in (0,1)");
        if (target_fraction < 0.0 || target_fraction > 1.0)
            throw config_error("scenario: target_fraction must be in [0,1]");
        if (easy_fraction < 0.0 || easy_fraction > 1.0)
            throw config_error("scenario: easy_fraction must be in [0,1]");
    }
};

// Initial-policy pass-probability bands used by the difficulty construction.
// Mid-difficulty problems sit inside the [0.2, 0.8] band; easy problems are
// saturated under the initial policy. Clean problems of the noisy scenario
// spread from mid difficulty to near saturation, so the corrupted subset
// (pinned at a 50% pass rate) mimics the most informative problems.
inline constexpr double kMidDifficultyLo = 0.3;
inline constexpr double kMidDifficultyHi = 0.7;
inline constexpr double kEasyDifficultyLo = 0.98;
inline constexpr double kEasyDifficultyHi = 0.995;
inline constexpr double kNoisyCleanLo = 0.4;
inline constexpr double kNoisyCleanHi = 0.995;

enum class FeatureSupport { FULL, FIRST_HALF, SECOND_HALF };

namespace detail {

inline std::pair<int, int> support_range(FeatureSupport support, int dim) {
    const int half = dim / 2;
    switch (support) {
        case FeatureSupport::FULL: return {0, dim};
        case FeatureSupport::FIRST_HALF: return {0, half};
        case FeatureSupport::SECOND_HALF: return {half, dim};
    }
    return {0, dim};
}

// p_ref under logits c*z is nondecreasing in c when ref = argmax z; solve
// softmax(c*z)_ref = target by bisection.
inline double solve_feature_scale(std::span<const double> z, int ref, double target) {
    auto prob_at = [&](double c) {
        double zmax = -1e300;
        for (double v : z) zmax = std::max(zmax, c * v);
        double total = 0.0;
        for (double v : z) total += std::exp(c * v - zmax);
        return std::exp(c * z[ref] - zmax) / total;
    };
    double hi = 1.0;
    int doublings = 0;
    while (prob_at(hi) < target) {
        hi *= 2.0;
        if (++doublings > 80)
            throw config_error("scenario: cannot reach difficulty target (degenerate logit gaps)");
    }
    double lo = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (prob_at(mid) < target) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

// Draws problems whose reference answers come from a fixed teacher weight
// matrix, so problems generated for the pool, validation, and test splits
// share structure and their gradients genuinely cohere.
class ProblemFactory {
public:
    ProblemFactory(FeatureGeometry geometry, RngStream teacher_stream)
        : geometry_(geometry),
          teacher_(geometry.answer_count, geometry.feature_dim) {
        geometry_.validate();
        for (double& w : teacher_.weights) w = geometry_.teacher_scale * teacher_stream.normal();
        skills_[0] = draw_skills(FeatureSupport::FULL, teacher_stream);
        skills_[1] = draw_skills(FeatureSupport::FIRST_HALF, teacher_stream);
        skills_[2] = draw_skills(FeatureSupport::SECOND_HALF, teacher_stream);
        for (int slot = 0; slot < 3; ++slot) {
            skill_refs_[slot].reserve(skills_[slot].size());
            for (const auto& s : skills_[slot]) skill_refs_[slot].push_back(teacher_argmax(s));
        }
    }

    const FeatureGeometry& geometry() const { return geometry_; }
    const PolicyParams& teacher() const { return teacher_; }

    // Plain teacher-consistent problem: Gaussian features on the support,
    // reference answer = teacher argmax.
    Problem make_problem(int id, DomainTag tag, FeatureSupport support, RngStream& rng) const {
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            std::vector<double> x = draw_features(support, rng);
            const int ref = strict_argmax(x);
            if (ref < 0) continue;
            return assemble(id, tag, std::move(x), ref);
        }
        throw config_error("scenario: failed to draw a problem with a unique teacher answer");
    }

    // Problem whose pass probability under the teacher policy lands at a
    // point drawn from [difficulty_lo, difficulty_hi]. Anchored problems use
    // a margin-aligned feature direction, which saturates at small feature
    // norm; unanchored ones scale a random direction.
    Problem make_problem_with_difficulty(int id, DomainTag tag, FeatureSupport support,
                                         double difficulty_lo, double difficulty_hi,
                                         bool anchored, RngStream& rng) const {
        const double floor_prob = 1.0 / geometry_.answer_count;
        if (difficulty_lo <= floor_prob)
            throw config_error("scenario: difficulty target must exceed 1/answer_count");
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const double target = difficulty_lo + (difficulty_hi - difficulty_lo) * rng.next_double();
            std::vector<double> x = anchored ? draw_anchored_features(support, rng)
                                             : draw_features(support, rng);
            const int ref = strict_argmax(x);
            if (ref < 0) continue;
            std::vector<double> z(geometry_.answer_count, 0.0);
            for (int a = 0; a < geometry_.answer_count; ++a)
                for (int j = 0; j < geometry_.feature_dim; ++j)
                    z[a] += teacher_.weight(a, j) * x[j];
            const double scale = detail::solve_feature_scale(z, ref, target);
            for (double& v : x) v *= scale;
            return assemble(id, tag, std::move(x), ref);
        }
        throw config_error("scenario: failed to hit difficulty target after " +
                           std::to_string(kMaxAttempts) + " attempts");
    }

private:
    static constexpr int kMaxAttempts = 100;

    static int support_slot(FeatureSupport support) {
        switch (support) {
            case FeatureSupport::FULL: return 0;
            case FeatureSupport::FIRST_HALF: return 1;
            case FeatureSupport::SECOND_HALF: return 2;
        }
        return 0;
    }

    std::vector<std::vector<double>> draw_skills(FeatureSupport support, RngStream& rng) const {
        const auto [lo, hi] = detail::support_range(support, geometry_.feature_dim);
        std::vector<std::vector<double>> skills(geometry_.skill_count);
        for (auto& s : skills) {
            s.assign(geometry_.feature_dim, 0.0);
            double norm = 0.0;
            for (int j = lo; j < hi; ++j) {
                s[j] = rng.normal();
                norm += s[j] * s[j];
            }
            norm = std::sqrt(norm);
            for (int j = lo; j < hi; ++j) s[j] /= norm;
        }
        return skills;
    }

    // One skill direction plus isotropic noise on the support coordinates.
    // Problems of a skill share the skill's reference answer; a draw whose
    // teacher argmax disagrees with it is rejected so within-skill gradients
    // stay coherent.
    std::vector<double> draw_features(FeatureSupport support, RngStream& rng) const {
        const auto [lo, hi] = detail::support_range(support, geometry_.feature_dim);
        const int slot = support_slot(support);
        const auto& skills = skills_[slot];
        const std::size_t pick = rng.next_below(skills.size());
        const auto& skill = skills[pick];
        const int skill_ref = skill_refs_[slot][pick];
        const double noise_sd = geometry_.skill_noise / std::sqrt(static_cast<double>(hi - lo));
        std::vector<double> x(geometry_.feature_dim, 0.0);
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            for (int j = lo; j < hi; ++j)
                x[j] = geometry_.feature_scale * (skill[j] + noise_sd * rng.normal());
            if (strict_argmax(x) == skill_ref) return x;
        }
        throw config_error("scenario: cannot draw features consistent with the skill answer");
    }

    // Direction of the reference row's margin over the other rows, plus noise
    // for diversity. Large logit gap per unit feature norm.
    std::vector<double> draw_anchored_features(FeatureSupport support, RngStream& rng) const {
        const auto [lo, hi] = detail::support_range(support, geometry_.feature_dim);
        const int ref = static_cast<int>(rng.next_below(geometry_.answer_count));
        std::vector<double> x(geometry_.feature_dim, 0.0);
        for (int j = lo; j < hi; ++j) {
            double other_mean = 0.0;
            for (int a = 0; a < geometry_.answer_count; ++a)
                if (a != ref) other_mean += teacher_.weight(a, j);
            other_mean /= geometry_.answer_count - 1;
            x[j] = teacher_.weight(ref, j) - other_mean;
        }
        double norm = 0.0;
        for (double v : x) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-9) return draw_features(support, rng);
        for (int j = lo; j < hi; ++j) x[j] = x[j] / norm + 0.25 * rng.normal();
        return x;
    }

    int teacher_argmax(std::span<const double> x) const {
        double best = -1e300;
        int ref = 0;
        for (int a = 0; a < geometry_.answer_count; ++a) {
            double z = 0.0;
            for (int j = 0; j < geometry_.feature_dim; ++j) z += teacher_.weight(a, j) * x[j];
            if (z > best) {
                best = z;
                ref = a;
            }
        }
        return ref;
    }

    // Teacher argmax, or -1 if the top two logits are too close to define a
    // stable reference.
    int strict_argmax(std::span<const double> x) const {
        double best = -1e300, second = -1e300;
        int ref = -1;
        for (int a = 0; a < geometry_.answer_count; ++a) {
            double z = 0.0;
            for (int j = 0; j < geometry_.feature_dim; ++j) z += teacher_.weight(a, j) * x[j];
            if (z > best) {
                second = best;
                best = z;
                ref = a;
            } else if (z > second) {
                second = z;
            }
        }
        return (best - second) > 1e-9 ? ref : -1;
    }

    Problem assemble(int id, DomainTag tag, std::vector<double> x, int ref) const {
        Problem p;
        p.id = id;
        p.features = std::move(x);
        p.answer_count = geometry_.answer_count;
        p.reference_answer = ref;
        p.domain_tag = tag;
        p.corruption = Corruption::clean();
        return p;
    }

    FeatureGeometry geometry_;
    PolicyParams teacher_;
    std::array<std::vector<std::vector<double>>, 3> skills_;
    std::array<std::vector<int>, 3> skill_refs_;
};

// A generated pool: public problems (corruption field always CLEAN — ground
// truth never reaches selectors), the judging oracle holding the true modes,
// and the initial policy the difficulty construction is calibrated against.
struct PoolResult {
    std::vector<Problem> problems;
    RewardOracle oracle;
    PolicyParams initial_params;
};

inline int fraction_count(double fraction, int total) {
    return static_cast<int>(std::llround(fraction * total));
}

namespace detail {

// First n positions of a shuffled index vector; drawn before any problem so
// the flagged subset is independent of problem content.
inline std::unordered_set<int> draw_positions(int pool_size, int count, RngStream& rng) {
    std::vector<int> idx(pool_size);
    for (int i = 0; i < pool_size; ++i) idx[i] = i;
    rng.shuffle(idx);
    return std::unordered_set<int>(idx.begin(), idx.begin() + count);
}

inline PoolResult generate_pool(const ScenarioSpec& spec, RngStream& rng,
                                const ProblemFactory& factory, int first_id) {
    spec.validate();
    PoolResult out;
    out.initial_params = PolicyParams(spec.geometry.answer_count, spec.geometry.feature_dim);
    out.problems.reserve(spec.pool_size);

    switch (spec.kind) {
        case ScenarioKind::NOISY_REWARDS: {
            // Content is drawn the same way for clean and corrupted ids; only
            // reward generation differs. Difficulty is calibrated against the
            // teacher policy, which is also the run's initial policy.
            out.initial_params = factory.teacher();
            const int n_corrupt = fraction_count(spec.corrupt_fraction, spec.pool_size);
            const auto corrupt_pos = draw_positions(spec.pool_size, n_corrupt, rng);
            for (int i = 0; i < spec.pool_size; ++i) {
                Problem p = factory.make_problem_with_difficulty(
                    first_id + i, DomainTag::TARGET, FeatureSupport::FULL, kNoisyCleanLo,
                    kNoisyCleanHi, false, rng);
                out.oracle.register_problem(p.id, corrupt_pos.count(i)
                                                      ? Corruption::bernoulli(spec.bernoulli_p)
                                                      : Corruption::clean());
                out.problems.push_back(std::move(p));
            }
            break;
        }
        case ScenarioKind::IMBALANCED: {
            const int n_target = fraction_count(spec.target_fraction, spec.pool_size);
            const auto target_pos = draw_positions(spec.pool_size, n_target, rng);
            for (int i = 0; i < spec.pool_size; ++i) {
                const bool is_target = target_pos.count(i) != 0;
                Problem p = factory.make_problem(
                    first_id + i, is_target ? DomainTag::TARGET : DomainTag::OFFTOPIC,
                    is_target ? FeatureSupport::FIRST_HALF : FeatureSupport::SECOND_HALF, rng);
                out.oracle.register_problem(p.id, Corruption::clean());
                out.problems.push_back(std::move(p));
            }
            break;
        }
        case ScenarioKind::LOW_UTILITY: {
            out.initial_params = factory.teacher();
            const int n_easy = fraction_count(spec.easy_fraction, spec.pool_size);
            const auto easy_pos = draw_positions(spec.pool_size, n_easy, rng);
            for (int i = 0; i < spec.pool_size; ++i) {
                const bool easy = easy_pos.count(i) != 0;
                Problem p = easy ? factory.make_problem_with_difficulty(
                                       first_id + i, DomainTag::TARGET, FeatureSupport::FULL,
                                       kEasyDifficultyLo, kEasyDifficultyHi, true, rng)
                                 : factory.make_problem_with_difficulty(
                                       first_id + i, DomainTag::TARGET, FeatureSupport::FULL,
                                       kMidDifficultyLo, kMidDifficultyHi, false, rng);
                out.oracle.register_problem(p.id, Corruption::clean());
                out.problems.push_back(std::move(p));
            }
            break;
        }
    }
    return out;
}

} // namespace detail

// Standalone pool generators. Each draws its own teacher from the stream;
// runs that need pool, validation, and test splits sharing one teacher go
// through Scenario below.
inline PoolResult generate_noisy_pool(const ScenarioSpec& spec, RngStream& rng, int first_id = 0) {
    if (spec.kind != ScenarioKind::NOISY_REWARDS)
        throw config_error("generate_noisy_pool: spec.kind must be noisy_rewards");
    ProblemFactory factory(spec.geometry, RngStream(rng.next_u64()));
    return detail::generate_pool(spec, rng, factory, first_id);
}

inline PoolResult generate_imbalanced_pool(const ScenarioSpec& spec, RngStream& rng,
                                           int first_id = 0) {
    if (spec.kind != ScenarioKind::IMBALANCED)
        throw config_error("generate_imbalanced_pool: spec.kind must be imbalanced");
    ProblemFactory factory(spec.geometry, RngStream(rng.next_u64()));
    return detail::generate_pool(spec, rng, factory, first_id);
}

inline PoolResult generate_low_utility_pool(const ScenarioSpec& spec, RngStream& rng,
                                            int first_id = 0) {
    if (spec.kind != ScenarioKind::LOW_UTILITY)
        throw config_error("generate_low_utility_pool: spec.kind must be low_utility");
    ProblemFactory factory(spec.geometry, RngStream(rng.next_u64()));
    return detail::generate_pool(spec, rng, factory, first_id);
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar: corruption modes per id, one line per problem, kept
// out of the pool files selectors can see.
// ---------------------------------------------------------------------------

inline void write_ground_truth_sidecar(const std::string& path, const RewardOracle& oracle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open sidecar for writing: " + path);
    std::vector<std::pair<int, Corruption>> entries(oracle.corruption_map().begin(),
                                                    oracle.corruption_map().end());
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [id, c] : entries) {
        out << "id=" << id << " corruption=" << to_string(c.mode)
            << " p=" << format_double(c.p) << '\n';
    }
    if (!out) throw config_error("failed writing sidecar: " + path);
}

inline std::unordered_map<int, Corruption> read_ground_truth_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open sidecar: " + path);
    std::unordered_map<int, Corruption> out;
    std::string line;
    while (std::getline(in, line)) {
        const std::string_view trimmed = trim(line);
        if (trimmed.empty()) continue;
        int id = 0;
        Corruption c;
        for (std::string_view field : split(trimmed, ' ')) {
            if (field.empty()) continue;
            const std::size_t eq = field.find('=');
            if (eq == std::string_view::npos) throw config_error("sidecar: bad field");
            const std::string_view key = field.substr(0, eq);
            const std::string_view val = field.substr(eq + 1);
            if (key == "id") id = static_cast<int>(parse_int(val, "id"));
            else if (key == "corruption") c.mode = corruption_mode_from_string(val);
            else if (key == "p") c.p = parse_double(val, "p");
            else throw config_error("sidecar: unknown field '" + std::string(key) + "'");
        }
        out[id] = c;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario: one teacher, fixed validation/test splits, and a fresh candidate
// pool per selection round. Ids are allocated deterministically so a resumed
// run re-derives identical pools.
// ---------------------------------------------------------------------------

class Scenario {
public:
    Scenario(ScenarioSpec spec, std::uint64_t seed, int validation_size, int test_size)
        : spec_(std::move(spec)), seed_(seed),
          factory_(spec_.geometry, derive_stream(seed, "teacher")) {
        spec_.validate();
        if (validation_size < 1 || test_size < 1)
            throw config_error("scenario: validation and test sizes must be >= 1");
        RngStream val_rng = derive_stream(seed, "valset");
        RngStream test_rng = derive_stream(seed, "testset");
        validation_.reserve(validation_size);
        test_.reserve(test_size);
        for (int i = 0; i < validation_size; ++i)
            validation_.push_back(make_eval_problem(i, val_rng));
        for (int i = 0; i < test_size; ++i)
            test_.push_back(make_eval_problem(validation_size + i, test_rng));
        for (const Problem& p : validation_) oracle_.register_problem(p.id, Corruption::clean());
        for (const Problem& p : test_) oracle_.register_problem(p.id, Corruption::clean());
        pool_id_base_ = validation_size + test_size;
        initial_params_ = spec_.kind == ScenarioKind::IMBALANCED
                              ? PolicyParams(spec_.geometry.answer_count, spec_.geometry.feature_dim)
                              : factory_.teacher();
    }

    const ScenarioSpec& spec() const { return spec_; }
    const std::vector<Problem>& validation() const { return validation_; }
    const std::vector<Problem>& test() const { return test_; }
    const PolicyParams& initial_params() const { return initial_params_; }
    const RewardOracle& oracle() const { return oracle_; }

    // Candidate pool for one round: a pure function of (seed, round), so
    // replaying a round re-derives the identical pool.
    std::vector<Problem> draw_pool(int round) {
        RngStream rng = derive_stream(seed_, "pool", static_cast<std::uint64_t>(round));
        PoolResult pool = detail::generate_pool(spec_, rng, factory_,
                                                pool_id_base_ + round * spec_.pool_size);
        for (const auto& [id, c] : pool.oracle.corruption_map()) oracle_.register_problem(id, c);
        return std::move(pool.problems);
    }

    std::unordered_set<int> corrupted_ids() const {
        std::unordered_set<int> out;
        for (const auto& [id, c] : oracle_.corruption_map())
            if (!c.is_clean()) out.insert(id);
        return out;
    }

    void write_ground_truth(const std::string& path) const {
        write_ground_truth_sidecar(path, oracle_);
    }

private:
    Problem make_eval_problem(int id, RngStream& rng) const {
        switch (spec_.kind) {
            case ScenarioKind::NOISY_REWARDS:
                return factory_.make_problem_with_difficulty(id, DomainTag::TARGET,
                                                             FeatureSupport::FULL, kMidDifficultyLo,
                                                             kMidDifficultyHi, false, rng);
            case ScenarioKind::IMBALANCED:
                return factory_.make_problem(id, DomainTag::TARGET, FeatureSupport::FIRST_HALF, rng);
            case ScenarioKind::LOW_UTILITY:
                return factory_.make_problem_with_difficulty(id, DomainTag::TARGET,
                                                             FeatureSupport::FULL, kMidDifficultyLo,
                                                             kMidDifficultyHi, false, rng);
        }
        throw config_error("unknown scenario kind");
    }

    ScenarioSpec spec_;
    std::uint64_t seed_ = 0;
    ProblemFactory factory_;
    std::vector<Problem> validation_;
    std::vector<Problem> test_;
    PolicyParams initial_params_;
    RewardOracle oracle_;
    int pool_id_base_ = 0;
};

} // namespace gradalign
