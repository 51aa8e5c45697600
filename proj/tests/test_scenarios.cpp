#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "gradalign/oracle.hpp"
#include "gradalign/scenarios.hpp"

using namespace gradalign;

namespace {

int count_corrupted(const RewardOracle& oracle) {
    int n = 0;
    for (const auto& [id, c] : oracle.corruption_map()) n += c.is_clean() ? 0 : 1;
    return n;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("noisy pool: zero corruption fraction leaves everything clean", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 32;
    spec.corrupt_fraction = 0.0;
    RngStream rng = derive_stream(3, "noisy");
    const PoolResult pool = generate_noisy_pool(spec, rng);
    REQUIRE(count_corrupted(pool.oracle) == 0);
    REQUIRE(pool.problems.size() == 32);
}

TEST_CASE("noisy pool: half corruption of 128 problems is exactly 64", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 128;
    spec.corrupt_fraction = 0.5;
    RngStream rng = derive_stream(5, "noisy");
    const PoolResult pool = generate_noisy_pool(spec, rng);
    REQUIRE(count_corrupted(pool.oracle) == 64);
}

TEST_CASE("noisy pool: problems handed out never carry the corruption field", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 64;
    Scenario scenario(spec, 7, 4, 4);
    for (const Problem& p : scenario.draw_pool(0)) REQUIRE(p.corruption.is_clean());
    REQUIRE(count_corrupted(scenario.oracle()) == 32);
}

TEST_CASE("judge: clean problems score exact matches only", "[scenarios]") {
    RewardOracle oracle;
    Problem p;
    p.id = 3;
    p.features = {1.0};
    p.answer_count = 4;
    p.reference_answer = 2;
    oracle.register_problem(3, Corruption::clean());
    RngStream rng = derive_stream(9, "judge");
    REQUIRE(oracle.judge(p, 2, rng) == 1.0);
    REQUIRE(oracle.judge(p, 1, rng) == 0.0);
    Problem unknown = p;
    unknown.id = 4;
    REQUIRE_THROWS_AS(oracle.judge(unknown, 2, rng), input_error);
}

TEST_CASE("judge: corrupted rewards hit the Bernoulli mean", "[scenarios]") {
    RewardOracle oracle;
    Problem p;
    p.id = 8;
    p.features = {1.0};
    p.answer_count = 4;
    p.reference_answer = 0;
    oracle.register_problem(8, Corruption::bernoulli(0.5));
    RngStream rng = derive_stream(11, "judge-mc");
    double total = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) total += oracle.judge(p, 0, rng);
    REQUIRE(std::fabs(total / n - 0.5) < 0.015);
}

TEST_CASE("judge: corrupted pass rate ignores the policy entirely", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 16;
    Scenario scenario(spec, 13, 4, 4);
    const std::vector<Problem> pool = scenario.draw_pool(0);
    int corrupted_id = -1;
    for (const Problem& p : pool)
        if (scenario.oracle().is_corrupted(p.id)) {
            corrupted_id = p.id;
            break;
        }
    REQUIRE(corrupted_id >= 0);
    const Problem* corrupted = nullptr;
    for (const Problem& p : pool)
        if (p.id == corrupted_id) corrupted = &p;

    for (double weight_scale : {0.0, 5.0}) {
        PolicyParams params = scenario.initial_params();
        for (double& w : params.weights) w *= weight_scale;
        RngStream sample_rng = derive_stream(13, "judge-policy", static_cast<std::uint64_t>(weight_scale));
        const RolloutGroup group = sample_answers(params, *corrupted, 10000, sample_rng);
        double total = 0.0;
        for (int a : group.answers) total += scenario.oracle().judge(*corrupted, a, sample_rng);
        REQUIRE(std::fabs(total / 10000.0 - 0.5) < 3.0 * std::sqrt(0.25 / 10000.0) + 1e-12);
    }
}

TEST_CASE("corrupted rewards are uncorrelated with answer correctness", "[scenarios]") {
    RewardOracle oracle;
    Problem p;
    p.id = 1;
    p.features = {1.0, 0.5};
    p.answer_count = 4;
    p.reference_answer = 1;
    oracle.register_problem(1, Corruption::bernoulli(0.5));
    PolicyParams params(4, 2);
    RngStream rng = derive_stream(17, "corr");
    const int n = 10000;
    double sum_r = 0.0, sum_c = 0.0, sum_rc = 0.0, sum_r2 = 0.0, sum_c2 = 0.0;
    const RolloutGroup group = sample_answers(params, p, n, rng);
    for (int a : group.answers) {
        const double r = oracle.judge(p, a, rng);
        const double c = a == p.reference_answer ? 1.0 : 0.0;
        sum_r += r;
        sum_c += c;
        sum_rc += r * c;
        sum_r2 += r * r;
        sum_c2 += c * c;
    }
    const double mr = sum_r / n, mc = sum_c / n;
    const double cov = sum_rc / n - mr * mc;
    const double vr = sum_r2 / n - mr * mr;
    const double vc = sum_c2 / n - mc * mc;
    REQUIRE(std::fabs(cov / std::sqrt(vr * vc)) < 0.03);
}

TEST_CASE("imbalanced pool: target fraction is exact", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::IMBALANCED;
    spec.pool_size = 200;
    spec.target_fraction = 0.1;
    RngStream rng = derive_stream(19, "imb");
    const PoolResult pool = generate_imbalanced_pool(spec, rng);
    int targets = 0;
    for (const Problem& p : pool.problems) targets += p.domain_tag == DomainTag::TARGET ? 1 : 0;
    REQUIRE(targets == 20);

    spec.target_fraction = 1.0;
    RngStream rng2 = derive_stream(19, "imb2");
    const PoolResult all_target = generate_imbalanced_pool(spec, rng2);
    for (const Problem& p : all_target.problems) REQUIRE(p.domain_tag == DomainTag::TARGET);
}

TEST_CASE("imbalanced pool: domains live on disjoint coordinates", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::IMBALANCED;
    spec.pool_size = 64;
    spec.target_fraction = 0.25;
    Scenario scenario(spec, 21, 8, 8);
    const int half = spec.geometry.feature_dim / 2;
    for (const Problem& p : scenario.draw_pool(0)) {
        if (p.domain_tag == DomainTag::TARGET) {
            for (int j = half; j < spec.geometry.feature_dim; ++j) REQUIRE(p.features[j] == 0.0);
        } else {
            for (int j = 0; j < half; ++j) REQUIRE(p.features[j] == 0.0);
        }
    }
    // validation and test sets are exclusively target-domain
    for (const Problem& p : scenario.validation()) {
        REQUIRE(p.domain_tag == DomainTag::TARGET);
        for (int j = half; j < spec.geometry.feature_dim; ++j) REQUIRE(p.features[j] == 0.0);
    }
    for (const Problem& p : scenario.test()) REQUIRE(p.domain_tag == DomainTag::TARGET);
}

TEST_CASE("imbalanced pool: mean domain gradients are orthogonal", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::IMBALANCED;
    spec.pool_size = 64;
    spec.target_fraction = 0.5;
    Scenario scenario(spec, 23, 4, 4);
    const std::vector<Problem> pool = scenario.draw_pool(0);
    const PolicyParams params = scenario.initial_params();
    const AccuracyOracle oracle;
    GradientVec target_mean(params.size());
    GradientVec offtopic_mean(params.size());
    for (const Problem& p : pool) {
        const std::vector<Problem> one{p};
        const GradientVec g = oracle.expected_accuracy_gradient(params, one);
        (p.domain_tag == DomainTag::TARGET ? target_mean : offtopic_mean).add_scaled(g, 1.0);
    }
    REQUIRE(std::fabs(cosine_similarity(target_mean, offtopic_mean)) < 0.1);
}

TEST_CASE("low-utility pool: easy problems saturate under the initial policy", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::LOW_UTILITY;
    spec.pool_size = 40;
    spec.easy_fraction = 0.5;
    RngStream rng = derive_stream(25, "low");
    const PoolResult pool = generate_low_utility_pool(spec, rng);
    const AccuracyOracle oracle;
    int easy = 0;
    for (const Problem& p : pool.problems) {
        const std::vector<Problem> one{p};
        const double acc = oracle.expected_accuracy(pool.initial_params, one);
        if (acc > 0.95)
            ++easy;
        else
            REQUIRE((acc >= 0.2 && acc <= 0.8)); // mid-difficulty band
    }
    REQUIRE(easy == 20);
}

TEST_CASE("low-utility pool: easy problems pass a Monte Carlo rollout check", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::LOW_UTILITY;
    spec.pool_size = 8;
    spec.easy_fraction = 1.0;
    RngStream rng = derive_stream(27, "low-mc");
    const PoolResult pool = generate_low_utility_pool(spec, rng);
    for (const Problem& p : pool.problems) {
        RngStream sample_rng = derive_stream(27, "low-sample", p.id);
        const RolloutGroup group = sample_answers(pool.initial_params, p, 1000, sample_rng);
        int correct = 0;
        for (int a : group.answers) correct += a == p.reference_answer ? 1 : 0;
        REQUIRE(correct / 1000.0 > 0.95);
    }
}

TEST_CASE("low-utility pool: easy gradients are an order of magnitude weaker", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::LOW_UTILITY;
    spec.pool_size = 64;
    spec.easy_fraction = 0.5;
    RngStream rng = derive_stream(29, "low-norm");
    const PoolResult pool = generate_low_utility_pool(spec, rng);
    const AccuracyOracle oracle;
    double easy_norm = 0.0, mid_norm = 0.0;
    int easy_n = 0, mid_n = 0;
    for (const Problem& p : pool.problems) {
        const std::vector<Problem> one{p};
        const double acc = oracle.expected_accuracy(pool.initial_params, one);
        const double norm = l2_norm(oracle.expected_accuracy_gradient(pool.initial_params, one));
        if (acc > 0.95) {
            easy_norm += norm;
            ++easy_n;
        } else {
            mid_norm += norm;
            ++mid_n;
        }
    }
    REQUIRE(easy_n > 0);
    REQUIRE(mid_n > 0);
    REQUIRE(easy_norm / easy_n < 0.1 * (mid_norm / mid_n));
}

TEST_CASE("low-utility pool: zero easy fraction means every problem is mid-band", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::LOW_UTILITY;
    spec.pool_size = 32;
    spec.easy_fraction = 0.0;
    RngStream rng = derive_stream(31, "low0");
    const PoolResult pool = generate_low_utility_pool(spec, rng);
    const AccuracyOracle oracle;
    for (const Problem& p : pool.problems) {
        const std::vector<Problem> one{p};
        const double acc = oracle.expected_accuracy(pool.initial_params, one);
        REQUIRE((acc >= 0.2 && acc <= 0.8));
    }
}

TEST_CASE("scenario evaluation splits stay in the mid-difficulty band", "[scenarios]") {
    for (ScenarioKind kind : {ScenarioKind::NOISY_REWARDS, ScenarioKind::LOW_UTILITY}) {
        ScenarioSpec spec;
        spec.kind = kind;
        spec.pool_size = 16;
        Scenario scenario(spec, 33, 12, 12);
        const AccuracyOracle oracle;
        for (const Problem& p : scenario.validation()) {
            const std::vector<Problem> one{p};
            const double acc = oracle.expected_accuracy(scenario.initial_params(), one);
            REQUIRE((acc >= 0.2 && acc <= 0.8));
        }
    }
}

TEST_CASE("scenario generation is deterministic per seed", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 32;
    Scenario a(spec, 35, 8, 8);
    Scenario b(spec, 35, 8, 8);
    const std::vector<Problem> pa = a.draw_pool(0);
    const std::vector<Problem> pb = b.draw_pool(0);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].id == pb[i].id);
        REQUIRE(pa[i].features == pb[i].features);
        REQUIRE(pa[i].reference_answer == pb[i].reference_answer);
    }
    REQUIRE(a.corrupted_ids() == b.corrupted_ids());
}

TEST_CASE("scenario pools use fresh, disjoint id ranges per round", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 16;
    Scenario scenario(spec, 37, 4, 4);
    std::set<int> seen;
    for (const Problem& p : scenario.validation()) seen.insert(p.id);
    for (const Problem& p : scenario.test()) seen.insert(p.id);
    for (int round = 0; round < 3; ++round)
        for (const Problem& p : scenario.draw_pool(round)) {
            REQUIRE(seen.count(p.id) == 0);
            seen.insert(p.id);
        }
    // re-drawing a round reproduces it exactly
    const std::vector<Problem> again = scenario.draw_pool(1);
    REQUIRE(again.front().id == 8 + 16);
}

TEST_CASE("pool files round-trip problems exactly", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 8;
    RngStream rng = derive_stream(39, "file");
    PoolResult pool = generate_noisy_pool(spec, rng);
    pool.problems[1].corruption = Corruption::bernoulli(0.25);
    const auto path = temp_file("gradalign_pool_rt.txt");
    write_pool_file(path.string(), pool.problems, true);
    const std::vector<Problem> loaded = read_pool_file(path.string());
    REQUIRE(loaded.size() == pool.problems.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded[i].id == pool.problems[i].id);
        REQUIRE(loaded[i].features == pool.problems[i].features);
        REQUIRE(loaded[i].answer_count == pool.problems[i].answer_count);
        REQUIRE(loaded[i].reference_answer == pool.problems[i].reference_answer);
        REQUIRE(loaded[i].domain_tag == pool.problems[i].domain_tag);
        REQUIRE(loaded[i].corruption.mode == pool.problems[i].corruption.mode);
        REQUIRE(loaded[i].corruption.p == pool.problems[i].corruption.p);
    }
    std::filesystem::remove(path);
}

TEST_CASE("pool files can omit corruption; the sidecar carries it", "[scenarios]") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::NOISY_REWARDS;
    spec.pool_size = 16;
    Scenario scenario(spec, 41, 4, 4);
    const std::vector<Problem> pool = scenario.draw_pool(0);
    const auto pool_path = temp_file("gradalign_pool_pub.txt");
    const auto truth_path = temp_file("gradalign_truth.txt");
    write_pool_file(pool_path.string(), pool, false);
    scenario.write_ground_truth(truth_path.string());

    for (const Problem& p : read_pool_file(pool_path.string())) REQUIRE(p.corruption.is_clean());
    const auto truth = read_ground_truth_sidecar(truth_path.string());
    int corrupted = 0;
    for (const auto& [id, c] : truth) corrupted += c.is_clean() ? 0 : 1;
    REQUIRE(corrupted == 8);
    std::filesystem::remove(pool_path);
    std::filesystem::remove(truth_path);
}

TEST_CASE("pool file parser rejects malformed records", "[scenarios]") {
    REQUIRE_THROWS_AS(parse_problem_line("id=1 features=1,2"), config_error);
    REQUIRE_THROWS_AS(parse_problem_line("id=1 features=1,2 answer_count=2 reference_answer=0 "
                                         "mystery=3"),
                      config_error);
    REQUIRE_NOTHROW(parse_problem_line("id=1 features=1,2 answer_count=2 reference_answer=0"));
}

TEST_CASE("scenario spec validation", "[scenarios]") {
    ScenarioSpec spec;
    spec.corrupt_fraction = 1.5;
    REQUIRE_THROWS_AS(spec.validate(), config_error);
    spec = ScenarioSpec{};
    spec.bernoulli_p = 0.0;
    REQUIRE_THROWS_AS(spec.validate(), config_error);
    spec = ScenarioSpec{};
    spec.geometry.feature_dim = 1;
    REQUIRE_THROWS_AS(spec.validate(), config_error);
    spec = ScenarioSpec{};
    REQUIRE_NOTHROW(spec.validate());
    // generators check the scenario kind
    RngStream rng = derive_stream(43, "kind");
    REQUIRE_THROWS_AS(generate_imbalanced_pool(spec, rng), config_error);
}
