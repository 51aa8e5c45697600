#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "gradalign/harness.hpp"

using namespace gradalign;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

// small, fast run for loop-level tests
ExperimentConfig tiny_config(SelectorKind selector, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.scenario.kind = ScenarioKind::NOISY_REWARDS;
    cfg.scenario.pool_size = 16;
    cfg.selection.pool_size = 16;
    cfg.selection.selection_ratio = 4;
    cfg.selection.selection_interval = 5;
    cfg.selection.k_v = 8;
    cfg.selection.k_r = 4;
    cfg.selector = selector;
    cfg.n_train = 4;
    cfg.rollouts_per_training_problem = 4;
    cfg.total_steps = 10;
    cfg.eval_every = 5;
    cfg.validation_size = 6;
    cfg.test_size = 6;
    cfg.grpo.learning_rate = 0.05;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("ini parser: sections, comments, and errors", "[harness]") {
    std::istringstream in(
        "# a comment\n"
        "[scenario]\n"
        "kind = imbalanced\n"
        "pool_size = 64   # trailing comment\n"
        "\n"
        "[experiment]\n"
        "selector = random\n");
    const IniData data = parse_ini(in);
    REQUIRE(data.at("scenario").at("kind") == "imbalanced");
    REQUIRE(data.at("scenario").at("pool_size") == "64");
    REQUIRE(data.at("experiment").at("selector") == "random");

    std::istringstream orphan("key = 1\n");
    REQUIRE_THROWS_AS(parse_ini(orphan), config_error);
    std::istringstream bad("[scenario\n");
    REQUIRE_THROWS_AS(parse_ini(bad), config_error);
    std::istringstream noeq("[scenario]\njust a line\n");
    REQUIRE_THROWS_AS(parse_ini(noeq), config_error);
}

TEST_CASE("config: keys apply and unknown keys are rejected", "[harness]") {
    ExperimentConfig cfg;
    set_config_key(cfg, "scenario", "kind", "low_utility");
    REQUIRE(cfg.scenario.kind == ScenarioKind::LOW_UTILITY);
    set_config_key(cfg, "scenario", "pool_size", "64");
    REQUIRE(cfg.scenario.pool_size == 64);
    REQUIRE(cfg.selection.pool_size == 64); // kept in sync
    set_config_key(cfg, "selection", "metric", "inner_product");
    REQUIRE(cfg.selection.metric == AlignmentMetric::INNER_PRODUCT);
    set_config_key(cfg, "grpo", "baseline_mode", "leave_one_out");
    REQUIRE(cfg.grpo.baseline_mode == BaselineMode::LEAVE_ONE_OUT);
    set_config_key(cfg, "experiment", "seed", "99");
    REQUIRE(cfg.seed == 99);

    REQUIRE_THROWS_AS(set_config_key(cfg, "scenario", "nonsense", "1"), config_error);
    REQUIRE_THROWS_AS(set_config_key(cfg, "nowhere", "kind", "1"), config_error);
    REQUIRE_THROWS_AS(set_config_key(cfg, "grpo", "learning_rate", "fast"), config_error);
    REQUIRE_THROWS_AS(apply_override(cfg, "no-dot=3"), config_error);
    REQUIRE_NOTHROW(apply_override(cfg, "experiment.n_train=8"));
    REQUIRE(cfg.n_train == 8);
}

TEST_CASE("config: selection pool_size must match the scenario", "[harness]") {
    ExperimentConfig cfg;
    set_config_key(cfg, "scenario", "pool_size", "64");
    REQUIRE_THROWS_AS(set_config_key(cfg, "selection", "pool_size", "32"), config_error);
    REQUIRE_NOTHROW(set_config_key(cfg, "selection", "pool_size", "64"));
}

TEST_CASE("config: validation catches inconsistent settings", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::RANDOM, 1);
    cfg.total_steps = 3; // below the selection interval
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg = tiny_config(SelectorKind::RANDOM, 1);
    cfg.rollouts_per_training_problem = 1;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg = tiny_config(SelectorKind::RANDOM, 1);
    REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("metrics: empty export is a lone header, one record is two lines", "[harness]") {
    const std::string empty = format_metrics({});
    REQUIRE(empty == std::string(kMetricsHeader) + "\n");

    MetricRecord rec;
    rec.kind = MetricRecord::Kind::EVAL;
    rec.step = 5;
    rec.selector = "random";
    rec.metric = "cosine";
    rec.val_acc = 0.5;
    rec.seed = 7;
    const std::vector<MetricRecord> one{rec};
    std::istringstream lines(format_metrics(one));
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) ++count;
    REQUIRE(count == 2);
}

TEST_CASE("metrics: file round trip preserves every field", "[harness]") {
    std::vector<MetricRecord> records;
    MetricRecord eval;
    eval.kind = MetricRecord::Kind::EVAL;
    eval.step = 10;
    eval.selector = "gradalign";
    eval.metric = "cosine";
    eval.val_acc = 1.0 / 3.0;
    eval.test_acc = 0.25;
    eval.seed = 42;
    records.push_back(eval);
    MetricRecord round;
    round.kind = MetricRecord::Kind::ROUND;
    round.step = 10;
    round.round_index = 1;
    round.selector = "gradalign";
    round.metric = "cosine";
    round.corrupted_ratio = 0.125;
    round.degenerate_flag = 0;
    round.seed = 42;
    round.score_min = -0.5;
    round.score_median = 1e-17;
    round.score_max = 0.75;
    round.selected_ids = {3, 1, 9};
    records.push_back(round);

    const auto path = temp_file("gradalign_metrics_rt.csv");
    export_metrics(records, path.string());
    const std::vector<MetricRecord> loaded = read_metrics(path.string());
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].kind == MetricRecord::Kind::EVAL);
    REQUIRE(loaded[0].val_acc == eval.val_acc);
    REQUIRE(loaded[0].test_acc == eval.test_acc);
    REQUIRE_FALSE(loaded[0].round_index.has_value());
    REQUIRE_FALSE(loaded[0].corrupted_ratio.has_value());
    REQUIRE(loaded[1].round_index == 1);
    REQUIRE(loaded[1].corrupted_ratio == round.corrupted_ratio);
    REQUIRE(loaded[1].score_median == round.score_median);
    REQUIRE(loaded[1].selected_ids == round.selected_ids);
    REQUIRE_FALSE(loaded[1].val_acc.has_value());
    std::filesystem::remove(path);
}

TEST_CASE("metrics: formatting is bit-stable", "[harness]") {
    MetricRecord rec;
    rec.kind = MetricRecord::Kind::EVAL;
    rec.step = 1;
    rec.selector = "align";
    rec.metric = "cosine";
    rec.val_acc = 0.1 + 0.2;
    rec.seed = 1;
    const std::vector<MetricRecord> records{rec};
    REQUIRE(format_metrics(records) == format_metrics(records));
}

TEST_CASE("corrupted_selection_ratio: set arithmetic", "[harness]") {
    const std::unordered_set<int> truth{2, 4, 9};
    REQUIRE(corrupted_selection_ratio(std::vector<int>{1, 3}, truth) == 0.0);
    REQUIRE(corrupted_selection_ratio(std::vector<int>{2, 4}, truth) == 1.0);
    REQUIRE(corrupted_selection_ratio(std::vector<int>{1, 2, 3, 4}, truth) == 0.5);
    REQUIRE_THROWS_AS(corrupted_selection_ratio(std::vector<int>{}, truth), input_error);
}

TEST_CASE("domain_selection_ratio: tag counting over the pool", "[harness]") {
    std::vector<Problem> pool(4);
    for (int i = 0; i < 4; ++i) {
        pool[i].id = i;
        pool[i].features = {1.0};
        pool[i].answer_count = 2;
        pool[i].domain_tag = i < 2 ? DomainTag::TARGET : DomainTag::OFFTOPIC;
    }
    REQUIRE(domain_selection_ratio(std::vector<int>{0, 1}, pool, DomainTag::TARGET) == 1.0);
    REQUIRE(domain_selection_ratio(std::vector<int>{2, 3}, pool, DomainTag::TARGET) == 0.0);
    REQUIRE(domain_selection_ratio(std::vector<int>{0, 3}, pool, DomainTag::TARGET) == 0.5);
    REQUIRE_THROWS_AS(domain_selection_ratio(std::vector<int>{7}, pool, DomainTag::TARGET),
                      input_error);
}

TEST_CASE("run_experiment: clean random run does not lose accuracy", "[harness]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig cfg = tiny_config(SelectorKind::RANDOM, seed);
        cfg.scenario.corrupt_fraction = 0.0;
        cfg.total_steps = 20;
        cfg.eval_every = 20;
        const RunMetrics metrics = run_experiment(cfg);
        double initial = -1.0, final_acc = -1.0;
        for (const MetricRecord& r : metrics.records)
            if (r.kind == MetricRecord::Kind::EVAL) {
                if (r.step == 0) initial = *r.val_acc;
                if (r.step == 20) final_acc = *r.val_acc;
            }
        REQUIRE(initial >= 0.0);
        REQUIRE(final_acc >= initial - 0.02);
    }
}

TEST_CASE("run_experiment: one selection round when total_steps equals the interval",
          "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 3);
    cfg.total_steps = cfg.selection.selection_interval;
    const RunMetrics metrics = run_experiment(cfg);
    int rounds = 0;
    for (const MetricRecord& r : metrics.records)
        rounds += r.kind == MetricRecord::Kind::ROUND ? 1 : 0;
    REQUIRE(rounds == 1);
    REQUIRE(metrics.budgets.size() == 1);
}

TEST_CASE("run_experiment: budgets match the closed form for every selector", "[harness]") {
    for (SelectorKind kind : {SelectorKind::GRADALIGN, SelectorKind::RANDOM,
                              SelectorKind::ACC_GREEDY, SelectorKind::ALIGN,
                              SelectorKind::DIRECT_VAL}) {
        ExperimentConfig cfg = tiny_config(kind, 11);
        const RunMetrics metrics = run_experiment(cfg);
        REQUIRE(metrics.budgets.size() == 2);
        for (const RoundBudget& b : metrics.budgets) {
            const auto expected = expected_round_parts(cfg, cfg.selection.selection_interval);
            REQUIRE(b.validation == expected[0]);
            REQUIRE(b.candidate == expected[1]);
            REQUIRE(b.training == expected[2]);
        }
    }
}

TEST_CASE("run_experiment: align and accgreedy make zero validation rollouts", "[harness]") {
    for (SelectorKind kind : {SelectorKind::ALIGN, SelectorKind::ACC_GREEDY}) {
        ExperimentConfig cfg = tiny_config(kind, 13);
        const RunMetrics metrics = run_experiment(cfg);
        for (const RoundBudget& b : metrics.budgets) {
            REQUIRE(b.validation == 0);
            REQUIRE(b.candidate > 0);
        }
    }
}

TEST_CASE("run_experiment: identical config and seed give byte-identical metrics", "[harness]") {
    const ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 17);
    const RunMetrics a = run_experiment(cfg);
    const RunMetrics b = run_experiment(cfg);
    REQUIRE(format_metrics(a.records) == format_metrics(b.records));
}

TEST_CASE("run_experiment: direct-val ignores the candidate pool", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::DIRECT_VAL, 19);
    const RunMetrics metrics = run_experiment(cfg);
    for (const MetricRecord& r : metrics.records)
        REQUIRE(r.kind == MetricRecord::Kind::EVAL); // no round records
    for (const RoundBudget& b : metrics.budgets) {
        REQUIRE(b.validation == 0);
        REQUIRE(b.candidate == 0);
    }
}

TEST_CASE("run_experiment: eval cadence covers start, interior, and end", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::RANDOM, 23);
    cfg.total_steps = 10;
    cfg.eval_every = 4;
    const RunMetrics metrics = run_experiment(cfg);
    std::vector<int> eval_steps;
    for (const MetricRecord& r : metrics.records)
        if (r.kind == MetricRecord::Kind::EVAL) eval_steps.push_back(r.step);
    REQUIRE(eval_steps == std::vector<int>{0, 4, 8, 10});
}

TEST_CASE("run_experiment: multi-epoch clipped training still improves", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::RANDOM, 29);
    cfg.scenario.corrupt_fraction = 0.0;
    cfg.grpo.inner_epochs = 3;
    cfg.grpo.beta_kl = 0.01;
    cfg.total_steps = 20;
    cfg.eval_every = 20;
    const RunMetrics metrics = run_experiment(cfg);
    double initial = 0.0, final_acc = 0.0;
    for (const MetricRecord& r : metrics.records)
        if (r.kind == MetricRecord::Kind::EVAL) {
            if (r.step == 0) initial = *r.val_acc;
            if (r.step == 20) final_acc = *r.val_acc;
        }
    REQUIRE(final_acc >= initial - 0.02);
}

TEST_CASE("run_experiment: fixed_pool rescores one pool every round", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 31);
    cfg.fixed_pool = true;
    const RunMetrics metrics = run_experiment(cfg);
    std::vector<const MetricRecord*> rounds;
    for (const MetricRecord& r : metrics.records)
        if (r.kind == MetricRecord::Kind::ROUND) rounds.push_back(&r);
    REQUIRE(rounds.size() == 2);
    // both rounds select from the round-0 id range
    const int pool_base = cfg.validation_size + cfg.test_size;
    for (const MetricRecord* r : rounds)
        for (int id : r->selected_ids) {
            REQUIRE(id >= pool_base);
            REQUIRE(id < pool_base + cfg.scenario.pool_size);
        }
}

TEST_CASE("checkpoint: save and load round-trips the full state", "[harness]") {
    Checkpoint cp;
    cp.seed = 123;
    cp.step_done = 7;
    cp.params = PolicyParams(3, 2);
    cp.params.weights = {0.1, -0.2, 1.0 / 3.0, 4e-17, 2.5, -0.75};
    cp.params.snapshot_tag = 8;
    cp.opt.m = {0.5, 0.25};
    cp.opt.v = {1e-9, 2e-9};
    cp.opt.t = 8;
    cp.round_index = 1;
    cp.selected_ids = {4, 9};
    cp.batch_order = {9, 4};
    cp.batch_cursor = 1;
    cp.batch_cycle = 2;
    cp.round_ledger.training = 64;
    MetricRecord rec;
    rec.kind = MetricRecord::Kind::ROUND;
    rec.step = 5;
    rec.round_index = 1;
    rec.selector = "gradalign";
    rec.metric = "cosine";
    rec.corrupted_ratio = 0.25;
    rec.seed = 123;
    cp.records.push_back(rec);
    cp.budgets.push_back({0, 48, 64, 80});

    const auto path = temp_file("gradalign_ckpt_rt.json");
    save_checkpoint(path.string(), cp);
    const Checkpoint loaded = load_checkpoint(path.string());
    REQUIRE(loaded.seed == cp.seed);
    REQUIRE(loaded.step_done == cp.step_done);
    REQUIRE(loaded.params.weights == cp.params.weights);
    REQUIRE(loaded.params.snapshot_tag == cp.params.snapshot_tag);
    REQUIRE(loaded.opt.m == cp.opt.m);
    REQUIRE(loaded.opt.v == cp.opt.v);
    REQUIRE(loaded.selected_ids == cp.selected_ids);
    REQUIRE(loaded.batch_order == cp.batch_order);
    REQUIRE(loaded.batch_cursor == cp.batch_cursor);
    REQUIRE(loaded.records.size() == 1);
    REQUIRE(loaded.records[0].corrupted_ratio == rec.corrupted_ratio);
    REQUIRE(loaded.budgets.size() == 1);
    REQUIRE(loaded.budgets[0].candidate == 64);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint: resumed runs reproduce uninterrupted metrics byte for byte", "[harness]") {
    const ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 37);
    const RunMetrics full = run_experiment(cfg);

    const auto ckpt = temp_file("gradalign_resume.json");
    RunOptions save_opts;
    save_opts.checkpoint_path = ckpt.string();
    save_opts.checkpoint_at_step = 6; // mid-round
    save_opts.stop_after_checkpoint = true;
    const RunMetrics partial = run_experiment(cfg, save_opts);
    REQUIRE(partial.stopped_at_checkpoint);

    RunOptions resume_opts;
    resume_opts.resume_path = ckpt.string();
    const RunMetrics resumed = run_experiment(cfg, resume_opts);
    REQUIRE(format_metrics(resumed.records) == format_metrics(full.records));
    REQUIRE(resumed.budgets.size() == full.budgets.size());
    std::filesystem::remove(ckpt);
}

TEST_CASE("checkpoint: seed mismatch is rejected on resume", "[harness]") {
    const ExperimentConfig cfg = tiny_config(SelectorKind::RANDOM, 41);
    const auto ckpt = temp_file("gradalign_mismatch.json");
    RunOptions save_opts;
    save_opts.checkpoint_path = ckpt.string();
    save_opts.checkpoint_at_step = 2;
    save_opts.stop_after_checkpoint = true;
    run_experiment(cfg, save_opts);
    ExperimentConfig other = cfg;
    other.seed = 42;
    RunOptions resume_opts;
    resume_opts.resume_path = ckpt.string();
    REQUIRE_THROWS_AS(run_experiment(other, resume_opts), config_error);
    std::filesystem::remove(ckpt);
}

TEST_CASE("pearson_correlation: identity, affine, and degenerate inputs", "[harness]") {
    const std::vector<double> x{0.1, 0.4, 0.2, 0.9, 0.6};
    REQUIRE_THAT(*pearson_correlation(x, x), Catch::Matchers::WithinAbs(1.0, 1e-12));
    std::vector<double> affine;
    for (double v : x) affine.push_back(2.0 * v + 3.0);
    REQUIRE_THAT(*pearson_correlation(x, affine), Catch::Matchers::WithinAbs(1.0, 1e-12));
    const std::vector<double> constant(5, 0.7);
    REQUIRE_FALSE(pearson_correlation(x, constant).has_value());
}

TEST_CASE("ablate_sample_size: validates its k_v list", "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 43);
    const std::pair<std::uint64_t, std::uint64_t> seeds{1, 2};
    REQUIRE_THROWS_AS(ablate_sample_size(cfg, std::vector<int>{8}, seeds), input_error);
    REQUIRE_THROWS_AS(ablate_sample_size(cfg, std::vector<int>{8, 8}, seeds), input_error);
    REQUIRE_THROWS_AS(ablate_sample_size(cfg, std::vector<int>{1, 8}, seeds), input_error);
    const auto rows = ablate_sample_size(cfg, std::vector<int>{4, 8}, seeds);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].k_v == 4);
    REQUIRE(rows[1].k_v == 8);
}

TEST_CASE("ablate_metric: zero-corruption pools score zero ratios for both metrics",
          "[harness]") {
    ExperimentConfig cfg = tiny_config(SelectorKind::GRADALIGN, 47);
    cfg.scenario.corrupt_fraction = 0.0;
    const MetricAblationResult res = ablate_metric(cfg);
    REQUIRE(*mean_corrupted_ratio(res.cosine_run) == 0.0);
    REQUIRE(*mean_corrupted_ratio(res.inner_run) == 0.0);

    cfg.scenario.kind = ScenarioKind::IMBALANCED;
    REQUIRE_THROWS_AS(ablate_metric(cfg), config_error);
}

TEST_CASE("quantile and score separation behave on simple inputs", "[harness]") {
    REQUIRE(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
    REQUIRE(quantile({5.0}, 0.25) == 5.0);
    const ScoreSeparation sep =
        score_separation({0.8, 0.9, 1.0, 0.85}, {0.1, 0.0, 0.2, 0.15});
    REQUIRE(sep.clean_median > sep.corrupted_median);
    REQUIRE(sep.standardized > 0.0);
    REQUIRE_THROWS_AS(score_separation({}, {0.1}), input_error);
}

TEST_CASE("summarize_metrics aggregates final evals and round ratios", "[harness]") {
    std::vector<MetricRecord> records;
    for (std::uint64_t seed : {1, 2}) {
        for (int step : {0, 10}) {
            MetricRecord r;
            r.kind = MetricRecord::Kind::EVAL;
            r.step = step;
            r.selector = "random";
            r.metric = "cosine";
            r.val_acc = step == 10 ? 0.8 : 0.2;
            r.test_acc = step == 10 ? 0.6 : 0.2;
            r.seed = seed;
            records.push_back(r);
        }
        MetricRecord round;
        round.kind = MetricRecord::Kind::ROUND;
        round.step = 0;
        round.round_index = 0;
        round.selector = "random";
        round.metric = "cosine";
        round.corrupted_ratio = seed == 1 ? 0.25 : 0.75;
        round.seed = seed;
        records.push_back(round);
    }
    const auto summary = summarize_metrics(records);
    REQUIRE(summary.size() == 1);
    REQUIRE(summary[0].runs == 2);
    REQUIRE_THAT(summary[0].mean_final_val_acc, Catch::Matchers::WithinAbs(0.8, 1e-12));
    REQUIRE_THAT(summary[0].mean_final_test_acc, Catch::Matchers::WithinAbs(0.6, 1e-12));
    REQUIRE_THAT(*summary[0].mean_corrupted_ratio, Catch::Matchers::WithinAbs(0.5, 1e-12));
}
