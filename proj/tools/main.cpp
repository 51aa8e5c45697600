// Command-line front end: run experiments, compare selectors over shared
// seeds, run the two ablations, and summarize metrics files.

#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradalign/gradalign.hpp"

namespace ga = gradalign;

namespace {

ga::ExperimentConfig build_config(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
    ga::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = ga::load_config_file(config_path);
    for (const std::string& o : overrides) ga::apply_override(cfg, o);
    return cfg;
}

std::string fmt(std::optional<double> v) {
    return v ? ga::format_double(*v) : std::string("-");
}

void print_summary(const std::vector<ga::SelectorSummary>& rows) {
    std::cout << std::left << std::setw(12) << "selector" << std::setw(15) << "metric"
              << std::setw(6) << "runs" << std::setw(12) << "val_acc" << std::setw(12)
              << "test_acc" << std::setw(12) << "corrupted" << std::setw(12) << "target"
              << "degenerate\n";
    for (const ga::SelectorSummary& s : rows) {
        std::cout << std::left << std::setw(12) << s.selector << std::setw(15) << s.metric
                  << std::setw(6) << s.runs << std::setw(12) << ga::format_double(s.mean_final_val_acc)
                  << std::setw(12) << ga::format_double(s.mean_final_test_acc) << std::setw(12)
                  << fmt(s.mean_corrupted_ratio) << std::setw(12) << fmt(s.mean_target_ratio)
                  << s.degenerate_rounds << '\n';
    }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::uint64_t seed, const std::string& out_path, const std::string& selector,
            const std::string& metric, int steps, const ga::RunOptions& opts) {
    ga::ExperimentConfig cfg = build_config(config_path, overrides);
    if (!selector.empty()) cfg.selector = ga::selector_kind_from_string(selector);
    if (!metric.empty()) cfg.selection.metric = ga::alignment_metric_from_string(metric);
    if (steps > 0) cfg.total_steps = steps;
    cfg.seed = seed;

    const ga::RunMetrics metrics = ga::run_experiment(cfg, opts);
    if (metrics.stopped_at_checkpoint) {
        std::cout << "checkpoint written to " << opts.checkpoint_path << ", run stopped\n";
        return 0;
    }
    ga::export_metrics(metrics.records, out_path);
    std::cout << "metrics written to " << out_path << '\n';
    std::cout << "final val_acc=" << fmt(metrics.final_val_acc())
              << " test_acc=" << fmt(metrics.final_test_acc()) << '\n';
    return 0;
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::vector<std::string>& selectors, const std::vector<std::uint64_t>& seeds,
                const std::string& out_path) {
    std::vector<ga::MetricRecord> all_records;
    for (const std::string& selector : selectors) {
        for (std::uint64_t seed : seeds) {
            ga::ExperimentConfig cfg = build_config(config_path, overrides);
            cfg.selector = ga::selector_kind_from_string(selector);
            cfg.seed = seed;
            const ga::RunMetrics metrics = ga::run_experiment(cfg);
            all_records.insert(all_records.end(), metrics.records.begin(), metrics.records.end());
        }
    }
    ga::export_metrics(all_records, out_path);
    std::cout << "metrics written to " << out_path << '\n';
    print_summary(ga::summarize_metrics(all_records));
    return 0;
}

int cmd_ablate_kv(const std::string& config_path, const std::vector<std::string>& overrides,
                  std::uint64_t seed, const std::vector<int>& kv_list, int repeats,
                  const std::string& out_path) {
    ga::ExperimentConfig cfg = build_config(config_path, overrides);
    cfg.seed = seed;

    std::cout << std::left << std::setw(8) << "repeat";
    for (int k : kv_list) std::cout << std::setw(12) << ("k_v=" + std::to_string(k));
    std::cout << '\n';

    std::string csv = "repeat,k_v,pearson\n";
    std::vector<double> monotone_hits;
    for (int rep = 0; rep < repeats; ++rep) {
        const std::pair<std::uint64_t, std::uint64_t> seed_pair{
            ga::derive_key(seed, "ablate-kv-a", static_cast<std::uint64_t>(rep)),
            ga::derive_key(seed, "ablate-kv-b", static_cast<std::uint64_t>(rep))};
        const auto rows = ga::ablate_sample_size(cfg, kv_list, seed_pair);
        std::cout << std::left << std::setw(8) << rep;
        bool monotone = true;
        std::optional<double> prev;
        for (const auto& r : rows) {
            std::cout << std::setw(12) << fmt(r.pearson);
            csv += std::to_string(rep) + ',' + std::to_string(r.k_v) + ',' +
                   (r.pearson ? ga::format_double(*r.pearson) : std::string()) + '\n';
            if (!r.pearson) monotone = false;
            else if (prev && *r.pearson < *prev) monotone = false;
            if (r.pearson) prev = r.pearson;
        }
        std::cout << '\n';
        monotone_hits.push_back(monotone ? 1.0 : 0.0);
    }
    double frac = 0.0;
    for (double h : monotone_hits) frac += h;
    std::cout << "nondecreasing in " << static_cast<int>(frac) << "/" << repeats << " repeats\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw ga::config_error("cannot open " + out_path);
        out << csv;
    }
    return 0;
}

int cmd_ablate_metric(const std::string& config_path, const std::vector<std::string>& overrides,
                      const std::vector<std::uint64_t>& seeds, const std::string& out_path) {
    std::vector<ga::MetricRecord> all_records;
    // round-0 scores: the one state where both runs saw identical rollouts
    std::vector<double> clean_cos, corr_cos, clean_inner, corr_inner;
    auto collect_round0 = [](const ga::RunMetrics& run, std::vector<double>& clean,
                             std::vector<double>& corrupted) {
        for (const ga::RoundDetail& det : run.round_details) {
            if (det.round_index != 0 || det.degenerate) continue;
            for (std::size_t j = 0; j < det.scores.size(); ++j)
                (det.corrupted[j] ? corrupted : clean).push_back(det.scores[j]);
        }
    };
    std::cout << std::left << std::setw(22) << "seed" << std::setw(18) << "cosine_corrupted"
              << "inner_corrupted\n";
    for (std::uint64_t seed : seeds) {
        ga::ExperimentConfig cfg = build_config(config_path, overrides);
        cfg.seed = seed;
        const ga::MetricAblationResult res = ga::ablate_metric(cfg);
        all_records.insert(all_records.end(), res.cosine_run.records.begin(),
                           res.cosine_run.records.end());
        all_records.insert(all_records.end(), res.inner_run.records.begin(),
                           res.inner_run.records.end());
        collect_round0(res.cosine_run, clean_cos, corr_cos);
        collect_round0(res.inner_run, clean_inner, corr_inner);
        std::cout << std::left << std::setw(22) << seed << std::setw(18)
                  << fmt(ga::mean_corrupted_ratio(res.cosine_run))
                  << fmt(ga::mean_corrupted_ratio(res.inner_run)) << '\n';
    }
    const ga::ScoreSeparation sep_cos = ga::score_separation(clean_cos, corr_cos);
    const ga::ScoreSeparation sep_inner = ga::score_separation(clean_inner, corr_inner);
    std::cout << "round-0 clean-vs-corrupted separation: cosine="
              << ga::format_double(sep_cos.standardized)
              << " inner_product=" << ga::format_double(sep_inner.standardized) << '\n';
    if (!out_path.empty()) {
        ga::export_metrics(all_records, out_path);
        std::cout << "metrics written to " << out_path << '\n';
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& files) {
    std::vector<ga::MetricRecord> records;
    for (const std::string& path : files) {
        const auto part = ga::read_metrics(path);
        records.insert(records.end(), part.begin(), part.end());
    }
    print_summary(ga::summarize_metrics(records));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRPO training with gradient-aligned data selection on synthetic problem pools"};
    app.require_subcommand(1);

    std::function<int()> action;

    // run
    {
        auto* sub = app.add_subcommand("run", "Run a single experiment");
        auto config_path = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out_path = std::make_shared<std::string>("metrics.csv");
        auto selector = std::make_shared<std::string>();
        auto metric = std::make_shared<std::string>();
        auto steps = std::make_shared<int>(0);
        auto opts = std::make_shared<ga::RunOptions>();
        sub->add_option("--config", *config_path, "Config file (INI)");
        sub->add_option("--seed", *seed, "Run seed")->required();
        sub->add_option("--out", *out_path, "Metrics CSV path");
        sub->add_option("--set", *overrides, "Override a config key: section.key=value");
        sub->add_option("--selector", *selector, "Selector: gradalign|random|accgreedy|align|direct-val");
        sub->add_option("--metric", *metric, "Alignment metric: cosine|inner_product");
        sub->add_option("--steps", *steps, "Total training steps");
        sub->add_option("--checkpoint-path", opts->checkpoint_path, "Checkpoint file to write");
        sub->add_option("--checkpoint-at", opts->checkpoint_at_step,
                        "Save a checkpoint after this step completes");
        sub->add_flag("--stop-after-checkpoint", opts->stop_after_checkpoint,
                      "Stop the run right after saving the checkpoint");
        sub->add_option("--resume", opts->resume_path, "Resume from this checkpoint");
        sub->add_option("--dump-pools", opts->dump_pools_dir,
                        "Directory for per-round pool files and the ground-truth sidecar");
        sub->callback([=, &action]() {
            action = [=]() {
                return cmd_run(*config_path, *overrides, *seed, *out_path, *selector, *metric,
                               *steps, *opts);
            };
        });
    }

    // compare
    {
        auto* sub = app.add_subcommand("compare", "Run a selector x seed matrix with shared seeds");
        auto config_path = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        auto selectors = std::make_shared<std::vector<std::string>>(
            std::vector<std::string>{"gradalign", "random", "accgreedy", "align"});
        auto seeds = std::make_shared<std::vector<std::uint64_t>>();
        auto out_path = std::make_shared<std::string>("compare.csv");
        sub->add_option("--config", *config_path, "Config file (INI)");
        sub->add_option("--set", *overrides, "Override a config key: section.key=value");
        sub->add_option("--selectors", *selectors, "Selectors to compare")->delimiter(',');
        sub->add_option("--seeds", *seeds, "Seeds, shared across selectors")
            ->delimiter(',')
            ->required();
        sub->add_option("--out", *out_path, "Combined metrics CSV path");
        sub->callback([=, &action]() {
            action = [=]() {
                return cmd_compare(*config_path, *overrides, *selectors, *seeds, *out_path);
            };
        });
    }

    // ablate-kv
    {
        auto* sub = app.add_subcommand("ablate-kv", "Score-stability ablation over k_v");
        auto config_path = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto kv_list = std::make_shared<std::vector<int>>(std::vector<int>{8, 32, 128});
        auto repeats = std::make_shared<int>(5);
        auto out_path = std::make_shared<std::string>();
        sub->add_option("--config", *config_path, "Config file (INI)");
        sub->add_option("--set", *overrides, "Override a config key: section.key=value");
        sub->add_option("--seed", *seed, "Base seed")->required();
        sub->add_option("--kv", *kv_list, "Ascending k_v values")->delimiter(',');
        sub->add_option("--repeats", *repeats, "Independent repeats");
        sub->add_option("--out", *out_path, "Optional CSV output");
        sub->callback([=, &action]() {
            action = [=]() {
                return cmd_ablate_kv(*config_path, *overrides, *seed, *kv_list, *repeats,
                                     *out_path);
            };
        });
    }

    // ablate-metric
    {
        auto* sub = app.add_subcommand("ablate-metric",
                                       "Matched cosine vs inner-product runs on the noisy scenario");
        auto config_path = std::make_shared<std::string>();
        auto overrides = std::make_shared<std::vector<std::string>>();
        auto seeds = std::make_shared<std::vector<std::uint64_t>>();
        auto out_path = std::make_shared<std::string>();
        sub->add_option("--config", *config_path, "Config file (INI)");
        sub->add_option("--set", *overrides, "Override a config key: section.key=value");
        sub->add_option("--seeds", *seeds, "Seeds")->delimiter(',')->required();
        sub->add_option("--out", *out_path, "Optional combined metrics CSV");
        sub->callback([=, &action]() {
            action = [=]() { return cmd_ablate_metric(*config_path, *overrides, *seeds, *out_path); };
        });
    }

    // report
    {
        auto* sub = app.add_subcommand("report", "Summarize metrics files");
        auto files = std::make_shared<std::vector<std::string>>();
        sub->add_option("files", *files, "Metrics CSV files")->required();
        sub->callback([=, &action]() {
            action = [=]() { return cmd_report(*files); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return action ? action() : 2;
    } catch (const ga::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ga::numeric_error& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
