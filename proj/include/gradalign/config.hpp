#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "gradalign/baselines.hpp"
#include "gradalign/errors.hpp"
#include "gradalign/grpo.hpp"
#include "gradalign/scenarios.hpp"
#include "gradalign/selector.hpp"
#include "gradalign/textio.hpp"

namespace gradalign {

// INI-style config: [section] headers matching module names, key = value
// lines, '#' comments.
using IniData = std::map<std::string, std::map<std::string, std::string>>;

inline IniData parse_ini(std::istream& in) {
    IniData data;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (const std::size_t hash = sv.find('#'); hash != std::string_view::npos)
            sv = trim(sv.substr(0, hash));
        if (sv.empty()) continue;
        if (sv.front() == '[') {
            if (sv.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": unterminated section");
            section = std::string(trim(sv.substr(1, sv.size() - 2)));
            data[section];
            continue;
        }
        const std::size_t eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key(trim(sv.substr(0, eq)));
        const std::string val(trim(sv.substr(eq + 1)));
        if (section.empty())
            throw config_error("config line " + std::to_string(lineno) + ": key outside any section");
        if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
        data[section][key] = val;
    }
    return data;
}

inline IniData parse_ini_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    return parse_ini(in);
}

// Full description of one run. Defaults are the desk-scale shrink of the
// reference hyperparameter schedule (q=4, U=10, k_v >= 4 k_r preserved).
struct ExperimentConfig {
    ScenarioSpec scenario;
    SelectorKind selector = SelectorKind::GRADALIGN;
    SelectionConfig selection;
    GRPOConfig grpo;
    int n_train = 16;
    int rollouts_per_training_problem = 16;
    int total_steps = 50;
    int eval_every = 10;
    std::uint64_t seed = 0;
    int validation_size = 16;
    int test_size = 64;
    // Rescore one fixed candidate pool every round instead of drawing a
    // fresh pool per round.
    bool fixed_pool = false;

    void validate() const {
        scenario.validate();
        selection.validate();
        grpo.validate();
        if (selection.pool_size != scenario.pool_size)
            throw config_error("config: selection pool_size must match scenario pool_size");
        if (n_train < 1) throw config_error("config: n_train must be >= 1");
        if (rollouts_per_training_problem < 2)
            throw config_error("config: rollouts_per_training_problem must be >= 2");
        if (total_steps < selection.selection_interval)
            throw config_error("config: total_steps must be >= selection_interval");
        if (eval_every < 1) throw config_error("config: eval_every must be >= 1");
        if (validation_size < 1 || test_size < 1)
            throw config_error("config: validation_size and test_size must be >= 1");
        if (scenario.pool_size < selection.selection_ratio)
            throw config_error("config: pool_size must be >= selection_ratio");
    }
};

namespace detail {

inline bool parse_bool(std::string_view v, std::string_view what) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("bad boolean for " + std::string(what) + ": '" + std::string(v) + "'");
}

inline int parse_positive_int(std::string_view v, std::string_view what) {
    const std::int64_t n = parse_int(v, what);
    if (n < 0 || n > INT32_MAX) throw config_error(std::string(what) + " out of range");
    return static_cast<int>(n);
}

} // namespace detail

// Applies "section.key = value". Shared by config-file loading and CLI
// overrides so both paths accept exactly the same keys.
inline void set_config_key(ExperimentConfig& cfg, const std::string& section,
                           const std::string& key, const std::string& value) {
    const std::string where = section + "." + key;
    if (section == "scenario") {
        if (key == "kind") cfg.scenario.kind = scenario_kind_from_string(value);
        else if (key == "pool_size") {
            cfg.scenario.pool_size = detail::parse_positive_int(value, where);
            cfg.selection.pool_size = cfg.scenario.pool_size;
        }
        else if (key == "corrupt_fraction") cfg.scenario.corrupt_fraction = parse_double(value, where);
        else if (key == "bernoulli_p") cfg.scenario.bernoulli_p = parse_double(value, where);
        else if (key == "target_fraction") cfg.scenario.target_fraction = parse_double(value, where);
        else if (key == "easy_fraction") cfg.scenario.easy_fraction = parse_double(value, where);
        else if (key == "feature_dim") cfg.scenario.geometry.feature_dim = detail::parse_positive_int(value, where);
        else if (key == "answer_count") cfg.scenario.geometry.answer_count = detail::parse_positive_int(value, where);
        else if (key == "feature_scale") cfg.scenario.geometry.feature_scale = parse_double(value, where);
        else if (key == "teacher_scale") cfg.scenario.geometry.teacher_scale = parse_double(value, where);
        else if (key == "skill_count") cfg.scenario.geometry.skill_count = detail::parse_positive_int(value, where);
        else if (key == "skill_noise") cfg.scenario.geometry.skill_noise = parse_double(value, where);
        else throw config_error("unknown config key: " + where);
    } else if (section == "selection") {
        if (key == "pool_size") {
            const int m = detail::parse_positive_int(value, where);
            if (m != cfg.scenario.pool_size)
                throw config_error("selection.pool_size must equal scenario.pool_size; set [scenario] pool_size");
        }
        else if (key == "selection_ratio") cfg.selection.selection_ratio = detail::parse_positive_int(value, where);
        else if (key == "selection_interval") cfg.selection.selection_interval = detail::parse_positive_int(value, where);
        else if (key == "k_v") cfg.selection.k_v = detail::parse_positive_int(value, where);
        else if (key == "k_r") cfg.selection.k_r = detail::parse_positive_int(value, where);
        else if (key == "metric") cfg.selection.metric = alignment_metric_from_string(value);
        else if (key == "use_normalized_advantages")
            cfg.selection.use_normalized_advantages = detail::parse_bool(value, where);
        else throw config_error("unknown config key: " + where);
    } else if (section == "grpo") {
        if (key == "epsilon_adv") cfg.grpo.epsilon_adv = parse_double(value, where);
        else if (key == "epsilon_clip") cfg.grpo.epsilon_clip = parse_double(value, where);
        else if (key == "beta_kl") cfg.grpo.beta_kl = parse_double(value, where);
        else if (key == "learning_rate") cfg.grpo.learning_rate = parse_double(value, where);
        else if (key == "optimizer") {
            if (value == "sgd") cfg.grpo.optimizer = OptimizerKind::SGD;
            else if (value == "adamw") cfg.grpo.optimizer = OptimizerKind::ADAMW;
            else throw config_error("unknown optimizer: '" + value + "'");
        }
        else if (key == "adam_beta1") cfg.grpo.adam_beta1 = parse_double(value, where);
        else if (key == "adam_beta2") cfg.grpo.adam_beta2 = parse_double(value, where);
        else if (key == "adam_eps") cfg.grpo.adam_eps = parse_double(value, where);
        else if (key == "weight_decay") cfg.grpo.weight_decay = parse_double(value, where);
        else if (key == "baseline_mode") {
            if (value == "group_mean") cfg.grpo.baseline_mode = BaselineMode::GROUP_MEAN;
            else if (value == "leave_one_out") cfg.grpo.baseline_mode = BaselineMode::LEAVE_ONE_OUT;
            else if (value == "none") cfg.grpo.baseline_mode = BaselineMode::NONE;
            else throw config_error("unknown baseline_mode: '" + value + "'");
        }
        else if (key == "inner_epochs") cfg.grpo.inner_epochs = detail::parse_positive_int(value, where);
        else throw config_error("unknown config key: " + where);
    } else if (section == "experiment") {
        if (key == "selector") cfg.selector = selector_kind_from_string(value);
        else if (key == "n_train") cfg.n_train = detail::parse_positive_int(value, where);
        else if (key == "rollouts_per_training_problem")
            cfg.rollouts_per_training_problem = detail::parse_positive_int(value, where);
        else if (key == "total_steps") cfg.total_steps = detail::parse_positive_int(value, where);
        else if (key == "eval_every") cfg.eval_every = detail::parse_positive_int(value, where);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, where));
        else if (key == "validation_size") cfg.validation_size = detail::parse_positive_int(value, where);
        else if (key == "test_size") cfg.test_size = detail::parse_positive_int(value, where);
        else if (key == "fixed_pool") cfg.fixed_pool = detail::parse_bool(value, where);
        else throw config_error("unknown config key: " + where);
    } else {
        throw config_error("unknown config section: [" + section + "]");
    }
}

inline void apply_ini(ExperimentConfig& cfg, const IniData& data) {
    // scenario first so pool_size consistency checks see the final value
    static const char* order[] = {"scenario", "selection", "grpo", "experiment"};
    for (const char* section : order) {
        auto it = data.find(section);
        if (it == data.end()) continue;
        for (const auto& [key, value] : it->second) set_config_key(cfg, section, key, value);
    }
    for (const auto& [section, _] : data) {
        if (section != "scenario" && section != "selection" && section != "grpo" &&
            section != "experiment")
            throw config_error("unknown config section: [" + section + "]");
    }
}

inline ExperimentConfig load_config_file(const std::string& path) {
    ExperimentConfig cfg;
    apply_ini(cfg, parse_ini_file(path));
    return cfg;
}

// "section.key=value" override, as accepted on the command line.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw config_error("override must be section.key=value: '" + assignment + "'");
    const std::string path = std::string(trim(std::string_view(assignment).substr(0, eq)));
    const std::string value = std::string(trim(std::string_view(assignment).substr(eq + 1)));
    const std::size_t dot = path.find('.');
    if (dot == std::string::npos)
        throw config_error("override key must be section.key: '" + path + "'");
    set_config_key(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

} // namespace gradalign
