#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradalign/errors.hpp"
#include "gradalign/textio.hpp"

namespace gradalign {

enum class DomainTag { TARGET, OFFTOPIC };

inline std::string_view to_string(DomainTag t) {
    return t == DomainTag::TARGET ? "TARGET" : "OFFTOPIC";
}

inline DomainTag domain_tag_from_string(std::string_view s) {
    if (s == "TARGET") return DomainTag::TARGET;
    if (s == "OFFTOPIC") return DomainTag::OFFTOPIC;
    throw config_error("unknown domain_tag: '" + std::string(s) + "'");
}

enum class CorruptionMode { CLEAN, BERNOULLI };

// Reward-generation mode. CLEAN rewards compare the answer to the reference;
// BERNOULLI(p) rewards are drawn independently of the answer.
struct Corruption {
    CorruptionMode mode = CorruptionMode::CLEAN;
    double p = 0.0;

    static Corruption clean() { return {CorruptionMode::CLEAN, 0.0}; }
    static Corruption bernoulli(double p) { return {CorruptionMode::BERNOULLI, p}; }
    bool is_clean() const { return mode == CorruptionMode::CLEAN; }
};

inline std::string_view to_string(CorruptionMode m) {
    return m == CorruptionMode::CLEAN ? "CLEAN" : "BERNOULLI";
}

inline CorruptionMode corruption_mode_from_string(std::string_view s) {
    if (s == "CLEAN") return CorruptionMode::CLEAN;
    if (s == "BERNOULLI") return CorruptionMode::BERNOULLI;
    throw config_error("unknown corruption mode: '" + std::string(s) + "'");
}

// One synthetic task instance: a feature vector (the problem context), a
// discrete answer space of size answer_count, and a reference answer.
struct Problem {
    int id = 0;
    std::vector<double> features;
    int answer_count = 2;
    int reference_answer = 0;
    DomainTag domain_tag = DomainTag::TARGET;
    Corruption corruption = Corruption::clean();

    int feature_dim() const { return static_cast<int>(features.size()); }

    void validate() const {
        if (answer_count < 2) throw input_error("problem " + std::to_string(id) + ": answer_count must be >= 2");
        if (reference_answer < 0 || reference_answer >= answer_count)
            throw input_error("problem " + std::to_string(id) + ": reference_answer out of range");
        for (double f : features)
            if (!std::isfinite(f)) throw numeric_error("problem " + std::to_string(id) + ": non-finite feature");
    }
};

// ---------------------------------------------------------------------------
// Pool file format: one problem per line, space-separated key=value fields.
// Field names are part of the format contract:
//   id=3 features=0.5,-1.25 answer_count=4 reference_answer=1 domain_tag=TARGET corruption=CLEAN p=0
// corruption and p are optional on read (default CLEAN); the writer includes
// them only when asked, so generated pools can omit the ground truth.
// ---------------------------------------------------------------------------

inline std::string format_problem_line(const Problem& p, bool include_corruption) {
    std::string line;
    line += "id=" + std::to_string(p.id);
    line += " features=";
    for (std::size_t i = 0; i < p.features.size(); ++i) {
        if (i) line += ',';
        line += format_double(p.features[i]);
    }
    line += " answer_count=" + std::to_string(p.answer_count);
    line += " reference_answer=" + std::to_string(p.reference_answer);
    line += " domain_tag=" + std::string(to_string(p.domain_tag));
    if (include_corruption) {
        line += " corruption=" + std::string(to_string(p.corruption.mode));
        line += " p=" + format_double(p.corruption.p);
    }
    return line;
}

inline Problem parse_problem_line(std::string_view line) {
    Problem p;
    bool saw_id = false, saw_features = false, saw_count = false, saw_ref = false;
    for (std::string_view field : split(trim(line), ' ')) {
        if (field.empty()) continue;
        const std::size_t eq = field.find('=');
        if (eq == std::string_view::npos)
            throw config_error("pool file: expected key=value, got '" + std::string(field) + "'");
        const std::string_view key = field.substr(0, eq);
        const std::string_view val = field.substr(eq + 1);
        if (key == "id") {
            p.id = static_cast<int>(parse_int(val, "id"));
            saw_id = true;
        } else if (key == "features") {
            p.features.clear();
            for (std::string_view tok : split(val, ','))
                p.features.push_back(parse_double(tok, "features"));
            saw_features = true;
        } else if (key == "answer_count") {
            p.answer_count = static_cast<int>(parse_int(val, "answer_count"));
            saw_count = true;
        } else if (key == "reference_answer") {
            p.reference_answer = static_cast<int>(parse_int(val, "reference_answer"));
            saw_ref = true;
        } else if (key == "domain_tag") {
            p.domain_tag = domain_tag_from_string(val);
        } else if (key == "corruption") {
            p.corruption.mode = corruption_mode_from_string(val);
        } else if (key == "p") {
            p.corruption.p = parse_double(val, "p");
        } else {
            throw config_error("pool file: unknown field '" + std::string(key) + "'");
        }
    }
    if (!saw_id || !saw_features || !saw_count || !saw_ref)
        throw config_error("pool file: record missing a required field");
    p.validate();
    return p;
}

inline void write_pool_file(const std::string& path, std::span<const Problem> problems,
                            bool include_corruption = true) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open pool file for writing: " + path);
    for (const Problem& p : problems) out << format_problem_line(p, include_corruption) << '\n';
    if (!out) throw config_error("failed writing pool file: " + path);
}

inline std::vector<Problem> read_pool_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open pool file: " + path);
    std::vector<Problem> out;
    std::string line;
    std::size_t expected_dim = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(parse_problem_line(line));
        if (out.size() == 1) {
            expected_dim = out.front().features.size();
        } else if (out.back().features.size() != expected_dim) {
            throw config_error("pool file: inconsistent feature length at id " +
                               std::to_string(out.back().id));
        }
    }
    return out;
}

} // namespace gradalign
