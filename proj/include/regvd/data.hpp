#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "regvd/matrix.hpp"
#include "regvd/rng.hpp"
#include "regvd/tokenizer.hpp"

namespace regvd {

/// One labeled function: raw source text plus the binary label
/// (1 = vulnerable, 0 = benign).
struct CodeSample {
    long long idx = 0;
    std::string source;
    int label = 0;
};

struct LoadReport {
    std::vector<CodeSample> samples;
    std::vector<std::string> errors;  // line-numbered diagnostics for rejected lines
    std::size_t total_lines = 0;
};

/// Reads the defect-detection JSONL format: one object per line with fields
/// `func` (text), `target` (0/1) and optional `idx`. Malformed lines are
/// collected into the report; more than 1% malformed aborts the load.
inline LoadReport load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_jsonl: cannot read " + path);

    LoadReport report;
    std::string line;
    long long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++report.total_lines;
        const auto reject = [&](const std::string& why) {
            report.errors.push_back("line " + std::to_string(line_number) + ": " + why);
        };
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            reject("not a JSON object");
            continue;
        }
        if (!j.contains("func") || !j["func"].is_string()) {
            reject("missing or non-string 'func'");
            continue;
        }
        if (!j.contains("target") || !j["target"].is_number_integer()) {
            reject("missing or non-integer 'target'");
            continue;
        }
        const long long target = j["target"].get<long long>();
        if (target != 0 && target != 1) {
            reject("target " + std::to_string(target) + " is not 0/1");
            continue;
        }
        CodeSample sample;
        sample.source = j["func"].get<std::string>();
        if (sample.source.empty()) {
            reject("empty 'func'");
            continue;
        }
        sample.label = static_cast<int>(target);
        sample.idx = j.contains("idx") && j["idx"].is_number_integer() ? j["idx"].get<long long>()
                                                                       : line_number - 1;
        report.samples.push_back(std::move(sample));
    }

    if (report.total_lines == 0) throw std::runtime_error("load_jsonl: empty split " + path);
    if (report.errors.size() * 100 > report.total_lines) {
        std::string detail = report.errors.front();
        throw std::runtime_error("load_jsonl: " + std::to_string(report.errors.size()) + " of " +
                                 std::to_string(report.total_lines) + " lines malformed in " +
                                 path + " (first: " + detail + ")");
    }
    return report;
}

/// Reference split sizes of the public defect-detection benchmark.
struct ReferenceStats {
    static constexpr std::size_t kTrain = 21854;
    static constexpr std::size_t kValid = 2732;
    static constexpr std::size_t kTest = 2732;
};

struct StatsReport {
    bool match = false;
    std::string message;
};

/// Compares loaded split sizes against the benchmark reference. Mismatches
/// are reported, not fatal: subsets are expected during ablations.
inline StatsReport verify_stats(std::optional<std::size_t> train, std::optional<std::size_t> valid,
                                std::optional<std::size_t> test) {
    require(train.has_value(), "verify_stats: missing train split");
    require(valid.has_value(), "verify_stats: missing valid split");
    require(test.has_value(), "verify_stats: missing test split");
    StatsReport report;
    report.match = *train == ReferenceStats::kTrain && *valid == ReferenceStats::kValid &&
                   *test == ReferenceStats::kTest;
    std::ostringstream msg;
    msg << "splits " << *train << "/" << *valid << "/" << *test << " vs reference "
        << ReferenceStats::kTrain << "/" << ReferenceStats::kValid << "/" << ReferenceStats::kTest
        << ": " << (report.match ? "match" : "mismatch (expected for subsets)");
    report.message = msg.str();
    return report;
}

template <typename T>
struct EmbeddingImportReport {
    int matched = 0;
    double coverage = 0.0;  // matched / assigned vocabulary tokens
};

/// Loads a whitespace-separated text matrix (`token v1 .. vd` per line) and
/// overwrites the matching rows of `table`; everything else keeps its
/// existing (random) initialization.
template <typename T>
EmbeddingImportReport<T> import_embeddings(const std::string& path, const Vocabulary& vocab,
                                           Matrix<T>& table) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("import_embeddings: cannot read " + path);

    EmbeddingImportReport<T> report;
    const int d = table.cols();
    std::string line;
    long long line_number = 0;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream row(line);
        std::string token;
        row >> token;
        values.clear();
        double v;
        while (row >> v) values.push_back(v);
        if (static_cast<int>(values.size()) != d) {
            throw std::runtime_error("import_embeddings: line " + std::to_string(line_number) +
                                     " has dimension " + std::to_string(values.size()) +
                                     ", expected " + std::to_string(d));
        }
        if (!vocab.contains(token)) continue;
        const int id = vocab.id_for(token);
        if (id < 2) continue;  // PAD/UNK rows are never imported
        for (int j = 0; j < d; ++j) table(id, j) = static_cast<T>(values[j]);
        ++report.matched;
    }
    const int assigned = vocab.size() - 2;
    report.coverage = assigned > 0 ? static_cast<double>(report.matched) / assigned : 0.0;
    return report;
}

/// Seeded label-stratified subsample of ⌊fraction * n⌋ rows, preserving the
/// input order of the kept rows. Per-class quotas are proportional, with the
/// remainder going to the classes with the largest fractional parts.
template <typename Sample>
std::vector<Sample> stratified_fraction(const std::vector<Sample>& samples, double fraction,
                                        std::uint64_t seed) {
    require(fraction > 0.0 && fraction <= 1.0, "stratified_fraction: fraction must be in (0, 1]");
    if (fraction == 1.0) return samples;
    const std::size_t target =
        static_cast<std::size_t>(fraction * static_cast<double>(samples.size()));

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label == 1].push_back(i);

    double quota[2];
    std::size_t take[2];
    for (int c = 0; c < 2; ++c) {
        quota[c] = fraction * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(quota[c]);
    }
    while (take[0] + take[1] < target) {
        const double rem0 = quota[0] - static_cast<double>(take[0]);
        const double rem1 = quota[1] - static_cast<double>(take[1]);
        int c = rem0 >= rem1 ? 0 : 1;
        if (take[c] >= by_class[c].size()) c = 1 - c;
        ++take[c];
    }

    Rng rng(mix_seed(seed, 7));
    std::vector<std::size_t> chosen;
    for (int c = 0; c < 2; ++c) {
        rng.shuffle(by_class[c]);
        chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + take[c]);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<Sample> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(samples[i]);
    return out;
}

}  // namespace regvd
