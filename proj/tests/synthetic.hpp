// Shared generator for a separable toy corpus: the label marks whether the
// function calls a designated marker token.
#pragma once

#include <string>
#include <vector>

#include "regvd/data.hpp"
#include "regvd/rng.hpp"
#include "regvd/tokenizer.hpp"
#include "regvd/train.hpp"

namespace synthetic {

inline const char* kMarker = "unsafe_copy";

/// n samples, alternating labels. Positive samples contain one marker call
/// at a random position; everything else is drawn from a small benign pool.
inline std::vector<regvd::CodeSample> corpus(int n, std::uint64_t seed) {
    static const std::vector<std::string> pool = {
        "int", "char", "len", "buf", "src", "dst", "i", "n", "tmp", "count",
        "memcpy_s", "check_bounds", "validate", "return", "if", "for", "size"};
    regvd::Rng rng(seed);
    std::vector<regvd::CodeSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        const int body_len = 8 + static_cast<int>(rng.below(12));
        std::vector<std::string> tokens;
        tokens.push_back("void");
        tokens.push_back("f" + std::to_string(i));
        tokens.push_back("(");
        tokens.push_back(")");
        tokens.push_back("{");
        for (int t = 0; t < body_len; ++t) {
            tokens.push_back(pool[rng.below(pool.size())]);
            tokens.push_back(";");
        }
        if (label == 1) {
            const std::size_t at = 5 + rng.below(tokens.size() - 5);
            tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), kMarker);
        }
        tokens.push_back("}");
        std::string source;
        for (const auto& tok : tokens) {
            source += tok;
            source += ' ';
        }
        samples.push_back({i, source, label});
    }
    return samples;
}

struct PreparedCorpus {
    regvd::Vocabulary vocab;
    std::vector<regvd::PreparedSample> train;
    std::vector<regvd::PreparedSample> valid;
};

/// Builds the vocabulary on the training portion only and encodes both
/// splits. `valid_count` samples are taken from the tail.
inline PreparedCorpus prepare(const std::vector<regvd::CodeSample>& samples, int valid_count,
                              int max_len) {
    std::vector<regvd::CodeSample> train_raw(samples.begin(), samples.end() - valid_count);
    std::vector<regvd::CodeSample> valid_raw(samples.end() - valid_count, samples.end());
    PreparedCorpus out;
    out.vocab = regvd::build_vocab(regvd::tokenize_corpus(train_raw), 1);
    out.train = regvd::prepare_split(train_raw, out.vocab, max_len).samples;
    out.valid = regvd::prepare_split(valid_raw, out.vocab, max_len).samples;
    return out;
}

}  // namespace synthetic
