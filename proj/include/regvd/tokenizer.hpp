#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "regvd/check.hpp"

namespace regvd {

/// FNV-1a 64-bit, used for vocabulary and input-file digests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline bool is_identifier_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

/// Splits source text into a flat token sequence: maximal identifier runs,
/// string/char literals as single tokens, every other non-space character as
/// its own token. Comments and whitespace are discarded. Deterministic and
/// pure; returns an empty list for whitespace-only input.
inline std::vector<std::string> tokenize(std::string_view source) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = source.size();
    while (i < n) {
        const char c = source[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && source[i + 1] == '/') {
            while (i < n && source[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && source[i + 1] == '*') {
            i += 2;
            while (i + 1 < n && !(source[i] == '*' && source[i + 1] == '/')) ++i;
            i = (i + 1 < n) ? i + 2 : n;  // unterminated comment swallows the rest
            continue;
        }
        if (c == '"' || c == '\'') {
            // Literal runs to the matching quote; a bare newline or EOF ends
            // an unterminated literal so tokens never contain newlines.
            std::size_t j = i + 1;
            while (j < n && source[j] != c && source[j] != '\n') {
                j += (source[j] == '\\' && j + 1 < n && source[j + 1] != '\n') ? 2 : 1;
            }
            if (j < n && source[j] == c) ++j;
            tokens.emplace_back(source.substr(i, j - i));
            i = j;
            continue;
        }
        if (is_identifier_char(c)) {
            std::size_t j = i;
            while (j < n && is_identifier_char(source[j])) ++j;
            tokens.emplace_back(source.substr(i, j - i));
            i = j;
            continue;
        }
        tokens.emplace_back(1, c);
        ++i;
    }
    return tokens;
}

/// Token-to-id mapping with reserved PAD=0 and UNK=1. Immutable once built.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() : id_to_token_{"<pad>", "<unk>"} {
        token_to_id_["<pad>"] = kPad;
        token_to_id_["<unk>"] = kUnk;
    }

    /// Appends one token at the next free id. Used by the builder/loader.
    void add(const std::string& token) {
        if (token_to_id_.count(token)) {
            throw std::invalid_argument("Vocabulary: duplicate token '" + token + "'");
        }
        token_to_id_[token] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
    }

    int size() const { return static_cast<int>(id_to_token_.size()); }

    /// Id for a token, UNK when out of vocabulary.
    int id_for(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    const std::string& token_for(int id) const {
        if (id < 0 || id >= size()) throw std::invalid_argument("Vocabulary: id out of range");
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    /// Digest over the assigned tokens, checked when a checkpoint is loaded
    /// against a vocabulary file.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int id = 2; id < size(); ++id) {
            h = fnv1a64(id_to_token_[static_cast<std::size_t>(id)], h);
            h = fnv1a64("\n", h);
        }
        return h;
    }

    /// One token per line, line number = id - 2; PAD/UNK are implicit.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("Vocabulary: cannot write " + path);
        for (int id = 2; id < size(); ++id) out << id_to_token_[static_cast<std::size_t>(id)] << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("Vocabulary: cannot read " + path);
        Vocabulary vocab;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            vocab.add(line);
        }
        return vocab;
    }

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

/// Ordered token-id list for one function.
struct TokenSequence {
    std::vector<int> ids;
    int length() const { return static_cast<int>(ids.size()); }
};

/// Assigns ids 2.. to tokens with corpus frequency >= min_count, ordered by
/// descending frequency then lexicographically. Built from the training
/// split only, so evaluation tokens can fall back to UNK.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count) {
    require(!corpus.empty(), "build_vocab: empty corpus");
    require(min_count >= 1, "build_vocab: min_count must be >= 1");
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& tokens : corpus) {
        for (const auto& token : tokens) ++counts[token];
    }
    std::vector<std::pair<std::string, std::int64_t>> kept;
    kept.reserve(counts.size());
    for (auto& entry : counts) {
        if (entry.second >= min_count) kept.emplace_back(entry.first, entry.second);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& entry : kept) vocab.add(entry.first);
    return vocab;
}

/// Maps tokens to ids (UNK for out-of-vocabulary) and truncates to the first
/// max_len tokens. Empty inputs are rejected; callers drop such samples.
inline TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                            int max_len) {
    require(max_len >= 1, "encode: max_len must be >= 1");
    require(!tokens.empty(), "encode: empty token list");
    TokenSequence seq;
    const std::size_t limit = std::min(tokens.size(), static_cast<std::size_t>(max_len));
    seq.ids.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i) seq.ids.push_back(vocab.id_for(tokens[i]));
    return seq;
}

}  // namespace regvd
