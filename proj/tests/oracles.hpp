// Test-only reference implementations, kept deliberately independent of the
// library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "regvd/matrix.hpp"

namespace oracle {

/// Brute-force co-occurrence: enumerate every contiguous sliding-window span
/// (length min(window, l), advancing one position at a time) and insert
/// every unordered off-diagonal pair seen inside any span.
inline std::set<std::pair<int, int>> index_edges(int length, int window) {
    std::set<std::pair<int, int>> edges;
    const int span = std::min(length, window);
    const int spans = length >= window ? length - window + 1 : 1;
    for (int s = 0; s < spans; ++s) {
        for (int p = s; p < s + span; ++p) {
            for (int q = s; q < s + span; ++q) {
                if (p != q) edges.insert({std::min(p, q), std::max(p, q)});
            }
        }
    }
    return edges;
}

/// Same enumeration with token values as endpoints; equal tokens inside a
/// span are self-pairs and dropped.
inline std::set<std::pair<int, int>> unique_token_edges(const std::vector<int>& ids, int window) {
    std::set<std::pair<int, int>> edges;
    const int length = static_cast<int>(ids.size());
    const int span = std::min(length, window);
    const int spans = length >= window ? length - window + 1 : 1;
    for (int s = 0; s < spans; ++s) {
        for (int p = s; p < s + span; ++p) {
            for (int q = s; q < s + span; ++q) {
                if (ids[p] != ids[q]) edges.insert({std::min(ids[p], ids[q]), std::max(ids[p], ids[q])});
            }
        }
    }
    return edges;
}

/// Character-by-character lexer with an explicit state machine; mirrors the
/// documented splitting rule, not the production scanner.
inline std::vector<std::string> lex(const std::string& text) {
    enum State { Default, LineComment, BlockComment, Literal, Ident };
    std::vector<std::string> tokens;
    std::string current;
    State state = Default;
    char quote = 0;
    bool escaped = false;
    auto ident_char = [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '_';
    };
    std::size_t i = 0;
    while (i <= text.size()) {
        const bool at_end = i == text.size();
        const char c = at_end ? '\0' : text[i];
        switch (state) {
            case Default:
                if (at_end) break;
                if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
                    state = LineComment;
                    ++i;
                } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '*') {
                    state = BlockComment;
                    ++i;
                } else if (c == '"' || c == '\'') {
                    state = Literal;
                    quote = c;
                    escaped = false;
                    current.assign(1, c);
                } else if (ident_char(c)) {
                    state = Ident;
                    current.assign(1, c);
                } else if (!std::isspace(static_cast<unsigned char>(c))) {
                    tokens.emplace_back(1, c);
                }
                break;
            case LineComment:
                if (at_end || c == '\n') state = Default;
                break;
            case BlockComment:
                if (!at_end && c == '*' && i + 1 < text.size() && text[i + 1] == '/') {
                    state = Default;
                    ++i;
                }
                break;
            case Literal:
                if (at_end || c == '\n') {
                    tokens.push_back(current);
                    state = Default;
                    continue;  // reprocess the newline as Default
                }
                current.push_back(c);
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == quote) {
                    tokens.push_back(current);
                    state = Default;
                }
                break;
            case Ident:
                if (!at_end && ident_char(c)) {
                    current.push_back(c);
                } else {
                    tokens.push_back(current);
                    state = Default;
                    continue;  // reprocess c as Default
                }
                break;
        }
        ++i;
    }
    return tokens;
}

/// Central-difference gradient check. `loss` recomputes the objective from
/// the parameters' current values; `tensors` and `analytic` are aligned.
/// Returns the max relative error with a 1e-8 absolute floor.
inline double max_fd_error(const std::vector<regvd::Matrix<double>*>& tensors,
                           const std::vector<const regvd::Matrix<double>*>& analytic,
                           const std::function<double()>& loss, double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        regvd::Matrix<double>& theta = *tensors[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta.data()[i];
            theta.data()[i] = saved + step;
            const double up = loss();
            theta.data()[i] = saved - step;
            const double down = loss();
            theta.data()[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double g = analytic[t]->data()[i];
            const double denom = std::max({std::abs(fd), std::abs(g), 1e-8});
            worst = std::max(worst, std::abs(fd - g) / denom);
        }
    }
    return worst;
}

}  // namespace oracle
