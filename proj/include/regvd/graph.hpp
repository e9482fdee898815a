#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "regvd/matrix.hpp"
#include "regvd/tokenizer.hpp"

namespace regvd {

enum class Construction { UniqueToken, Index };

inline const char* to_string(Construction c) {
    return c == Construction::UniqueToken ? "unique" : "index";
}

/// One graph per token sequence: symmetric {0,1} adjacency with zero
/// diagonal (no self-loops), plus the vocabulary id behind each node.
struct CodeGraph {
    int num_nodes = 0;
    std::vector<std::uint8_t> adjacency;  // dense num_nodes x num_nodes
    std::vector<int> node_token_ids;
    Construction construction = Construction::UniqueToken;

    bool edge(int v, int u) const {
        return adjacency[static_cast<std::size_t>(v) * num_nodes + u] != 0;
    }

    /// Inserts the symmetric edge v-u; self-pairs are dropped.
    void set_edge(int v, int u) {
        if (v == u) return;
        adjacency[static_cast<std::size_t>(v) * num_nodes + u] = 1;
        adjacency[static_cast<std::size_t>(u) * num_nodes + v] = 1;
    }

    /// Unordered edges as (v,u) with v < u, in row-major order.
    std::vector<std::pair<int, int>> edge_list() const {
        std::vector<std::pair<int, int>> edges;
        for (int v = 0; v < num_nodes; ++v)
            for (int u = v + 1; u < num_nodes; ++u)
                if (edge(v, u)) edges.emplace_back(v, u);
        return edges;
    }
};

namespace detail {

/// Sliding-window spans over a length-l sequence: every contiguous span of
/// length min(window, l), advancing one token at a time.
inline int span_count(int length, int window) {
    return length >= window ? length - window + 1 : 1;
}

inline int span_length(int length, int window) { return std::min(length, window); }

}  // namespace detail

/// Nodes are the distinct token ids in first-occurrence order; an edge joins
/// two distinct tokens whenever they co-occur inside one sliding window.
inline CodeGraph build_unique_token_graph(const TokenSequence& seq, int window) {
    require(window >= 2, "build_unique_token_graph: window must be >= 2");
    require(seq.length() >= 1, "build_unique_token_graph: empty sequence");

    CodeGraph g;
    g.construction = Construction::UniqueToken;
    std::unordered_map<int, int> node_of;
    std::vector<int> position_node(seq.ids.size());
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        auto [it, inserted] = node_of.try_emplace(seq.ids[i], static_cast<int>(node_of.size()));
        if (inserted) g.node_token_ids.push_back(seq.ids[i]);
        position_node[i] = it->second;
    }
    g.num_nodes = static_cast<int>(g.node_token_ids.size());
    g.adjacency.assign(static_cast<std::size_t>(g.num_nodes) * g.num_nodes, 0);

    const int l = seq.length();
    const int span = detail::span_length(l, window);
    for (int start = 0; start < detail::span_count(l, window); ++start) {
        for (int p = start; p < start + span; ++p)
            for (int q = p + 1; q < start + span; ++q) g.set_edge(position_node[p], position_node[q]);
    }
    return g;
}

/// Nodes are token positions, one per token, so the graph has exactly l
/// nodes; positions i and j are adjacent iff 0 < |i-j| < window.
inline CodeGraph build_index_graph(const TokenSequence& seq, int window) {
    require(window >= 2, "build_index_graph: window must be >= 2");
    require(seq.length() >= 1, "build_index_graph: empty sequence");

    CodeGraph g;
    g.construction = Construction::Index;
    g.num_nodes = seq.length();
    g.node_token_ids = seq.ids;
    g.adjacency.assign(static_cast<std::size_t>(g.num_nodes) * g.num_nodes, 0);
    for (int i = 0; i < g.num_nodes; ++i)
        for (int j = i + 1; j < g.num_nodes && j - i < window; ++j) g.set_edge(i, j);
    return g;
}

/// D^{-1/2} A D^{-1/2} with deg = row sums of A; rows and columns of
/// isolated nodes stay zero (0/0 -> 0).
template <typename T>
Matrix<T> normalize_adjacency(const CodeGraph& g) {
    const int m = g.num_nodes;
    for (int v = 0; v < m; ++v) {
        require(!g.edge(v, v), "normalize_adjacency: nonzero diagonal");
        for (int u = v + 1; u < m; ++u)
            require(g.edge(v, u) == g.edge(u, v), "normalize_adjacency: asymmetric adjacency");
    }
    std::vector<T> inv_sqrt_deg(m, T(0));
    for (int v = 0; v < m; ++v) {
        int deg = 0;
        for (int u = 0; u < m; ++u) deg += g.edge(v, u) ? 1 : 0;
        if (deg > 0) inv_sqrt_deg[v] = T(1) / std::sqrt(static_cast<T>(deg));
    }
    Matrix<T> a(m, m);
    for (int v = 0; v < m; ++v)
        for (int u = 0; u < m; ++u)
            if (g.edge(v, u)) a(v, u) = inv_sqrt_deg[v] * inv_sqrt_deg[u];
    return a;
}

/// One-line JSON record, the `build-graph` wire format.
inline std::string to_json_line(const CodeGraph& g) {
    nlohmann::ordered_json j;
    j["m"] = g.num_nodes;
    auto edges = nlohmann::ordered_json::array();
    for (const auto& [v, u] : g.edge_list()) edges.push_back({v, u});
    j["edges"] = std::move(edges);
    j["node_token_ids"] = g.node_token_ids;
    j["construction"] = to_string(g.construction);
    return j.dump();
}

}  // namespace regvd
