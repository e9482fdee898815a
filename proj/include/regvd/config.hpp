#pragma once

#include <cstdint>
#include <string>

#include "regvd/check.hpp"
#include "regvd/gnn.hpp"
#include "regvd/graph.hpp"
#include "regvd/readout.hpp"

namespace regvd {

inline Mix parse_mix(const std::string& s) {
    if (s == "SUM" || s == "sum") return Mix::Sum;
    if (s == "MUL" || s == "mul") return Mix::Mul;
    if (s == "CONCAT" || s == "concat") return Mix::Concat;
    throw std::invalid_argument("unknown MIX '" + s + "' (expected SUM, MUL or CONCAT)");
}

inline Construction parse_construction(const std::string& s) {
    if (s == "unique") return Construction::UniqueToken;
    if (s == "index") return Construction::Index;
    throw std::invalid_argument("unknown construction '" + s + "' (expected unique or index)");
}

inline GnnKind parse_base(const std::string& s) {
    if (s == "gcn") return GnnKind::Gcn;
    if (s == "ggnn") return GnnKind::Ggnn;
    throw std::invalid_argument("unknown base '" + s + "' (expected gcn or ggnn)");
}

/// Resolved run configuration. Defaults are the strongest reported setting
/// (GCN base, unique-token graphs, MUL mix, window 5, hidden 128, lr 5e-4);
/// the usual grids are hidden {128,256,384}, window {2..5} and
/// lr {1e-4, 5e-4, 1e-3}, but any positive value is accepted.
struct TrainConfig {
    int layers = 2;
    int hidden = 128;
    int window = 5;
    Mix mix = Mix::Mul;
    Construction construction = Construction::UniqueToken;
    GnnKind base = GnnKind::Gcn;
    bool residual = true;
    double lr = 5e-4;
    double lambda = 1e-5;
    int batch = 128;
    int epochs = 100;
    std::uint64_t seed = 42;
    int max_len = 512;
    int min_count = 1;
    bool share_ggnn_params = false;
    bool freeze_embeddings = false;
    int workers = 1;
    std::string precision = "f64";

    int graph_embedding_dim() const { return mix == Mix::Concat ? 2 * hidden : hidden; }

    void validate() const {
        require(layers >= 1, "config: layers must be >= 1");
        require(hidden >= 1, "config: hidden size must be >= 1");
        require(window >= 2, "config: window must be >= 2");
        require(lr > 0, "config: lr must be positive");
        require(lambda >= 0, "config: lambda must be >= 0");
        require(batch >= 1, "config: batch must be >= 1");
        require(epochs >= 0, "config: epochs must be >= 0");
        require(max_len >= 1, "config: max_len must be >= 1");
        require(min_count >= 1, "config: min_count must be >= 1");
        require(workers >= 1, "config: workers must be >= 1");
        require(precision == "f64" || precision == "f32",
                "config: precision must be f64 or f32");
    }
};

}  // namespace regvd
