#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "regvd/gnn.hpp"
#include "regvd/graph.hpp"
#include "regvd/rng.hpp"
#include "regvd/tape.hpp"

using regvd::build_index_graph;
using regvd::CodeGraph;
using regvd::GgnnLayerVars;
using regvd::GnnStackVars;
using regvd::Matrix;
using regvd::normalize_adjacency;
using regvd::Tape;
using regvd::TokenSequence;
using regvd::Var;

namespace {

Matrix<double> random_matrix(int rows, int cols, regvd::Rng& rng, double scale = 0.8) {
    Matrix<double> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

Matrix<double> scaled_identity(int n, double s) {
    Matrix<double> m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = s;
    return m;
}

/// Normalized adjacency of a path 0-1-2 plus an isolated node 3.
Matrix<double> path_with_isolated() {
    CodeGraph g;
    g.num_nodes = 4;
    g.node_token_ids = {0, 1, 2, 3};
    g.adjacency.assign(16, 0);
    g.set_edge(0, 1);
    g.set_edge(1, 2);
    return normalize_adjacency<double>(g);
}

struct GgnnFixture {
    Matrix<double> w_update, u_update, w_reset, u_reset, w_candidate, u_candidate;
    GgnnLayerVars reg(Tape<double>& tape) const {
        return {tape.parameter(w_update),    tape.parameter(u_update),
                tape.parameter(w_reset),     tape.parameter(u_reset),
                tape.parameter(w_candidate), tape.parameter(u_candidate)};
    }
};

GgnnFixture random_ggnn(int d, regvd::Rng& rng) {
    return {random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng),
            random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng)};
}

}  // namespace

TEST_CASE("gcn layer aggregates neighbors only", "[gnn]") {
    SECTION("zero input stays zero") {
        Tape<double> tape;
        Var h = tape.constant(Matrix<double>(4, 2));
        Var a = tape.constant(path_with_isolated());
        Var w = tape.constant(Matrix<double>::identity(2));
        CHECK(tape.value(regvd::gcn_layer(tape, h, a, w)) == Matrix<double>(4, 2));
    }
    SECTION("isolated node outputs zero regardless of its own features") {
        Tape<double> tape;
        Matrix<double> h0(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
        Var out = regvd::gcn_layer(tape, tape.constant(h0), tape.constant(path_with_isolated()),
                                   tape.constant(Matrix<double>::identity(2)));
        CHECK(tape.value(out)(3, 0) == 0.0);
        CHECK(tape.value(out)(3, 1) == 0.0);
        CHECK(tape.value(out)(0, 0) != 0.0);  // non-isolated rows do receive messages
    }
    SECTION("two nodes with one edge and identity weights swap features") {
        const CodeGraph g = build_index_graph(TokenSequence{{5, 6}}, 2);
        Tape<double> tape;
        Matrix<double> h0(2, 2, {1, -2, 3, 4});
        Var out = regvd::gcn_layer(tape, tape.constant(h0),
                                   tape.constant(normalize_adjacency<double>(g)),
                                   tape.constant(Matrix<double>::identity(2)));
        // each node sees ReLU of the other's features under unit degrees
        CHECK(tape.value(out) == Matrix<double>(2, 2, {3, 4, 1, 0}));
    }
}

TEST_CASE("ggnn layer follows the gated update", "[gnn]") {
    SECTION("update gate driven to zero keeps the input") {
        // single isolated node: a_v = 0, so z = sigmoid(U_z h); a large
        // negative U_z saturates the gate closed and the blend returns h.
        CodeGraph g;
        g.num_nodes = 1;
        g.node_token_ids = {0};
        g.adjacency = {0};
        Tape<double> tape;
        Matrix<double> h0(1, 3, {0.5, 1.0, 2.0});
        GgnnFixture f{Matrix<double>(3, 3), scaled_identity(3, -1e4), Matrix<double>(3, 3),
                      Matrix<double>(3, 3), Matrix<double>(3, 3),     scaled_identity(3, 1.0)};
        Var out = regvd::ggnn_layer(tape, tape.constant(h0),
                                    tape.constant(normalize_adjacency<double>(g)), f.reg(tape));
        for (int j = 0; j < 3; ++j)
            CHECK(tape.value(out)(0, j) == Catch::Approx(h0(0, j)).margin(1e-12));
    }
    SECTION("all-zero state with zero parameters stays zero") {
        Tape<double> tape;
        GgnnFixture f{Matrix<double>(2, 2), Matrix<double>(2, 2), Matrix<double>(2, 2),
                      Matrix<double>(2, 2), Matrix<double>(2, 2), Matrix<double>(2, 2)};
        Var out = regvd::ggnn_layer(tape, tape.constant(Matrix<double>(4, 2)),
                                    tape.constant(path_with_isolated()), f.reg(tape));
        CHECK(tape.value(out) == Matrix<double>(4, 2));
    }
    SECTION("isolated node update depends only on its own state") {
        regvd::Rng rng(17);
        const int d = 3;
        GgnnFixture f = random_ggnn(d, rng);
        Matrix<double> h0 = random_matrix(4, d, rng);

        Tape<double> tape;
        Var out = regvd::ggnn_layer(tape, tape.constant(h0), tape.constant(path_with_isolated()),
                                    f.reg(tape));

        // trace the update by hand for the isolated node (a_v = 0)
        auto dot_row = [&](const Matrix<double>& w, const double* h, int j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += w(j, k) * h[k];
            return acc;
        };
        const double* h = h0.row(3);
        for (int j = 0; j < d; ++j) {
            const double z = 1.0 / (1.0 + std::exp(-dot_row(f.u_update, h, j)));
            const double r = 1.0 / (1.0 + std::exp(-dot_row(f.u_reset, h, j)));
            // candidate uses r ⊙ h elementwise before U_o
            double masked[8];
            for (int k = 0; k < d; ++k) {
                const double rk = 1.0 / (1.0 + std::exp(-dot_row(f.u_reset, h, k)));
                masked[k] = rk * h[k];
            }
            (void)r;
            const double cand = std::tanh(dot_row(f.u_candidate, masked, j));
            const double expected = (1.0 - z) * h[j] + z * cand;
            CHECK(tape.value(out)(3, j) == Catch::Approx(expected).margin(1e-12));
        }
    }
    SECTION("gates stay strictly inside (0,1)") {
        regvd::Rng rng(31);
        GgnnFixture f = random_ggnn(3, rng);
        Tape<double> tape;
        regvd::GgnnGates gates;
        regvd::ggnn_layer(tape, tape.constant(random_matrix(4, 3, rng)),
                          tape.constant(path_with_isolated()), f.reg(tape), &gates);
        for (Var v : {gates.update, gates.reset}) {
            const Matrix<double>& m = tape.value(v);
            for (std::size_t i = 0; i < m.size(); ++i) {
                CHECK(m.data()[i] > 0.0);
                CHECK(m.data()[i] < 1.0);
            }
        }
    }
}

TEST_CASE("residual stack identities", "[gnn]") {
    Matrix<double> h0(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
    Matrix<double> zero_w(2, 2);

    SECTION("residual GCN with zero weights is the identity map") {
        Tape<double> tape;
        GnnStackVars stack;
        stack.kind = regvd::GnnKind::Gcn;
        stack.gcn_weights = {tape.parameter(zero_w), tape.parameter(zero_w)};
        Var out = regvd::residual_stack(tape, tape.constant(h0),
                                        tape.constant(path_with_isolated()), stack, true);
        CHECK(tape.value(out) == h0);  // exact, no tolerance
    }
    SECTION("without residual, zero weights collapse to zero") {
        Tape<double> tape;
        GnnStackVars stack;
        stack.kind = regvd::GnnKind::Gcn;
        stack.gcn_weights = {tape.parameter(zero_w), tape.parameter(zero_w)};
        Var out = regvd::residual_stack(tape, tape.constant(h0),
                                        tape.constant(path_with_isolated()), stack, false);
        CHECK(tape.value(out) == Matrix<double>(4, 2));
    }
    SECTION("residual GGNN with closed candidate returns the input") {
        // z saturates open (U_z = +1e4 I on positive h) while W_o = U_o = 0
        // forces a zero candidate: the gated update contributes nothing and
        // only the residual term survives.
        CodeGraph g;
        g.num_nodes = 1;
        g.node_token_ids = {0};
        g.adjacency = {0};
        Matrix<double> h(1, 2, {0.5, 1.5});
        Tape<double> tape;
        GgnnFixture f{Matrix<double>(2, 2), scaled_identity(2, 1e4), Matrix<double>(2, 2),
                      Matrix<double>(2, 2), Matrix<double>(2, 2),    Matrix<double>(2, 2)};
        GnnStackVars stack;
        stack.kind = regvd::GnnKind::Ggnn;
        stack.ggnn_layers = {f.reg(tape)};
        Var out = regvd::residual_stack(tape, tape.constant(h),
                                        tape.constant(normalize_adjacency<double>(g)), stack, true);
        for (int j = 0; j < 2; ++j)
            CHECK(tape.value(out)(0, j) == Catch::Approx(h(0, j)).margin(1e-12));
    }
    SECTION("stacking equals explicit composition") {
        regvd::Rng rng(5);
        Matrix<double> w1 = random_matrix(2, 2, rng);
        Matrix<double> w2 = random_matrix(2, 2, rng);
        Matrix<double> a = path_with_isolated();
        Matrix<double> features = random_matrix(4, 2, rng);

        Tape<double> tape;
        GnnStackVars stack;
        stack.kind = regvd::GnnKind::Gcn;
        Var w1v = tape.parameter(w1);
        Var w2v = tape.parameter(w2);
        stack.gcn_weights = {w1v, w2v};
        Var av = tape.constant(a);
        Var h0 = tape.constant(features);
        Var stacked = regvd::residual_stack(tape, h0, av, stack, true);

        Var h1 = tape.add(h0, regvd::gcn_layer(tape, h0, av, w1v));
        Var h2 = tape.add(h1, regvd::gcn_layer(tape, h1, av, w2v));
        CHECK(tape.value(stacked) == tape.value(h2));
    }
    SECTION("at least one layer is required") {
        Tape<double> tape;
        GnnStackVars stack;
        CHECK_THROWS_AS(regvd::residual_stack(tape, tape.constant(h0),
                                              tape.constant(path_with_isolated()), stack, true),
                        std::invalid_argument);
    }
}

TEST_CASE("stacks are permutation equivariant", "[gnn]") {
    regvd::Rng rng(13);
    const int d = 3;
    for (auto kind : {regvd::GnnKind::Gcn, regvd::GnnKind::Ggnn}) {
        for (bool residual : {true, false}) {
            // random graph over 6 nodes
            CodeGraph g;
            g.num_nodes = 6;
            g.node_token_ids = {0, 1, 2, 3, 4, 5};
            g.adjacency.assign(36, 0);
            for (int v = 0; v < 6; ++v)
                for (int u = v + 1; u < 6; ++u)
                    if (rng.uniform01() < 0.4) g.set_edge(v, u);
            Matrix<double> a = normalize_adjacency<double>(g);
            Matrix<double> h0 = random_matrix(6, d, rng);

            std::vector<int> perm{3, 5, 0, 1, 4, 2};
            Matrix<double> pa(6, 6);
            Matrix<double> ph(6, d);
            for (int v = 0; v < 6; ++v) {
                for (int u = 0; u < 6; ++u) pa(perm[v], perm[u]) = a(v, u);
                for (int j = 0; j < d; ++j) ph(perm[v], j) = h0(v, j);
            }

            Matrix<double> w1 = random_matrix(d, d, rng);
            Matrix<double> w2 = random_matrix(d, d, rng);
            GgnnFixture f1 = random_ggnn(d, rng);
            GgnnFixture f2 = random_ggnn(d, rng);

            auto run = [&](const Matrix<double>& adj, const Matrix<double>& feats) {
                Tape<double> tape;
                GnnStackVars stack;
                stack.kind = kind;
                if (kind == regvd::GnnKind::Gcn) {
                    stack.gcn_weights = {tape.parameter(w1), tape.parameter(w2)};
                } else {
                    stack.ggnn_layers = {f1.reg(tape), f2.reg(tape)};
                }
                Var out = regvd::residual_stack(tape, tape.constant(feats), tape.constant(adj),
                                                stack, residual);
                return tape.value(out);
            };

            const Matrix<double> base = run(a, h0);
            const Matrix<double> permuted = run(pa, ph);
            for (int v = 0; v < 6; ++v)
                for (int j = 0; j < d; ++j)
                    CHECK(permuted(perm[v], j) == Catch::Approx(base(v, j)).margin(1e-10));
        }
    }
}
