#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "regvd/rng.hpp"
#include "regvd/tape.hpp"

using regvd::Matrix;
using regvd::Tape;
using regvd::Var;

namespace {

Matrix<double> random_matrix(int rows, int cols, regvd::Rng& rng, double scale = 1.0) {
    Matrix<double> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

/// Collapses any node to 1x1 by summing all entries (through tape ops, so
/// gradients keep flowing).
Var to_scalar(Tape<double>& tape, Var v) {
    Matrix<double> ones(tape.value(v).cols(), 1);
    ones.fill(1.0);
    return tape.matmul(tape.row_sum(v), tape.constant(ones));
}

}  // namespace

TEST_CASE("matmul computes the standard product", "[numeric]") {
    Tape<double> tape;
    Matrix<double> m(2, 2, {1, 2, 3, 4});

    SECTION("identity") {
        Var out = tape.matmul(tape.constant(Matrix<double>::identity(2)), tape.constant(m));
        CHECK(tape.value(out) == m);
    }
    SECTION("hand arithmetic") {
        Var out = tape.matmul(tape.constant(m), tape.constant(Matrix<double>(2, 1, {1, 1})));
        CHECK(tape.value(out) == Matrix<double>(2, 1, {3, 7}));
    }
    SECTION("zero times anything") {
        Var out = tape.matmul(tape.constant(Matrix<double>(2, 2)), tape.constant(m));
        CHECK(tape.value(out) == Matrix<double>(2, 2));
    }
    SECTION("dimension mismatch") {
        Var a = tape.constant(Matrix<double>(2, 3));
        Var b = tape.constant(Matrix<double>(2, 3));
        CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
        CHECK_NOTHROW(tape.matmul_transposed(a, b));
    }
}

TEST_CASE("elementwise and reduction ops match their definitions", "[numeric]") {
    Tape<double> tape;
    CHECK(tape.value(tape.relu(tape.constant(Matrix<double>(1, 2, {-1, 2})))) ==
          Matrix<double>(1, 2, {0, 2}));
    CHECK(tape.value(tape.sigmoid(tape.constant(Matrix<double>(1, 1, {0}))))(0, 0) == 0.5);
    CHECK(tape.value(tape.tanh(tape.constant(Matrix<double>(1, 1, {0}))))(0, 0) == 0.0);

    // pooling over rows: max over nodes per feature
    Var mx = tape.row_max(tape.constant(Matrix<double>(2, 2, {1, 3, 2, 2})));
    CHECK(tape.value(mx) == Matrix<double>(1, 2, {2, 3}));
    Var sm = tape.row_sum(tape.constant(Matrix<double>(2, 2, {1, 3, 2, 2})));
    CHECK(tape.value(sm) == Matrix<double>(1, 2, {3, 5}));

    Var cat = tape.concat_cols(tape.constant(Matrix<double>(1, 2, {1, 2})),
                               tape.constant(Matrix<double>(1, 1, {9})));
    CHECK(tape.value(cat) == Matrix<double>(1, 3, {1, 2, 9}));

    CHECK_THROWS_AS(tape.add(tape.constant(Matrix<double>(1, 2)), tape.constant(Matrix<double>(2, 1))),
                    std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and shift-invariance holds", "[numeric]") {
    regvd::Rng rng(11);
    for (int round = 0; round < 20; ++round) {
        Matrix<double> logits = random_matrix(3, 4, rng, 30.0);
        Matrix<double> probs = regvd::softmax(logits);
        for (int i = 0; i < probs.rows(); ++i) {
            double total = 0.0;
            for (int j = 0; j < probs.cols(); ++j) total += probs(i, j);
            CHECK(total == Catch::Approx(1.0).margin(1e-12));
        }
        Matrix<double> shifted = logits;
        for (int j = 0; j < shifted.cols(); ++j) shifted(1, j) += 123.0;
        Matrix<double> probs2 = regvd::softmax(shifted);
        for (int j = 0; j < probs.cols(); ++j)
            CHECK(probs2(1, j) == Catch::Approx(probs(1, j)).margin(1e-12));
    }
}

TEST_CASE("cross entropy values", "[numeric]") {
    Tape<double> tape;
    SECTION("uniform softmax gives ln 2") {
        Var ce = tape.cross_entropy_with_logits(tape.constant(Matrix<double>(1, 2, {0, 0})), {0});
        CHECK(tape.value(ce)(0, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SECTION("huge equal logits stay finite") {
        Var ce =
            tape.cross_entropy_with_logits(tape.constant(Matrix<double>(1, 2, {1000, 1000})), {1});
        CHECK(tape.value(ce)(0, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SECTION("closed form for logits [2,0], label 1") {
        Var ce = tape.cross_entropy_with_logits(tape.constant(Matrix<double>(1, 2, {2, 0})), {1});
        CHECK(tape.value(ce)(0, 0) ==
              Catch::Approx(2.0 + std::log1p(std::exp(-2.0))).epsilon(1e-12));
    }
    SECTION("mean over the batch") {
        Var ce = tape.cross_entropy_with_logits(
            tape.constant(Matrix<double>(2, 2, {0, 0, 2, 0})), {0, 1});
        const double expected = 0.5 * (std::log(2.0) + 2.0 + std::log1p(std::exp(-2.0)));
        CHECK(tape.value(ce)(0, 0) == Catch::Approx(expected).epsilon(1e-12));
    }
    SECTION("empty batch is rejected") {
        Var logits = tape.constant(Matrix<double>(1, 2));
        CHECK_THROWS_AS(tape.cross_entropy_with_logits(logits, {}), std::invalid_argument);
    }
    SECTION("label out of range is rejected") {
        Var logits = tape.constant(Matrix<double>(1, 2));
        CHECK_THROWS_AS(tape.cross_entropy_with_logits(logits, {2}), std::invalid_argument);
    }
}

TEST_CASE("backward on W -> sum(W x) reproduces the outer structure", "[numeric]") {
    regvd::Rng rng(3);
    Matrix<double> w = random_matrix(3, 4, rng);
    Matrix<double> x = random_matrix(4, 1, rng);

    Tape<double> tape;
    Var wv = tape.parameter(w);
    Var loss = to_scalar(tape, tape.matmul(wv, tape.constant(x)));
    tape.backward(loss);
    // d/dW of sum over i of (W x)_i is x^T broadcast down the rows
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(tape.grad(wv)(i, j) == Catch::Approx(x(j, 0)).epsilon(1e-12));
}

TEST_CASE("loss independent of a parameter has exactly zero gradient", "[numeric]") {
    regvd::Rng rng(4);
    Matrix<double> used = random_matrix(2, 2, rng);
    Matrix<double> unused = random_matrix(2, 2, rng);

    Tape<double> tape;
    Var uv = tape.parameter(used);
    Var nv = tape.parameter(unused);
    Var loss = to_scalar(tape, tape.relu(uv));
    tape.backward(loss);
    CHECK(tape.grad(nv) == Matrix<double>(2, 2));
}

TEST_CASE("every primitive passes a finite-difference check", "[numeric]") {
    regvd::Rng rng(20240810);
    // A small expression using each differentiable primitive at least once.
    Matrix<double> table = random_matrix(5, 3, rng);
    Matrix<double> w1 = random_matrix(3, 3, rng);
    Matrix<double> w2 = random_matrix(3, 3, rng);
    Matrix<double> rowb = random_matrix(1, 3, rng);
    Matrix<double> scalarb = random_matrix(1, 1, rng);
    Matrix<double> gate = random_matrix(3, 1, rng);
    Matrix<double> cls = random_matrix(2, 6, rng);

    const std::vector<int> ids{0, 2, 2, 4};
    auto forward = [&](Tape<double>& tape, std::vector<Var>* leaves) -> Var {
        Var h0 = tape.gather_rows(table, ids);
        Var w1v = tape.parameter(w1);
        Var w2v = tape.parameter(w2);
        Var rb = tape.parameter(rowb);
        Var sb = tape.parameter(scalarb);
        Var gv = tape.parameter(gate);
        Var cv = tape.parameter(cls);
        if (leaves) *leaves = {w1v, w2v, rb, sb, gv, cv};

        Var h = tape.tanh(tape.matmul(h0, w1v));
        h = tape.add(h, tape.relu(tape.matmul_transposed(h0, w2v)));
        h = tape.add_row_broadcast(h, rb);
        h = tape.add_scalar_broadcast(h, sb);
        Var g = tape.sigmoid(tape.matmul(h, gv));
        h = tape.scale_rows(h, g);
        h = tape.multiply(h, tape.affine(h, 0.5, 0.25));
        Var pooled = tape.concat_cols(tape.row_sum(h), tape.row_max(h));
        Var logits = tape.matmul_transposed(pooled, cv);
        return tape.cross_entropy_with_logits(logits, {1});
    };

    Tape<double> tape;
    std::vector<Var> leaves;
    Var loss = forward(tape, &leaves);
    tape.backward(loss);

    std::vector<Matrix<double>*> tensors{&w1, &w2, &rowb, &scalarb, &gate, &cls};
    std::vector<Matrix<double>> grads;
    for (Var v : leaves) grads.push_back(tape.grad(v));
    // embedding gradient arrives via the gather node
    tensors.push_back(&table);
    Matrix<double> table_grad(table.rows(), table.cols());
    REQUIRE(tape.gathers().size() == 1);
    const auto& gather = tape.gathers().front();
    const Matrix<double>& gg = tape.grad(gather.node);
    for (std::size_t r = 0; r < gather.row_ids.size(); ++r)
        for (int j = 0; j < gg.cols(); ++j) table_grad(gather.row_ids[r], j) += gg(static_cast<int>(r), j);
    grads.push_back(table_grad);

    std::vector<const Matrix<double>*> grad_ptrs;
    for (const auto& g : grads) grad_ptrs.push_back(&g);

    const double err = oracle::max_fd_error(tensors, grad_ptrs, [&] {
        Tape<double> t;
        return t.value(forward(t, nullptr))(0, 0);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("gather_rows sums gradients of duplicated rows", "[numeric]") {
    Matrix<double> table(3, 2, {1, 2, 3, 4, 5, 6});
    Tape<double> tape;
    Var g = tape.gather_rows(table, {1, 1, 0});
    CHECK(tape.value(g) == Matrix<double>(3, 2, {3, 4, 3, 4, 1, 2}));
    Var loss = to_scalar(tape, g);
    tape.backward(loss);
    // row 1 was used twice, so its gradient is 2 per entry
    CHECK(tape.grad(g) == Matrix<double>(3, 2, {1, 1, 1, 1, 1, 1}));
}

TEST_CASE("row_max routes gradient to the first argmax on ties", "[numeric]") {
    Matrix<double> m(3, 1, {2, 5, 5});
    Tape<double> tape;
    Var p = tape.parameter(m);
    Var loss = to_scalar(tape, tape.row_max(p));
    tape.backward(loss);
    CHECK(tape.grad(p) == Matrix<double>(3, 1, {0, 1, 0}));
}

TEST_CASE("backward twice without re-taping is an error", "[numeric]") {
    Tape<double> tape;
    Matrix<double> m(1, 1, {3});
    Var p = tape.parameter(m);
    Var loss = tape.affine(p, 2.0, 0.0);
    tape.backward(loss);
    CHECK(tape.grad(p)(0, 0) == 2.0);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("tape evaluation is deterministic", "[numeric]") {
    regvd::Rng rng1(77), rng2(77);
    auto run = [](regvd::Rng& rng) {
        Matrix<double> a = random_matrix(4, 4, rng);
        Matrix<double> b = random_matrix(4, 4, rng);
        Tape<double> tape;
        Var out = tape.sigmoid(tape.matmul(tape.constant(a), tape.constant(b)));
        return tape.value(out);
    };
    CHECK(run(rng1) == run(rng2));
}
