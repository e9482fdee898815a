#pragma once

#include <string>

#include "regvd/matrix.hpp"
#include "regvd/tape.hpp"

namespace regvd {

/// How the sum and max poolings are combined into the graph embedding.
enum class Mix { Sum, Mul, Concat };

inline const char* to_string(Mix m) {
    switch (m) {
        case Mix::Sum: return "SUM";
        case Mix::Mul: return "MUL";
        default: return "CONCAT";
    }
}

/// Gated node scoring: a scalar soft-attention gate per node multiplying its
/// transformed state.
template <typename T>
struct ReadoutParams {
    Matrix<T> gate_weight;       // d x 1
    Matrix<T> gate_bias;         // 1 x 1
    Matrix<T> transform_weight;  // d x d
    Matrix<T> transform_bias;    // 1 x d
};

struct ReadoutVars {
    Var gate_weight, gate_bias, transform_weight, transform_bias;
};

/// Final linear layer over the graph embedding; two logits, softmaxed.
/// Index 1 is the vulnerable class.
template <typename T>
struct ClassifierParams {
    Matrix<T> weight;  // 2 x d_g
    Matrix<T> bias;    // 1 x 2
};

struct ClassifierVars {
    Var weight, bias;
};

/// e_v = sigmoid(w^T h_v + b) ⊙ ReLU(W h_v + b_vec) for every node; the
/// sigmoid is one scalar per node broadcast over the d features.
template <typename T>
Var node_scores(Tape<T>& tape, Var h, const ReadoutVars& p) {
    Var gate = tape.sigmoid(tape.add_scalar_broadcast(tape.matmul(h, p.gate_weight), p.gate_bias));
    Var transformed =
        tape.relu(tape.add_row_broadcast(tape.matmul_transposed(h, p.transform_weight), p.transform_bias));
    return tape.scale_rows(transformed, gate);
}

/// Column-wise sum s and max x over the node scores, combined as
/// SUM: s + x, MUL: s ⊙ x, CONCAT: [s || x] (dimension 2d).
template <typename T>
Var mix_pool(Tape<T>& tape, Var scores, Mix mix) {
    Var s = tape.row_sum(scores);
    Var x = tape.row_max(scores);
    switch (mix) {
        case Mix::Sum: return tape.add(s, x);
        case Mix::Mul: return tape.multiply(s, x);
        default: return tape.concat_cols(s, x);
    }
}

/// W1 * e_g + b1 as a 1x2 logit row.
template <typename T>
Var classifier_logits(Tape<T>& tape, Var graph_embedding, const ClassifierVars& p) {
    return tape.add(tape.matmul_transposed(graph_embedding, p.weight), p.bias);
}

/// Probability 2-vector for one graph embedding, outside any training tape.
template <typename T>
Matrix<T> classify(const Matrix<T>& graph_embedding, const ClassifierParams<T>& params) {
    require(graph_embedding.rows() == 1 && graph_embedding.cols() == params.weight.cols(),
            "classify: embedding dimension " + std::to_string(graph_embedding.cols()) +
                " does not match classifier " + std::to_string(params.weight.cols()));
    Tape<T> tape;
    ClassifierVars vars{tape.parameter(params.weight), tape.parameter(params.bias)};
    Var logits = classifier_logits(tape, tape.constant(graph_embedding), vars);
    return softmax(tape.value(logits));
}

}  // namespace regvd
