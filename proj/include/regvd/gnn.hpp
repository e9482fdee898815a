#pragma once

#include <string>
#include <vector>

#include "regvd/matrix.hpp"
#include "regvd/tape.hpp"

namespace regvd {

enum class GnnKind { Gcn, Ggnn };

inline const char* to_string(GnnKind k) { return k == GnnKind::Gcn ? "gcn" : "ggnn"; }

/// One GCN layer: a single square weight matrix. Hidden size is shared by
/// every layer so the residual addition stays well-typed.
template <typename T>
struct GcnLayerParams {
    Matrix<T> weight;  // d x d
};

/// One gated layer: GRU-style update/reset/candidate pairs, all d x d.
template <typename T>
struct GgnnLayerParams {
    Matrix<T> w_update, u_update;
    Matrix<T> w_reset, u_reset;
    Matrix<T> w_candidate, u_candidate;
};

struct GgnnLayerVars {
    Var w_update, u_update;
    Var w_reset, u_reset;
    Var w_candidate, u_candidate;
};

/// Tape handles for a registered K-layer stack (one entry per layer; shared
/// GGNN parameters repeat the same handles).
struct GnnStackVars {
    GnnKind kind = GnnKind::Gcn;
    std::vector<Var> gcn_weights;
    std::vector<GgnnLayerVars> ggnn_layers;

    int layer_count() const {
        return kind == GnnKind::Gcn ? static_cast<int>(gcn_weights.size())
                                    : static_cast<int>(ggnn_layers.size());
    }
};

/// ReLU(A_norm * H * W^T): each node aggregates its neighbors' transformed
/// states weighted by the normalized adjacency; no self contribution since
/// the diagonal is zero.
template <typename T>
Var gcn_layer(Tape<T>& tape, Var h, Var a_norm, Var weight) {
    return tape.relu(tape.matmul_transposed(tape.matmul(a_norm, h), weight));
}

/// Gate nodes of one GGNN layer, exposed for inspection in tests.
struct GgnnGates {
    Var update, reset;
};

/// Gated update: aggregate a = A_norm * H, sigmoid update/reset gates,
/// tanh candidate over the reset-masked state, then blend
/// h' = (1 - z) ⊙ h + z ⊙ h~.
template <typename T>
Var ggnn_layer(Tape<T>& tape, Var h, Var a_norm, const GgnnLayerVars& p,
               GgnnGates* gates = nullptr) {
    Var agg = tape.matmul(a_norm, h);
    Var z = tape.sigmoid(
        tape.add(tape.matmul_transposed(agg, p.w_update), tape.matmul_transposed(h, p.u_update)));
    Var r = tape.sigmoid(
        tape.add(tape.matmul_transposed(agg, p.w_reset), tape.matmul_transposed(h, p.u_reset)));
    if (gates) *gates = {z, r};
    Var candidate = tape.tanh(tape.add(tape.matmul_transposed(agg, p.w_candidate),
                                       tape.matmul_transposed(tape.multiply(r, h), p.u_candidate)));
    Var keep = tape.multiply(tape.affine(z, T(-1), T(1)), h);  // (1 - z) ⊙ h
    return tape.add(keep, tape.multiply(z, candidate));
}

/// Applies the K layers in order. With `residual` each layer contributes
/// input-plus-layer, so zero-initialized GCN weights give the identity map.
template <typename T>
Var residual_stack(Tape<T>& tape, Var h0, Var a_norm, const GnnStackVars& stack, bool residual) {
    require(stack.layer_count() >= 1, "residual_stack: needs at least one layer");
    Var h = h0;
    for (int k = 0; k < stack.layer_count(); ++k) {
        Var out = stack.kind == GnnKind::Gcn ? gcn_layer(tape, h, a_norm, stack.gcn_weights[k])
                                             : ggnn_layer(tape, h, a_norm, stack.ggnn_layers[k]);
        h = residual ? tape.add(h, out) : out;
    }
    return h;
}

}  // namespace regvd
