#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "regvd/config.hpp"
#include "regvd/gnn.hpp"
#include "regvd/graph.hpp"
#include "regvd/matrix.hpp"
#include "regvd/readout.hpp"
#include "regvd/rng.hpp"
#include "regvd/tape.hpp"

namespace regvd {

template <typename T>
struct NamedParam {
    std::string name;
    Matrix<T>* matrix;
};

template <typename T>
struct NamedParamView {
    std::string name;
    const Matrix<T>* matrix;
};

template <typename T>
void uniform_init(Matrix<T>& m, Rng& rng, double scale) {
    for (std::size_t i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(rng.uniform(-scale, scale));
}

/// Glorot-style bound sqrt(6 / (fan_in + fan_out)); for the square d x d
/// weights this is sqrt(6 / 2d).
inline double glorot_scale(int rows, int cols) { return std::sqrt(6.0 / (rows + cols)); }

/// Every learnable tensor of the model, in a fixed declaration order that
/// the optimizer, gradient buffers and checkpoint format all share.
template <typename T>
struct ModelParams {
    Matrix<T> embedding;  // vocab x d
    std::vector<GcnLayerParams<T>> gcn_layers;
    std::vector<GgnnLayerParams<T>> ggnn_layers;
    ReadoutParams<T> readout;
    ClassifierParams<T> classifier;

    int hidden() const { return embedding.cols(); }
    int vocab_size() const { return embedding.rows(); }

    /// Allocates every tensor for the configured shapes. With an Rng the
    /// weights are drawn uniform(-s, s); without one everything stays zero
    /// (checkpoint loading fills the values afterwards). Biases start at 0.
    static ModelParams init(const TrainConfig& cfg, int vocab_size, Rng* rng = nullptr) {
        require(vocab_size >= 2, "ModelParams: vocabulary must contain PAD and UNK");
        ModelParams p;
        const int d = cfg.hidden;
        auto fill = [&](Matrix<T>& m, double scale) {
            if (rng) uniform_init(m, *rng, scale);
        };
        // Embedding rows use the same scale as a d x d weight so initial
        // node states match the hidden layers' magnitude.
        p.embedding = Matrix<T>(vocab_size, d);
        fill(p.embedding, std::sqrt(3.0 / d));

        if (cfg.base == GnnKind::Gcn) {
            p.gcn_layers.resize(cfg.layers);
            for (auto& layer : p.gcn_layers) {
                layer.weight = Matrix<T>(d, d);
                fill(layer.weight, glorot_scale(d, d));
            }
        } else {
            const int physical_layers = cfg.share_ggnn_params ? 1 : cfg.layers;
            p.ggnn_layers.resize(physical_layers);
            for (auto& layer : p.ggnn_layers) {
                for (Matrix<T>* w : {&layer.w_update, &layer.u_update, &layer.w_reset,
                                     &layer.u_reset, &layer.w_candidate, &layer.u_candidate}) {
                    *w = Matrix<T>(d, d);
                    fill(*w, glorot_scale(d, d));
                }
            }
        }

        p.readout.gate_weight = Matrix<T>(d, 1);
        fill(p.readout.gate_weight, glorot_scale(d, 1));
        p.readout.gate_bias = Matrix<T>(1, 1);
        p.readout.transform_weight = Matrix<T>(d, d);
        fill(p.readout.transform_weight, glorot_scale(d, d));
        p.readout.transform_bias = Matrix<T>(1, d);

        const int dg = cfg.graph_embedding_dim();
        p.classifier.weight = Matrix<T>(2, dg);
        fill(p.classifier.weight, glorot_scale(2, dg));
        p.classifier.bias = Matrix<T>(1, 2);
        return p;
    }

    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        out.push_back({"embedding", &embedding});
        for (std::size_t k = 0; k < gcn_layers.size(); ++k) {
            out.push_back({"gnn." + std::to_string(k) + ".weight", &gcn_layers[k].weight});
        }
        for (std::size_t k = 0; k < ggnn_layers.size(); ++k) {
            const std::string prefix = "gnn." + std::to_string(k) + ".";
            auto& layer = ggnn_layers[k];
            out.push_back({prefix + "w_update", &layer.w_update});
            out.push_back({prefix + "u_update", &layer.u_update});
            out.push_back({prefix + "w_reset", &layer.w_reset});
            out.push_back({prefix + "u_reset", &layer.u_reset});
            out.push_back({prefix + "w_candidate", &layer.w_candidate});
            out.push_back({prefix + "u_candidate", &layer.u_candidate});
        }
        out.push_back({"readout.gate_weight", &readout.gate_weight});
        out.push_back({"readout.gate_bias", &readout.gate_bias});
        out.push_back({"readout.transform_weight", &readout.transform_weight});
        out.push_back({"readout.transform_bias", &readout.transform_bias});
        out.push_back({"classifier.weight", &classifier.weight});
        out.push_back({"classifier.bias", &classifier.bias});
        return out;
    }

    std::vector<NamedParamView<T>> parameters() const {
        auto mutable_params = const_cast<ModelParams*>(this)->parameters();
        std::vector<NamedParamView<T>> out;
        out.reserve(mutable_params.size());
        for (auto& p : mutable_params) out.push_back({p.name, p.matrix});
        return out;
    }

    /// Sum of squares over every parameter tensor, the ||θ||² regularizer.
    T squared_norm() const {
        T total = T(0);
        for (const auto& p : parameters()) {
            for (std::size_t i = 0; i < p.matrix->size(); ++i) {
                const T v = p.matrix->data()[i];
                total += v * v;
            }
        }
        return total;
    }
};

/// Tape handles for one registration of the model's weights. The embedding
/// is not registered here; forward passes gather rows from it directly.
struct ModelVars {
    GnnStackVars stack;
    ReadoutVars readout;
    ClassifierVars classifier;
};

template <typename T>
ModelVars register_model(Tape<T>& tape, const TrainConfig& cfg, const ModelParams<T>& params) {
    ModelVars vars;
    vars.stack.kind = cfg.base;
    if (cfg.base == GnnKind::Gcn) {
        for (const auto& layer : params.gcn_layers)
            vars.stack.gcn_weights.push_back(tape.parameter(layer.weight));
    } else {
        for (const auto& layer : params.ggnn_layers) {
            vars.stack.ggnn_layers.push_back({tape.parameter(layer.w_update),
                                              tape.parameter(layer.u_update),
                                              tape.parameter(layer.w_reset),
                                              tape.parameter(layer.u_reset),
                                              tape.parameter(layer.w_candidate),
                                              tape.parameter(layer.u_candidate)});
        }
        if (cfg.share_ggnn_params) {
            // One physical layer applied K times.
            while (vars.stack.layer_count() < cfg.layers)
                vars.stack.ggnn_layers.push_back(vars.stack.ggnn_layers.front());
        }
    }
    vars.readout = {tape.parameter(params.readout.gate_weight),
                    tape.parameter(params.readout.gate_bias),
                    tape.parameter(params.readout.transform_weight),
                    tape.parameter(params.readout.transform_bias)};
    vars.classifier = {tape.parameter(params.classifier.weight),
                       tape.parameter(params.classifier.bias)};
    return vars;
}

/// Whole-pipeline forward for one graph: gather node features from the
/// embedding table, run the (residual) GNN stack, pool, classify. Returns
/// the 1x2 logit node.
template <typename T>
Var forward_logits(Tape<T>& tape, const TrainConfig& cfg, const ModelParams<T>& params,
                   const ModelVars& vars, const CodeGraph& graph) {
    require(graph.num_nodes >= 1, "forward_logits: empty graph");
    Var a_norm = tape.constant(normalize_adjacency<T>(graph));
    Var h0 = tape.gather_rows(params.embedding, graph.node_token_ids);
    Var hk = residual_stack(tape, h0, a_norm, vars.stack, cfg.residual);
    Var scores = node_scores(tape, hk, vars.readout);
    Var graph_embedding = mix_pool(tape, scores, cfg.mix);
    return classifier_logits(tape, graph_embedding, vars.classifier);
}

/// Probability 2-vector (index 1 = vulnerable) for one graph.
template <typename T>
Matrix<T> predict_probabilities(const TrainConfig& cfg, const ModelParams<T>& params,
                                const CodeGraph& graph) {
    Tape<T> tape;
    ModelVars vars = register_model(tape, cfg, params);
    Var logits = forward_logits(tape, cfg, params, vars, graph);
    return softmax(tape.value(logits));
}

}  // namespace regvd
