#pragma once

#include <cmath>
#include <exception>
#include <functional>
#include <ostream>
#include <thread>
#include <vector>

#include "regvd/adam.hpp"
#include "regvd/config.hpp"
#include "regvd/data.hpp"
#include "regvd/graph.hpp"
#include "regvd/model.hpp"
#include "regvd/rng.hpp"
#include "regvd/tokenizer.hpp"

namespace regvd {

/// One ingested function ready for the model: encoded token ids + label.
struct PreparedSample {
    long long idx = 0;
    TokenSequence seq;
    int label = 0;
};

inline CodeGraph build_graph_for(const TrainConfig& cfg, const TokenSequence& seq) {
    return cfg.construction == Construction::UniqueToken
               ? build_unique_token_graph(seq, cfg.window)
               : build_index_graph(seq, cfg.window);
}

inline std::vector<std::vector<std::string>> tokenize_corpus(const std::vector<CodeSample>& split) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(split.size());
    for (const auto& sample : split) corpus.push_back(tokenize(sample.source));
    return corpus;
}

struct PreparationReport {
    std::vector<PreparedSample> samples;
    std::vector<long long> dropped_idx;  // samples that tokenized to nothing
};

/// Encodes a split against the vocabulary. Samples with zero tokens are
/// dropped and their idx recorded for the caller's log.
inline PreparationReport prepare_split(const std::vector<CodeSample>& split,
                                       const Vocabulary& vocab, int max_len) {
    PreparationReport report;
    report.samples.reserve(split.size());
    for (const auto& sample : split) {
        auto tokens = tokenize(sample.source);
        if (tokens.empty()) {
            report.dropped_idx.push_back(sample.idx);
            continue;
        }
        report.samples.push_back({sample.idx, encode(tokens, vocab, max_len), sample.label});
    }
    return report;
}

template <typename T>
std::vector<Matrix<T>> make_grad_buffers(const ModelParams<T>& params) {
    std::vector<Matrix<T>> out;
    for (const auto& p : params.parameters()) out.emplace_back(p.matrix->rows(), p.matrix->cols());
    return out;
}

template <typename T>
void zero_grad_buffers(std::vector<Matrix<T>>& buffers) {
    for (auto& m : buffers) m.fill(T(0));
}

template <typename T>
void add_grad_buffers(std::vector<Matrix<T>>& dst, const std::vector<Matrix<T>>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t k = 0; k < dst[i].size(); ++k) dst[i].data()[k] += src[i].data()[k];
}

namespace detail {

/// Weight-parameter tape handles in ModelParams::parameters() order,
/// starting after the embedding entry.
inline std::vector<Var> ordered_weight_vars(const ModelVars& vars, const TrainConfig& cfg) {
    std::vector<Var> out;
    if (cfg.base == GnnKind::Gcn) {
        out = vars.stack.gcn_weights;
    } else {
        const int physical = cfg.share_ggnn_params ? 1 : cfg.layers;
        for (int k = 0; k < physical; ++k) {
            const auto& layer = vars.stack.ggnn_layers[static_cast<std::size_t>(k)];
            for (Var v : {layer.w_update, layer.u_update, layer.w_reset, layer.u_reset,
                          layer.w_candidate, layer.u_candidate})
                out.push_back(v);
        }
    }
    for (Var v : {vars.readout.gate_weight, vars.readout.gate_bias, vars.readout.transform_weight,
                  vars.readout.transform_bias, vars.classifier.weight, vars.classifier.bias})
        out.push_back(v);
    return out;
}

/// Forward + backward for a single example on its own tape. Gradients of
/// d(example CE)/dθ scaled by inv_batch are accumulated into `buffers`
/// (index 0 = embedding); returns the example's cross-entropy.
template <typename T>
T example_grads(const TrainConfig& cfg, const ModelParams<T>& params, const PreparedSample& sample,
                T inv_batch, std::vector<Matrix<T>>& buffers) {
    Tape<T> tape;
    ModelVars vars = register_model(tape, cfg, params);
    const CodeGraph graph = build_graph_for(cfg, sample.seq);
    Var logits = forward_logits(tape, cfg, params, vars, graph);
    Var ce = tape.cross_entropy_with_logits(logits, {sample.label});
    const T value = tape.value(ce)(0, 0);
    tape.backward(ce, inv_batch);

    const auto weight_vars = ordered_weight_vars(vars, cfg);
    for (std::size_t i = 0; i < weight_vars.size(); ++i) {
        const Matrix<T>& g = tape.grad(weight_vars[i]);
        Matrix<T>& dst = buffers[i + 1];
        for (std::size_t k = 0; k < dst.size(); ++k) dst.data()[k] += g.data()[k];
    }
    for (const auto& gather : tape.gathers()) {
        require(gather.table == &params.embedding, "example_grads: unexpected gather source");
        const Matrix<T>& g = tape.grad(gather.node);
        for (std::size_t r = 0; r < gather.row_ids.size(); ++r) {
            T* dst = buffers[0].row(gather.row_ids[r]);
            const T* src = g.row(static_cast<int>(r));
            for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
        }
    }
    return value;
}

inline void run_workers(int workers, std::size_t n,
                        const std::function<void(int, std::size_t, std::size_t)>& task) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(n, static_cast<std::size_t>(w) * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        threads.emplace_back([&, w, begin, end] {
            try {
                task(w, begin, end);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Value of the regularized objective on a batch: mean cross-entropy plus
/// lambda * Σ‖θ‖² over every parameter tensor.
template <typename T>
T batch_loss(const TrainConfig& cfg, const ModelParams<T>& params,
             const std::vector<PreparedSample>& batch) {
    require(!batch.empty(), "batch_loss: empty batch");
    T ce_total = T(0);
    for (const auto& sample : batch) {
        Tape<T> tape;
        ModelVars vars = register_model(tape, cfg, params);
        Var logits = forward_logits(tape, cfg, params, vars, build_graph_for(cfg, sample.seq));
        Var ce = tape.cross_entropy_with_logits(logits, {sample.label});
        ce_total += tape.value(ce)(0, 0);
    }
    const T loss = ce_total / static_cast<T>(batch.size()) +
                   static_cast<T>(cfg.lambda) * params.squared_norm();
    if (!std::isfinite(static_cast<double>(loss))) {
        throw std::runtime_error("non-finite loss in batch objective");
    }
    return loss;
}

/// Same objective with gradients accumulated into `buffers` (which must be
/// zeroed by the caller). Examples are processed in batch order; with
/// several workers each one owns a contiguous chunk and per-worker partial
/// sums are merged in worker order, so results are reproducible for a fixed
/// worker count and bit-identical runs require workers == 1.
template <typename T>
T batch_loss_and_grads(const TrainConfig& cfg, const ModelParams<T>& params,
                       const std::vector<const PreparedSample*>& batch,
                       std::vector<Matrix<T>>& buffers,
                       std::vector<std::vector<Matrix<T>>>* worker_buffers = nullptr) {
    require(!batch.empty(), "batch_loss_and_grads: empty batch");
    const T inv_batch = T(1) / static_cast<T>(batch.size());
    T ce_total = T(0);

    const int workers = worker_buffers ? static_cast<int>(worker_buffers->size()) : 1;
    if (workers <= 1) {
        for (const PreparedSample* sample : batch)
            ce_total += detail::example_grads(cfg, params, *sample, inv_batch, buffers);
    } else {
        std::vector<T> partial(static_cast<std::size_t>(workers), T(0));
        for (auto& wb : *worker_buffers) zero_grad_buffers(wb);
        detail::run_workers(workers, batch.size(), [&](int w, std::size_t begin, std::size_t end) {
            auto& wb = (*worker_buffers)[static_cast<std::size_t>(w)];
            for (std::size_t i = begin; i < end; ++i)
                partial[static_cast<std::size_t>(w)] +=
                    detail::example_grads(cfg, params, *batch[i], inv_batch, wb);
        });
        for (int w = 0; w < workers; ++w) {
            ce_total += partial[static_cast<std::size_t>(w)];
            add_grad_buffers(buffers, (*worker_buffers)[static_cast<std::size_t>(w)]);
        }
    }

    T loss = ce_total * inv_batch;
    if (cfg.lambda != 0.0) {
        loss += static_cast<T>(cfg.lambda) * params.squared_norm();
        auto named = params.parameters();
        const T two_lambda = T(2) * static_cast<T>(cfg.lambda);
        for (std::size_t i = 0; i < named.size(); ++i)
            for (std::size_t k = 0; k < named[i].matrix->size(); ++k)
                buffers[i].data()[k] += two_lambda * named[i].matrix->data()[k];
    }
    if (!std::isfinite(static_cast<double>(loss))) {
        throw std::runtime_error("non-finite loss in batch objective");
    }
    return loss;
}

struct PredictionRecord {
    long long idx = 0;
    int label = 0;
    int pred = 0;
    double p_vulnerable = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<PredictionRecord> records;
};

/// Accuracy plus per-sample predictions (argmax; exact ties fall to the
/// benign class).
template <typename T>
EvalResult evaluate(const TrainConfig& cfg, const ModelParams<T>& params,
                    const std::vector<PreparedSample>& split) {
    require(!split.empty(), "evaluate: empty split");
    EvalResult result;
    result.records.resize(split.size());
    const int workers = std::max(1, cfg.workers);
    auto score_range = [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& sample = split[i];
            Matrix<T> probs =
                predict_probabilities(cfg, params, build_graph_for(cfg, sample.seq));
            const int pred = probs(0, 1) > probs(0, 0) ? 1 : 0;
            result.records[i] = {sample.idx, sample.label, pred,
                                 static_cast<double>(probs(0, 1))};
        }
    };
    if (workers == 1) {
        score_range(0, 0, split.size());
    } else {
        detail::run_workers(workers, split.size(), score_range);
    }
    std::size_t correct = 0;
    for (const auto& r : result.records) correct += (r.pred == r.label) ? 1 : 0;
    result.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    return result;
}

struct MetricRow {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_acc = 0.0;
};

template <typename T>
struct TrainResult {
    ModelParams<T> best_params;
    int best_epoch = 0;  // 0 when epochs == 0 (initial parameters)
    double best_valid_acc = 0.0;
    std::vector<MetricRow> metrics;
};

/// Mini-batch training with Adam. Batches are reshuffled every epoch from
/// the seed's shuffle stream; after each epoch the model is scored on the
/// validation split and the checkpoint with the highest validation accuracy
/// is kept (ties resolved toward the earlier epoch).
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, ModelParams<T> params,
                     const std::vector<PreparedSample>& train_split,
                     const std::vector<PreparedSample>& valid_split,
                     std::ostream* progress = nullptr) {
    cfg.validate();
    require(!train_split.empty(), "train: empty training split");
    require(!valid_split.empty(), "train: empty validation split");

    AdamState<T> state = AdamState<T>::init(params);
    auto buffers = make_grad_buffers(params);
    std::vector<std::vector<Matrix<T>>> worker_buffers;
    if (cfg.workers > 1) {
        for (int w = 0; w < cfg.workers; ++w) worker_buffers.push_back(make_grad_buffers(params));
    }

    TrainResult<T> result{params, 0, -1.0, {}};
    Rng shuffle_rng(mix_seed(cfg.seed, 2));
    std::vector<std::size_t> order(train_split.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            std::vector<const PreparedSample*> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_split[order[i]]);

            zero_grad_buffers(buffers);
            T loss;
            try {
                loss = batch_loss_and_grads(cfg, params, batch, buffers,
                                            cfg.workers > 1 ? &worker_buffers : nullptr);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batches + 1) + ": " + e.what());
            }
            adam_step(params, buffers, state, static_cast<T>(cfg.lr), cfg.freeze_embeddings);
            loss_sum += static_cast<double>(loss);
            ++batches;
        }

        const double valid_acc = evaluate(cfg, params, valid_split).accuracy;
        result.metrics.push_back({epoch, loss_sum / batches, valid_acc});
        if (progress) {
            (*progress) << "epoch " << epoch << " train_loss " << loss_sum / batches
                        << " valid_acc " << valid_acc << "\n";
        }
        if (valid_acc > result.best_valid_acc) {
            result.best_valid_acc = valid_acc;
            result.best_epoch = epoch;
            result.best_params = params;
        }
    }
    return result;
}

enum class AblationAxis { Residual, MixFn, Window, Fraction };

inline AblationAxis parse_axis(const std::string& s) {
    if (s == "residual") return AblationAxis::Residual;
    if (s == "mix") return AblationAxis::MixFn;
    if (s == "window") return AblationAxis::Window;
    if (s == "fraction") return AblationAxis::Fraction;
    throw std::invalid_argument("unknown ablation axis '" + s +
                                "' (expected residual, mix, window or fraction)");
}

struct AblationRow {
    std::string value;
    double valid_acc = 0.0;
    double test_acc = -1.0;  // negative when no test split was given
};

/// Grid-runs one configuration axis (residual on/off, the three MIX
/// functions, window sizes 2..5, or training fractions 20..100%) and
/// reports best-checkpoint accuracies per value. Validation and test splits
/// are never subsampled.
template <typename T>
std::vector<AblationRow> ablate(
    AblationAxis axis, const TrainConfig& base, const std::vector<PreparedSample>& train_split,
    const std::vector<PreparedSample>& valid_split, const std::vector<PreparedSample>* test_split,
    const std::function<ModelParams<T>(const TrainConfig&)>& make_params,
    std::ostream* progress = nullptr) {
    struct Setting {
        std::string value;
        TrainConfig cfg;
        double fraction = 1.0;
    };
    std::vector<Setting> settings;
    switch (axis) {
        case AblationAxis::Residual:
            for (bool on : {true, false}) {
                TrainConfig cfg = base;
                cfg.residual = on;
                settings.push_back({on ? "on" : "off", cfg});
            }
            break;
        case AblationAxis::MixFn:
            for (Mix mix : {Mix::Sum, Mix::Mul, Mix::Concat}) {
                TrainConfig cfg = base;
                cfg.mix = mix;
                settings.push_back({to_string(mix), cfg});
            }
            break;
        case AblationAxis::Window:
            for (int ws : {2, 3, 4, 5}) {
                TrainConfig cfg = base;
                cfg.window = ws;
                settings.push_back({std::to_string(ws), cfg});
            }
            break;
        case AblationAxis::Fraction:
            for (int percent : {20, 40, 60, 80, 100}) {
                Setting s{std::to_string(percent), base, percent / 100.0};
                settings.push_back(std::move(s));
            }
            break;
    }

    std::vector<AblationRow> rows;
    for (const auto& setting : settings) {
        if (progress) (*progress) << "ablate " << setting.value << "\n";
        const std::vector<PreparedSample> subset =
            setting.fraction < 1.0
                ? stratified_fraction(train_split, setting.fraction, setting.cfg.seed)
                : train_split;
        TrainResult<T> result =
            train(setting.cfg, make_params(setting.cfg), subset, valid_split, progress);
        AblationRow row{setting.value, result.best_valid_acc, -1.0};
        if (test_split && !test_split->empty()) {
            row.test_acc = evaluate(setting.cfg, result.best_params, *test_split).accuracy;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace regvd
