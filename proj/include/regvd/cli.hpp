#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "regvd/checkpoint.hpp"
#include "regvd/config.hpp"
#include "regvd/data.hpp"
#include "regvd/graph.hpp"
#include "regvd/model.hpp"
#include "regvd/tokenizer.hpp"
#include "regvd/train.hpp"

namespace regvd::cli {

namespace detail {

inline std::string iso_utc_now() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string full_precision(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

/// Raw options as bound to CLI11; enum-ish fields stay strings until the
/// final resolve step so config files and flags share one code path.
struct Options {
    TrainConfig cfg;
    std::string mix = "MUL";
    std::string construction = "unique";
    std::string base = "gcn";
    std::string init = "random";
    std::string train_file, valid_file, test_file;
    std::string vocab_file, checkpoint_file, input_file, predictions_file;
    std::string out_dir = ".";
    std::string axis = "mix";
    std::string out_csv;
    bool expect_codexglue = false;
    bool jsonl_input = false;

    TrainConfig resolve() const {
        TrainConfig out = cfg;
        out.mix = parse_mix(mix);
        out.construction = parse_construction(construction);
        out.base = parse_base(base);
        out.validate();
        return out;
    }

    std::optional<std::string> init_embeddings_path() const {
        if (init == "random") return std::nullopt;
        if (init.rfind("file:", 0) == 0) return init.substr(5);
        throw std::invalid_argument("--init expects 'random' or 'file:<path>', got '" + init + "'");
    }
};

inline void add_model_flags(CLI::App* cmd, Options& opt) {
    cmd->add_option("--layers", opt.cfg.layers, "GNN layer count K");
    cmd->add_option("--hs", opt.cfg.hidden, "hidden size (also the embedding dimension)");
    cmd->add_option("--ws", opt.cfg.window, "sliding window size");
    cmd->add_option("--mix", opt.mix, "graph readout mixture: SUM, MUL or CONCAT");
    cmd->add_option("--construction", opt.construction, "graph construction: unique or index");
    cmd->add_option("--base", opt.base, "GNN base model: gcn or ggnn");
    cmd->add_flag("--residual,!--no-residual", opt.cfg.residual,
                  "residual connection between GNN layers");
    cmd->add_option("--lr", opt.cfg.lr, "Adam learning rate");
    cmd->add_option("--lambda", opt.cfg.lambda, "L2 regularization weight");
    cmd->add_option("--batch", opt.cfg.batch, "batch size");
    cmd->add_option("--epochs", opt.cfg.epochs, "training epochs");
    cmd->add_option("--seed", opt.cfg.seed, "root random seed")->envname("REGVD_SEED");
    cmd->add_option("--max-len", opt.cfg.max_len, "token sequence truncation length");
    cmd->add_option("--min-count", opt.cfg.min_count, "vocabulary frequency threshold");
    cmd->add_flag("--share-ggnn-params", opt.cfg.share_ggnn_params,
                  "share one GGNN parameter set across layers");
    cmd->add_flag("--freeze-embeddings", opt.cfg.freeze_embeddings,
                  "keep the embedding table fixed during training");
    cmd->add_option("--workers", opt.cfg.workers,
                    "parallel workers (1 = bit-reproducible mode)");
    cmd->add_option("--precision", opt.cfg.precision, "training precision: f64 or f32")
        ->check(CLI::IsMember({"f64", "f32"}));
    cmd->add_option("--init", opt.init, "embedding init: random or file:<path>");
    cmd->fallthrough();  // lets the subcommand reach the app-level --config
}

struct LoadedSplit {
    std::vector<CodeSample> samples;
};

inline LoadedSplit load_split(const std::string& path, const char* name, std::ostream& err) {
    LoadReport report = load_jsonl(path);
    if (!report.errors.empty()) {
        err << "warning: " << report.errors.size() << " malformed " << name << " line(s), e.g. "
            << report.errors.front() << "\n";
    }
    return {std::move(report.samples)};
}

inline void report_dropped(const PreparationReport& report, const char* name, std::ostream& err) {
    if (report.dropped_idx.empty()) return;
    err << "warning: dropped " << report.dropped_idx.size() << " " << name
        << " sample(s) with no tokens (idx";
    for (std::size_t i = 0; i < report.dropped_idx.size() && i < 8; ++i)
        err << " " << report.dropped_idx[i];
    if (report.dropped_idx.size() > 8) err << " ...";
    err << ")\n";
}

inline nlohmann::ordered_json manifest_input(const std::string& path) {
    return {{"path", path}, {"fnv1a64", to_hex(file_digest(path))}};
}

/// The run manifest is written before training starts and finalized after;
/// together with the seed it pins everything needed to reproduce the run.
struct Manifest {
    nlohmann::ordered_json j;
    std::string path;

    void write() const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("manifest: cannot write " + path);
        out << j.dump(2) << "\n";
    }
};

template <typename T>
int run_train(const Options& opt, const TrainConfig& cfg, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    const std::string checkpoint_path = (fs::path(opt.out_dir) / "model.ckpt").string();
    const std::string metrics_path = (fs::path(opt.out_dir) / "metrics.csv").string();
    const std::string vocab_path = (fs::path(opt.out_dir) / "vocab.txt").string();
    const std::string manifest_path = (fs::path(opt.out_dir) / "manifest.json").string();

    LoadedSplit train_raw = load_split(opt.train_file, "train", err);
    LoadedSplit valid_raw = load_split(opt.valid_file, "valid", err);
    std::optional<LoadedSplit> test_raw;
    if (!opt.test_file.empty()) test_raw = load_split(opt.test_file, "test", err);

    if (opt.expect_codexglue) {
        StatsReport stats = verify_stats(
            train_raw.samples.size(), valid_raw.samples.size(),
            test_raw ? std::optional<std::size_t>(test_raw->samples.size()) : std::nullopt);
        err << (stats.match ? "" : "warning: ") << stats.message << "\n";
    }

    Manifest manifest;
    manifest.path = manifest_path;
    manifest.j["command"] = "train";
    manifest.j["config"] = config_to_json(cfg);
    manifest.j["seed"] = cfg.seed;
    manifest.j["inputs"] = {{"train", manifest_input(opt.train_file)},
                            {"valid", manifest_input(opt.valid_file)}};
    if (!opt.test_file.empty()) manifest.j["inputs"]["test"] = manifest_input(opt.test_file);
    if (auto emb = opt.init_embeddings_path())
        manifest.j["inputs"]["embeddings"] = manifest_input(*emb);
    manifest.j["outputs"] = {{"checkpoint", checkpoint_path},
                             {"metrics", metrics_path},
                             {"vocab", vocab_path}};
    manifest.j["started_at"] = iso_utc_now();
    manifest.j["finished_at"] = nullptr;
    manifest.j["status"] = "running";
    manifest.write();

    const Vocabulary vocab = build_vocab(tokenize_corpus(train_raw.samples), cfg.min_count);
    err << "vocabulary: " << vocab.size() << " ids\n";
    vocab.save(vocab_path);

    PreparationReport train_prep = prepare_split(train_raw.samples, vocab, cfg.max_len);
    PreparationReport valid_prep = prepare_split(valid_raw.samples, vocab, cfg.max_len);
    report_dropped(train_prep, "train", err);
    report_dropped(valid_prep, "valid", err);

    Rng init_rng(mix_seed(cfg.seed, 1));
    ModelParams<T> params = ModelParams<T>::init(cfg, vocab.size(), &init_rng);
    if (auto emb = opt.init_embeddings_path()) {
        auto report = import_embeddings(*emb, vocab, params.embedding);
        err << "imported embeddings for " << report.matched << " tokens (coverage "
            << report.coverage << ")\n";
    }

    if (cfg.epochs == 0) err << "warning: epochs=0, emitting the initial checkpoint\n";
    TrainResult<T> result = train(cfg, std::move(params), train_prep.samples, valid_prep.samples,
                                  &err);

    {
        std::ofstream metrics(metrics_path, std::ios::binary);
        if (!metrics) throw std::runtime_error("cannot write " + metrics_path);
        metrics << "epoch,train_loss,valid_acc\n";
        for (const auto& row : result.metrics) {
            metrics << row.epoch << "," << full_precision(row.train_loss) << ","
                    << full_precision(row.valid_acc) << "\n";
        }
    }
    save_checkpoint(checkpoint_path, cfg, result.best_params, vocab.hash(), result.best_epoch,
                    result.best_valid_acc);

    out << "best_epoch=" << result.best_epoch << "\n";
    out << "valid_accuracy=" << full_precision(std::max(0.0, result.best_valid_acc)) << "\n";
    if (test_raw) {
        PreparationReport test_prep = prepare_split(test_raw->samples, vocab, cfg.max_len);
        report_dropped(test_prep, "test", err);
        const double test_acc =
            evaluate(cfg, result.best_params, test_prep.samples).accuracy;
        out << "test_accuracy=" << full_precision(test_acc) << "\n";
    }

    manifest.j["finished_at"] = iso_utc_now();
    manifest.j["status"] = "done";
    manifest.j["best_epoch"] = result.best_epoch;
    manifest.write();
    return 0;
}

inline int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
    const TrainConfig cfg = opt.resolve();
    if (cfg.precision == "f32") return run_train<float>(opt, cfg, out, err);
    return run_train<double>(opt, cfg, out, err);
}

/// Loads checkpoint + vocabulary and verifies the hash they were trained
/// with; everything downstream of eval/predict runs at 64-bit.
inline std::pair<Checkpoint<double>, Vocabulary> load_scored_model(const Options& opt) {
    Checkpoint<double> ckpt = load_checkpoint<double>(opt.checkpoint_file);
    Vocabulary vocab = Vocabulary::load(opt.vocab_file);
    if (vocab.hash() != ckpt.vocab_hash) {
        throw std::runtime_error("vocabulary hash mismatch: checkpoint was trained with " +
                                 to_hex(ckpt.vocab_hash) + ", " + opt.vocab_file + " hashes to " +
                                 to_hex(vocab.hash()));
    }
    return {std::move(ckpt), std::move(vocab)};
}

inline int cmd_eval(const Options& opt, std::ostream& out, std::ostream& err) {
    auto [ckpt, vocab] = load_scored_model(opt);
    LoadedSplit split = load_split(opt.input_file, "eval", err);
    PreparationReport prep = prepare_split(split.samples, vocab, ckpt.config.max_len);
    report_dropped(prep, "eval", err);

    EvalResult result = evaluate(ckpt.config, ckpt.params, prep.samples);
    out << "accuracy=" << full_precision(result.accuracy) << "\n";

    const std::string pred_path =
        opt.predictions_file.empty() ? "predictions.csv" : opt.predictions_file;
    std::ofstream preds(pred_path, std::ios::binary);
    if (!preds) throw std::runtime_error("cannot write " + pred_path);
    preds << "idx,label,pred,p_vulnerable\n";
    for (const auto& r : result.records) {
        preds << r.idx << "," << r.label << "," << r.pred << "," << full_precision(r.p_vulnerable)
              << "\n";
    }
    return 0;
}

inline int cmd_predict(const Options& opt, std::istream& in, std::ostream& out,
                       std::ostream& err) {
    auto [ckpt, vocab] = load_scored_model(opt);

    std::string source;
    if (opt.input_file.empty()) {
        std::ostringstream buffer;
        buffer << in.rdbuf();
        source = buffer.str();
    } else {
        std::ifstream file(opt.input_file, std::ios::binary);
        if (!file) throw std::runtime_error("cannot read " + opt.input_file);
        std::ostringstream buffer;
        buffer << file.rdbuf();
        source = buffer.str();
    }
    (void)err;

    const auto tokens = tokenize(source);
    if (tokens.empty()) throw std::runtime_error("no tokens in input");
    const TokenSequence seq = encode(tokens, vocab, ckpt.config.max_len);
    const Matrix<double> probs =
        predict_probabilities(ckpt.config, ckpt.params, build_graph_for(ckpt.config, seq));
    const int pred = probs(0, 1) > probs(0, 0) ? 1 : 0;
    out << (pred == 1 ? "vulnerable" : "benign") << " p="
        << full_precision(probs(0, pred)) << "\n";
    return 0;
}

inline int cmd_build_graph(const Options& opt, std::istream& in, std::ostream& out,
                           std::ostream& err) {
    const TrainConfig cfg = opt.resolve();

    std::optional<Vocabulary> vocab;
    if (!opt.vocab_file.empty()) vocab = Vocabulary::load(opt.vocab_file);

    // Without a vocabulary, tokens get ad-hoc ids in first-occurrence order
    // starting at 2, which keeps the emitted node ids deterministic.
    auto encode_tokens = [&](const std::vector<std::string>& tokens) {
        if (vocab) return encode(tokens, *vocab, cfg.max_len);
        std::unordered_map<std::string, int> adhoc;
        TokenSequence seq;
        const std::size_t limit = std::min(tokens.size(), static_cast<std::size_t>(cfg.max_len));
        for (std::size_t i = 0; i < limit; ++i) {
            auto [it, _] = adhoc.try_emplace(tokens[i], static_cast<int>(adhoc.size()) + 2);
            seq.ids.push_back(it->second);
        }
        return seq;
    };

    std::vector<std::string> sources;
    if (opt.jsonl_input) {
        LoadedSplit split = load_split(opt.input_file, "input", err);
        for (auto& s : split.samples) sources.push_back(std::move(s.source));
    } else if (!opt.input_file.empty()) {
        std::ifstream file(opt.input_file, std::ios::binary);
        if (!file) throw std::runtime_error("cannot read " + opt.input_file);
        std::ostringstream buffer;
        buffer << file.rdbuf();
        sources.push_back(buffer.str());
    } else {
        std::ostringstream buffer;
        buffer << in.rdbuf();
        sources.push_back(buffer.str());
    }

    for (const auto& source : sources) {
        const auto tokens = tokenize(source);
        if (tokens.empty()) throw std::runtime_error("no tokens in input");
        const CodeGraph graph = build_graph_for(cfg, encode_tokens(tokens));
        out << to_json_line(graph) << "\n";
    }
    return 0;
}

inline int cmd_ablate(const Options& opt, std::ostream& out, std::ostream& err) {
    const TrainConfig cfg = opt.resolve();
    const AblationAxis axis = parse_axis(opt.axis);

    LoadedSplit train_raw = load_split(opt.train_file, "train", err);
    LoadedSplit valid_raw = load_split(opt.valid_file, "valid", err);
    std::optional<LoadedSplit> test_raw;
    if (!opt.test_file.empty()) test_raw = load_split(opt.test_file, "test", err);

    const Vocabulary vocab = build_vocab(tokenize_corpus(train_raw.samples), cfg.min_count);
    PreparationReport train_prep = prepare_split(train_raw.samples, vocab, cfg.max_len);
    PreparationReport valid_prep = prepare_split(valid_raw.samples, vocab, cfg.max_len);
    std::optional<PreparationReport> test_prep;
    if (test_raw) test_prep = prepare_split(test_raw->samples, vocab, cfg.max_len);

    auto make_params = [&](const TrainConfig& run_cfg) {
        Rng rng(mix_seed(run_cfg.seed, 1));
        return ModelParams<double>::init(run_cfg, vocab.size(), &rng);
    };
    const std::vector<AblationRow> rows =
        ablate<double>(axis, cfg, train_prep.samples, valid_prep.samples,
                       test_prep ? &test_prep->samples : nullptr, make_params, &err);

    std::ostringstream csv;
    csv << opt.axis << ",valid_acc" << (test_prep ? ",test_acc" : "") << "\n";
    for (const auto& row : rows) {
        csv << row.value << "," << full_precision(row.valid_acc);
        if (test_prep) csv << "," << full_precision(row.test_acc);
        csv << "\n";
    }
    out << csv.str();
    if (!opt.out_csv.empty()) {
        std::ofstream file(opt.out_csv, std::ios::binary);
        if (!file) throw std::runtime_error("cannot write " + opt.out_csv);
        file << csv.str();
    }
    return 0;
}

}  // namespace detail

/// Full command-line surface. Results go to `out`, diagnostics to `err`;
/// exit codes: 0 success, 2 usage error, 1 runtime failure.
inline int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
               std::ostream& err) {
    CLI::App app{"token-graph neural networks for function-level vulnerability detection",
                 "regvd"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "TOML-style config file with [train]/[ablate] sections; flags override it");

    detail::Options opt;

    CLI::App* train = app.add_subcommand("train", "train a model and emit a checkpoint");
    detail::add_model_flags(train, opt);
    train->add_option("--train-file", opt.train_file, "training split (JSONL)")->required();
    train->add_option("--valid-file", opt.valid_file, "validation split (JSONL)")->required();
    train->add_option("--test-file", opt.test_file, "optional test split (JSONL)");
    train->add_option("--out-dir", opt.out_dir, "output directory for checkpoint/metrics/manifest");
    train->add_flag("--expect-codexglue", opt.expect_codexglue,
                    "check split sizes against the benchmark reference");

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a labeled split");
    eval->add_option("--checkpoint", opt.checkpoint_file, "trained checkpoint")->required();
    eval->add_option("--vocab", opt.vocab_file, "vocabulary file saved at training time")
        ->required();
    eval->add_option("--input", opt.input_file, "labeled JSONL split")->required();
    eval->add_option("--predictions", opt.predictions_file,
                     "per-sample predictions CSV (default predictions.csv)");

    CLI::App* predict = app.add_subcommand("predict", "classify one function from a file or stdin");
    predict->add_option("--checkpoint", opt.checkpoint_file, "trained checkpoint")->required();
    predict->add_option("--vocab", opt.vocab_file, "vocabulary file")->required();
    predict->add_option("input", opt.input_file, "source file (reads stdin when omitted)");

    CLI::App* build_graph = app.add_subcommand("build-graph", "emit graphs as JSON lines");
    build_graph->add_option("--construction", opt.construction, "unique or index");
    build_graph->add_option("--ws", opt.cfg.window, "sliding window size");
    build_graph->add_option("--max-len", opt.cfg.max_len, "token truncation length");
    build_graph->add_option("--vocab", opt.vocab_file, "optional vocabulary for real token ids");
    build_graph->add_option("--input", opt.input_file, "source file (reads stdin when omitted)");
    build_graph->add_flag("--jsonl", opt.jsonl_input, "treat the input as a JSONL dataset");

    CLI::App* ablate = app.add_subcommand("ablate", "grid-run one configuration axis");
    detail::add_model_flags(ablate, opt);
    ablate->add_option("--axis", opt.axis, "residual, mix, window or fraction")->required();
    ablate->add_option("--train-file", opt.train_file, "training split (JSONL)")->required();
    ablate->add_option("--valid-file", opt.valid_file, "validation split (JSONL)")->required();
    ablate->add_option("--test-file", opt.test_file, "optional test split (JSONL)");
    ablate->add_option("--out", opt.out_csv, "write the per-axis CSV here as well");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (train->parsed()) return detail::cmd_train(opt, out, err);
        if (eval->parsed()) return detail::cmd_eval(opt, out, err);
        if (predict->parsed()) return detail::cmd_predict(opt, in, out, err);
        if (build_graph->parsed()) return detail::cmd_build_graph(opt, in, out, err);
        if (ablate->parsed()) return detail::cmd_ablate(opt, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "usage error: no subcommand\n";
    return 2;
}

inline int run(int argc, const char* const* argv, std::istream& in, std::ostream& out,
               std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, in, out, err);
}

}  // namespace regvd::cli
