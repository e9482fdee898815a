#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "regvd/config.hpp"
#include "regvd/model.hpp"

namespace regvd {

inline nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["layers"] = cfg.layers;
    j["hidden"] = cfg.hidden;
    j["window"] = cfg.window;
    j["mix"] = to_string(cfg.mix);
    j["construction"] = to_string(cfg.construction);
    j["base"] = to_string(cfg.base);
    j["residual"] = cfg.residual;
    j["lr"] = cfg.lr;
    j["lambda"] = cfg.lambda;
    j["batch"] = cfg.batch;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    j["max_len"] = cfg.max_len;
    j["min_count"] = cfg.min_count;
    j["share_ggnn_params"] = cfg.share_ggnn_params;
    j["freeze_embeddings"] = cfg.freeze_embeddings;
    j["workers"] = cfg.workers;
    j["precision"] = cfg.precision;
    return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.layers = j.at("layers").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.window = j.at("window").get<int>();
    cfg.mix = parse_mix(j.at("mix").get<std::string>());
    cfg.construction = parse_construction(j.at("construction").get<std::string>());
    cfg.base = parse_base(j.at("base").get<std::string>());
    cfg.residual = j.at("residual").get<bool>();
    cfg.lr = j.at("lr").get<double>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.batch = j.at("batch").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.min_count = j.at("min_count").get<int>();
    cfg.share_ggnn_params = j.at("share_ggnn_params").get<bool>();
    cfg.freeze_embeddings = j.at("freeze_embeddings").get<bool>();
    cfg.workers = j.at("workers").get<int>();
    cfg.precision = j.at("precision").get<std::string>();
    cfg.validate();
    return cfg;
}

inline std::string to_hex(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

namespace detail {

inline void write_f64_le(std::ostream& out, double value) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

inline double read_f64_le(std::istream& in) {
    char bytes[8];
    in.read(bytes, 8);
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Self-describing container: a single-line JSON header (config, vocabulary
/// hash, tensor shapes) followed by each tensor as little-endian 64-bit
/// floats in declaration order.
template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const ModelParams<T>& params, std::uint64_t vocab_hash, int best_epoch = 0,
                     double best_valid_acc = 0.0) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);

    nlohmann::ordered_json header;
    header["format"] = "regvd-checkpoint";
    header["version"] = 1;
    header["config"] = config_to_json(cfg);
    header["vocab_hash"] = to_hex(vocab_hash);
    header["best_epoch"] = best_epoch;
    header["best_valid_acc"] = best_valid_acc;
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& p : params.parameters()) {
        p.matrix->require_finite(p.name.c_str());
        tensors.push_back({{"name", p.name}, {"rows", p.matrix->rows()}, {"cols", p.matrix->cols()}});
    }
    header["tensors"] = std::move(tensors);
    out << header.dump() << '\n';

    for (const auto& p : params.parameters()) {
        for (std::size_t i = 0; i < p.matrix->size(); ++i)
            detail::write_f64_le(out, static_cast<double>(p.matrix->data()[i]));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename T>
struct Checkpoint {
    TrainConfig config;
    ModelParams<T> params;
    std::uint64_t vocab_hash = 0;
    int best_epoch = 0;
    double best_valid_acc = 0.0;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("load_checkpoint: missing header");

    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "regvd-checkpoint") {
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    }

    Checkpoint<T> ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    ckpt.best_epoch = header.value("best_epoch", 0);
    ckpt.best_valid_acc = header.value("best_valid_acc", 0.0);

    const auto& tensors = header.at("tensors");
    require(!tensors.empty() && tensors.front().at("name") == "embedding",
            "load_checkpoint: malformed tensor list");
    const int vocab_size = tensors.front().at("rows").get<int>();
    ckpt.params = ModelParams<T>::init(ckpt.config, vocab_size);

    auto named = ckpt.params.parameters();
    require(named.size() == tensors.size(), "load_checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& meta = tensors[i];
        if (meta.at("name").get<std::string>() != named[i].name ||
            meta.at("rows").get<int>() != named[i].matrix->rows() ||
            meta.at("cols").get<int>() != named[i].matrix->cols()) {
            throw std::runtime_error("load_checkpoint: tensor " + named[i].name +
                                     " does not match header entry " + meta.dump());
        }
        for (std::size_t k = 0; k < named[i].matrix->size(); ++k)
            named[i].matrix->data()[k] = static_cast<T>(detail::read_f64_le(in));
    }
    return ckpt;
}

/// FNV-1a digest of a whole file, recorded in run manifests.
inline std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file_digest: cannot read " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buffer[1 << 16];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
        h = fnv1a64(std::string_view(buffer, static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

}  // namespace regvd
