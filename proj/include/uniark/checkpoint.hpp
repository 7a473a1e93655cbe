#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/model.hpp"

namespace uniark {

// Checkpoint container (documented in the README):
//   bytes 0..3   magic "UARK"
//   bytes 4..7   u32 header length (little-endian)
//   header       UTF-8 JSON: format_version, model config, seed, mode,
//                optional config_hash, and the ordered parameter manifest
//                (name, shape, adapter flag)
//   payload      for each manifest entry, the raw row-major float64 data,
//                little-endian
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelState& state, const std::string& path,
                            const std::string& config_hash = "") {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointVersion;
    nlohmann::ordered_json cfg;
    cfg["vocab_size"] = state.config.vocab_size;
    cfg["max_seq_len"] = state.config.max_seq_len;
    cfg["d_model"] = state.config.d_model;
    cfg["n_layers"] = state.config.n_layers;
    cfg["n_heads"] = state.config.n_heads;
    cfg["ffn_width"] = state.config.ffn_width;
    cfg["adapter_dim"] = state.config.adapter_dim;
    cfg["mask_token_id"] = state.config.mask_token_id;
    cfg["pad_token_id"] = state.config.pad_token_id;
    cfg["adapter_placement"] = to_string(state.config.adapter_placement);
    cfg["tie_output_embeddings"] = state.config.tie_output_embeddings;
    header["config"] = std::move(cfg);
    header["seed"] = state.seed;
    header["mode"] = state.mode;
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    header["has_adapters"] = state.has_adapters;
    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    for (const auto& p : state.params) {
        nlohmann::ordered_json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape();
        entry["adapter"] = p.is_adapter;
        params.push_back(std::move(entry));
    }
    header["params"] = std::move(params);

    const std::string header_bytes = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
        out.write("UARK", 4);
        const std::uint32_t len = static_cast<std::uint32_t>(header_bytes.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
        for (const auto& p : state.params) {
            const auto span = p.tensor.data();
            out.write(reinterpret_cast<const char*>(span.data()),
                      static_cast<std::streamsize>(span.size() * sizeof(double)));
        }
        if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
    ModelState state;
    std::string config_hash;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "UARK", 4) != 0) {
        throw std::runtime_error("checkpoint '" + path + "': bad magic");
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1u << 26)) {
        throw std::runtime_error("checkpoint '" + path + "': corrupt header length");
    }
    std::string header_bytes(len, '\0');
    in.read(header_bytes.data(), len);
    if (!in) throw std::runtime_error("checkpoint '" + path + "': truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint '" + path + "': corrupt header: " + e.what());
    }
    if (header.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
        throw std::runtime_error("checkpoint '" + path + "': unsupported format version");
    }

    LoadedCheckpoint loaded;
    ModelState& state = loaded.state;
    const auto& cfg = header.at("config");
    state.config.vocab_size = cfg.at("vocab_size").get<std::size_t>();
    state.config.max_seq_len = cfg.at("max_seq_len").get<std::size_t>();
    state.config.d_model = cfg.at("d_model").get<std::size_t>();
    state.config.n_layers = cfg.at("n_layers").get<std::size_t>();
    state.config.n_heads = cfg.at("n_heads").get<std::size_t>();
    state.config.ffn_width = cfg.at("ffn_width").get<std::size_t>();
    state.config.adapter_dim = cfg.at("adapter_dim").get<std::size_t>();
    state.config.mask_token_id = cfg.at("mask_token_id").get<std::size_t>();
    state.config.pad_token_id = cfg.at("pad_token_id").get<std::size_t>();
    state.config.adapter_placement =
        adapter_placement_from_string(cfg.at("adapter_placement").get<std::string>());
    state.config.tie_output_embeddings = cfg.at("tie_output_embeddings").get<bool>();
    state.seed = header.at("seed").get<std::uint64_t>();
    state.mode = header.at("mode").get<std::string>();
    state.has_adapters = header.at("has_adapters").get<bool>();
    if (header.contains("config_hash")) {
        loaded.config_hash = header.at("config_hash").get<std::string>();
    }

    for (const auto& entry : header.at("params")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        const bool adapter = entry.at("adapter").get<bool>();
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        std::vector<double> values(n);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint '" + path + "': truncated payload");
        // Frozen-base semantics are restored from the adapter flags.
        const bool trainable = !state.has_adapters || adapter;
        state.params.push_back(
            {name, Tensor::from_values(shape, std::move(values), trainable), adapter});
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error("checkpoint '" + path + "': trailing bytes");
    return loaded;
}

}  // namespace uniark
