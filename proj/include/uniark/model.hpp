#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniark/rng.hpp"
#include "uniark/tensor.hpp"

namespace uniark {

// Small transformer-encoder masked language model. Post-norm layers, learned
// absolute position embeddings, GELU feed-forward, and an MLM head applied
// only at the masked positions. Optional bottleneck adapters
// (GELU(h W_d) W_u + h) can be inserted after the attention and/or FFN
// sub-layer of every layer; insertion zero-initializes W_u so the forward
// pass is unchanged until tuning starts, and freezes every base parameter.

enum class AdapterPlacement { Attn, Ffn, Both };

inline std::string to_string(AdapterPlacement p) {
    switch (p) {
        case AdapterPlacement::Attn: return "attn";
        case AdapterPlacement::Ffn: return "ffn";
        case AdapterPlacement::Both: return "both";
    }
    throw std::logic_error("unreachable");
}

inline AdapterPlacement adapter_placement_from_string(const std::string& s) {
    if (s == "attn") return AdapterPlacement::Attn;
    if (s == "ffn") return AdapterPlacement::Ffn;
    if (s == "both") return AdapterPlacement::Both;
    throw std::invalid_argument("unknown adapter placement '" + s + "'");
}

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 48;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t ffn_width = 128;
    std::size_t adapter_dim = 0;  // 0 = no adapters
    std::size_t mask_token_id = 1;
    std::size_t pad_token_id = 0;
    AdapterPlacement adapter_placement = AdapterPlacement::Both;
    bool tie_output_embeddings = false;

    void validate() const {
        if (vocab_size < 3) throw std::invalid_argument("model config: vocab_size too small");
        if (max_seq_len < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || ffn_width < 1) {
            throw std::invalid_argument("model config: sizes must be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw std::invalid_argument("model config: d_model must be divisible by n_heads");
        }
        if (adapter_dim != 0 && adapter_dim >= d_model) {
            throw std::invalid_argument("model config: adapter_dim must be < d_model");
        }
        if (mask_token_id >= vocab_size || pad_token_id >= vocab_size ||
            mask_token_id == pad_token_id) {
            throw std::invalid_argument("model config: bad special token ids");
        }
    }

    std::size_t sublayers_with_adapters() const {
        return adapter_placement == AdapterPlacement::Both ? 2 : 1;
    }
};

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool is_adapter = false;
};

enum class TuneMode { None, Finetune, Adapter, UniArk, UniArkPara };

inline std::string to_string(TuneMode m) {
    switch (m) {
        case TuneMode::None: return "none";
        case TuneMode::Finetune: return "finetune";
        case TuneMode::Adapter: return "adapter";
        case TuneMode::UniArk: return "uniark";
        case TuneMode::UniArkPara: return "uniark_para";
    }
    throw std::logic_error("unreachable");
}

inline TuneMode tune_mode_from_string(const std::string& s) {
    if (s == "none") return TuneMode::None;
    if (s == "finetune") return TuneMode::Finetune;
    if (s == "adapter") return TuneMode::Adapter;
    if (s == "uniark") return TuneMode::UniArk;
    if (s == "uniark_para" || s == "uniark-para") return TuneMode::UniArkPara;
    throw std::invalid_argument("unknown tune mode '" + s + "'");
}

struct ModelState {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::string mode = "pretrained";  // provenance for checkpoints
    std::vector<NamedParam> params;
    bool has_adapters = false;

    Tensor& param(const std::string& name) {
        for (auto& p : params)
            if (p.name == name) return p.tensor;
        throw std::invalid_argument("unknown parameter '" + name + "'");
    }
    const Tensor& param(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return p.tensor;
        throw std::invalid_argument("unknown parameter '" + name + "'");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.tensor.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params) p.tensor.zero_grad();
    }
};

namespace detail {

inline Tensor xavier_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> values(rows * cols);
    for (auto& v : values) v = rng.uniform(-a, a);
    return Tensor::from_values({rows, cols}, std::move(values), true);
}

inline Tensor const_vector(std::size_t n, double value) {
    return Tensor::from_values({n}, std::vector<double>(n, value), true);
}

}  // namespace detail

// Deterministic initialization: scaled-uniform weight matrices, zero biases,
// unit layer-norm gains. Parameter creation order is fixed, so a given
// (config, seed) always produces bit-identical states.
inline ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState state;
    state.config = config;
    state.config.adapter_dim = 0;  // adapters are added by insert_adapters
    state.seed = seed;
    Rng rng(derive_seed(seed, 0xA0DE1));

    auto add = [&](const std::string& name, Tensor t) {
        state.params.push_back({name, std::move(t), false});
    };

    add("tok_emb", detail::xavier_matrix(config.vocab_size, config.d_model, rng));
    add("pos_emb", detail::xavier_matrix(config.max_seq_len, config.d_model, rng));
    add("emb_ln_g", detail::const_vector(config.d_model, 1.0));
    add("emb_ln_b", detail::const_vector(config.d_model, 0.0));

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        add(prefix + "attn.wq", detail::xavier_matrix(config.d_model, config.d_model, rng));
        add(prefix + "attn.bq", detail::const_vector(config.d_model, 0.0));
        add(prefix + "attn.wk", detail::xavier_matrix(config.d_model, config.d_model, rng));
        add(prefix + "attn.bk", detail::const_vector(config.d_model, 0.0));
        add(prefix + "attn.wv", detail::xavier_matrix(config.d_model, config.d_model, rng));
        add(prefix + "attn.bv", detail::const_vector(config.d_model, 0.0));
        add(prefix + "attn.wo", detail::xavier_matrix(config.d_model, config.d_model, rng));
        add(prefix + "attn.bo", detail::const_vector(config.d_model, 0.0));
        add(prefix + "attn_ln_g", detail::const_vector(config.d_model, 1.0));
        add(prefix + "attn_ln_b", detail::const_vector(config.d_model, 0.0));
        add(prefix + "ffn.w1", detail::xavier_matrix(config.d_model, config.ffn_width, rng));
        add(prefix + "ffn.b1", detail::const_vector(config.ffn_width, 0.0));
        add(prefix + "ffn.w2", detail::xavier_matrix(config.ffn_width, config.d_model, rng));
        add(prefix + "ffn.b2", detail::const_vector(config.d_model, 0.0));
        add(prefix + "ffn_ln_g", detail::const_vector(config.d_model, 1.0));
        add(prefix + "ffn_ln_b", detail::const_vector(config.d_model, 0.0));
    }

    add("head.w", detail::xavier_matrix(config.d_model, config.d_model, rng));
    add("head.b", detail::const_vector(config.d_model, 0.0));
    add("head_ln_g", detail::const_vector(config.d_model, 1.0));
    add("head_ln_b", detail::const_vector(config.d_model, 0.0));
    if (!config.tie_output_embeddings) {
        add("head.out_w", detail::xavier_matrix(config.d_model, config.vocab_size, rng));
    }
    add("head.out_b", detail::const_vector(config.vocab_size, 0.0));
    return state;
}

inline ModelState deep_copy(const ModelState& state) {
    ModelState out;
    out.config = state.config;
    out.seed = state.seed;
    out.mode = state.mode;
    out.has_adapters = state.has_adapters;
    out.params.reserve(state.params.size());
    for (const auto& p : state.params) {
        Tensor t = Tensor::from_values(p.tensor.shape(),
                                       {p.tensor.data().begin(), p.tensor.data().end()},
                                       p.tensor.requires_grad());
        out.params.push_back({p.name, std::move(t), p.is_adapter});
    }
    return out;
}

// Eq-style adapter transform: GELU(h W_d) W_u + h, with the residual taken
// from the adapter input. Accepts a single hidden vector or a matrix of
// row-wise hidden states.
inline Tensor adapter_forward(const Tensor& h, const Tensor& w_down, const Tensor& w_up) {
    const bool vector_input = h.ndim() == 1;
    const Tensor h2 = vector_input ? reshape(h, {1, h.shape()[0]}) : h;
    if (h2.ndim() != 2 || w_down.ndim() != 2 || w_up.ndim() != 2 ||
        h2.shape()[1] != w_down.shape()[0] || w_down.shape()[1] != w_up.shape()[0] ||
        w_up.shape()[1] != h2.shape()[1]) {
        throw std::invalid_argument("adapter_forward: shape mismatch");
    }
    Tensor out = add(matmul(gelu(matmul(h2, w_down)), w_up), h2);
    return vector_input ? reshape(out, {h.shape()[0]}) : out;
}

// Adds adapters to every transformer layer. W_u starts at zero, so the
// forward pass is exactly preserved at insertion time; all base parameters
// are frozen (requires_grad cleared) per the adapter-tuning regime.
inline void insert_adapters(ModelState& state, std::size_t adapter_dim, std::uint64_t seed) {
    if (state.has_adapters) throw std::runtime_error("insert_adapters: adapters already present");
    if (adapter_dim == 0 || adapter_dim >= state.config.d_model) {
        throw std::invalid_argument("insert_adapters: need 0 < adapter_dim < d_model");
    }
    Rng rng(derive_seed(seed, 0xADA9));
    const auto placement = state.config.adapter_placement;
    for (std::size_t l = 0; l < state.config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        auto add_adapter = [&](const std::string& name) {
            state.params.push_back(
                {prefix + name + ".wd",
                 detail::xavier_matrix(state.config.d_model, adapter_dim, rng), true});
            state.params.push_back(
                {prefix + name + ".wu",
                 Tensor::from_values({adapter_dim, state.config.d_model},
                                     std::vector<double>(adapter_dim * state.config.d_model, 0.0),
                                     true),
                 true});
        };
        if (placement != AdapterPlacement::Ffn) add_adapter("adapter_attn");
        if (placement != AdapterPlacement::Attn) add_adapter("adapter_ffn");
    }
    for (auto& p : state.params) {
        if (!p.is_adapter) p.tensor.set_requires_grad(false);
    }
    state.config.adapter_dim = adapter_dim;
    state.has_adapters = true;
}

enum class ParamSelection { None, All, AdaptersOnly };

inline ParamSelection selection_for(TuneMode mode) {
    switch (mode) {
        case TuneMode::None: return ParamSelection::None;
        case TuneMode::Finetune: return ParamSelection::All;
        case TuneMode::Adapter:
        case TuneMode::UniArk:
        case TuneMode::UniArkPara: return ParamSelection::AdaptersOnly;
    }
    throw std::logic_error("unreachable");
}

// The trainable subset for a tuning mode: none -> empty, finetune -> all,
// adapter-based modes -> adapter matrices only.
inline std::vector<NamedParam*> trainable_parameters(ModelState& state, TuneMode mode) {
    const auto selection = selection_for(mode);
    std::vector<NamedParam*> out;
    if (selection == ParamSelection::None) return out;
    if (selection == ParamSelection::AdaptersOnly && !state.has_adapters) {
        throw std::runtime_error("trainable_parameters: model has no adapters");
    }
    for (auto& p : state.params) {
        if (selection == ParamSelection::All || p.is_adapter) out.push_back(&p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor transformer_hidden(const ModelState& state,
                                 const std::vector<std::size_t>& token_ids) {
    const auto& cfg = state.config;
    if (token_ids.empty()) throw std::invalid_argument("forward: empty input");
    if (token_ids.size() > cfg.max_seq_len) {
        throw std::invalid_argument("forward: sequence longer than max_seq_len");
    }
    for (std::size_t id : token_ids) {
        if (id >= cfg.vocab_size) throw std::out_of_range("forward: token id out of range");
    }
    const std::size_t n = token_ids.size();
    const std::size_t d = cfg.d_model;
    const std::size_t head_dim = d / cfg.n_heads;

    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;

    Tensor x = add(embedding_lookup(state.param("tok_emb"), token_ids),
                   embedding_lookup(state.param("pos_emb"), positions));
    x = layer_norm(x, state.param("emb_ln_g"), state.param("emb_ln_b"));

    // Additive key mask: pad positions contribute nothing to attention.
    bool any_pad = false;
    for (std::size_t id : token_ids) any_pad = any_pad || id == cfg.pad_token_id;
    Tensor key_mask;
    if (any_pad) {
        std::vector<double> mask(n * n, 0.0);
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t k = 0; k < n; ++k)
                if (token_ids[k] == cfg.pad_token_id) mask[q * n + k] = -1e9;
        key_mask = Tensor::from_values({n, n}, std::move(mask));
    }

    const bool adapters = state.has_adapters;
    const auto placement = cfg.adapter_placement;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Tensor q = add_row(matmul(x, state.param(p + "attn.wq")), state.param(p + "attn.bq"));
        Tensor k = add_row(matmul(x, state.param(p + "attn.wk")), state.param(p + "attn.bk"));
        Tensor v = add_row(matmul(x, state.param(p + "attn.wv")), state.param(p + "attn.bv"));

        std::vector<Tensor> head_outputs;
        head_outputs.reserve(cfg.n_heads);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            Tensor qh = slice_cols(q, h * head_dim, head_dim);
            Tensor kh = slice_cols(k, h * head_dim, head_dim);
            Tensor vh = slice_cols(v, h * head_dim, head_dim);
            Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(double(head_dim)));
            if (any_pad) scores = add(scores, key_mask);
            head_outputs.push_back(matmul(softmax(scores), vh));
        }
        Tensor attn = concat_cols(head_outputs);
        attn = add_row(matmul(attn, state.param(p + "attn.wo")), state.param(p + "attn.bo"));
        x = layer_norm(add(x, attn), state.param(p + "attn_ln_g"), state.param(p + "attn_ln_b"));
        if (adapters && placement != AdapterPlacement::Ffn) {
            x = adapter_forward(x, state.param(p + "adapter_attn.wd"),
                                state.param(p + "adapter_attn.wu"));
        }

        Tensor ffn = add_row(
            matmul(gelu(add_row(matmul(x, state.param(p + "ffn.w1")), state.param(p + "ffn.b1"))),
                   state.param(p + "ffn.w2")),
            state.param(p + "ffn.b2"));
        x = layer_norm(add(x, ffn), state.param(p + "ffn_ln_g"), state.param(p + "ffn_ln_b"));
        if (adapters && placement != AdapterPlacement::Attn) {
            x = adapter_forward(x, state.param(p + "adapter_ffn.wd"),
                                state.param(p + "adapter_ffn.wu"));
        }
    }
    return x;
}

}  // namespace detail

// One logit row (over the vocabulary) per masked position, in the order the
// positions are given.
inline Tensor forward_mlm(const ModelState& state, const std::vector<std::size_t>& token_ids,
                          const std::vector<std::size_t>& mask_positions) {
    if (mask_positions.empty()) throw std::invalid_argument("forward_mlm: no masked positions");
    for (std::size_t pos : mask_positions) {
        if (pos >= token_ids.size()) {
            throw std::out_of_range("forward_mlm: mask position out of range");
        }
    }
    Tensor h = detail::transformer_hidden(state, token_ids);
    Tensor hm = gather_rows(h, mask_positions);
    Tensor t = layer_norm(gelu(add_row(matmul(hm, state.param("head.w")), state.param("head.b"))),
                          state.param("head_ln_g"), state.param("head_ln_b"));
    Tensor logits = state.config.tie_output_embeddings
                        ? matmul_nt(t, state.param("tok_emb"))
                        : matmul(t, state.param("head.out_w"));
    return add_row(logits, state.param("head.out_b"));
}

}  // namespace uniark
