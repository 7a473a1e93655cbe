#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/evaluation.hpp"
#include "uniark/model.hpp"
#include "uniark/objectives.hpp"
#include "uniark/probing.hpp"
#include "uniark/training.hpp"
#include "uniark/world.hpp"

namespace uniark {

constexpr const char* kToolName = "uniark";
constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64) for config and manifest chaining
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a_64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hash_hex(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a_64(bytes);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for hashing");
    std::ostringstream buf;
    buf << in.rdbuf();
    return hash_hex(buf.str());
}

// ---------------------------------------------------------------------------
// Pipeline configuration: one JSON file with per-stage sections
// ---------------------------------------------------------------------------

struct ProbeConfig {
    std::vector<std::string> variants = {"original", "subject_masked"};
    std::size_t topk_records = 10;
    std::string augment = "auto";  // auto | on | off
};

struct ModelSection {
    std::size_t max_seq_len = 64;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t ffn_width = 128;
    std::size_t adapter_dim = 16;
    AdapterPlacement adapter_placement = AdapterPlacement::Both;
    bool tie_output_embeddings = false;
    std::uint64_t seed = 20;
};

struct EvalSection {
    std::string kld_direction = "masked_vs_original";
    std::vector<std::string> exclude_relations;
    bool quality = true, bias = true, consistency = true, diversity = true;
};

struct PipelineConfig {
    WorldConfig world;
    ModelSection model;
    LossConfig loss;
    AugmentationConfig augment;
    TrainConfig train;
    ProbeConfig probe;
    EvalSection eval;

    // Fills a ModelConfig once the vocabulary is known.
    ModelConfig model_config(std::size_t vocab_size, std::size_t pad_id,
                             std::size_t mask_id) const {
        ModelConfig mc;
        mc.vocab_size = vocab_size;
        mc.max_seq_len = model.max_seq_len;
        mc.d_model = model.d_model;
        mc.n_layers = model.n_layers;
        mc.n_heads = model.n_heads;
        mc.ffn_width = model.ffn_width;
        mc.adapter_dim = 0;
        mc.mask_token_id = mask_id;
        mc.pad_token_id = pad_id;
        mc.adapter_placement = model.adapter_placement;
        mc.tie_output_embeddings = model.tie_output_embeddings;
        return mc;
    }

    EvalOptions eval_options() const {
        EvalOptions opts;
        opts.kld_direction = eval.kld_direction == "original_vs_masked"
                                 ? KldDirection::OriginalVsMasked
                                 : KldDirection::MaskedVsOriginal;
        opts.exclude_relations = eval.exclude_relations;
        opts.select = {eval.quality, eval.bias, eval.consistency, eval.diversity};
        return opts;
    }
};

// The default experiment preset ("paper-mini"): 6 relations, 40 subjects and
// 10 objects per relation, 13 templates per relation (1 base + 3 short +
// 3 long + 6 normal), a 2-layer d=64 encoder, seeds {20, 30, 50}.
inline PipelineConfig paper_mini_config() {
    PipelineConfig cfg;  // struct defaults are the preset
    // Candidate count proportional to the closed answer set (10 objects plus
    // margin); the generic top_k=50 covers an eighth of this preset's tiny
    // vocabulary and over-flattens.
    cfg.loss.top_k = 16;
    return cfg;
}

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& j) {
    PipelineConfig cfg = paper_mini_config();
    if (j.contains("world")) {
        const auto& w = j["world"];
        detail::read_if(w, "n_relations", cfg.world.n_relations);
        detail::read_if(w, "subjects_per_relation", cfg.world.subjects_per_relation);
        detail::read_if(w, "objects_per_relation", cfg.world.objects_per_relation);
        detail::read_if(w, "paraphrases_per_relation", cfg.world.paraphrases_per_relation);
        detail::read_if(w, "short_paraphrases", cfg.world.short_paraphrases);
        detail::read_if(w, "long_paraphrases", cfg.world.long_paraphrases);
        detail::read_if(w, "nm_relations", cfg.world.nm_relations);
        detail::read_if(w, "template_prior_skew", cfg.world.template_prior_skew);
        detail::read_if(w, "object_marginal_skew", cfg.world.object_marginal_skew);
        detail::read_if(w, "corpus_repeats", cfg.world.corpus_repeats);
        detail::read_if(w, "distractors_per_relation", cfg.world.distractors_per_relation);
        detail::read_if(w, "seed", cfg.world.seed);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        detail::read_if(m, "max_seq_len", cfg.model.max_seq_len);
        detail::read_if(m, "d_model", cfg.model.d_model);
        detail::read_if(m, "n_layers", cfg.model.n_layers);
        detail::read_if(m, "n_heads", cfg.model.n_heads);
        detail::read_if(m, "ffn_width", cfg.model.ffn_width);
        detail::read_if(m, "adapter_dim", cfg.model.adapter_dim);
        if (m.contains("adapter_placement")) {
            cfg.model.adapter_placement =
                adapter_placement_from_string(m["adapter_placement"].get<std::string>());
        }
        detail::read_if(m, "tie_output_embeddings", cfg.model.tie_output_embeddings);
        detail::read_if(m, "seed", cfg.model.seed);
    }
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        detail::read_if(l, "lambda_me", cfg.loss.lambda_me);
        detail::read_if(l, "lambda_kld", cfg.loss.lambda_kld);
        detail::read_if(l, "top_k", cfg.loss.top_k);
        if (l.contains("entropy_sign_mode")) {
            cfg.loss.entropy_sign_mode =
                entropy_sign_mode_from_string(l["entropy_sign_mode"].get<std::string>());
        }
        if (l.contains("apply_me_to")) {
            cfg.loss.apply_me_to =
                max_entropy_target_from_string(l["apply_me_to"].get<std::string>());
        }
        if (l.contains("stopword_filter_order")) {
            const auto s = l["stopword_filter_order"].get<std::string>();
            if (s == "filter-before") {
                cfg.loss.stopword_filter_order = StopwordFilterOrder::BeforeTopK;
            } else if (s == "filter-after") {
                cfg.loss.stopword_filter_order = StopwordFilterOrder::AfterTopK;
            } else {
                throw std::invalid_argument("unknown stopword_filter_order '" + s + "'");
            }
        }
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        detail::read_if(a, "w_raw", cfg.augment.w_raw);
        detail::read_if(a, "w_true", cfg.augment.w_true);
        detail::read_if(a, "w_false", cfg.augment.w_false);
        detail::read_if(a, "true_prefix", cfg.augment.true_prefix_text);
        detail::read_if(a, "false_prefix", cfg.augment.false_prefix_text);
        if (a.contains("combine")) {
            const auto s = a["combine"].get<std::string>();
            if (s == "probabilities") {
                cfg.augment.mode = AggregationMode::Probabilities;
            } else if (s == "logits") {
                cfg.augment.mode = AggregationMode::Logits;
            } else {
                throw std::invalid_argument("unknown aggregation mode '" + s + "'");
            }
        }
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        detail::read_if(t, "optimizer", cfg.train.optimizer);
        detail::read_if(t, "learning_rate_pretrain", cfg.train.learning_rate_pretrain);
        detail::read_if(t, "learning_rate_tune", cfg.train.learning_rate_tune);
        detail::read_if(t, "adam_beta1", cfg.train.adam_beta1);
        detail::read_if(t, "adam_beta2", cfg.train.adam_beta2);
        detail::read_if(t, "adam_eps", cfg.train.adam_eps);
        detail::read_if(t, "batch_size", cfg.train.batch_size);
        detail::read_if(t, "epochs_pretrain", cfg.train.epochs_pretrain);
        detail::read_if(t, "epochs_tune", cfg.train.epochs_tune);
        detail::read_if(t, "seed", cfg.train.seed);
        detail::read_if(t, "gradient_clip_norm", cfg.train.gradient_clip_norm);
        detail::read_if(t, "per_relation", cfg.train.per_relation);
        detail::read_if(t, "para_templates", cfg.train.para_templates);
    }
    if (j.contains("probe")) {
        const auto& p = j["probe"];
        detail::read_if(p, "variants", cfg.probe.variants);
        detail::read_if(p, "topk_records", cfg.probe.topk_records);
        detail::read_if(p, "augment", cfg.probe.augment);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        detail::read_if(e, "kld_direction", cfg.eval.kld_direction);
        detail::read_if(e, "exclude_relations", cfg.eval.exclude_relations);
        detail::read_if(e, "quality", cfg.eval.quality);
        detail::read_if(e, "bias", cfg.eval.bias);
        detail::read_if(e, "consistency", cfg.eval.consistency);
        detail::read_if(e, "diversity", cfg.eval.diversity);
    }
    cfg.world.validate();
    cfg.loss.validate();
    cfg.augment.validate();
    cfg.train.validate();
    return cfg;
}

inline nlohmann::ordered_json config_to_json(const PipelineConfig& cfg) {
    nlohmann::ordered_json j;
    j["world"] = {{"n_relations", cfg.world.n_relations},
                  {"subjects_per_relation", cfg.world.subjects_per_relation},
                  {"objects_per_relation", cfg.world.objects_per_relation},
                  {"paraphrases_per_relation", cfg.world.paraphrases_per_relation},
                  {"short_paraphrases", cfg.world.short_paraphrases},
                  {"long_paraphrases", cfg.world.long_paraphrases},
                  {"nm_relations", cfg.world.nm_relations},
                  {"template_prior_skew", cfg.world.template_prior_skew},
                  {"object_marginal_skew", cfg.world.object_marginal_skew},
                  {"corpus_repeats", cfg.world.corpus_repeats},
                  {"distractors_per_relation", cfg.world.distractors_per_relation},
                  {"seed", cfg.world.seed}};
    j["model"] = {{"max_seq_len", cfg.model.max_seq_len},
                  {"d_model", cfg.model.d_model},
                  {"n_layers", cfg.model.n_layers},
                  {"n_heads", cfg.model.n_heads},
                  {"ffn_width", cfg.model.ffn_width},
                  {"adapter_dim", cfg.model.adapter_dim},
                  {"adapter_placement", to_string(cfg.model.adapter_placement)},
                  {"tie_output_embeddings", cfg.model.tie_output_embeddings},
                  {"seed", cfg.model.seed}};
    j["loss"] = {{"lambda_me", cfg.loss.lambda_me},
                 {"lambda_kld", cfg.loss.lambda_kld},
                 {"top_k", cfg.loss.top_k},
                 {"entropy_sign_mode", to_string(cfg.loss.entropy_sign_mode)},
                 {"apply_me_to", to_string(cfg.loss.apply_me_to)},
                 {"stopword_filter_order",
                  cfg.loss.stopword_filter_order == StopwordFilterOrder::AfterTopK
                      ? "filter-after"
                      : "filter-before"}};
    j["augment"] = {{"w_raw", cfg.augment.w_raw},
                    {"w_true", cfg.augment.w_true},
                    {"w_false", cfg.augment.w_false},
                    {"true_prefix", cfg.augment.true_prefix_text},
                    {"false_prefix", cfg.augment.false_prefix_text},
                    {"combine", cfg.augment.mode == AggregationMode::Probabilities
                                    ? "probabilities"
                                    : "logits"}};
    j["train"] = {{"optimizer", cfg.train.optimizer},
                  {"learning_rate_pretrain", cfg.train.learning_rate_pretrain},
                  {"learning_rate_tune", cfg.train.learning_rate_tune},
                  {"adam_beta1", cfg.train.adam_beta1},
                  {"adam_beta2", cfg.train.adam_beta2},
                  {"adam_eps", cfg.train.adam_eps},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs_pretrain", cfg.train.epochs_pretrain},
                  {"epochs_tune", cfg.train.epochs_tune},
                  {"seed", cfg.train.seed},
                  {"gradient_clip_norm", cfg.train.gradient_clip_norm},
                  {"per_relation", cfg.train.per_relation},
                  {"para_templates", cfg.train.para_templates}};
    j["probe"] = {{"variants", cfg.probe.variants},
                  {"topk_records", cfg.probe.topk_records},
                  {"augment", cfg.probe.augment}};
    j["eval"] = {{"kld_direction", cfg.eval.kld_direction},
                 {"exclude_relations", cfg.eval.exclude_relations},
                 {"quality", cfg.eval.quality},
                 {"bias", cfg.eval.bias},
                 {"consistency", cfg.eval.consistency},
                 {"diversity", cfg.eval.diversity}};
    return j;
}

inline PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

// The config hash covers the canonical (sorted-key) rendering of the fully
// resolved config, so the same settings hash identically regardless of the
// file's formatting or key order. Command-line overrides like --seed and
// --mode are manifest-level provenance, not part of the hash.
inline std::string config_hash(const PipelineConfig& cfg) {
    const nlohmann::json sorted = config_to_json(cfg);  // plain json sorts keys
    return hash_hex(sorted.dump());
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

struct ManifestInput {
    std::string path;
    std::string manifest_hash;  // hash of the upstream manifest file, if any
};

struct RunManifest {
    std::string command;
    std::string config_hash;
    nlohmann::ordered_json overrides = nlohmann::ordered_json::object();
    std::vector<ManifestInput> inputs;
    std::vector<std::string> outputs;
    std::vector<std::uint64_t> seeds;
    std::string started_at;
    std::string finished_at;
    std::string tool_version = kToolVersion;
};

inline std::string iso_timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

constexpr const char* kManifestFileName = "run_manifest.json";

inline void write_manifest(const RunManifest& m, const std::string& dir) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    j["config_hash"] = m.config_hash;
    j["overrides"] = m.overrides;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
    for (const auto& in : m.inputs) {
        inputs.push_back({{"path", in.path}, {"manifest_hash", in.manifest_hash}});
    }
    j["inputs"] = std::move(inputs);
    j["outputs"] = m.outputs;
    j["seeds"] = m.seeds;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["tool_version"] = m.tool_version;

    std::ofstream out(std::filesystem::path(dir) / kManifestFileName);
    if (!out) throw std::runtime_error("cannot write manifest in '" + dir + "'");
    out << j.dump(2) << '\n';
}

inline RunManifest read_manifest(const std::string& dir) {
    const auto path = (std::filesystem::path(dir) / kManifestFileName).string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing manifest: expected '" + path + "'");
    nlohmann::json j;
    in >> j;
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    if (j.contains("overrides")) m.overrides = j["overrides"];
    for (const auto& ij : j.at("inputs")) {
        m.inputs.push_back({ij.at("path").get<std::string>(),
                            ij.value("manifest_hash", std::string())});
    }
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    return m;
}

inline std::string manifest_hash_of_dir(const std::string& dir) {
    return hash_file((std::filesystem::path(dir) / kManifestFileName).string());
}

}  // namespace uniark
