#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/model.hpp"
#include "uniark/tensor.hpp"
#include "uniark/vocab.hpp"
#include "uniark/world.hpp"

namespace uniark {

// Prompt construction, true/false self-augmentation, inference, and the
// predictions.jsonl interchange format.

enum class PromptVariant { Original, SubjectMasked, BothMasked, TruePrefix, FalsePrefix };

inline std::string to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::Original: return "original";
        case PromptVariant::SubjectMasked: return "subject_masked";
        case PromptVariant::BothMasked: return "both_masked";
        case PromptVariant::TruePrefix: return "true_prefix";
        case PromptVariant::FalsePrefix: return "false_prefix";
    }
    throw std::logic_error("unreachable");
}

struct Prompt {
    std::vector<std::size_t> token_ids;
    std::size_t object_mask_position = 0;
    std::optional<std::size_t> subject_mask_position;
    PromptVariant variant = PromptVariant::Original;
    std::string relation_id;
    std::string template_id;
    std::string subject;
    std::string gold_object;
    bool starts_with_entity = false;  // template text began with [X] or [Y]
};

// Renders a template against a triple. The object slot is always the mask
// token; subject_masked/both_masked also put the mask token in the subject
// slot (they differ only in which positions the caller reads).
inline Prompt build_prompt(const TemplateSpec& tpl, const FactTriple& triple,
                           PromptVariant variant, const Vocabulary& vocab) {
    if (tpl.relation_id != triple.relation_id) {
        throw std::invalid_argument("build_prompt: template/triple relation mismatch");
    }
    if (variant != PromptVariant::Original && variant != PromptVariant::SubjectMasked &&
        variant != PromptVariant::BothMasked) {
        throw std::invalid_argument("build_prompt: prefix variants come from augment_prompts");
    }
    validate_template_text(tpl.text);

    Prompt prompt;
    prompt.variant = variant;
    prompt.relation_id = tpl.relation_id;
    prompt.template_id = tpl.template_id;
    prompt.subject = triple.subject;
    prompt.gold_object = triple.object;

    const auto words = split_whitespace(tpl.text);
    prompt.starts_with_entity = words[0] == "[X]" || words[0] == "[Y]";

    for (const auto& w : words) {
        if (w == "[X]") {
            if (variant == PromptVariant::Original) {
                if (!vocab.contains(triple.subject)) {
                    throw std::invalid_argument("build_prompt: subject token '" +
                                                triple.subject + "' not in vocabulary");
                }
                prompt.token_ids.push_back(vocab.id(triple.subject));
            } else {
                prompt.subject_mask_position = prompt.token_ids.size();
                prompt.token_ids.push_back(vocab.mask_id());
            }
        } else if (w == "[Y]") {
            prompt.object_mask_position = prompt.token_ids.size();
            prompt.token_ids.push_back(vocab.mask_id());
        } else {
            prompt.token_ids.push_back(vocab.id(w));
        }
    }
    return prompt;
}

enum class AggregationMode { Probabilities, Logits };

struct AugmentationConfig {
    double w_raw = 1.0;
    double w_true = -1.0;  // see README: the shipped ordering is w_true=-1, w_false=+1
    double w_false = 1.0;
    std::string true_prefix_text = "It is true that";
    std::string false_prefix_text = "It is false that";
    AggregationMode mode = AggregationMode::Probabilities;

    void validate() const {
        if (std::abs(w_raw + w_true + w_false - 1.0) > 1e-9) {
            throw std::invalid_argument("augmentation weights must sum to 1");
        }
        if (std::abs(w_true + w_false) > 1e-9) {
            throw std::invalid_argument("augmentation requires w_true == -w_false");
        }
    }

    bool active() const { return w_true != 0.0 || w_false != 0.0; }
};

// Prepends the true/false prefixes, lowercasing the original sentence-initial
// word (entities keep their capitalization), and shifts the recorded mask
// positions by the prefix length. Returns exactly {raw, true, false}.
inline std::vector<Prompt> augment_prompts(const Prompt& prompt, const AugmentationConfig& cfg,
                                           const Vocabulary& vocab, std::size_t max_seq_len) {
    if (prompt.variant != PromptVariant::Original) {
        throw std::invalid_argument("augment_prompts: expected an original-variant prompt");
    }
    cfg.validate();

    auto prefixed = [&](const std::string& prefix_text, PromptVariant variant) {
        const auto prefix_ids = vocab.encode_text(prefix_text);
        Prompt out = prompt;
        out.variant = variant;
        out.token_ids = prefix_ids;
        for (std::size_t i = 0; i < prompt.token_ids.size(); ++i) {
            std::size_t id = prompt.token_ids[i];
            if (i == 0 && !prompt.starts_with_entity && id != vocab.mask_id()) {
                id = vocab.id(lowercase_first(vocab.token(id)));
            }
            out.token_ids.push_back(id);
        }
        out.object_mask_position = prompt.object_mask_position + prefix_ids.size();
        if (prompt.subject_mask_position) {
            out.subject_mask_position = *prompt.subject_mask_position + prefix_ids.size();
        }
        if (out.token_ids.size() > max_seq_len) {
            throw std::runtime_error("augment_prompts: prompt exceeds max_seq_len");
        }
        return out;
    };

    return {prompt, prefixed(cfg.true_prefix_text, PromptVariant::TruePrefix),
            prefixed(cfg.false_prefix_text, PromptVariant::FalsePrefix)};
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Differentiable distribution over the vocabulary at the given masked
// position of a prompt.
inline Tensor distribution_graph(const ModelState& state, const Prompt& prompt,
                                 std::size_t position) {
    Tensor logits = forward_mlm(state, prompt.token_ids, {position});
    return softmax(reshape(logits, {logits.shape()[1]}));
}

inline Tensor object_distribution_graph(const ModelState& state, const Prompt& prompt) {
    return distribution_graph(state, prompt, prompt.object_mask_position);
}

// Plain-number distribution at the object mask.
inline std::vector<double> predict_distribution(const ModelState& state, const Prompt& prompt) {
    Tensor p = object_distribution_graph(state, prompt);
    return {p.data().begin(), p.data().end()};
}

inline std::vector<double> stable_softmax(const std::vector<double>& z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    std::vector<double> out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

// Weighted combination of the three augmented outputs, then a softmax over
// the combined scores. Inputs are probability vectors in Probabilities mode
// (the shipped default) and logit vectors in Logits mode.
inline std::vector<double> aggregate_augmented(const std::vector<double>& p_raw,
                                               const std::vector<double>& p_true,
                                               const std::vector<double>& p_false,
                                               const AugmentationConfig& cfg) {
    cfg.validate();
    if (p_raw.size() != p_true.size() || p_raw.size() != p_false.size()) {
        throw std::invalid_argument("aggregate_augmented: length mismatch");
    }
    std::vector<double> combined(p_raw.size());
    for (std::size_t i = 0; i < combined.size(); ++i) {
        combined[i] = cfg.w_raw * p_raw[i] + cfg.w_true * p_true[i] + cfg.w_false * p_false[i];
    }
    return stable_softmax(combined);
}

inline Tensor aggregate_augmented_graph(const Tensor& p_raw, const Tensor& p_true,
                                        const Tensor& p_false, const AugmentationConfig& cfg) {
    cfg.validate();
    Tensor combined = add(add(scale(p_raw, cfg.w_raw), scale(p_true, cfg.w_true)),
                          scale(p_false, cfg.w_false));
    return softmax(combined);
}

// ---------------------------------------------------------------------------
// Top-k candidate filtering
// ---------------------------------------------------------------------------

enum class StopwordFilterOrder { AfterTopK, BeforeTopK };

// Top-k indices by probability (ties broken by lower token id), minus the
// stopword set. The default order takes top-k first and then drops stopwords,
// so the result can be smaller than k.
inline std::vector<std::size_t> topk_filtered(const std::vector<double>& dist, std::size_t k,
                                              const std::set<std::size_t>& stopword_ids,
                                              StopwordFilterOrder order =
                                                  StopwordFilterOrder::AfterTopK) {
    if (k < 1) throw std::invalid_argument("topk_filtered: k must be >= 1");
    std::vector<std::size_t> indices;
    indices.reserve(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (order == StopwordFilterOrder::BeforeTopK && stopword_ids.count(i)) continue;
        indices.push_back(i);
    }
    std::stable_sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] > dist[b];
        return a < b;
    });
    if (indices.size() > k) indices.resize(k);
    if (order == StopwordFilterOrder::AfterTopK) {
        std::erase_if(indices, [&](std::size_t i) { return stopword_ids.count(i) > 0; });
    }
    return indices;
}

// ---------------------------------------------------------------------------
// Prediction records (predictions.jsonl)
// ---------------------------------------------------------------------------

inline std::size_t argmax_index(const std::vector<double>& dist) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
        if (dist[i] > dist[best]) best = i;
    }
    return best;
}

// 1-based rank of the gold token under descending probability, ties broken by
// lower token id first.
inline std::size_t gold_rank(const std::vector<double>& dist, std::size_t gold_id) {
    if (gold_id >= dist.size()) throw std::out_of_range("gold_rank: gold id out of range");
    std::size_t rank = 1;
    const double g = dist[gold_id];
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > g || (dist[i] == g && i < gold_id)) ++rank;
    }
    return rank;
}

struct PredictionRecord {
    std::string relation_id;
    std::string template_id;
    std::string sample_id;
    std::string variant;
    std::vector<std::pair<std::string, double>> topk;
    std::string argmax;
    std::string gold;
    std::size_t gold_rank = 0;
    std::vector<double> dist;  // full distribution; kept only where needed
};

inline PredictionRecord make_prediction_record(const Prompt& prompt,
                                               const std::vector<double>& dist,
                                               const Vocabulary& vocab, std::size_t topk_n,
                                               bool keep_full_dist) {
    PredictionRecord rec;
    rec.relation_id = prompt.relation_id;
    rec.template_id = prompt.template_id;
    rec.sample_id = prompt.subject;
    rec.variant = to_string(prompt.variant);
    rec.gold = prompt.gold_object;
    rec.argmax = vocab.token(argmax_index(dist));
    rec.gold_rank = gold_rank(dist, vocab.id(prompt.gold_object));

    const auto top = topk_filtered(dist, topk_n, {});
    for (std::size_t i : top) rec.topk.emplace_back(vocab.token(i), dist[i]);
    if (keep_full_dist) rec.dist = dist;
    return rec;
}

inline void write_prediction_records(const std::vector<PredictionRecord>& records,
                                     std::ostream& out) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["relation_id"] = r.relation_id;
        j["template_id"] = r.template_id;
        j["sample_id"] = r.sample_id;
        j["variant"] = r.variant;
        nlohmann::ordered_json topk = nlohmann::ordered_json::array();
        for (const auto& [tok, p] : r.topk) {
            topk.push_back(nlohmann::ordered_json::array({tok, p}));
        }
        j["topk"] = std::move(topk);
        j["argmax"] = r.argmax;
        j["gold"] = r.gold;
        j["gold_rank"] = r.gold_rank;
        if (!r.dist.empty()) j["dist"] = r.dist;
        out << j.dump() << '\n';
    }
}

inline std::vector<PredictionRecord> read_prediction_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<PredictionRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed JSON line: " + e.what());
        }
        PredictionRecord r;
        r.relation_id = j.at("relation_id").get<std::string>();
        r.template_id = j.at("template_id").get<std::string>();
        r.sample_id = j.at("sample_id").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        for (const auto& kv : j.at("topk")) {
            r.topk.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<double>());
        }
        r.argmax = j.at("argmax").get<std::string>();
        r.gold = j.at("gold").get<std::string>();
        r.gold_rank = j.at("gold_rank").get<std::size_t>();
        if (j.contains("dist")) r.dist = j.at("dist").get<std::vector<double>>();
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace uniark
