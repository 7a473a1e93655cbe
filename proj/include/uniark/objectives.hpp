#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniark/model.hpp"
#include "uniark/probing.hpp"
#include "uniark/tensor.hpp"

namespace uniark {

// Training losses: masked-LM cross-entropy over the (optionally augmented)
// prediction distribution, the max-entropy debiasing term over top-k
// candidates of template-only prompts, and the optional KL alignment loss
// against paraphrase templates.

constexpr double kProbFloor = 1e-12;

// The printed form of the max-entropy term is +lambda * H, which a minimizer
// would drive DOWN; Maximize flips the sign so that minimizing the total loss
// raises the retained-candidate entropy. LiteralEq7 keeps the printed sign
// for fidelity experiments.
enum class EntropySignMode { Maximize, LiteralEq7 };

enum class MaxEntropyTarget { SubjectMasked, ObjectMasked, Both };

inline std::string to_string(EntropySignMode m) {
    return m == EntropySignMode::Maximize ? "maximize" : "literal";
}
inline std::string to_string(MaxEntropyTarget t) {
    switch (t) {
        case MaxEntropyTarget::SubjectMasked: return "subject_masked";
        case MaxEntropyTarget::ObjectMasked: return "object_masked";
        case MaxEntropyTarget::Both: return "both";
    }
    throw std::logic_error("unreachable");
}

inline EntropySignMode entropy_sign_mode_from_string(const std::string& s) {
    if (s == "maximize") return EntropySignMode::Maximize;
    if (s == "literal" || s == "literal_eq") return EntropySignMode::LiteralEq7;
    throw std::invalid_argument("unknown entropy sign mode '" + s + "'");
}

inline MaxEntropyTarget max_entropy_target_from_string(const std::string& s) {
    if (s == "subject_masked") return MaxEntropyTarget::SubjectMasked;
    if (s == "object_masked") return MaxEntropyTarget::ObjectMasked;
    if (s == "both") return MaxEntropyTarget::Both;
    throw std::invalid_argument("unknown max-entropy target '" + s + "'");
}

struct LossConfig {
    double lambda_me = 0.2;
    double lambda_kld = 0.2;
    std::size_t top_k = 50;
    EntropySignMode entropy_sign_mode = EntropySignMode::Maximize;
    MaxEntropyTarget apply_me_to = MaxEntropyTarget::Both;
    StopwordFilterOrder stopword_filter_order = StopwordFilterOrder::AfterTopK;

    void validate() const {
        if (lambda_me < 0.0 || lambda_kld < 0.0) {
            throw std::invalid_argument("loss config: lambda values must be >= 0");
        }
        if (top_k < 1) throw std::invalid_argument("loss config: top_k must be >= 1");
    }

    // Toy vocabularies clamp the candidate count so "top k" stays selective.
    std::size_t effective_top_k(std::size_t vocab_size) const {
        return std::max<std::size_t>(1, std::min(top_k, vocab_size / 4));
    }
};

struct MlmLossResult {
    Tensor loss;
    bool clamped = false;  // gold probability hit the floor
};

// -log of the gold-token probability of an already-normalized distribution
// (natural log), floored at kProbFloor.
inline MlmLossResult mlm_loss(const Tensor& dist, std::size_t gold_index) {
    MlmLossResult out;
    out.clamped = dist.at(gold_index) < kProbFloor;
    out.loss = neg(log_floor(pick(dist, gold_index), kProbFloor));
    return out;
}

// Entropy (bits) of the distribution restricted to its retained top-k
// candidates, renormalized to sum to 1 over that set.
inline Tensor retained_candidate_entropy(const Tensor& dist, std::size_t k,
                                         const std::set<std::size_t>& stopword_ids,
                                         StopwordFilterOrder order) {
    const std::vector<double> values(dist.data().begin(), dist.data().end());
    const auto retained = topk_filtered(values, k, stopword_ids, order);
    if (retained.empty()) {
        throw std::runtime_error("max entropy loss: empty candidate set after filtering");
    }
    Tensor picked = gather(dist, retained);
    Tensor q = divide_by_scalar(picked, sum(picked));
    return entropy_bits(q);
}

struct MaxEntropyResult {
    Tensor contribution;  // scalar added to the total loss (sign per mode)
    double h_subject_bits = 0.0;  // entropy read at the object slot (P(o|t))
    double h_object_bits = 0.0;   // entropy read at the subject slot (P(s|t))
};

// Entropy terms over the template-only prompt. The prompt must be built with
// both slots masked (build_prompt BothMasked); the subject-masked term reads
// the object slot and the object-masked term reads the subject slot.
inline MaxEntropyResult max_entropy_loss(const ModelState& state, const Prompt& masked_prompt,
                                         const LossConfig& cfg,
                                         const std::set<std::size_t>& stopword_ids) {
    cfg.validate();
    const auto target = cfg.apply_me_to;
    const bool want_subject_term = target != MaxEntropyTarget::ObjectMasked;
    const bool want_object_term = target != MaxEntropyTarget::SubjectMasked;
    if (want_object_term && !masked_prompt.subject_mask_position) {
        throw std::invalid_argument("max_entropy_loss: prompt has no masked subject slot");
    }

    std::vector<std::size_t> positions;
    if (want_subject_term) positions.push_back(masked_prompt.object_mask_position);
    if (want_object_term) positions.push_back(*masked_prompt.subject_mask_position);

    Tensor logits = forward_mlm(state, masked_prompt.token_ids, positions);
    const std::size_t vocab = logits.shape()[1];
    const std::size_t k = cfg.effective_top_k(vocab);

    MaxEntropyResult out;
    Tensor h_total;
    std::size_t row = 0;
    if (want_subject_term) {
        Tensor p = softmax(reshape(gather_rows(logits, {row++}), {vocab}));
        Tensor h = retained_candidate_entropy(p, k, stopword_ids, cfg.stopword_filter_order);
        out.h_subject_bits = h.value();
        h_total = h;
    }
    if (want_object_term) {
        Tensor p = softmax(reshape(gather_rows(logits, {row++}), {vocab}));
        Tensor h = retained_candidate_entropy(p, k, stopword_ids, cfg.stopword_filter_order);
        out.h_object_bits = h.value();
        h_total = h_total.defined() ? add(h_total, h) : h;
    }

    const double sign = cfg.entropy_sign_mode == EntropySignMode::Maximize ? -1.0 : 1.0;
    out.contribution = scale(h_total, sign * cfg.lambda_me);
    return out;
}

// lambda_kld * KL(dist_base || dist_paraphrase), natural log, floored.
inline Tensor para_kld_loss(const Tensor& dist_base, const Tensor& dist_paraphrase,
                            double lambda_kld) {
    detail::check_same_shape(dist_base, dist_paraphrase, "para_kld_loss");
    Tensor kl = sum(mul(dist_base, sub(log_floor(dist_base, kProbFloor),
                                       log_floor(dist_paraphrase, kProbFloor))));
    return scale(kl, lambda_kld);
}

// ---------------------------------------------------------------------------
// Batch total loss
// ---------------------------------------------------------------------------

enum class LossMode { PlainMlm, UniArk, UniArkPara };

inline std::string to_string(LossMode m) {
    switch (m) {
        case LossMode::PlainMlm: return "plain_mlm";
        case LossMode::UniArk: return "uniark";
        case LossMode::UniArkPara: return "uniark_para";
    }
    throw std::logic_error("unreachable");
}

struct TuneSample {
    const FactTriple* triple = nullptr;
    const TemplateSpec* base_template = nullptr;
    std::vector<const TemplateSpec*> para_templates;     // uniark_para only
    const std::set<std::size_t>* stopword_ids = nullptr; // relation stopwords + specials
};

struct TotalLossBreakdown {
    Tensor total;  // scalar; batch mean
    double loss_mlm = 0.0;
    double h_subject_bits = 0.0;
    double h_object_bits = 0.0;
    double loss_kld = 0.0;
    bool clamped = false;
};

// Composes the per-sample losses for the requested mode and returns the batch
// mean together with plain-number terms for the training log.
inline TotalLossBreakdown total_loss(const std::vector<TuneSample>& batch,
                                     const ModelState& state, const Vocabulary& vocab,
                                     const LossConfig& loss_cfg,
                                     const AugmentationConfig& aug_cfg, LossMode mode) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    loss_cfg.validate();
    if (mode != LossMode::PlainMlm) aug_cfg.validate();

    static const std::set<std::size_t> kNoStopwords;
    TotalLossBreakdown out;
    Tensor total;
    std::size_t me_terms = 0;
    std::size_t kld_terms = 0;

    for (const auto& sample : batch) {
        if (!sample.triple || !sample.base_template) {
            throw std::invalid_argument("total_loss: incomplete sample");
        }
        const std::size_t gold_id = vocab.id(sample.triple->object);
        Prompt original =
            build_prompt(*sample.base_template, *sample.triple, PromptVariant::Original, vocab);

        Tensor sample_loss;
        Tensor raw_dist;  // graph distribution of the raw prompt, when built

        if (mode == LossMode::PlainMlm || !aug_cfg.active()) {
            // Plain cross-entropy at the object slot. With both augmentation
            // weights at zero the augmented objective degenerates to exactly
            // this, so the branch is shared.
            Tensor logits = forward_mlm(state, original.token_ids, {original.object_mask_position});
            Tensor log_probs = reshape(log_softmax(logits), {logits.shape()[1]});
            sample_loss = negative_log_likelihood(log_probs, gold_id);
            out.loss_mlm += sample_loss.value();
        } else {
            const auto prompts =
                augment_prompts(original, aug_cfg, vocab, state.config.max_seq_len);
            auto scores = [&](const Prompt& p) {
                Tensor logits = forward_mlm(state, p.token_ids, {p.object_mask_position});
                Tensor row = reshape(logits, {logits.shape()[1]});
                return aug_cfg.mode == AggregationMode::Probabilities ? softmax(row) : row;
            };
            Tensor s_raw = scores(prompts[0]);
            Tensor aggregated = aggregate_augmented_graph(s_raw, scores(prompts[1]),
                                                          scores(prompts[2]), aug_cfg);
            raw_dist =
                aug_cfg.mode == AggregationMode::Probabilities ? s_raw : softmax(s_raw);
            auto mlm = mlm_loss(aggregated, gold_id);
            out.clamped = out.clamped || mlm.clamped;
            sample_loss = mlm.loss;
            out.loss_mlm += sample_loss.value();
        }

        if (mode != LossMode::PlainMlm && loss_cfg.lambda_me > 0.0) {
            Prompt masked = build_prompt(*sample.base_template, *sample.triple,
                                         PromptVariant::BothMasked, vocab);
            const auto& stopwords = sample.stopword_ids ? *sample.stopword_ids : kNoStopwords;
            auto me = max_entropy_loss(state, masked, loss_cfg, stopwords);
            out.h_subject_bits += me.h_subject_bits;
            out.h_object_bits += me.h_object_bits;
            ++me_terms;
            sample_loss = add(sample_loss, me.contribution);
        }

        if (mode == LossMode::UniArkPara && loss_cfg.lambda_kld > 0.0 &&
            !sample.para_templates.empty()) {
            if (!raw_dist.defined()) {
                raw_dist = object_distribution_graph(state, original);
            }
            for (const auto* para : sample.para_templates) {
                Prompt para_prompt =
                    build_prompt(*para, *sample.triple, PromptVariant::Original, vocab);
                Tensor para_dist = object_distribution_graph(state, para_prompt);
                Tensor kld = para_kld_loss(raw_dist, para_dist, loss_cfg.lambda_kld);
                kld = scale(kld, 1.0 / static_cast<double>(sample.para_templates.size()));
                out.loss_kld += kld.value();
                ++kld_terms;
                sample_loss = add(sample_loss, kld);
            }
        }

        total = total.defined() ? add(total, sample_loss) : sample_loss;
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    out.total = scale(total, inv);
    out.loss_mlm *= inv;
    if (me_terms > 0) {
        out.h_subject_bits /= static_cast<double>(me_terms);
        out.h_object_bits /= static_cast<double>(me_terms);
    }
    if (kld_terms > 0) out.loss_kld /= static_cast<double>(batch.size());
    return out;
}

}  // namespace uniark
