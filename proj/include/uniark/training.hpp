#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/model.hpp"
#include "uniark/objectives.hpp"
#include "uniark/probing.hpp"
#include "uniark/rng.hpp"
#include "uniark/world.hpp"

namespace uniark {

// Deterministic optimization loops: MLM pretraining over the synthetic
// corpus and per-mode tuning over base-template prompts. Given (world seed,
// model seed, train seed, config), every resulting parameter byte is fixed.

struct TrainConfig {
    std::string optimizer = "adam";  // "adam" | "sgd"
    double learning_rate_pretrain = 1e-3;
    // The tuning objective aggregates probabilities before its softmax, which
    // compresses gradients; 1e-2 keeps the short desk-scale tuning schedules
    // effective where 1e-3 leaves the adapters nearly inert.
    double learning_rate_tune = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t epochs_pretrain = 100;
    std::size_t epochs_tune = 20;
    std::uint64_t seed = 20;
    double gradient_clip_norm = 0.0;  // 0 disables clipping
    bool per_relation = true;
    std::size_t para_templates = 1;  // paraphrases sampled per relation (uniark_para)

    void validate() const {
        if (optimizer != "adam" && optimizer != "sgd") {
            throw std::invalid_argument("train config: unknown optimizer '" + optimizer + "'");
        }
        if (learning_rate_pretrain <= 0.0 || learning_rate_tune <= 0.0) {
            throw std::invalid_argument("train config: learning rates must be > 0");
        }
        if (epochs_pretrain < 1 || epochs_tune < 1 || batch_size < 1) {
            throw std::invalid_argument("train config: epochs and batch size must be >= 1");
        }
        if (gradient_clip_norm < 0.0) {
            throw std::invalid_argument("train config: gradient_clip_norm must be >= 0");
        }
    }
};

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<NamedParam*>& params) = 0;
};

class SgdOptimizer : public Optimizer {
public:
    explicit SgdOptimizer(double lr) : lr_(lr) {}

    void step(std::vector<NamedParam*>& params) override {
        for (auto* p : params) {
            if (!p->tensor.has_grad()) continue;
            auto data = p->tensor.mutable_data();
            const auto grad = p->tensor.grad();
            for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * grad[i];
        }
    }

private:
    double lr_;
};

class AdamOptimizer : public Optimizer {
public:
    AdamOptimizer(double lr, double beta1, double beta2, double eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<NamedParam*>& params) override {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->tensor.size(), 0.0);
                v_[i].assign(params[i]->tensor.size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            if (!p.tensor.has_grad()) continue;
            auto data = p.tensor.mutable_data();
            const auto grad = p.tensor.grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad[j] * grad[j];
                const double m_hat = m_[i][j] / bc1;
                const double v_hat = v_[i][j] / bc2;
                data[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, double lr) {
    if (cfg.optimizer == "sgd") return std::make_unique<SgdOptimizer>(lr);
    return std::make_unique<AdamOptimizer>(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
}

inline void clip_gradients(std::vector<NamedParam*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double total = 0.0;
    for (auto* p : params) {
        if (!p->tensor.has_grad()) continue;
        for (double g : p->tensor.grad()) total += g * g;
    }
    total = std::sqrt(total);
    if (total <= max_norm) return;
    const double factor = max_norm / total;
    for (auto* p : params) {
        if (!p->tensor.has_grad()) continue;
        for (auto& g : p->tensor.mutable_grad()) g *= factor;
    }
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct PretrainReport {
    std::vector<double> epoch_losses;
    std::size_t tokens_seen = 0;
    std::size_t tokens_masked = 0;

    double masked_fraction() const {
        return tokens_seen ? static_cast<double>(tokens_masked) / tokens_seen : 0.0;
    }
};

// Standard MLM pretraining: per sentence an expected 15% of tokens are
// replaced by the mask token (stochastic rounding of 0.15 * length, so the
// long-run fraction is unbiased; sentences that draw zero masks are skipped).
inline PretrainReport pretrain(ModelState& state, const std::vector<std::string>& corpus,
                               const Vocabulary& vocab, const TrainConfig& cfg,
                               std::ostream* log = nullptr) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
    if (state.has_adapters) throw std::invalid_argument("pretrain: adapters must not be present");
    constexpr double kMaskRate = 0.15;

    std::vector<NamedParam*> params = trainable_parameters(state, TuneMode::Finetune);
    auto optimizer = make_optimizer(cfg, cfg.learning_rate_pretrain);

    std::vector<std::vector<std::size_t>> encoded;
    encoded.reserve(corpus.size());
    for (const auto& line : corpus) encoded.push_back(vocab.encode_text(line));

    PretrainReport report;
    for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0x9E7A + epoch));
        std::vector<std::size_t> order(encoded.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            Tensor batch_loss;
            std::size_t batch_positions = 0;
            for (std::size_t b = start; b < end; ++b) {
                const auto& ids = encoded[order[b]];
                report.tokens_seen += ids.size();

                const double expected = kMaskRate * static_cast<double>(ids.size());
                std::size_t n_mask = static_cast<std::size_t>(expected);
                if (rng.bernoulli(expected - std::floor(expected))) ++n_mask;
                if (n_mask == 0) continue;

                std::vector<std::size_t> positions(ids.size());
                for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = i;
                rng.shuffle(positions);
                positions.resize(n_mask);
                std::sort(positions.begin(), positions.end());
                report.tokens_masked += n_mask;

                std::vector<std::size_t> masked = ids;
                for (std::size_t pos : positions) masked[pos] = vocab.mask_id();

                Tensor log_probs = log_softmax(forward_mlm(state, masked, positions));
                for (std::size_t i = 0; i < positions.size(); ++i) {
                    Tensor row = reshape(gather_rows(log_probs, {i}), {log_probs.shape()[1]});
                    Tensor nll = negative_log_likelihood(row, ids[positions[i]]);
                    batch_loss = batch_loss.defined() ? add(batch_loss, nll) : nll;
                    ++batch_positions;
                }
            }
            if (batch_positions == 0) continue;
            Tensor loss = scale(batch_loss, 1.0 / static_cast<double>(batch_positions));
            state.zero_grads();
            backward(loss);
            clip_gradients(params, cfg.gradient_clip_norm);
            optimizer->step(params);
            epoch_loss += loss.value();
            ++epoch_batches;
        }
        const double mean_loss = epoch_batches ? epoch_loss / epoch_batches : 0.0;
        report.epoch_losses.push_back(mean_loss);
        if (log) {
            nlohmann::ordered_json j;
            j["epoch"] = epoch;
            j["loss"] = mean_loss;
            (*log) << j.dump() << '\n';
        }
    }
    state.zero_grads();
    state.mode = "pretrained";
    return report;
}

// ---------------------------------------------------------------------------
// Tuning
// ---------------------------------------------------------------------------

inline LossMode loss_mode_for(TuneMode mode) {
    switch (mode) {
        case TuneMode::UniArk: return LossMode::UniArk;
        case TuneMode::UniArkPara: return LossMode::UniArkPara;
        default: return LossMode::PlainMlm;
    }
}

// Stopword ids for the max-entropy filter: the relation's stopword tokens
// plus the special tokens, which are never valid answers.
inline std::set<std::size_t> stopword_ids_for(const Relation& rel, const Vocabulary& vocab) {
    std::set<std::size_t> ids{vocab.pad_id(), vocab.mask_id()};
    for (const auto& w : rel.stopwords) {
        if (vocab.contains(w)) ids.insert(vocab.id(w));
    }
    return ids;
}

// Tunes a copy of `state` on the base-template prompts of the listed
// relations (typically a single relation; pass several for the shared-state
// mode). Adapter-based modes expect insert_adapters to have been applied.
inline ModelState tune(const ModelState& state, const FactWorld& world, const Vocabulary& vocab,
                       const std::vector<std::string>& relation_ids, TuneMode mode,
                       const LossConfig& loss_cfg, const AugmentationConfig& aug_cfg,
                       const TrainConfig& train_cfg, std::ostream* log = nullptr) {
    train_cfg.validate();
    loss_cfg.validate();

    ModelState tuned = deep_copy(state);
    tuned.mode = to_string(mode);
    if (mode == TuneMode::None) return tuned;

    if (selection_for(mode) == ParamSelection::AdaptersOnly && !tuned.has_adapters) {
        throw std::runtime_error("tune: mode '" + to_string(mode) +
                                 "' requires adapters (run insert_adapters first)");
    }
    if (mode == TuneMode::Finetune) {
        for (auto& p : tuned.params) p.tensor.set_requires_grad(true);
    }

    std::vector<NamedParam*> params = trainable_parameters(tuned, mode);
    auto optimizer = make_optimizer(train_cfg, train_cfg.learning_rate_tune);
    const LossMode loss_mode = loss_mode_for(mode);

    // Assemble the sample list: every triple of every listed relation,
    // verbalized through the relation's base template only.
    std::map<std::string, std::set<std::size_t>> stopwords;
    std::map<std::string, std::vector<const TemplateSpec*>> paras;
    std::vector<TuneSample> samples;
    Rng para_rng(derive_seed(train_cfg.seed, 0x9A8A));
    for (const auto& rel_id : relation_ids) {
        const Relation& rel = world.relation(rel_id);
        stopwords[rel_id] = stopword_ids_for(rel, vocab);
        const TemplateSpec& base = world.base_template(rel_id);

        if (loss_mode == LossMode::UniArkPara && train_cfg.para_templates > 0) {
            std::vector<const TemplateSpec*> candidates;
            for (const auto& tpl : world.templates) {
                if (tpl.relation_id == rel_id && !tpl.is_base() &&
                    tpl.split == TemplateSplit::Train &&
                    tpl.length_class == LengthClass::Normal) {
                    candidates.push_back(&tpl);
                }
            }
            para_rng.shuffle(candidates);
            if (candidates.size() > train_cfg.para_templates) {
                candidates.resize(train_cfg.para_templates);
            }
            paras[rel_id] = candidates;
        }

        for (const auto* triple : world.triples_of(rel_id)) {
            TuneSample s;
            s.triple = triple;
            s.base_template = &base;
            s.stopword_ids = &stopwords[rel_id];
            if (auto it = paras.find(rel_id); it != paras.end()) s.para_templates = it->second;
            samples.push_back(s);
        }
    }
    if (samples.empty()) throw std::runtime_error("tune: no samples for the given relations");

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs_tune; ++epoch) {
        Rng rng(derive_seed(train_cfg.seed, 0x7E5E + epoch));
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            const std::size_t end = std::min(start + train_cfg.batch_size, order.size());
            std::vector<TuneSample> batch;
            for (std::size_t b = start; b < end; ++b) batch.push_back(samples[order[b]]);

            auto breakdown = total_loss(batch, tuned, vocab, loss_cfg, aug_cfg, loss_mode);
            tuned.zero_grads();
            backward(breakdown.total);
            clip_gradients(params, train_cfg.gradient_clip_norm);
            optimizer->step(params);

            if (log) {
                nlohmann::ordered_json j;
                j["step"] = step;
                j["mode"] = to_string(mode);
                j["loss_total"] = breakdown.total.value();
                j["loss_mlm"] = breakdown.loss_mlm;
                j["entropy_bits_subject_masked"] = breakdown.h_subject_bits;
                j["entropy_bits_object_masked"] = breakdown.h_object_bits;
                j["loss_kld"] = breakdown.loss_kld;
                if (breakdown.clamped) j["clamped"] = true;
                (*log) << j.dump() << '\n';
            }
            ++step;
        }
    }
    tuned.zero_grads();
    return tuned;
}

}  // namespace uniark
