#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/bleu.hpp"
#include "uniark/metrics.hpp"
#include "uniark/probing.hpp"
#include "uniark/stats.hpp"
#include "uniark/world.hpp"

namespace uniark {

// Turns a predictions.jsonl stream plus the world files into a MetricsReport
// (JSON + markdown). Averaging convention: sample -> relation -> aggregate,
// with consistency computed over N-M-filtered relations only.

enum class KldDirection { MaskedVsOriginal, OriginalVsMasked };

struct MetricSelection {
    bool quality = true;      // hit@1 and macro-F1 per template scope
    bool bias = true;         // ct_hit1, KLD, Pearson-R
    bool consistency = true;  // raw/all/acc consistency
    bool diversity = true;    // pairwise BLEU
};

struct EvalOptions {
    MetricSelection select;
    KldDirection kld_direction = KldDirection::MaskedVsOriginal;
    std::vector<std::string> exclude_relations;  // semantic-overlap style list
};

struct ScopedValue {
    double base = 0.0;  // the single seen-at-tuning template
    double id = 0.0;    // train-tagged normal paraphrases
    double ood = 0.0;   // short + long + test-tagged normals
};

struct RelationMetrics {
    std::string relation_id;
    ScopedValue hit1;
    ScopedValue macro_f1;
    double ct_hit1 = 0.0;
    double kld_bits = 0.0;
    double pearson_r_all = 0.0;
    double pearson_r_wrong = 0.0;
    bool consistency_excluded = false;
    double raw_cst = 0.0;
    double all_cst = 0.0;
    double acc_cst = 0.0;
    std::array<double, 4> pairwise_bleu{0.0, 0.0, 0.0, 0.0};
};

struct Provenance {
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::string mode;
    std::string tool_version;
};

struct MetricsReport {
    Provenance provenance;
    MetricSelection select;
    std::vector<RelationMetrics> relations;  // relation_id ascending
    RelationMetrics aggregate;               // mean over relations
};

namespace detail {

enum class TemplateScope { Base, Id, Ood };

inline TemplateScope scope_of(const TemplateSpec& tpl) {
    if (tpl.is_base()) return TemplateScope::Base;
    if (tpl.length_class == LengthClass::Normal && tpl.split == TemplateSplit::Train) {
        return TemplateScope::Id;
    }
    return TemplateScope::Ood;
}

}  // namespace detail

inline MetricsReport build_report(const std::vector<PredictionRecord>& records,
                                  const FactWorld& world, const EvalOptions& options,
                                  const Provenance& provenance) {
    MetricsReport report;
    report.provenance = provenance;
    report.select = options.select;

    const auto eligible = filter_nm_relations(world, options.exclude_relations);
    std::set<std::string> eligible_ids;
    for (const auto& r : eligible) eligible_ids.insert(r.relation_id);

    // Group records: original by (template, sample) and subject_masked by sample.
    struct RelationRecords {
        std::vector<PredictionRecord> original;
        std::vector<PredictionRecord> subject_masked;
    };
    std::map<std::string, RelationRecords> by_relation;
    for (const auto& rec : records) {
        auto& bucket = by_relation[rec.relation_id];
        if (rec.variant == "original") {
            bucket.original.push_back(rec);
        } else if (rec.variant == "subject_masked") {
            bucket.subject_masked.push_back(rec);
        }
    }

    std::vector<std::string> gaps;
    std::map<std::string, const TemplateSpec*> template_index;
    for (const auto& tpl : world.templates) template_index[tpl.template_id] = &tpl;

    for (const auto& rel : world.relations) {
        RelationMetrics m;
        m.relation_id = rel.relation_id;
        auto it = by_relation.find(rel.relation_id);
        if (it == by_relation.end()) {
            gaps.push_back(rel.relation_id + ": no prediction records");
            report.relations.push_back(m);
            continue;
        }
        const auto& bucket = it->second;

        if (options.select.quality) {
            std::map<detail::TemplateScope, std::vector<PredictionRecord>> scoped;
            for (const auto& rec : bucket.original) {
                auto ti = template_index.find(rec.template_id);
                if (ti == template_index.end()) {
                    throw std::runtime_error("record references unknown template '" +
                                             rec.template_id + "'");
                }
                scoped[detail::scope_of(*ti->second)].push_back(rec);
            }
            auto fill = [&](detail::TemplateScope scope, double& hit_out, double& f1_out,
                            const char* label) {
                auto si = scoped.find(scope);
                if (si == scoped.end() || si->second.empty()) {
                    gaps.push_back(rel.relation_id + ": no original records for scope " + label);
                    return;
                }
                hit_out = hit_at_1(si->second);
                f1_out = macro_f1(si->second);
            };
            fill(detail::TemplateScope::Base, m.hit1.base, m.macro_f1.base, "base");
            fill(detail::TemplateScope::Id, m.hit1.id, m.macro_f1.id, "id");
            fill(detail::TemplateScope::Ood, m.hit1.ood, m.macro_f1.ood, "ood");
        }

        if (options.select.bias) {
            if (bucket.subject_masked.empty()) {
                gaps.push_back(rel.relation_id + ": no subject_masked records");
            } else {
                m.ct_hit1 = ct_hit1(bucket.subject_masked);

                // KLD over samples with stored full distributions for both
                // the base-template original and subject-masked prompts.
                std::map<std::string, const PredictionRecord*> orig_by_sample;
                for (const auto& rec : bucket.original) {
                    auto ti = template_index.find(rec.template_id);
                    if (ti != template_index.end() && ti->second->is_base() &&
                        !rec.dist.empty()) {
                        orig_by_sample[rec.sample_id] = &rec;
                    }
                }
                double kld_sum = 0.0;
                std::size_t kld_n = 0;
                std::vector<double> rank_masked, rank_orig, rank_masked_wrong, rank_orig_wrong;
                for (const auto& masked : bucket.subject_masked) {
                    auto oi = orig_by_sample.find(masked.sample_id);
                    if (oi == orig_by_sample.end()) continue;
                    const auto& orig = *oi->second;
                    if (!masked.dist.empty()) {
                        kld_sum += options.kld_direction == KldDirection::MaskedVsOriginal
                                       ? kl_divergence_bits(masked.dist, orig.dist)
                                       : kl_divergence_bits(orig.dist, masked.dist);
                        ++kld_n;
                    }
                    rank_orig.push_back(static_cast<double>(orig.gold_rank));
                    rank_masked.push_back(static_cast<double>(masked.gold_rank));
                    if (orig.argmax != orig.gold) {
                        rank_orig_wrong.push_back(static_cast<double>(orig.gold_rank));
                        rank_masked_wrong.push_back(static_cast<double>(masked.gold_rank));
                    }
                }
                if (kld_n == 0) {
                    gaps.push_back(rel.relation_id + ": no stored distributions for KLD");
                } else {
                    m.kld_bits = kld_sum / static_cast<double>(kld_n);
                }
                if (rank_orig.size() < 2) {
                    gaps.push_back(rel.relation_id + ": fewer than 2 rank pairs for Pearson-R");
                } else {
                    m.pearson_r_all = pearson_r(rank_orig, rank_masked);
                    // Too few wrong cases degenerate to 0 by convention.
                    m.pearson_r_wrong = rank_orig_wrong.size() >= 2
                                            ? pearson_r(rank_orig_wrong, rank_masked_wrong)
                                            : 0.0;
                }
            }
        }

        m.consistency_excluded = !eligible_ids.count(rel.relation_id);
        if (options.select.consistency && !m.consistency_excluded) {
            // Per sample: argmax per paraphrase template (sorted by template
            // id for determinism), compared pairwise and against the base.
            std::map<std::string, std::map<std::string, const PredictionRecord*>> by_sample;
            std::map<std::string, const PredictionRecord*> base_by_sample;
            for (const auto& rec : bucket.original) {
                auto ti = template_index.find(rec.template_id);
                if (ti == template_index.end()) continue;
                if (ti->second->is_base()) {
                    base_by_sample[rec.sample_id] = &rec;
                } else {
                    by_sample[rec.sample_id][rec.template_id] = &rec;
                }
            }
            double raw_sum = 0.0, all_sum = 0.0, acc_sum = 0.0;
            std::size_t n_samples = 0;
            for (const auto& [sample_id, preds] : by_sample) {
                if (preds.size() < 2) continue;
                std::vector<std::string> argmaxes;
                std::string gold;
                for (const auto& [tid, rec] : preds) {
                    argmaxes.push_back(rec->argmax);
                    gold = rec->gold;
                }
                all_sum += consistency_all(argmaxes);
                acc_sum += consistency_acc(argmaxes, gold);
                auto bi = base_by_sample.find(sample_id);
                if (bi != base_by_sample.end()) {
                    raw_sum += consistency_raw(bi->second->argmax, argmaxes);
                }
                ++n_samples;
            }
            if (n_samples == 0) {
                gaps.push_back(rel.relation_id + ": no samples with >= 2 paraphrase records");
            } else {
                m.raw_cst = raw_sum / static_cast<double>(n_samples);
                m.all_cst = all_sum / static_cast<double>(n_samples);
                m.acc_cst = acc_sum / static_cast<double>(n_samples);
            }
        }

        if (options.select.diversity) {
            std::vector<std::string> texts;
            for (const auto& tpl : world.templates) {
                if (tpl.relation_id == rel.relation_id) texts.push_back(tpl.text);
            }
            if (texts.size() < 2) {
                gaps.push_back(rel.relation_id + ": fewer than 2 templates for BLEU");
            } else {
                const auto values = pairwise_bleu(texts, 4);
                for (std::size_t i = 0; i < 4; ++i) m.pairwise_bleu[i] = values[i];
            }
        }

        report.relations.push_back(m);
    }

    if (!gaps.empty()) {
        std::string msg = "metrics missing for some relations:";
        for (const auto& g : gaps) msg += "\n  " + g;
        throw std::runtime_error(msg);
    }

    std::sort(report.relations.begin(), report.relations.end(),
              [](const RelationMetrics& a, const RelationMetrics& b) {
                  return a.relation_id < b.relation_id;
              });

    // Aggregate: mean over relations; consistency over eligible relations only.
    RelationMetrics& agg = report.aggregate;
    agg.relation_id = "aggregate";
    const double n_rel = static_cast<double>(report.relations.size());
    std::size_t n_eligible = 0;
    for (const auto& m : report.relations) {
        agg.hit1.base += m.hit1.base / n_rel;
        agg.hit1.id += m.hit1.id / n_rel;
        agg.hit1.ood += m.hit1.ood / n_rel;
        agg.macro_f1.base += m.macro_f1.base / n_rel;
        agg.macro_f1.id += m.macro_f1.id / n_rel;
        agg.macro_f1.ood += m.macro_f1.ood / n_rel;
        agg.ct_hit1 += m.ct_hit1 / n_rel;
        agg.kld_bits += m.kld_bits / n_rel;
        agg.pearson_r_all += m.pearson_r_all / n_rel;
        agg.pearson_r_wrong += m.pearson_r_wrong / n_rel;
        for (std::size_t i = 0; i < 4; ++i) agg.pairwise_bleu[i] += m.pairwise_bleu[i] / n_rel;
        if (!m.consistency_excluded) {
            agg.raw_cst += m.raw_cst;
            agg.all_cst += m.all_cst;
            agg.acc_cst += m.acc_cst;
            ++n_eligible;
        }
    }
    if (n_eligible > 0) {
        agg.raw_cst /= static_cast<double>(n_eligible);
        agg.all_cst /= static_cast<double>(n_eligible);
        agg.acc_cst /= static_cast<double>(n_eligible);
    }
    agg.consistency_excluded = n_eligible == 0;
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json relation_to_json(const RelationMetrics& m,
                                               const MetricSelection& select) {
    nlohmann::ordered_json j;
    j["relation_id"] = m.relation_id;
    if (select.quality) {
        j["hit1"] = {{"base", m.hit1.base}, {"id", m.hit1.id}, {"ood", m.hit1.ood}};
        j["macro_f1"] = {{"base", m.macro_f1.base}, {"id", m.macro_f1.id}, {"ood", m.macro_f1.ood}};
    }
    if (select.bias) {
        j["ct_hit1"] = m.ct_hit1;
        j["kld_bits"] = m.kld_bits;
        j["pearson_r_all"] = m.pearson_r_all;
        j["pearson_r_wrong"] = m.pearson_r_wrong;
    }
    if (select.consistency) {
        j["consistency_excluded"] = m.consistency_excluded;
        if (!m.consistency_excluded) {
            j["raw_cst"] = m.raw_cst;
            j["all_cst"] = m.all_cst;
            j["acc_cst"] = m.acc_cst;
        }
    }
    if (select.diversity) j["pairwise_bleu"] = m.pairwise_bleu;
    return j;
}

inline void relation_from_json(const nlohmann::json& j, RelationMetrics& m) {
    m.relation_id = j.at("relation_id").get<std::string>();
    if (j.contains("hit1")) {
        m.hit1 = {j["hit1"].at("base"), j["hit1"].at("id"), j["hit1"].at("ood")};
        m.macro_f1 = {j["macro_f1"].at("base"), j["macro_f1"].at("id"), j["macro_f1"].at("ood")};
    }
    if (j.contains("ct_hit1")) {
        m.ct_hit1 = j["ct_hit1"];
        m.kld_bits = j["kld_bits"];
        m.pearson_r_all = j["pearson_r_all"];
        m.pearson_r_wrong = j["pearson_r_wrong"];
    }
    if (j.contains("consistency_excluded")) {
        m.consistency_excluded = j["consistency_excluded"];
        if (!m.consistency_excluded) {
            m.raw_cst = j["raw_cst"];
            m.all_cst = j["all_cst"];
            m.acc_cst = j["acc_cst"];
        }
    }
    if (j.contains("pairwise_bleu")) {
        const auto v = j["pairwise_bleu"].get<std::vector<double>>();
        for (std::size_t i = 0; i < 4 && i < v.size(); ++i) m.pairwise_bleu[i] = v[i];
    }
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["provenance"] = {{"config_hash", report.provenance.config_hash},
                       {"seeds", report.provenance.seeds},
                       {"mode", report.provenance.mode},
                       {"tool_version", report.provenance.tool_version}};
    j["conventions"] = {
        {"averaging", "sample -> relation -> aggregate"},
        {"macro_f1", "per-class F1 over gold-object classes, macro over classes"},
        {"kld", "bits; direction subject-masked vs original unless configured otherwise"},
        {"consistency", "N-M relations and the exclusion list are omitted"},
        {"pearson_degenerate", "zero-variance or <2-pair rank sets report 0"}};
    nlohmann::ordered_json rels = nlohmann::ordered_json::array();
    for (const auto& m : report.relations) {
        rels.push_back(detail::relation_to_json(m, report.select));
    }
    j["relations"] = std::move(rels);
    j["aggregate"] = detail::relation_to_json(report.aggregate, report.select);
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport report;
    report.provenance.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    report.provenance.seeds = j.at("provenance").at("seeds").get<std::vector<std::uint64_t>>();
    report.provenance.mode = j.at("provenance").at("mode").get<std::string>();
    report.provenance.tool_version = j.at("provenance").at("tool_version").get<std::string>();
    for (const auto& rj : j.at("relations")) {
        RelationMetrics m;
        detail::relation_from_json(rj, m);
        report.relations.push_back(std::move(m));
    }
    detail::relation_from_json(j.at("aggregate"), report.aggregate);
    const auto& first = j.at("relations").at(0);
    report.select.quality = first.contains("hit1");
    report.select.bias = first.contains("ct_hit1");
    report.select.consistency = first.contains("consistency_excluded");
    report.select.diversity = first.contains("pairwise_bleu");
    return report;
}

inline std::string report_to_markdown(const MetricsReport& report) {
    std::ostringstream out;
    out << "# Metrics report\n\n";
    out << "- mode: " << report.provenance.mode << "\n";
    out << "- seeds:";
    for (auto s : report.provenance.seeds) out << ' ' << s;
    out << "\n- config_hash: " << report.provenance.config_hash << "\n\n";

    auto fmt = [](double v) {
        std::ostringstream s;
        s.precision(4);
        s << std::fixed << v;
        return s.str();
    };

    out << "| relation | hit1 base | hit1 id | hit1 ood | f1 base | f1 id | f1 ood | ct_hit1 "
           "| kld_bits | r_all | r_wrong | raw_cst | all_cst | acc_cst | bleu1 | bleu2 | bleu3 "
           "| bleu4 |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
    auto row = [&](const RelationMetrics& m) {
        out << "| " << m.relation_id << " | " << fmt(m.hit1.base) << " | " << fmt(m.hit1.id)
            << " | " << fmt(m.hit1.ood) << " | " << fmt(m.macro_f1.base) << " | "
            << fmt(m.macro_f1.id) << " | " << fmt(m.macro_f1.ood) << " | " << fmt(m.ct_hit1)
            << " | " << fmt(m.kld_bits) << " | " << fmt(m.pearson_r_all) << " | "
            << fmt(m.pearson_r_wrong) << " | ";
        if (m.consistency_excluded) {
            out << "n/a | n/a | n/a | ";
        } else {
            out << fmt(m.raw_cst) << " | " << fmt(m.all_cst) << " | " << fmt(m.acc_cst) << " | ";
        }
        out << fmt(m.pairwise_bleu[0]) << " | " << fmt(m.pairwise_bleu[1]) << " | "
            << fmt(m.pairwise_bleu[2]) << " | " << fmt(m.pairwise_bleu[3]) << " |\n";
    };
    for (const auto& m : report.relations) row(m);
    row(report.aggregate);
    return out.str();
}

// ---------------------------------------------------------------------------
// Report comparison (delta table + significance tests)
// ---------------------------------------------------------------------------

struct MetricComparison {
    std::string metric;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double delta = 0.0;  // a - b
    double t_test_p = 1.0;
    double wilcoxon_p = 1.0;
    std::size_t n = 0;
};

inline std::vector<MetricComparison> compare_reports(const MetricsReport& a,
                                                     const MetricsReport& b) {
    std::map<std::string, const RelationMetrics*> b_index;
    for (const auto& m : b.relations) b_index[m.relation_id] = &m;

    using Getter = std::function<std::optional<double>(const RelationMetrics&)>;
    std::vector<std::pair<std::string, Getter>> metrics = {
        {"hit1.base", [](const RelationMetrics& m) { return std::optional<double>(m.hit1.base); }},
        {"hit1.id", [](const RelationMetrics& m) { return std::optional<double>(m.hit1.id); }},
        {"hit1.ood", [](const RelationMetrics& m) { return std::optional<double>(m.hit1.ood); }},
        {"macro_f1.base",
         [](const RelationMetrics& m) { return std::optional<double>(m.macro_f1.base); }},
        {"macro_f1.id",
         [](const RelationMetrics& m) { return std::optional<double>(m.macro_f1.id); }},
        {"macro_f1.ood",
         [](const RelationMetrics& m) { return std::optional<double>(m.macro_f1.ood); }},
        {"ct_hit1", [](const RelationMetrics& m) { return std::optional<double>(m.ct_hit1); }},
        {"kld_bits", [](const RelationMetrics& m) { return std::optional<double>(m.kld_bits); }},
        {"raw_cst",
         [](const RelationMetrics& m) {
             return m.consistency_excluded ? std::nullopt : std::optional<double>(m.raw_cst);
         }},
        {"all_cst",
         [](const RelationMetrics& m) {
             return m.consistency_excluded ? std::nullopt : std::optional<double>(m.all_cst);
         }},
        {"acc_cst",
         [](const RelationMetrics& m) {
             return m.consistency_excluded ? std::nullopt : std::optional<double>(m.acc_cst);
         }},
    };

    std::vector<MetricComparison> out;
    for (const auto& [name, get] : metrics) {
        std::vector<double> va, vb;
        for (const auto& ma : a.relations) {
            auto bi = b_index.find(ma.relation_id);
            if (bi == b_index.end()) continue;
            const auto xa = get(ma);
            const auto xb = get(*bi->second);
            if (!xa || !xb) continue;
            va.push_back(*xa);
            vb.push_back(*xb);
        }
        if (va.size() < 2) continue;
        MetricComparison cmp;
        cmp.metric = name;
        cmp.n = va.size();
        for (std::size_t i = 0; i < va.size(); ++i) {
            cmp.mean_a += va[i] / static_cast<double>(va.size());
            cmp.mean_b += vb[i] / static_cast<double>(vb.size());
        }
        cmp.delta = cmp.mean_a - cmp.mean_b;
        cmp.t_test_p = paired_t_test(va, vb);
        cmp.wilcoxon_p = wilcoxon_signed_rank(va, vb);
        out.push_back(std::move(cmp));
    }
    return out;
}

inline nlohmann::ordered_json comparison_to_json(const std::vector<MetricComparison>& cmps) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& c : cmps) {
        nlohmann::ordered_json j;
        j["metric"] = c.metric;
        j["mean_a"] = c.mean_a;
        j["mean_b"] = c.mean_b;
        j["delta"] = c.delta;
        j["t_test_p"] = c.t_test_p;
        j["wilcoxon_p"] = c.wilcoxon_p;
        j["n_relations"] = c.n;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::string comparison_to_markdown(const std::vector<MetricComparison>& cmps,
                                          const std::string& label_a,
                                          const std::string& label_b) {
    std::ostringstream out;
    out << "# Report comparison: " << label_a << " vs " << label_b << "\n\n";
    out << "| metric | " << label_a << " | " << label_b
        << " | delta | t-test p | wilcoxon p | n |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& c : cmps) {
        out << "| " << c.metric << " | ";
        out.precision(4);
        out << std::fixed << c.mean_a << " | " << c.mean_b << " | " << c.delta << " | ";
        out.precision(3);
        out << std::scientific << c.t_test_p << " | " << c.wilcoxon_p << " | " << c.n << " |\n";
        out << std::defaultfloat;
    }
    return out.str();
}

}  // namespace uniark
