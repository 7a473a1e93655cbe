#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniark/rng.hpp"
#include "uniark/vocab.hpp"

namespace uniark {

// Synthetic fact world: relations with closed object vocabularies, gold
// (subject, relation, object) triples, and paraphrase template sets. The
// generator injects two controllable biases into the pretraining corpus:
// a Zipf prior over which template verbalizes a fact, and a Zipf marginal
// over which object a fact has.

enum class Cardinality { OneToOne, ManyToOne, ManyToMany };

inline std::string to_string(Cardinality c) {
    switch (c) {
        case Cardinality::OneToOne: return "1-1";
        case Cardinality::ManyToOne: return "N-1";
        case Cardinality::ManyToMany: return "N-M";
    }
    throw std::logic_error("unreachable");
}

inline Cardinality cardinality_from_string(const std::string& s) {
    if (s == "1-1") return Cardinality::OneToOne;
    if (s == "N-1") return Cardinality::ManyToOne;
    if (s == "N-M") return Cardinality::ManyToMany;
    throw std::invalid_argument("unknown cardinality '" + s + "'");
}

struct Relation {
    std::string relation_id;
    std::string description;
    Cardinality cardinality = Cardinality::ManyToOne;
    std::vector<std::string> object_vocabulary;
    std::vector<std::string> stopwords;
};

struct FactTriple {
    std::string relation_id;
    std::string subject;
    std::string object;
};

enum class TemplateSplit { Train, Test };
enum class LengthClass { Short, Long, Normal };

inline std::string to_string(TemplateSplit s) { return s == TemplateSplit::Train ? "train" : "test"; }
inline std::string to_string(LengthClass c) {
    switch (c) {
        case LengthClass::Short: return "short";
        case LengthClass::Long: return "long";
        case LengthClass::Normal: return "normal";
    }
    throw std::logic_error("unreachable");
}

inline TemplateSplit split_from_string(const std::string& s) {
    if (s == "train") return TemplateSplit::Train;
    if (s == "test") return TemplateSplit::Test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

inline LengthClass length_class_from_string(const std::string& s) {
    if (s == "short") return LengthClass::Short;
    if (s == "long") return LengthClass::Long;
    if (s == "normal") return LengthClass::Normal;
    throw std::invalid_argument("unknown length_class '" + s + "'");
}

struct TemplateSpec {
    std::string relation_id;
    std::string template_id;
    std::string text;  // contains exactly one [X] and one [Y]
    TemplateSplit split = TemplateSplit::Test;
    LengthClass length_class = LengthClass::Normal;

    // Convention: per relation the base template (the single seen-at-tuning
    // prompt) carries paraphrase index 0, id "<relation_id>-p000".
    bool is_base() const {
        const auto pos = template_id.rfind("-p");
        if (pos == std::string::npos) return false;
        return template_id.substr(pos) == "-p000";
    }
};

inline void validate_template_text(const std::string& text) {
    std::size_t x = 0, y = 0;
    for (const auto& tok : split_whitespace(text)) {
        if (tok == "[X]") ++x;
        if (tok == "[Y]") ++y;
    }
    if (x != 1 || y != 1) {
        throw std::invalid_argument("template must contain exactly one [X] and one [Y]: '" +
                                    text + "'");
    }
}

struct WorldConfig {
    std::size_t n_relations = 6;
    std::size_t subjects_per_relation = 40;
    std::size_t objects_per_relation = 10;
    std::size_t paraphrases_per_relation = 12;
    std::size_t short_paraphrases = 3;
    std::size_t long_paraphrases = 3;
    std::size_t nm_relations = 1;  // this many relations are flagged N-M
    double template_prior_skew = 1.8;
    double object_marginal_skew = 1.0;
    std::size_t corpus_repeats = 3;
    std::size_t distractors_per_relation = 104;
    std::uint64_t seed = 13;

    void validate() const {
        if (n_relations < 1 || subjects_per_relation < 1 || objects_per_relation < 1 ||
            paraphrases_per_relation < 1 || corpus_repeats < 1) {
            throw std::invalid_argument("world config: all counts must be >= 1");
        }
        if (short_paraphrases + long_paraphrases > paraphrases_per_relation) {
            throw std::invalid_argument("world config: short + long exceeds paraphrase count");
        }
        if (nm_relations > n_relations) {
            throw std::invalid_argument("world config: more N-M relations than relations");
        }
        if (template_prior_skew < 0.0 || object_marginal_skew < 0.0) {
            throw std::invalid_argument("world config: skew exponents must be >= 0");
        }
    }
};

struct FactWorld {
    WorldConfig config;
    std::vector<Relation> relations;
    std::vector<FactTriple> triples;
    std::vector<TemplateSpec> templates;

    // Token standing in for the subject slot of distractor sentences.
    static constexpr const char* kSubjectFiller = "something";

    const Relation& relation(const std::string& id) const {
        for (const auto& r : relations)
            if (r.relation_id == id) return r;
        throw std::invalid_argument("unknown relation '" + id + "'");
    }

    std::vector<const TemplateSpec*> templates_of(const std::string& relation_id) const {
        std::vector<const TemplateSpec*> out;
        for (const auto& t : templates)
            if (t.relation_id == relation_id) out.push_back(&t);
        return out;
    }

    const TemplateSpec& base_template(const std::string& relation_id) const {
        for (const auto& t : templates)
            if (t.relation_id == relation_id && t.is_base()) return t;
        throw std::invalid_argument("relation '" + relation_id + "' has no base template");
    }

    std::vector<const FactTriple*> triples_of(const std::string& relation_id) const {
        std::vector<const FactTriple*> out;
        for (const auto& t : triples)
            if (t.relation_id == relation_id) out.push_back(&t);
        return out;
    }
};

namespace detail {

inline std::string pseudo_word(Rng& rng, std::size_t min_syllables, std::size_t max_syllables) {
    static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m",
                                    "n", "p", "r", "s", "t", "v", "z"};
    static const char* kVowels[] = {"a", "e", "i", "o", "u"};
    const std::size_t n =
        min_syllables + rng.uniform_index(max_syllables - min_syllables + 1);
    std::string w;
    for (std::size_t i = 0; i < n; ++i) {
        w += kOnsets[rng.uniform_index(14)];
        w += kVowels[rng.uniform_index(5)];
    }
    return w;
}

inline std::string unique_word(Rng& rng, std::set<std::string>& used, std::size_t min_syll,
                               std::size_t max_syll, bool capitalize) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::string w = pseudo_word(rng, min_syll, max_syll);
        if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        if (used.insert(w).second) return w;
    }
    throw std::runtime_error("world generator: could not find a fresh token");
}

inline std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace detail

// Deterministic world generation: a pure function of the config (seed
// included). Every relation gets one base template plus the configured
// paraphrases; gold objects are drawn from a Zipf marginal over the
// relation's object vocabulary.
inline FactWorld generate_world(const WorldConfig& cfg) {
    cfg.validate();
    FactWorld world;
    world.config = cfg;

    Rng word_rng(derive_seed(cfg.seed, 1));
    Rng triple_rng(derive_seed(cfg.seed, 2));
    Rng template_rng(derive_seed(cfg.seed, 3));

    std::set<std::string> used_tokens{FactWorld::kSubjectFiller, "[X]", "[Y]",
                                      Vocabulary::kPad, Vocabulary::kMask};

    // Shared filler pool: the function-word analogue, reused across relations.
    std::vector<std::string> filler_pool;
    for (std::size_t i = 0; i < 40; ++i) {
        filler_pool.push_back(detail::unique_word(word_rng, used_tokens, 1, 2, false));
    }

    for (std::size_t r = 0; r < cfg.n_relations; ++r) {
        Relation rel;
        rel.relation_id = "R" + detail::zero_pad(r + 1, 2);
        rel.cardinality =
            r < cfg.nm_relations ? Cardinality::ManyToMany : Cardinality::ManyToOne;

        // Signature words appear in every template of the relation so that a
        // paraphrase still identifies which relation is being verbalized.
        std::vector<std::string> signature;
        for (std::size_t i = 0; i < 3; ++i) {
            signature.push_back(detail::unique_word(word_rng, used_tokens, 2, 3, false));
        }
        rel.description = "synthetic " + to_string(rel.cardinality) + " relation keyed by '" +
                          signature[0] + "'";
        for (std::size_t i = 0; i < 2; ++i) {
            rel.stopwords.push_back(filler_pool[word_rng.uniform_index(filler_pool.size())]);
        }

        for (std::size_t o = 0; o < cfg.objects_per_relation; ++o) {
            rel.object_vocabulary.push_back(
                detail::unique_word(word_rng, used_tokens, 2, 3, true));
        }

        // Gold assignments from the skewed object marginal.
        ZipfSampler object_marginal(cfg.objects_per_relation, cfg.object_marginal_skew);
        for (std::size_t s = 0; s < cfg.subjects_per_relation; ++s) {
            const std::string subject = detail::unique_word(word_rng, used_tokens, 2, 4, true);
            const std::size_t first = object_marginal.sample(triple_rng);
            world.triples.push_back({rel.relation_id, subject, rel.object_vocabulary[first]});
            if (rel.cardinality == Cardinality::ManyToMany && cfg.objects_per_relation > 1) {
                std::size_t second = first;
                while (second == first) second = object_marginal.sample(triple_rng);
                world.triples.push_back(
                    {rel.relation_id, subject, rel.object_vocabulary[second]});
            }
        }

        // Templates: index 0 is the base; the rest are paraphrases. Each
        // template interleaves the signature words with shared fillers, with
        // the filler budget set by the length class.
        const std::size_t n_templates = 1 + cfg.paraphrases_per_relation;
        for (std::size_t t = 0; t < n_templates; ++t) {
            TemplateSpec tpl;
            tpl.relation_id = rel.relation_id;
            tpl.template_id = rel.relation_id + "-p" + detail::zero_pad(t, 3);

            LengthClass length = LengthClass::Normal;
            if (t >= 1) {
                const std::size_t p = t - 1;
                if (p < cfg.short_paraphrases) {
                    length = LengthClass::Short;
                } else if (p < cfg.short_paraphrases + cfg.long_paraphrases) {
                    length = LengthClass::Long;
                }
            }
            tpl.length_class = length;

            std::size_t n_fillers = 0;
            switch (length) {
                case LengthClass::Short:
                    n_fillers = 2 + template_rng.uniform_index(2);  // 2..3
                    break;
                case LengthClass::Normal:
                    n_fillers = 5 + template_rng.uniform_index(3);  // 5..7
                    break;
                case LengthClass::Long:
                    n_fillers = 12 + template_rng.uniform_index(5);  // 12..16
                    break;
            }

            std::vector<std::string> words;
            words.push_back(signature[template_rng.uniform_index(signature.size())]);
            for (std::size_t i = 1; i < n_fillers; ++i) {
                if (template_rng.bernoulli(0.25)) {
                    words.push_back(signature[template_rng.uniform_index(signature.size())]);
                } else {
                    words.push_back(filler_pool[template_rng.uniform_index(filler_pool.size())]);
                }
            }
            template_rng.shuffle(words);

            // Place [X] and [Y] at distinct slots among the words.
            const std::size_t n_slots = words.size() + 1;
            std::size_t x_slot = template_rng.uniform_index(n_slots);
            std::size_t y_slot = template_rng.uniform_index(n_slots);
            while (y_slot == x_slot) y_slot = template_rng.uniform_index(n_slots);

            std::vector<std::string> tokens;
            for (std::size_t slot = 0; slot < n_slots; ++slot) {
                if (slot == x_slot) tokens.push_back("[X]");
                if (slot == y_slot) tokens.push_back("[Y]");
                if (slot < words.size()) tokens.push_back(words[slot]);
            }
            tokens.push_back(".");

            // Sentence-initial words are capitalized, as in natural prompts.
            if (tokens[0] != "[X]" && tokens[0] != "[Y]") {
                tokens[0][0] =
                    static_cast<char>(std::toupper(static_cast<unsigned char>(tokens[0][0])));
            }

            std::string text;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (i) text += ' ';
                text += tokens[i];
            }
            tpl.text = text;
            validate_template_text(tpl.text);

            if (t == 0) {
                tpl.split = TemplateSplit::Train;
                tpl.length_class = LengthClass::Normal;
            } else {
                // Short and long paraphrases are always held out; normal ones
                // are split 50/50 at random.
                tpl.split = TemplateSplit::Test;
            }
            world.templates.push_back(tpl);
        }

        // 50/50 random split over the normal-length paraphrases.
        std::vector<std::size_t> normal_indices;
        for (std::size_t i = world.templates.size() - n_templates; i < world.templates.size();
             ++i) {
            const auto& tpl = world.templates[i];
            if (!tpl.is_base() && tpl.length_class == LengthClass::Normal) {
                normal_indices.push_back(i);
            }
        }
        template_rng.shuffle(normal_indices);
        for (std::size_t i = 0; i < normal_indices.size() / 2 + normal_indices.size() % 2; ++i) {
            world.templates[normal_indices[i]].split = TemplateSplit::Train;
        }

        world.relations.push_back(std::move(rel));
    }
    return world;
}

// ---------------------------------------------------------------------------
// Pretraining corpus
// ---------------------------------------------------------------------------

struct Corpus {
    std::vector<std::string> sentences;  // whitespace-tokenized lines
    std::size_t n_triple_sentences = 0;
    std::size_t n_distractors = 0;
};

inline std::string render_template(const std::string& text, const std::string& subject,
                                   const std::string& object) {
    std::string out;
    for (const auto& tok : split_whitespace(text)) {
        if (!out.empty()) out += ' ';
        if (tok == "[X]") {
            out += subject;
        } else if (tok == "[Y]") {
            out += object;
        } else {
            out += tok;
        }
    }
    return out;
}

// Each triple is verbalized corpus_repeats times through templates drawn from
// the Zipf template prior (base template is rank 1); the unbalanced template
// frequencies implant the template-prior bias. Distractor sentences replace
// the subject with a generic filler and draw their object from a skewed,
// template-conditional marginal: the base template's prior follows the gold
// marginal (rank order of the object list), while each paraphrase sees the
// object ranking rotated by its template index. A model that follows these
// priors therefore answers differently under different verbalizations, which
// is what the consistency metrics are designed to catch. Distractor templates
// are drawn uniformly so every verbalization's conditional gets implanted.
inline Corpus render_pretraining_corpus(const FactWorld& world) {
    const auto& cfg = world.config;
    Corpus corpus;
    Rng rng(derive_seed(cfg.seed, 4));

    for (const auto& rel : world.relations) {
        auto rel_templates = world.templates_of(rel.relation_id);
        if (rel_templates.empty()) continue;
        // Prior rank order: the base template dominates, train-tagged normal
        // paraphrases come next, and the held-out (test-normal, short, long)
        // verbalizations sit in the Zipf tail.
        auto prior_class = [](const TemplateSpec& t) {
            if (t.is_base()) return 0;
            if (t.length_class == LengthClass::Normal) {
                return t.split == TemplateSplit::Train ? 1 : 2;
            }
            return t.length_class == LengthClass::Short ? 3 : 4;
        };
        std::stable_sort(rel_templates.begin(), rel_templates.end(),
                         [&](const TemplateSpec* a, const TemplateSpec* b) {
                             return prior_class(*a) < prior_class(*b);
                         });
        ZipfSampler template_prior(rel_templates.size(), cfg.template_prior_skew);
        ZipfSampler object_marginal(rel.object_vocabulary.size(), cfg.object_marginal_skew);
        const std::size_t n_objects = rel.object_vocabulary.size();

        for (const auto* triple : world.triples_of(rel.relation_id)) {
            for (std::size_t r = 0; r < cfg.corpus_repeats; ++r) {
                const auto* tpl = rel_templates[template_prior.sample(rng)];
                corpus.sentences.push_back(
                    render_template(tpl->text, triple->subject, triple->object));
                ++corpus.n_triple_sentences;
            }
        }
        for (std::size_t d = 0; d < cfg.distractors_per_relation; ++d) {
            const std::size_t t_index = rng.uniform_index(rel_templates.size());
            const auto* tpl = rel_templates[t_index];
            const std::size_t rank = object_marginal.sample(rng);
            const auto& object = rel.object_vocabulary[(rank + t_index) % n_objects];
            corpus.sentences.push_back(
                render_template(tpl->text, FactWorld::kSubjectFiller, object));
            ++corpus.n_distractors;
        }
    }
    rng.shuffle(corpus.sentences);
    return corpus;
}

// ---------------------------------------------------------------------------
// Template splits
// ---------------------------------------------------------------------------

struct TemplateSplits {
    std::vector<const TemplateSpec*> tune_set;     // base templates only
    std::vector<const TemplateSpec*> id_test_set;  // train-tagged normal paraphrases
    std::vector<const TemplateSpec*> ood_test_set; // short + long + test-tagged normals
};

inline TemplateSplits split_templates(const FactWorld& world) {
    TemplateSplits splits;
    for (const auto& rel : world.relations) {
        bool has_paraphrase = false;
        for (const auto& tpl : world.templates) {
            if (tpl.relation_id != rel.relation_id) continue;
            if (tpl.is_base()) {
                splits.tune_set.push_back(&tpl);
                continue;
            }
            has_paraphrase = true;
            if (tpl.length_class != LengthClass::Normal) {
                splits.ood_test_set.push_back(&tpl);
            } else if (tpl.split == TemplateSplit::Train) {
                splits.id_test_set.push_back(&tpl);
            } else {
                splits.ood_test_set.push_back(&tpl);
            }
        }
        if (!has_paraphrase) {
            throw std::runtime_error("relation '" + rel.relation_id + "' has no paraphrases");
        }
    }
    return splits;
}

// Removes N-M relations plus any relations on the caller-supplied exclusion
// list (semantic-overlap style filtering). Unknown ids in the list are errors.
inline std::vector<Relation> filter_nm_relations(const FactWorld& world,
                                                 const std::vector<std::string>& exclusion_list) {
    std::set<std::string> known;
    for (const auto& r : world.relations) known.insert(r.relation_id);
    for (const auto& id : exclusion_list) {
        if (!known.count(id)) {
            throw std::invalid_argument("exclusion list names unknown relation '" + id + "'");
        }
    }
    std::set<std::string> excluded(exclusion_list.begin(), exclusion_list.end());
    std::vector<Relation> kept;
    for (const auto& r : world.relations) {
        if (r.cardinality == Cardinality::ManyToMany) continue;
        if (excluded.count(r.relation_id)) continue;
        kept.push_back(r);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Vocabulary construction
// ---------------------------------------------------------------------------

// The closed vocabulary of a world: every template word (plus its
// sentence-initial lowercase variant), every subject and object, the
// distractor filler, and any extra texts (augmentation prefixes).
inline Vocabulary build_vocabulary(const FactWorld& world,
                                   const std::vector<std::string>& extra_texts = {}) {
    std::set<std::string> tokens;
    for (const auto& tpl : world.templates) {
        const auto words = split_whitespace(tpl.text);
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (words[i] == "[X]" || words[i] == "[Y]") continue;
            tokens.insert(words[i]);
            if (i == 0) tokens.insert(lowercase_first(words[i]));
        }
    }
    for (const auto& t : world.triples) {
        tokens.insert(t.subject);
        tokens.insert(t.object);
    }
    for (const auto& r : world.relations) {
        for (const auto& o : r.object_vocabulary) tokens.insert(o);
        for (const auto& s : r.stopwords) tokens.insert(s);
    }
    tokens.insert(FactWorld::kSubjectFiller);
    for (const auto& text : extra_texts) {
        for (const auto& w : split_whitespace(text)) tokens.insert(w);
    }
    return Vocabulary(tokens);
}

}  // namespace uniark
