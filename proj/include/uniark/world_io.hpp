#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniark/world.hpp"

namespace uniark {

// JSONL persistence for the fact-world files:
//   relations.jsonl  {"relation_id","description","cardinality","stopwords":[...],
//                     "objects":[...]}
//   triples.jsonl    {"relation_id","subject","object"}
//   templates.jsonl  {"relation_id","template_id","template","split","length_class"}
//   corpus.txt       one whitespace-tokenized sentence per line

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::string& path,
                                       std::size_t line_no) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": malformed JSON line: " + e.what());
    }
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        fn(parse_jsonl_line(line, path, line_no), line_no);
    }
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  const std::string& path, std::size_t line_no) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing field '" +
                                 key + "'");
    }
    return j[key].get<std::string>();
}

}  // namespace detail

inline void save_relations(const std::vector<Relation>& relations, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& r : relations) {
        nlohmann::ordered_json j;
        j["relation_id"] = r.relation_id;
        j["description"] = r.description;
        j["cardinality"] = to_string(r.cardinality);
        j["stopwords"] = r.stopwords;
        j["objects"] = r.object_vocabulary;
        out << j.dump() << '\n';
    }
}

inline std::vector<Relation> load_relations(const std::string& path) {
    std::vector<Relation> relations;
    std::set<std::string> seen;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        Relation r;
        r.relation_id = detail::require_string(j, "relation_id", path, line_no);
        r.description = detail::require_string(j, "description", path, line_no);
        try {
            r.cardinality = cardinality_from_string(
                detail::require_string(j, "cardinality", path, line_no));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("stopwords")) r.stopwords = j["stopwords"].get<std::vector<std::string>>();
        if (j.contains("objects")) {
            r.object_vocabulary = j["objects"].get<std::vector<std::string>>();
        }
        if (!seen.insert(r.relation_id).second) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": duplicate relation_id '" + r.relation_id + "'");
        }
        relations.push_back(std::move(r));
    });
    return relations;
}

inline void save_triples(const std::vector<FactTriple>& triples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& t : triples) {
        nlohmann::ordered_json j;
        j["relation_id"] = t.relation_id;
        j["subject"] = t.subject;
        j["object"] = t.object;
        out << j.dump() << '\n';
    }
}

inline std::vector<FactTriple> load_triples(const std::string& path) {
    std::vector<FactTriple> triples;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        FactTriple t;
        t.relation_id = detail::require_string(j, "relation_id", path, line_no);
        t.subject = detail::require_string(j, "subject", path, line_no);
        t.object = detail::require_string(j, "object", path, line_no);
        // Single-token constraint: answers must be exactly one vocabulary token.
        if (split_whitespace(t.object).size() != 1 || split_whitespace(t.subject).size() != 1) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": subject/object must be single tokens");
        }
        triples.push_back(std::move(t));
    });
    return triples;
}

inline void save_templates(const std::vector<TemplateSpec>& templates, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& t : templates) {
        nlohmann::ordered_json j;
        j["relation_id"] = t.relation_id;
        j["template_id"] = t.template_id;
        j["template"] = t.text;
        j["split"] = to_string(t.split);
        j["length_class"] = to_string(t.length_class);
        out << j.dump() << '\n';
    }
}

inline std::vector<TemplateSpec> load_templates(const std::string& path) {
    std::vector<TemplateSpec> templates;
    std::set<std::string> seen;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        TemplateSpec t;
        t.relation_id = detail::require_string(j, "relation_id", path, line_no);
        t.template_id = detail::require_string(j, "template_id", path, line_no);
        t.text = detail::require_string(j, "template", path, line_no);
        try {
            t.split = split_from_string(detail::require_string(j, "split", path, line_no));
            t.length_class = length_class_from_string(
                detail::require_string(j, "length_class", path, line_no));
            validate_template_text(t.text);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(t.template_id).second) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": duplicate template_id '" + t.template_id + "'");
        }
        templates.push_back(std::move(t));
    });
    return templates;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    for (const auto& s : corpus.sentences) out << s << '\n';
}

inline std::vector<std::string> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<std::string> sentences;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) sentences.push_back(line);
    }
    return sentences;
}

struct WorldPaths {
    std::string relations;
    std::string triples;
    std::string templates;
    std::string corpus;

    static WorldPaths in_dir(const std::string& dir) {
        namespace fs = std::filesystem;
        return {(fs::path(dir) / "relations.jsonl").string(),
                (fs::path(dir) / "triples.jsonl").string(),
                (fs::path(dir) / "templates.jsonl").string(),
                (fs::path(dir) / "corpus.txt").string()};
    }
};

// Loads the world files (not the corpus) and re-validates cross-references.
inline FactWorld load_world(const WorldPaths& paths, const WorldConfig& config = {}) {
    FactWorld world;
    world.config = config;
    world.relations = load_relations(paths.relations);
    world.triples = load_triples(paths.triples);
    world.templates = load_templates(paths.templates);

    std::set<std::string> relation_ids;
    for (const auto& r : world.relations) relation_ids.insert(r.relation_id);
    for (const auto& t : world.triples) {
        if (!relation_ids.count(t.relation_id)) {
            throw std::runtime_error("triple references unknown relation '" + t.relation_id +
                                     "'");
        }
        const auto& rel = world.relation(t.relation_id);
        if (!rel.object_vocabulary.empty() &&
            std::find(rel.object_vocabulary.begin(), rel.object_vocabulary.end(), t.object) ==
                rel.object_vocabulary.end()) {
            throw std::runtime_error("triple object '" + t.object +
                                     "' not in relation object vocabulary");
        }
    }
    for (const auto& t : world.templates) {
        if (!relation_ids.count(t.relation_id)) {
            throw std::runtime_error("template references unknown relation '" + t.relation_id +
                                     "'");
        }
    }
    return world;
}

inline void save_world(const FactWorld& world, const std::string& dir) {
    const auto paths = WorldPaths::in_dir(dir);
    save_relations(world.relations, paths.relations);
    save_triples(world.triples, paths.triples);
    save_templates(world.templates, paths.templates);
}

}  // namespace uniark
