#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "uniark/checkpoint.hpp"
#include "uniark/config.hpp"
#include "uniark/evaluation.hpp"
#include "uniark/probing.hpp"
#include "uniark/training.hpp"
#include "uniark/world_io.hpp"

namespace uniark {

// Pipeline stages behind the CLI subcommands. Every stage writes its outputs
// into a staging directory and renames it into place once complete, so a
// failed run leaves nothing behind; each output directory carries exactly one
// run manifest, chained to its inputs by manifest hashes.

struct ResolvedConfig {
    PipelineConfig cfg;
    std::string hash;  // hash of the config file (overrides excluded)
    nlohmann::ordered_json overrides = nlohmann::ordered_json::object();
};

inline ResolvedConfig resolve_config(const PipelineConfig& cfg) {
    return {cfg, config_hash(cfg), nlohmann::ordered_json::object()};
}

namespace detail {

inline void check_config_hash(const RunManifest& upstream, const std::string& expected,
                              const std::string& what) {
    if (upstream.config_hash != expected) {
        throw std::runtime_error("config hash mismatch: " + what + " was produced with config " +
                                 upstream.config_hash + " but the current config hashes to " +
                                 expected);
    }
}

// Runs body against a staging directory, then atomically renames it into
// place. Refuses to replace an existing output unless force is set.
inline void run_stage(const std::string& out_dir, bool force, RunManifest manifest,
                      const std::function<void(const std::filesystem::path&,
                                               RunManifest&)>& body) {
    namespace fs = std::filesystem;
    const fs::path out(out_dir);
    if (fs::exists(out) && !force) {
        throw std::runtime_error("output directory '" + out_dir +
                                 "' already exists (use --force to replace)");
    }
    fs::path staging = out;
    staging += ".staging";
    std::error_code ec;
    fs::remove_all(staging, ec);
    fs::create_directories(staging);

    manifest.started_at = iso_timestamp_utc();
    try {
        body(staging, manifest);
        manifest.finished_at = iso_timestamp_utc();
        write_manifest(manifest, staging.string());
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }
    fs::remove_all(out, ec);
    fs::rename(staging, out);
}

// Ordered parallel map over relation-sized work items.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t n_items, std::size_t jobs, Fn&& fn) {
    std::vector<Result> results(n_items);
    if (n_items == 0) return results;
    jobs = std::max<std::size_t>(1, std::min(jobs, n_items));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n_items; ++i) results[i] = fn(i);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n_items; i = next.fetch_add(1)) {
                    results[i] = fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

inline std::vector<std::string> augment_prefix_texts(const PipelineConfig& cfg) {
    return {cfg.augment.true_prefix_text, cfg.augment.false_prefix_text};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate-world
// ---------------------------------------------------------------------------

inline void run_generate_world(const ResolvedConfig& rc, const std::string& out_dir,
                               bool force) {
    RunManifest manifest;
    manifest.command = "generate-world";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.seeds = {rc.cfg.world.seed};

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        FactWorld world = generate_world(rc.cfg.world);
        save_world(world, dir.string());
        Corpus corpus = render_pretraining_corpus(world);
        save_corpus(corpus, (dir / "corpus.txt").string());

        const Vocabulary vocab = build_vocabulary(world, detail::augment_prefix_texts(rc.cfg));
        std::ofstream vf(dir / "vocab.txt");
        for (const auto& tok : vocab.tokens()) vf << tok << '\n';

        m.outputs = {"relations.jsonl", "triples.jsonl", "templates.jsonl", "corpus.txt",
                     "vocab.txt"};
    });
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

inline FactWorld load_world_checked(const ResolvedConfig& rc, const std::string& world_dir) {
    const auto upstream = read_manifest(world_dir);
    detail::check_config_hash(upstream, rc.hash, "world '" + world_dir + "'");
    return load_world(WorldPaths::in_dir(world_dir), rc.cfg.world);
}

inline void run_pretrain(const ResolvedConfig& rc, const std::string& world_dir,
                         const std::string& out_dir, bool force) {
    FactWorld world = load_world_checked(rc, world_dir);
    const Vocabulary vocab = build_vocabulary(world, detail::augment_prefix_texts(rc.cfg));
    const auto corpus = load_corpus((std::filesystem::path(world_dir) / "corpus.txt").string());

    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.seeds = {rc.cfg.model.seed, rc.cfg.train.seed};
    manifest.inputs = {{world_dir, manifest_hash_of_dir(world_dir)}};

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        ModelConfig mc = rc.cfg.model_config(vocab.size(), vocab.pad_id(), vocab.mask_id());
        ModelState state = init_model(mc, rc.cfg.model.seed);

        std::ofstream log(dir / "pretrain_log.jsonl");
        const auto report = pretrain(state, corpus, vocab, rc.cfg.train, &log);

        save_checkpoint(state, (dir / "model.ckpt").string(), rc.hash);
        nlohmann::ordered_json summary;
        summary["epoch_losses"] = report.epoch_losses;
        summary["masked_fraction"] = report.masked_fraction();
        std::ofstream sf(dir / "pretrain_summary.json");
        sf << summary.dump(2) << '\n';
        m.outputs = {"model.ckpt", "pretrain_log.jsonl", "pretrain_summary.json"};
    });
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

inline void run_tune(const ResolvedConfig& rc, const std::string& world_dir,
                     const std::string& pretrain_dir, TuneMode mode, const std::string& out_dir,
                     std::size_t jobs, bool force) {
    FactWorld world = load_world_checked(rc, world_dir);
    const Vocabulary vocab = build_vocabulary(world, detail::augment_prefix_texts(rc.cfg));

    const auto pretrain_manifest = read_manifest(pretrain_dir);
    detail::check_config_hash(pretrain_manifest, rc.hash, "pretrain '" + pretrain_dir + "'");
    auto loaded = load_checkpoint((std::filesystem::path(pretrain_dir) / "model.ckpt").string());
    ModelState base = std::move(loaded.state);
    if (!loaded.config_hash.empty() && loaded.config_hash != rc.hash) {
        throw std::runtime_error("config hash mismatch: checkpoint carries " +
                                 loaded.config_hash);
    }
    if (base.config.vocab_size != vocab.size()) {
        throw std::runtime_error("checkpoint vocabulary size does not match the world");
    }

    if (selection_for(mode) == ParamSelection::AdaptersOnly) {
        insert_adapters(base, rc.cfg.model.adapter_dim, rc.cfg.train.seed);
    }

    RunManifest manifest;
    manifest.command = "tune";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.overrides["mode"] = to_string(mode);
    manifest.seeds = {rc.cfg.train.seed};
    manifest.inputs = {{world_dir, manifest_hash_of_dir(world_dir)},
                       {pretrain_dir, manifest_hash_of_dir(pretrain_dir)}};

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        if (mode == TuneMode::None) {
            ModelState copy = deep_copy(base);
            copy.mode = to_string(mode);
            save_checkpoint(copy, (dir / "model.ckpt").string(), rc.hash);
            std::ofstream(dir / "train_log.jsonl");
            m.outputs = {"model.ckpt", "train_log.jsonl"};
            return;
        }

        if (rc.cfg.train.per_relation) {
            std::vector<std::string> relation_ids;
            for (const auto& rel : world.relations) relation_ids.push_back(rel.relation_id);

            auto logs = detail::parallel_map<std::string>(
                relation_ids.size(), jobs, [&](std::size_t i) {
                    std::ostringstream log;
                    ModelState tuned = tune(base, world, vocab, {relation_ids[i]}, mode,
                                            rc.cfg.loss, rc.cfg.augment, rc.cfg.train, &log);
                    save_checkpoint(tuned,
                                    (dir / ("model-" + relation_ids[i] + ".ckpt")).string(),
                                    rc.hash);
                    return log.str();
                });

            std::ofstream log(dir / "train_log.jsonl");
            for (const auto& l : logs) log << l;
            for (const auto& rel_id : relation_ids) {
                m.outputs.push_back("model-" + rel_id + ".ckpt");
            }
            m.outputs.push_back("train_log.jsonl");
        } else {
            std::vector<std::string> relation_ids;
            for (const auto& rel : world.relations) relation_ids.push_back(rel.relation_id);
            std::ofstream log(dir / "train_log.jsonl");
            ModelState tuned = tune(base, world, vocab, relation_ids, mode, rc.cfg.loss,
                                    rc.cfg.augment, rc.cfg.train, &log);
            save_checkpoint(tuned, (dir / "model.ckpt").string(), rc.hash);
            m.outputs = {"model.ckpt", "train_log.jsonl"};
        }
    });
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

namespace detail {

inline std::string checkpoint_for_relation(const std::string& checkpoint_dir,
                                           const std::string& relation_id) {
    namespace fs = std::filesystem;
    const fs::path per_relation = fs::path(checkpoint_dir) / ("model-" + relation_id + ".ckpt");
    if (fs::exists(per_relation)) return per_relation.string();
    const fs::path shared = fs::path(checkpoint_dir) / "model.ckpt";
    if (fs::exists(shared)) return shared.string();
    throw std::runtime_error("no checkpoint for relation '" + relation_id + "': expected '" +
                             per_relation.string() + "' or '" + shared.string() + "'");
}

// Distribution at the object slot, aggregated over the true/false augmented
// prompts when augmentation is on.
inline std::vector<double> probe_distribution(const ModelState& state, const Prompt& prompt,
                                              const AugmentationConfig& aug,
                                              const Vocabulary& vocab, bool augmented) {
    auto raw_scores = [&](const Prompt& p) {
        Tensor logits = forward_mlm(state, p.token_ids, {p.object_mask_position});
        std::vector<double> z(logits.data().begin(), logits.data().end());
        return aug.mode == AggregationMode::Probabilities ? stable_softmax(z) : z;
    };
    if (!augmented || prompt.variant != PromptVariant::Original) {
        Tensor logits = forward_mlm(state, prompt.token_ids, {prompt.object_mask_position});
        std::vector<double> z(logits.data().begin(), logits.data().end());
        return stable_softmax(z);
    }
    const auto prompts = augment_prompts(prompt, aug, vocab, state.config.max_seq_len);
    return aggregate_augmented(raw_scores(prompts[0]), raw_scores(prompts[1]),
                               raw_scores(prompts[2]), aug);
}

}  // namespace detail

inline void run_probe(const ResolvedConfig& rc, const std::string& world_dir,
                      const std::string& checkpoint_dir, const std::string& out_dir,
                      std::size_t jobs, bool force) {
    FactWorld world = load_world_checked(rc, world_dir);
    const Vocabulary vocab = build_vocabulary(world, detail::augment_prefix_texts(rc.cfg));

    const auto upstream = read_manifest(checkpoint_dir);
    detail::check_config_hash(upstream, rc.hash, "checkpoints '" + checkpoint_dir + "'");

    bool want_original = false, want_subject_masked = false;
    for (const auto& v : rc.cfg.probe.variants) {
        if (v == "original") {
            want_original = true;
        } else if (v == "subject_masked") {
            want_subject_masked = true;
        } else {
            throw std::invalid_argument("probe: unsupported variant '" + v + "'");
        }
    }

    RunManifest manifest;
    manifest.command = "probe";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.inputs = {{world_dir, manifest_hash_of_dir(world_dir)},
                       {checkpoint_dir, manifest_hash_of_dir(checkpoint_dir)}};

    std::string probed_mode;
    std::set<std::uint64_t> seeds;

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        auto relation_records = detail::parallel_map<std::vector<PredictionRecord>>(
            world.relations.size(), jobs, [&](std::size_t ri) {
                const Relation& rel = world.relations[ri];
                auto loaded = load_checkpoint(
                    detail::checkpoint_for_relation(checkpoint_dir, rel.relation_id));
                const ModelState& state = loaded.state;
                if (state.config.vocab_size != vocab.size()) {
                    throw std::runtime_error("checkpoint vocabulary does not match the world");
                }

                bool augmented = rc.cfg.probe.augment == "on";
                if (rc.cfg.probe.augment == "auto") {
                    augmented = state.mode == "uniark" || state.mode == "uniark_para";
                }

                std::vector<const TemplateSpec*> templates = world.templates_of(rel.relation_id);
                std::sort(templates.begin(), templates.end(),
                          [](const TemplateSpec* a, const TemplateSpec* b) {
                              return a->template_id < b->template_id;
                          });

                std::vector<PredictionRecord> records;
                for (const auto* tpl : templates) {
                    for (const auto* triple : world.triples_of(rel.relation_id)) {
                        if (want_original) {
                            Prompt prompt =
                                build_prompt(*tpl, *triple, PromptVariant::Original, vocab);
                            const auto dist = detail::probe_distribution(state, prompt,
                                                                         rc.cfg.augment, vocab,
                                                                         augmented);
                            auto record = make_prediction_record(
                                prompt, dist, vocab, rc.cfg.probe.topk_records, false);
                            // The stored full distribution feeds the KLD
                            // diagnostic, which compares the model's own
                            // (unaugmented) distributions.
                            if (tpl->is_base()) {
                                record.dist = augmented ? predict_distribution(state, prompt)
                                                        : dist;
                            }
                            records.push_back(std::move(record));
                        }
                        if (want_subject_masked && tpl->is_base()) {
                            Prompt prompt =
                                build_prompt(*tpl, *triple, PromptVariant::SubjectMasked, vocab);
                            const auto dist = predict_distribution(state, prompt);
                            records.push_back(make_prediction_record(
                                prompt, dist, vocab, rc.cfg.probe.topk_records, true));
                        }
                    }
                }
                return records;
            });

        // Mode/seed provenance from the checkpoints actually used.
        for (const auto& rel : world.relations) {
            auto loaded = load_checkpoint(
                detail::checkpoint_for_relation(checkpoint_dir, rel.relation_id));
            probed_mode = loaded.state.mode;
            seeds.insert(loaded.state.seed);
        }
        m.overrides["mode"] = probed_mode;
        m.seeds.assign(seeds.begin(), seeds.end());

        std::ofstream out(dir / "predictions.jsonl");
        for (const auto& records : relation_records) write_prediction_records(records, out);
        m.outputs = {"predictions.jsonl"};
    });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline void run_eval(const ResolvedConfig& rc, const std::string& predictions_dir,
                     const std::string& world_dir, const std::string& out_dir, bool force) {
    FactWorld world = load_world_checked(rc, world_dir);
    const auto upstream = read_manifest(predictions_dir);
    detail::check_config_hash(upstream, rc.hash, "predictions '" + predictions_dir + "'");

    const auto records = read_prediction_records(
        (std::filesystem::path(predictions_dir) / "predictions.jsonl").string());

    Provenance provenance;
    provenance.config_hash = rc.hash;
    provenance.seeds = upstream.seeds;
    provenance.mode = upstream.overrides.value("mode", "");
    provenance.tool_version = kToolVersion;

    RunManifest manifest;
    manifest.command = "eval";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.seeds = upstream.seeds;
    manifest.inputs = {{predictions_dir, manifest_hash_of_dir(predictions_dir)},
                       {world_dir, manifest_hash_of_dir(world_dir)}};

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        const MetricsReport report = build_report(records, world, rc.cfg.eval_options(),
                                                  provenance);
        std::ofstream jf(dir / "report.json");
        jf << report_to_json(report).dump(2) << '\n';
        std::ofstream mf(dir / "report.md");
        mf << report_to_markdown(report);
        m.outputs = {"report.json", "report.md"};
    });
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

inline MetricsReport load_report(const std::string& report_dir) {
    std::ifstream in(std::filesystem::path(report_dir) / "report.json");
    if (!in) throw std::runtime_error("missing report.json in '" + report_dir + "'");
    nlohmann::json j;
    in >> j;
    return report_from_json(j);
}

inline void run_compare(const ResolvedConfig& rc, const std::string& report_dir_a,
                        const std::string& report_dir_b, const std::string& out_dir,
                        bool force) {
    const MetricsReport a = load_report(report_dir_a);
    const MetricsReport b = load_report(report_dir_b);
    if (a.provenance.config_hash != b.provenance.config_hash) {
        throw std::runtime_error("config hash mismatch between reports: " +
                                 a.provenance.config_hash + " vs " + b.provenance.config_hash);
    }

    RunManifest manifest;
    manifest.command = "compare";
    manifest.config_hash = rc.hash;
    manifest.overrides = rc.overrides;
    manifest.inputs = {{report_dir_a, manifest_hash_of_dir(report_dir_a)},
                       {report_dir_b, manifest_hash_of_dir(report_dir_b)}};
    for (auto s : a.provenance.seeds) manifest.seeds.push_back(s);

    detail::run_stage(out_dir, force, manifest, [&](const std::filesystem::path& dir,
                                                    RunManifest& m) {
        const auto comparison = compare_reports(a, b);
        nlohmann::ordered_json j;
        j["report_a"] = {{"mode", a.provenance.mode}, {"seeds", a.provenance.seeds}};
        j["report_b"] = {{"mode", b.provenance.mode}, {"seeds", b.provenance.seeds}};
        j["metrics"] = comparison_to_json(comparison);
        std::ofstream jf(dir / "compare.json");
        jf << j.dump(2) << '\n';
        std::ofstream mf(dir / "compare.md");
        mf << comparison_to_markdown(comparison,
                                     a.provenance.mode.empty() ? "A" : a.provenance.mode,
                                     b.provenance.mode.empty() ? "B" : b.provenance.mode);
        m.outputs = {"compare.json", "compare.md"};
    });
}

}  // namespace uniark
