// Command-line front end for the uniark pipeline:
//   generate-world -> pretrain -> tune -> probe -> eval -> compare
// One JSON config drives every stage; flags override the config and are
// recorded in the output manifests. All state lives under explicit --out
// directories.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "uniark/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    std::size_t jobs = 0;
};

uniark::ResolvedConfig resolve(const CommonArgs& args) {
    uniark::PipelineConfig cfg = args.config_path.empty()
                                     ? uniark::paper_mini_config()
                                     : uniark::load_config_file(args.config_path);
    uniark::ResolvedConfig rc = uniark::resolve_config(cfg);
    if (args.seed_set) {
        rc.cfg.model.seed = args.seed;
        rc.cfg.train.seed = args.seed;
        rc.overrides["seed"] = args.seed;
    }
    return rc;
}

std::size_t effective_jobs(const CommonArgs& args) {
    if (args.jobs > 0) return args.jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

std::vector<std::string> read_relation_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open relation list '" + path + "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path,
                    "pipeline config JSON (defaults to the paper-mini preset)");
    cmd->add_option("--seed", args.seed, "override the model/train seed")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_flag("--force", args.force, "replace existing output directories");
    cmd->add_option("--jobs", args.jobs, "parallel relation workers (default: all cores)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic factual-probing debiasing laboratory"};
    app.set_version_flag("--version",
                         std::string(uniark::kToolName) + " " + uniark::kToolVersion);
    app.require_subcommand(1);

    CommonArgs args;

    // generate-world
    auto* gen = app.add_subcommand("generate-world", "generate a synthetic fact world");
    std::string gen_out;
    add_common(gen, args);
    gen->add_option("--out", gen_out, "output directory")->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "pretrain the masked LM on the world corpus");
    std::string pre_world, pre_out;
    add_common(pre, args);
    pre->add_option("--world", pre_world, "world directory")->required();
    pre->add_option("--out", pre_out, "output directory")->required();

    // tune
    auto* tun = app.add_subcommand("tune", "tune a pretrained checkpoint per mode");
    std::string tun_world, tun_pretrain, tun_out, tun_mode = "uniark";
    double tun_lambda_me = -1.0, tun_lambda_kld = -1.0;
    double tun_w_true = 0.0, tun_w_false = 0.0;
    bool tun_no_aug = false;
    long tun_paras = -1;
    add_common(tun, args);
    tun->add_option("--world", tun_world, "world directory")->required();
    tun->add_option("--pretrain", tun_pretrain, "pretrain output directory")->required();
    tun->add_option("--mode", tun_mode, "none|finetune|adapter|uniark|uniark-para");
    tun->add_option("--out", tun_out, "output directory")->required();
    tun->add_option("--lambda-me", tun_lambda_me, "override the max-entropy weight");
    tun->add_option("--lambda-kld", tun_lambda_kld, "override the paraphrase KLD weight");
    auto* wt = tun->add_option("--w-true", tun_w_true, "override the true-prefix weight");
    auto* wf = tun->add_option("--w-false", tun_w_false, "override the false-prefix weight");
    tun->add_flag("--no-augment", tun_no_aug, "disable the true/false augmentation");
    tun->add_option("--para-templates", tun_paras, "paraphrases per relation (uniark-para)");
    wt->needs(wf);
    wf->needs(wt);

    // probe
    auto* prb = app.add_subcommand("probe", "run inference and emit predictions.jsonl");
    std::string prb_world, prb_ckpt, prb_out, prb_variants, prb_augment;
    add_common(prb, args);
    prb->add_option("--world", prb_world, "world directory")->required();
    prb->add_option("--checkpoints", prb_ckpt, "tune or pretrain output directory")->required();
    prb->add_option("--out", prb_out, "output directory")->required();
    prb->add_option("--variants", prb_variants,
                    "comma-separated list: original,subject_masked");
    prb->add_option("--augment", prb_augment, "auto|on|off");

    // eval
    auto* evl = app.add_subcommand("eval", "compute the metrics report");
    std::string evl_pred, evl_world, evl_out, evl_exclude;
    bool evl_no_quality = false, evl_no_bias = false, evl_no_consistency = false,
         evl_no_diversity = false;
    add_common(evl, args);
    evl->add_option("--predictions", evl_pred, "probe output directory")->required();
    evl->add_option("--world", evl_world, "world directory")->required();
    evl->add_option("--out", evl_out, "output directory")->required();
    evl->add_option("--exclude-relations", evl_exclude,
                    "file listing relation ids to exclude from consistency");
    evl->add_flag("--skip-quality", evl_no_quality, "skip hit@1/F1");
    evl->add_flag("--skip-bias", evl_no_bias, "skip ct_hit1/KLD/Pearson");
    evl->add_flag("--skip-consistency", evl_no_consistency, "skip consistency metrics");
    evl->add_flag("--skip-diversity", evl_no_diversity, "skip pairwise BLEU");

    // compare
    auto* cmp = app.add_subcommand("compare", "delta table and significance tests");
    std::string cmp_a, cmp_b, cmp_out;
    add_common(cmp, args);
    cmp->add_option("--report-a", cmp_a, "first eval output directory")->required();
    cmp->add_option("--report-b", cmp_b, "second eval output directory")->required();
    cmp->add_option("--out", cmp_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            uniark::run_generate_world(resolve(args), gen_out, args.force);
        } else if (pre->parsed()) {
            uniark::run_pretrain(resolve(args), pre_world, pre_out, args.force);
        } else if (tun->parsed()) {
            auto rc = resolve(args);
            if (tun_lambda_me >= 0.0) {
                rc.cfg.loss.lambda_me = tun_lambda_me;
                rc.overrides["lambda_me"] = tun_lambda_me;
            }
            if (tun_lambda_kld >= 0.0) {
                rc.cfg.loss.lambda_kld = tun_lambda_kld;
                rc.overrides["lambda_kld"] = tun_lambda_kld;
            }
            if (tun_no_aug) {
                rc.cfg.augment.w_true = 0.0;
                rc.cfg.augment.w_false = 0.0;
                rc.cfg.augment.w_raw = 1.0;
                rc.overrides["no_augment"] = true;
            } else if (wt->count() > 0) {
                rc.cfg.augment.w_true = tun_w_true;
                rc.cfg.augment.w_false = tun_w_false;
                rc.cfg.augment.w_raw = 1.0 - tun_w_true - tun_w_false;
                rc.overrides["w_true"] = tun_w_true;
                rc.overrides["w_false"] = tun_w_false;
            }
            if (tun_paras >= 0) {
                rc.cfg.train.para_templates = static_cast<std::size_t>(tun_paras);
                rc.overrides["para_templates"] = tun_paras;
            }
            uniark::run_tune(rc, tun_world, tun_pretrain,
                             uniark::tune_mode_from_string(tun_mode), tun_out,
                             effective_jobs(args), args.force);
        } else if (prb->parsed()) {
            auto rc = resolve(args);
            if (!prb_variants.empty()) {
                rc.cfg.probe.variants.clear();
                std::string item;
                std::istringstream ss(prb_variants);
                while (std::getline(ss, item, ',')) {
                    if (!item.empty()) rc.cfg.probe.variants.push_back(item);
                }
                rc.overrides["variants"] = rc.cfg.probe.variants;
            }
            if (!prb_augment.empty()) {
                rc.cfg.probe.augment = prb_augment;
                rc.overrides["augment"] = prb_augment;
            }
            uniark::run_probe(rc, prb_world, prb_ckpt, prb_out, effective_jobs(args),
                              args.force);
        } else if (evl->parsed()) {
            auto rc = resolve(args);
            if (!evl_exclude.empty()) {
                rc.cfg.eval.exclude_relations = read_relation_list(evl_exclude);
                rc.overrides["exclude_relations"] = rc.cfg.eval.exclude_relations;
            }
            if (evl_no_quality) rc.cfg.eval.quality = false;
            if (evl_no_bias) rc.cfg.eval.bias = false;
            if (evl_no_consistency) rc.cfg.eval.consistency = false;
            if (evl_no_diversity) rc.cfg.eval.diversity = false;
            uniark::run_eval(rc, evl_pred, evl_world, evl_out, args.force);
        } else if (cmp->parsed()) {
            uniark::run_compare(resolve(args), cmp_a, cmp_b, cmp_out, args.force);
        }
    } catch (const std::exception& e) {
        std::cerr << "uniark: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
