#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "uniark/config.hpp"

namespace fs = std::filesystem;

namespace {

const char* kMicroConfig = R"json({
  "world": {
    "n_relations": 2, "subjects_per_relation": 8, "objects_per_relation": 4,
    "paraphrases_per_relation": 4, "short_paraphrases": 1, "long_paraphrases": 1,
    "nm_relations": 0, "corpus_repeats": 2, "distractors_per_relation": 8, "seed": 5
  },
  "model": {
    "max_seq_len": 48, "d_model": 16, "n_layers": 1, "n_heads": 2,
    "ffn_width": 24, "adapter_dim": 4, "seed": 20
  },
  "train": {
    "batch_size": 8, "epochs_pretrain": 2, "epochs_tune": 2, "seed": 20
  }
})json";

struct CliRun {
    int exit_code;
    std::string output;
};

CliRun run_cli(const std::string& args) {
    const std::string cmd = std::string(UNIARK_CLI_PATH) + " " + args + " 2>&1";
    std::string output;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli pipeline end to end") {
    const fs::path root = fs::temp_directory_path() / "uniark_cli_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto config = root / "config.json";
    std::ofstream(config) << kMicroConfig;

    const std::string base = "--config " + config.string();
    const auto world = (root / "world").string();
    const auto pretrain = (root / "pretrain").string();
    const auto tuned = (root / "tune-adapter").string();
    const auto probed = (root / "probe-adapter").string();
    const auto evald = (root / "eval-adapter").string();

    SECTION("full chain, determinism, overwrite rules, hash checks") {
        auto r = run_cli("generate-world " + base + " --out " + world);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(fs::path(world) / "relations.jsonl"));
        CHECK(fs::exists(fs::path(world) / "run_manifest.json"));

        // refuses to overwrite without --force
        r = run_cli("generate-world " + base + " --out " + world);
        CHECK(r.exit_code != 0);
        CHECK(r.output.find("--force") != std::string::npos);
        r = run_cli("generate-world " + base + " --out " + world + " --force");
        CHECK(r.exit_code == 0);

        r = run_cli("pretrain " + base + " --world " + world + " --out " + pretrain);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(fs::path(pretrain) / "model.ckpt"));

        r = run_cli("tune " + base + " --world " + world + " --pretrain " + pretrain +
                    " --mode adapter --jobs 2 --out " + tuned);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(fs::path(tuned) / "model-R01.ckpt"));
        CHECK(fs::exists(fs::path(tuned) / "model-R02.ckpt"));
        CHECK(fs::exists(fs::path(tuned) / "train_log.jsonl"));

        r = run_cli("probe " + base + " --world " + world + " --checkpoints " + tuned +
                    " --jobs 2 --out " + probed);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(fs::path(probed) / "predictions.jsonl"));

        r = run_cli("eval " + base + " --predictions " + probed + " --world " + world +
                    " --out " + evald);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        const auto report1 = slurp(fs::path(evald) / "report.json");
        CHECK(report1.find("\"relations\"") != std::string::npos);
        CHECK(fs::exists(fs::path(evald) / "report.md"));

        // rerunning eval on unchanged inputs is byte-identical
        r = run_cli("eval " + base + " --predictions " + probed + " --world " + world +
                    " --out " + evald + " --force");
        REQUIRE(r.exit_code == 0);
        CHECK(slurp(fs::path(evald) / "report.json") == report1);

        // probing the raw pretrained checkpoint works too (mode none path)
        const auto probed_none = (root / "probe-none").string();
        r = run_cli("probe " + base + " --world " + world + " --checkpoints " + pretrain +
                    " --jobs 2 --out " + probed_none);
        REQUIRE(r.exit_code == 0);
        const auto evald_none = (root / "eval-none").string();
        r = run_cli("eval " + base + " --predictions " + probed_none + " --world " + world +
                    " --out " + evald_none);
        REQUIRE(r.exit_code == 0);

        // compare two reports
        const auto cmp = (root / "compare").string();
        r = run_cli("compare " + base + " --report-a " + evald + " --report-b " + evald_none +
                    " --out " + cmp);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        const auto cj = slurp(fs::path(cmp) / "compare.json");
        CHECK(cj.find("t_test_p") != std::string::npos);
        CHECK(cj.find("wilcoxon_p") != std::string::npos);

        // uniark-para tuning plus ablation flags parse and run
        const auto tuned_para = (root / "tune-para").string();
        r = run_cli("tune " + base + " --world " + world + " --pretrain " + pretrain +
                    " --mode uniark-para --para-templates 1 --jobs 2 --out " + tuned_para);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        const auto tuned_ablation = (root / "tune-noaug").string();
        r = run_cli("tune " + base + " --world " + world + " --pretrain " + pretrain +
                    " --mode uniark --lambda-me 0 --no-augment --jobs 2 --out " +
                    tuned_ablation);
        CAPTURE(r.output);
        REQUIRE(r.exit_code == 0);
        const auto manifest = slurp(fs::path(tuned_ablation) / "run_manifest.json");
        CHECK(manifest.find("\"no_augment\": true") != std::string::npos);
        CHECK(manifest.find("\"lambda_me\": 0.0") != std::string::npos);

        // metric subset selection drops the corresponding report fields
        const auto evald_slim = (root / "eval-slim").string();
        r = run_cli("eval " + base + " --predictions " + probed + " --world " + world +
                    " --skip-diversity --out " + evald_slim);
        REQUIRE(r.exit_code == 0);
        CHECK(slurp(fs::path(evald_slim) / "report.json").find("pairwise_bleu") ==
              std::string::npos);

        // a config change upstream is caught by the hash chain
        auto edited = nlohmann::json::parse(slurp(config));
        edited["train"]["epochs_pretrain"] = 3;
        std::ofstream(config) << edited.dump(2);
        r = run_cli("pretrain --config " + config.string() + " --world " + world + " --out " +
                    (root / "pretrain2").string());
        CHECK(r.exit_code != 0);
        CHECK(r.output.find("config hash mismatch") != std::string::npos);
    }

    SECTION("missing inputs fail with the expected path in the message") {
        auto r = run_cli("pretrain " + base + " --world " + (root / "nope").string() +
                         " --out " + (root / "x").string());
        CHECK(r.exit_code != 0);
        CHECK(r.output.find("nope") != std::string::npos);
    }

    fs::remove_all(root);
}

TEST_CASE("cli version flag") {
    auto r = run_cli("--version");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("uniark") != std::string::npos);
}
