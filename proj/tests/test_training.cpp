#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "uniark/training.hpp"
#include "uniark/world.hpp"

using namespace uniark;

namespace {

struct Lab {
    FactWorld world;
    Vocabulary vocab;
    Corpus corpus;
    ModelState state;
};

Lab make_lab(std::uint64_t world_seed = 51, std::uint64_t model_seed = 20) {
    Lab lab;
    WorldConfig wcfg;
    wcfg.n_relations = 2;
    wcfg.subjects_per_relation = 10;
    wcfg.objects_per_relation = 4;
    wcfg.paraphrases_per_relation = 4;
    wcfg.short_paraphrases = 1;
    wcfg.long_paraphrases = 1;
    wcfg.nm_relations = 0;
    wcfg.corpus_repeats = 2;
    wcfg.distractors_per_relation = 8;
    wcfg.seed = world_seed;
    lab.world = generate_world(wcfg);
    lab.vocab = build_vocabulary(lab.world, {"It is true that", "It is false that"});
    lab.corpus = render_pretraining_corpus(lab.world);

    ModelConfig mc;
    mc.vocab_size = lab.vocab.size();
    mc.max_seq_len = 48;
    mc.d_model = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ffn_width = 24;
    lab.state = init_model(mc, model_seed);
    return lab;
}

std::vector<double> flatten(const ModelState& state, bool base_only = false) {
    std::vector<double> out;
    for (const auto& p : state.params) {
        if (base_only && p.is_adapter) continue;
        out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    }
    return out;
}

TrainConfig quick_train() {
    TrainConfig cfg;
    cfg.epochs_pretrain = 3;
    cfg.epochs_tune = 3;
    cfg.batch_size = 8;
    cfg.seed = 20;
    return cfg;
}

}  // namespace

TEST_CASE("pretraining reduces the loss") {
    auto lab = make_lab();
    auto report = pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train());
    REQUIRE(report.epoch_losses.size() == 3);
    CHECK(report.epoch_losses.back() < report.epoch_losses.front());
}

TEST_CASE("pretraining is bit-deterministic") {
    auto a = make_lab();
    auto b = make_lab();
    pretrain(a.state, a.corpus.sentences, a.vocab, quick_train());
    pretrain(b.state, b.corpus.sentences, b.vocab, quick_train());
    CHECK(flatten(a.state) == flatten(b.state));
}

TEST_CASE("masking fraction stays near 15 percent") {
    auto lab = make_lab();
    TrainConfig cfg = quick_train();
    cfg.epochs_pretrain = 5;
    auto report = pretrain(lab.state, lab.corpus.sentences, lab.vocab, cfg);
    CHECK(std::abs(report.masked_fraction() - 0.15) < 0.01);
}

TEST_CASE("pretraining rejects bad inputs") {
    auto lab = make_lab();
    CHECK_THROWS_AS(pretrain(lab.state, {}, lab.vocab, quick_train()), std::invalid_argument);
    insert_adapters(lab.state, 4, 1);
    CHECK_THROWS_AS(pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train()),
                    std::invalid_argument);
}

TEST_CASE("optimizers leave parameters unchanged on zero gradients") {
    Tensor t = Tensor::from_values({3}, {1.0, 2.0, 3.0}, true);
    NamedParam p{"p", t, false};
    std::vector<NamedParam*> params{&p};
    const std::vector<double> before(t.data().begin(), t.data().end());

    SECTION("sgd without grads") {
        SgdOptimizer sgd(0.1);
        sgd.step(params);
        CHECK(std::vector<double>(t.data().begin(), t.data().end()) == before);
    }

    SECTION("sgd with explicit zero grads") {
        auto g = t.mutable_grad();  // allocates zeros
        (void)g;
        SgdOptimizer sgd(0.1);
        sgd.step(params);
        CHECK(std::vector<double>(t.data().begin(), t.data().end()) == before);
    }

    SECTION("adam with zero grads and zero moments") {
        auto g = t.mutable_grad();
        (void)g;
        AdamOptimizer adam(0.1, 0.9, 0.999, 1e-8);
        adam.step(params);
        adam.step(params);
        CHECK(std::vector<double>(t.data().begin(), t.data().end()) == before);
    }
}

TEST_CASE("gradient clipping caps the global norm") {
    Tensor t = Tensor::from_values({2}, {0.0, 0.0}, true);
    auto g = t.mutable_grad();
    g[0] = 3.0;
    g[1] = 4.0;  // norm 5
    NamedParam p{"p", t, false};
    std::vector<NamedParam*> params{&p};
    clip_gradients(params, 1.0);
    CHECK(t.grad()[0] == Catch::Approx(0.6));
    CHECK(t.grad()[1] == Catch::Approx(0.8));
}

TEST_CASE("tune mode none returns the state unchanged") {
    auto lab = make_lab();
    auto tuned = tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::None, LossConfig{},
                      AugmentationConfig{}, quick_train());
    CHECK(flatten(tuned) == flatten(lab.state));
    CHECK(tuned.mode == "none");
}

TEST_CASE("adapter-mode tuning freezes the base bitwise") {
    auto lab = make_lab();
    pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train());
    insert_adapters(lab.state, 4, 20);
    const auto base_before = flatten(lab.state, /*base_only=*/true);

    std::ostringstream log;
    auto tuned = tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::Adapter, LossConfig{},
                      AugmentationConfig{}, quick_train(), &log);
    CHECK(flatten(tuned, /*base_only=*/true) == base_before);
    CHECK(flatten(tuned) != flatten(lab.state));  // adapters moved
    CHECK(log.str().find("\"mode\":\"adapter\"") != std::string::npos);
}

TEST_CASE("finetune mode trains every parameter") {
    auto lab = make_lab();
    pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train());
    auto tuned = tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::Finetune, LossConfig{},
                      AugmentationConfig{}, quick_train());
    CHECK(tuned.mode == "finetune");
    // base parameters moved (no freezing in this mode)
    CHECK(flatten(tuned, /*base_only=*/true) != flatten(lab.state, /*base_only=*/true));
}

TEST_CASE("uniark-para tuning runs with sampled paraphrases") {
    auto lab = make_lab();
    pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train());
    insert_adapters(lab.state, 4, 20);
    TrainConfig cfg = quick_train();
    cfg.para_templates = 2;
    std::ostringstream log;
    auto tuned = tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::UniArkPara,
                      LossConfig{}, AugmentationConfig{}, cfg, &log);
    CHECK(tuned.mode == "uniark_para");
    // the log carries a nonzero KLD term at least once
    std::istringstream lines(log.str());
    std::string line;
    bool saw_kld = false;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        saw_kld = saw_kld || j.at("loss_kld").get<double>() > 0.0;
    }
    CHECK(saw_kld);
}

TEST_CASE("adapter modes require adapters") {
    auto lab = make_lab();
    CHECK_THROWS_AS(tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::UniArk,
                         LossConfig{}, AugmentationConfig{}, quick_train()),
                    std::runtime_error);
}

TEST_CASE("uniark tuning lowers the tuning-set mlm loss") {
    auto lab = make_lab();
    TrainConfig cfg = quick_train();
    cfg.epochs_pretrain = 6;
    pretrain(lab.state, lab.corpus.sentences, lab.vocab, cfg);
    insert_adapters(lab.state, 4, 20);

    // step-0 loss on the tuning samples
    std::set<std::size_t> stopwords = stopword_ids_for(lab.world.relations[0], lab.vocab);
    std::vector<TuneSample> batch;
    const auto& base = lab.world.base_template("R01");
    for (const auto* triple : lab.world.triples_of("R01")) {
        batch.push_back({triple, &base, {}, &stopwords});
    }
    LossConfig loss_cfg;
    AugmentationConfig aug;
    const double before =
        total_loss(batch, lab.state, lab.vocab, loss_cfg, aug, LossMode::UniArk).loss_mlm;

    TrainConfig tune_cfg = quick_train();
    tune_cfg.epochs_tune = 20;
    tune_cfg.learning_rate_tune = 1e-2;
    auto tuned = tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::UniArk, loss_cfg, aug,
                      tune_cfg);
    const double after =
        total_loss(batch, tuned, lab.vocab, loss_cfg, aug, LossMode::UniArk).loss_mlm;
    CHECK(after < before);
}

TEST_CASE("tuning is deterministic given the seed") {
    auto lab1 = make_lab();
    auto lab2 = make_lab();
    TrainConfig cfg = quick_train();
    pretrain(lab1.state, lab1.corpus.sentences, lab1.vocab, cfg);
    pretrain(lab2.state, lab2.corpus.sentences, lab2.vocab, cfg);
    insert_adapters(lab1.state, 4, 20);
    insert_adapters(lab2.state, 4, 20);
    auto t1 = tune(lab1.state, lab1.world, lab1.vocab, {"R01"}, TuneMode::UniArk, LossConfig{},
                   AugmentationConfig{}, cfg);
    auto t2 = tune(lab2.state, lab2.world, lab2.vocab, {"R01"}, TuneMode::UniArk, LossConfig{},
                   AugmentationConfig{}, cfg);
    CHECK(flatten(t1) == flatten(t2));
}

TEST_CASE("training log lines carry the loss terms") {
    auto lab = make_lab();
    pretrain(lab.state, lab.corpus.sentences, lab.vocab, quick_train());
    insert_adapters(lab.state, 4, 20);
    std::ostringstream log;
    tune(lab.state, lab.world, lab.vocab, {"R01"}, TuneMode::UniArk, LossConfig{},
         AugmentationConfig{}, quick_train(), &log);
    const auto text = log.str();
    CHECK(text.find("\"step\":0") != std::string::npos);
    CHECK(text.find("loss_total") != std::string::npos);
    CHECK(text.find("loss_mlm") != std::string::npos);
    CHECK(text.find("entropy_bits_subject_masked") != std::string::npos);
    CHECK(text.find("entropy_bits_object_masked") != std::string::npos);
    CHECK(text.find("loss_kld") != std::string::npos);
}
