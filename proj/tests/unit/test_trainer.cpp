#include "doctest.h"
#include "fixtures.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/trainer.hpp"

using namespace oltqa;

namespace {

nlohmann::json comparable(const RunLog& log)
{
    auto j = log.to_json();
    j.erase("wall_seconds");
    return j;
}

}  // namespace

TEST_CASE("config defaults")
{
    TrainConfig c;
    CHECK(c.pool.size == 30);
    CHECK(c.pool.select_count == 5);
    CHECK(c.pool.eta == 0.15);
    CHECK(c.pool.gamma == 0.3);
    CHECK(c.ablation == Ablation::none);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config ini round trip and overrides")
{
    auto corpus = fixtures::tiny_corpus();
    auto c = fixtures::tiny_config(corpus);
    c.ablation = Ablation::static_mkd;
    c.key_schedule = KeySchedule::interleaved;
    auto text = config_to_ini(c);
    auto back = config_from_ini(text);
    CHECK(config_to_ini(back) == text);
    CHECK(back.unseen_tasks == c.unseen_tasks);

    auto o = config_from_ini(text, {"train.seed=11", "ranker.l_tilde=3", "train.ablation=no-pk"});
    CHECK(o.seed == 11);
    CHECK(o.l_tilde == 3);
    CHECK(o.ablation == Ablation::no_pk);

    CHECK_THROWS_AS(config_from_ini(text + "\n[train]\nbogus = 1\n"), InvalidArgument);
    CHECK_THROWS_AS(config_from_ini("[nowhere]\nx = 1\n"), InvalidArgument);
    CHECK_THROWS_AS(config_from_ini(text, {"train.seed"}), InvalidArgument);
    CHECK_THROWS_AS(config_from_ini(text, {"train.ablation=sideways"}), InvalidArgument);
    CHECK_THROWS_AS(config_from_ini(text, {"ranker.l_tilde=40"}), InvalidArgument);
}

TEST_CASE("one generation call per example and instance over a full run")
{
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    run_stage1(exp);
    run_stage2(exp);
    evaluate_suite(exp);
    const auto calls = exp.oracle().generate_calls();
    CHECK(calls > 0);
    CHECK(calls == exp.cached_oracle().cache().hint_count());
    // a second pass over everything is served from the cache
    evaluate_suite(exp);
    exp.evaluate(cfg.epochs);
    CHECK(exp.oracle().generate_calls() == calls);
}

TEST_CASE("stage II without prompts or KD is plain fine-tuning")
{
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    cfg.ablation = Ablation::no_prompts;
    cfg.weight_m = 0.0;
    cfg.weight_mkd = 0.0;
    cfg.epochs = 2;
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    auto vocab = std::make_shared<text::Vocabulary>(exp.vocab());
    const auto fp = exp.pool().fingerprint();
    QAModel reference(vocab, cfg.qa, 123);
    reference.load_json(exp.qa().to_json(fp), fp);

    run_stage2(exp);

    FinetuneConfig fc;
    fc.epochs = cfg.epochs;
    fc.batch_size = static_cast<int>(cfg.batch_size);
    fc.optimizer.learning_rate = cfg.learning_rate;
    fc.optimizer.weight_decay = cfg.weight_decay;
    fc.optimizer.clip_norm = cfg.clip_norm;
    fc.seed = cfg.seed;
    auto losses = finetune_qa(reference, exp.training_pool(), fc);

    CHECK(losses == exp.log().losses("qa"));
    const auto a = exp.qa().params().items();
    const auto b = reference.params().items();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.value() == b[i].second.value());
    }
}

TEST_CASE("runs are deterministic and resume exactly")
{
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    cfg.epochs = 3;

    auto run = [&](const std::filesystem::path& out) {
        Experiment exp(cfg, out, corpus.dataset, corpus.lexicon);
        run_stage1(exp);
        run_stage2(exp);
        return exp.log();
    };
    auto first = run(fixtures::scratch_dir("det_a"));
    auto second = run(fixtures::scratch_dir("det_b"));
    CHECK(comparable(first) == comparable(second));
    CHECK(first.scoreboards.size() == 3);
    CHECK(first.heldout_kl.size() == 2);

    auto dir = fixtures::scratch_dir("resume");
    {
        Experiment exp(cfg, dir, corpus.dataset, corpus.lexicon);
        run_stage1(exp);
        run_stage2(exp, false, 2);
        CHECK(exp.log().scoreboards.size() == 2);
        CHECK(std::filesystem::exists(dir / "stage2" / "epoch_1.json"));
        CHECK_FALSE(std::filesystem::exists(dir / "stage2" / "epoch_2.json"));
    }
    Experiment resumed(cfg, dir, corpus.dataset, corpus.lexicon);
    run_stage2(resumed, true);
    REQUIRE(resumed.log().scoreboards.size() == 3);
    for (auto tag : {ModelTag::r1, ModelTag::r2, ModelTag::f}) {
        CHECK(resumed.log().scoreboards[2].at(tag) == doctest::Approx(first.scoreboards[2].at(tag)).epsilon(1e-6));
    }
    CHECK(resumed.log().losses("qa") == first.losses("qa"));
}

TEST_CASE("zero stage I epochs leave the rankers untouched")
{
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    cfg.stage1_epochs = 0;
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    auto before = exp.rankers().to_json();
    run_stage1(exp);
    CHECK(exp.rankers().to_json() == before);
    CHECK(exp.log().heldout_kl.size() == 1);
}

TEST_CASE("suite summary covers every task under each ablation")
{
    auto corpus = fixtures::tiny_corpus();
    for (auto ablation : {Ablation::no_pm, Ablation::back_kd, Ablation::static_mkd}) {
        auto cfg = fixtures::tiny_config(corpus);
        cfg.ablation = ablation;
        cfg.epochs = 1;
        Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
        run_stage2(exp);
        auto suite = evaluate_suite(exp);
        CHECK(suite.summary.per_task.size() == corpus.dataset.task_order().size());
        for (const auto& [task, score] : suite.summary.per_task) {
            CHECK(score >= 0.0);
            CHECK(score <= 100.0);
        }
        CHECK(suite.summary_csv.find("summary,A_seen") != std::string::npos);
    }
}

TEST_CASE("checkpoints refuse a different manifest")
{
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    Experiment a(cfg, {}, corpus.dataset, corpus.lexicon);
    auto ck = a.checkpoint_json();
    auto other = cfg;
    other.alpha = 2.5;
    Experiment b(other, {}, corpus.dataset, corpus.lexicon);
    CHECK_THROWS_AS(b.load_checkpoint_json(ck), PreconditionError);
    Experiment c(cfg, {}, corpus.dataset, corpus.lexicon);
    CHECK_NOTHROW(c.load_checkpoint_json(ck));
}
