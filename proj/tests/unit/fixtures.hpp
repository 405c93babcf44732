#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "oltqa/qa_model.hpp"
#include "oltqa/synthetic.hpp"
#include "oltqa/task_registry.hpp"
#include "oltqa/trainer.hpp"

namespace fixtures {

inline oltqa::QAInstance make_instance(std::string id, std::string task, std::string question,
                                       std::string context, std::string answer,
                                       oltqa::Format format = oltqa::Format::abstractive)
{
    oltqa::QAInstance inst;
    inst.id = std::move(id);
    inst.task_id = std::move(task);
    inst.format = format;
    inst.question = std::move(question);
    inst.context = std::move(context);
    inst.answer = std::move(answer);
    return inst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("oltqa_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Very small synthetic corpus and a matching config; a full run takes a couple of seconds.
inline oltqa::SyntheticCorpus tiny_corpus(std::uint64_t seed = 7)
{
    oltqa::SyntheticConfig sc;
    sc.seed = seed;
    sc.entities = 12;
    sc.relations = 2;
    sc.seen_variants = 2;
    sc.unseen_variants = 1;
    sc.train_per_task = 24;
    sc.val_per_task = 6;
    sc.test_per_task = 6;
    return oltqa::make_synthetic_corpus(sc);
}

inline oltqa::TrainConfig tiny_config(const oltqa::SyntheticCorpus& corpus)
{
    auto tc = oltqa::synthetic_suite_config(corpus.unseen_task_ids);
    tc.head_budget = 24;
    tc.head_m = 1;
    tc.tail_n = 1;
    tc.c = 12;
    tc.l = 4;
    tc.l_tilde = 2;
    tc.candidate_subsample = 4;
    tc.stage1_epochs = 1;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.val_subsample = 8;
    tc.pool.size = 4;
    tc.pool.select_count = 2;
    tc.pool.prompt_length = 2;
    tc.pool.key_dim = 16;
    tc.pool.model_dim = 16;
    tc.encoder_dim = 16;
    tc.ranker.retriever.dim = 16;
    tc.ranker.reranker.dim = 16;
    tc.qa.dim = 16;
    tc.qa.ff_dim = 32;
    tc.qa.encoder_layers = 1;
    tc.qa.decoder_layers = 1;
    return tc;
}

/// Answer words and instances for the copy task: the answer is always the single hint.
inline const std::vector<std::string>& copy_words()
{
    static const std::vector<std::string> words{"amber", "basil", "cedar", "delta", "ember", "fjord", "gable", "heron"};
    return words;
}

inline std::shared_ptr<oltqa::text::Vocabulary> copy_vocab()
{
    static auto vocab = [] {
        auto v = std::make_shared<oltqa::text::Vocabulary>();
        for (const auto& w : copy_words()) v->add(w);
        v->add_text("what is the word record number");
        for (int i = 0; i < 10; ++i) v->add(std::to_string(i));
        return v;
    }();
    return vocab;
}

inline oltqa::QAInstance copy_instance(int i, const std::string& answer)
{
    return make_instance("copy" + std::to_string(i), "copy", "what is the word", "record number " + std::to_string(i % 10),
                         answer);
}

/// A small F trained to copy its hint into the answer. Built once per process.
inline const oltqa::QAModel& copy_model()
{
    static const oltqa::QAModel model = [] {
        oltqa::QAModelConfig cfg;
        cfg.dim = 16;
        cfg.heads = 2;
        cfg.ff_dim = 32;
        cfg.encoder_layers = 1;
        cfg.decoder_layers = 1;
        cfg.max_source_tokens = 24;
        cfg.max_target_tokens = 3;
        oltqa::QAModel m(copy_vocab(), cfg, 5);
        oltqa::nn::AdamWConfig ac;
        ac.learning_rate = 1e-2;
        ac.weight_decay = 0.0;
        oltqa::nn::AdamW opt(m.params(), ac);
        std::mt19937_64 rng(1);
        std::vector<oltqa::QAInstance> data;
        for (int i = 0; i < 64; ++i) data.push_back(copy_instance(i, copy_words()[rng() % copy_words().size()]));
        for (int step = 0; step < 250; ++step) {
            std::vector<oltqa::PromptedInput> batch;
            for (int b = 0; b < 8; ++b) {
                const auto& inst = data[rng() % data.size()];
                batch.push_back({&inst, {}, {inst.answer}});
            }
            auto loss = oltqa::qa_loss(m, batch);
            oltqa::ag::backward(loss);
            opt.step();
        }
        return m;
    }();
    return model;
}

}  // namespace fixtures
