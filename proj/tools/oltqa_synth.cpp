// Writes the planted synthetic corpus (corpus.jsonl), its lexicon (lexicon.json) and a
// small matching config (config.ini).

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "oltqa/errors.hpp"
#include "oltqa/synthetic.hpp"
#include "oltqa/trainer.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"synthetic long-tail QA corpus"};
    std::string out = "synthetic";
    oltqa::SyntheticConfig cfg;
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", cfg.seed);
    app.add_option("--entities", cfg.entities);
    app.add_option("--relations", cfg.relations);
    app.add_option("--seen-variants", cfg.seen_variants);
    app.add_option("--unseen-variants", cfg.unseen_variants);
    app.add_option("--train-per-task", cfg.train_per_task);
    app.add_option("--val-per-task", cfg.val_per_task);
    app.add_option("--test-per-task", cfg.test_per_task);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        auto corpus = oltqa::make_synthetic_corpus(cfg);
        std::filesystem::create_directories(out);
        std::vector<oltqa::QAInstance> all;
        for (const auto& task : corpus.dataset.task_order()) {
            for (auto split : {oltqa::Split::train, oltqa::Split::val, oltqa::Split::test}) {
                const auto& v = corpus.dataset.split(task, split);
                all.insert(all.end(), v.begin(), v.end());
            }
        }
        const auto dir = std::filesystem::path(out);
        oltqa::write_jsonl((dir / "corpus.jsonl").string(), all);
        std::ofstream(dir / "lexicon.json") << oltqa::lexicon_to_json(corpus.lexicon).dump(2) << "\n";

        auto tc = oltqa::synthetic_suite_config(corpus.unseen_task_ids);
        tc.corpus_path = (dir / "corpus.jsonl").string();
        tc.lexicon_path = (dir / "lexicon.json").string();
        std::ofstream(dir / "config.ini") << oltqa::config_to_ini(tc);
        std::cout << "wrote " << all.size() << " instances, " << corpus.lexicon.size() << " lexicon entries to "
                  << out << "\n";
    } catch (const oltqa::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
