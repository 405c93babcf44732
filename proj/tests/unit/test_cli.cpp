#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"

#ifndef OLTQA_CLI_PATH
#error "OLTQA_CLI_PATH must name the oltqa executable"
#endif

namespace fs = std::filesystem;
using namespace oltqa;

namespace {

int run_cli(const std::string& args, const fs::path& log)
{
    std::string cmd = std::string("\"") + OLTQA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes the tiny corpus, its lexicon and config into dir; returns the config path.
fs::path write_inputs(const fs::path& dir)
{
    auto corpus = fixtures::tiny_corpus();
    std::vector<QAInstance> all;
    for (const auto& task : corpus.dataset.task_order()) {
        for (auto s : {Split::train, Split::val, Split::test}) {
            const auto& v = corpus.dataset.split(task, s);
            all.insert(all.end(), v.begin(), v.end());
        }
    }
    write_jsonl((dir / "corpus.jsonl").string(), all);
    std::ofstream(dir / "lexicon.json") << lexicon_to_json(corpus.lexicon).dump();
    auto cfg = fixtures::tiny_config(corpus);
    cfg.corpus_path = (dir / "corpus.jsonl").string();
    cfg.lexicon_path = (dir / "lexicon.json").string();
    cfg.epochs = 1;
    std::ofstream(dir / "config.ini") << config_to_ini(cfg);
    return dir / "config.ini";
}

}  // namespace

TEST_CASE("cli exit codes and outputs")
{
    auto dir = fixtures::scratch_dir("cli");
    auto config = write_inputs(dir);
    auto log = dir / "out.txt";
    const std::string cfg_arg = "--config \"" + config.string() + "\"";

    SUBCASE("curate")
    {
        auto out = dir / "curate";
        REQUIRE(run_cli("curate " + cfg_arg + " --out \"" + out.string() + "\"", log) == 0);
        auto report = slurp(out / "curation.csv");
        CHECK(report.rfind("# alpha=1.0 head_budget=24", 0) == 0);
        std::size_t rows = 0;
        std::istringstream in(report);
        std::string line;
        while (std::getline(in, line)) rows += line.find(",seen") != std::string::npos ||
                                               line.find(",unseen") != std::string::npos;
        CHECK(rows == 6);
        auto first = slurp(out / "manifest.json");
        REQUIRE(run_cli("curate " + cfg_arg + " --out \"" + out.string() + "\"", log) == 0);
        CHECK(slurp(out / "manifest.json") == first);
    }
    SUBCASE("invalid input exits with 1")
    {
        CHECK(run_cli("curate", log) == 1);
        CHECK(run_cli("train " + cfg_arg + " --ablation sideways", log) == 1);
        CHECK(run_cli("curate " + cfg_arg + " --override train.nope=1", log) == 1);
        CHECK(run_cli("frobnicate", log) == 1);
        CHECK(run_cli("eval " + cfg_arg + " --out \"" + (dir / "nothing").string() + "\"", log) == 1);
    }
    SUBCASE("runtime failure exits with 2")
    {
        auto out = dir / "remote";
        CHECK(run_cli("pretrain-rankers " + cfg_arg + " --out \"" + out.string() +
                          "\" --override oracle.backend=remote --override oracle.endpoint=http://127.0.0.1:9" +
                          " --override oracle.timeout=1",
                      log) == 2);
    }
    SUBCASE("train then report")
    {
        auto out = dir / "run";
        REQUIRE(run_cli("train " + cfg_arg + " --out \"" + out.string() + "\"", log) == 0);
        CHECK(slurp(log).find("A_seen") != std::string::npos);
        for (const auto* f : {"checkpoint.json", "runlog.json", "summary.csv", "scoreboard.jsonl", "config.ini"}) {
            CHECK(fs::exists(out / f));
        }
        REQUIRE(run_cli("report --out \"" + out.string() + "\"", log) == 0);
        CHECK(fs::exists(out / "report" / "scoreboard_curve.csv"));
        CHECK(fs::exists(out / "report" / "losses.csv"));
        CHECK(slurp(out / "report" / "report.txt").find("gap: curation.csv missing") != std::string::npos);
        CHECK(run_cli("eval " + cfg_arg + " --out \"" + out.string() + "\"", log) == 0);
    }
}
