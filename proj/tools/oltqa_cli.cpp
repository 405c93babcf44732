// oltqa <verb> [--config FILE] [--out DIR] [--seed N] [--override section.key=value]...
//             [--ablation none|no-pm|no-pk|no-mkd|static-mkd|back-kd|no-prompts]
//
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "oltqa/errors.hpp"
#include "oltqa/trainer.hpp"

namespace fs = std::filesystem;
using namespace oltqa;

namespace {

struct Options {
    std::string config;
    std::string out = "run";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::optional<std::string> ablation;
    bool resume = false;
    std::string checkpoint;
    std::vector<double> alphas{1.0, 2.0, 3.0};
    std::vector<std::size_t> unseen_counts;
};

TrainConfig resolve_config(const Options& o)
{
    if (o.config.empty()) {
        throw InvalidArgument("--config is required");
    }
    auto overrides = o.overrides;
    if (o.seed) {
        overrides.push_back("train.seed=" + std::to_string(*o.seed));
    }
    if (o.ablation) {
        overrides.push_back("train.ablation=" + *o.ablation);
    }
    if (const char* ep = std::getenv("OLTQA_ORACLE_ENDPOINT"); ep != nullptr && *ep != '\0') {
        overrides.push_back(std::string("oracle.endpoint=") + ep);
    }
    return load_config(o.config, overrides);
}

void write_text(const fs::path& p, const std::string& body)
{
    fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << body;
    if (!out) {
        throw std::runtime_error("cannot write " + p.string());
    }
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_curate(const Options& o)
{
    auto cfg = resolve_config(o);
    auto dataset = read_jsonl(cfg.corpus_path);
    auto registry = dataset.registry();
    auto unseen = cfg.unseen_tasks;
    if (unseen.empty() && cfg.n_unseen > 0) {
        unseen = split_seen_unseen(registry, cfg.n_unseen, cfg.seed).unseen;
    }
    auto manifest = curate(registry, unseen, cfg.alpha, cfg.head_budget, cfg.seed);
    fs::path out(o.out);
    write_text(out / "manifest.json", manifest.dump());
    std::string report = fmt::format("# alpha={:.1f} head_budget={} seed={}\n", cfg.alpha, cfg.head_budget, cfg.seed);
    report += "task_id,original_size,sampled_size,status\n";
    std::map<std::string, std::size_t> original;
    for (const auto& t : registry) {
        original[t.task_id] = t.original_train_size;
    }
    for (const auto& t : manifest.seen_task_ids) {
        report += fmt::format("{},{},{},seen\n", t, original[t], manifest.sampled_train_sizes.at(t));
    }
    for (const auto& t : manifest.unseen_task_ids) {
        report += fmt::format("{},{},0,unseen\n", t, original[t]);
    }
    write_text(out / "curation.csv", report);
    std::cout << report;
    return 0;
}

int cmd_pretrain(const Options& o)
{
    auto cfg = resolve_config(o);
    Experiment exp(cfg, o.out);
    run_stage1(exp);
    write_text(fs::path(o.out) / "stage1_log.json", exp.log().to_json().dump(2) + "\n");
    std::cout << fmt::format("stage I done: held-out KL(p_lm||p_r1) {:.4f} -> {:.4f}\n",
                             exp.log().heldout_kl.front(), exp.log().heldout_kl.back());
    return 0;
}

void print_summary(const ScoreSummary& s)
{
    std::cout << fmt::format("A_seen {:.2f}  A_unseen {:.2f}  Head@{} {:.2f}  Tail@{} {:.2f}\n", s.a_seen,
                             s.a_unseen, s.m, s.head_at_m, s.n, s.tail_at_n);
}

SuiteResult train_and_eval(const TrainConfig& cfg, const fs::path& out, bool resume)
{
    Experiment exp(cfg, out);
    write_text(out / "config.ini", config_to_ini(cfg));
    if (fs::exists(out / "rankers.json")) {
        exp.rankers().load_json(nlohmann::json::parse(read_text(out / "rankers.json")));
    } else {
        run_stage1(exp);
    }
    run_stage2(exp, resume);
    auto suite = evaluate_suite(exp);
    write_run_artifacts(exp, &suite);
    return suite;
}

int cmd_train(const Options& o)
{
    auto suite = train_and_eval(resolve_config(o), o.out, o.resume);
    print_summary(suite.summary);
    return 0;
}

int cmd_eval(const Options& o)
{
    auto cfg = resolve_config(o);
    fs::path ck = o.checkpoint.empty() ? fs::path(o.out) / "checkpoint.json" : fs::path(o.checkpoint);
    if (!fs::exists(ck)) {
        throw InvalidArgument("checkpoint " + ck.string() + " not found");
    }
    Experiment exp(cfg, o.out);
    exp.load_checkpoint_json(nlohmann::json::parse(read_text(ck)));
    auto suite = evaluate_suite(exp);
    write_text(fs::path(o.out) / "summary.csv", suite.summary_csv);
    if (!suite.heatmap_csv.empty()) {
        write_text(fs::path(o.out) / "heatmap.csv", suite.heatmap_csv);
    }
    print_summary(suite.summary);
    return 0;
}

int cmd_report(const Options& o)
{
    fs::path run(o.out);
    if (!fs::is_directory(run)) {
        throw InvalidArgument("run directory " + run.string() + " does not exist");
    }
    fs::path rep = run / "report";
    fs::create_directories(rep);
    std::vector<std::string> gaps;
    if (fs::exists(run / "runlog.json")) {
        auto log = RunLog::from_json(nlohmann::json::parse(read_text(run / "runlog.json")));
        std::string curve = "epoch,v_r1,v_r2,v_f,active_edges\n";
        for (const auto& b : log.scoreboards) {
            curve += fmt::format("{},{:.6f},{:.6f},{:.6f},{}\n", b.evaluated_at, b.at(ModelTag::r1),
                                 b.at(ModelTag::r2), b.at(ModelTag::f), edges_to_string(active_edges(b)));
        }
        write_text(rep / "scoreboard_curve.csv", curve);
        std::string losses = "phase,epoch,step,value\n";
        for (const auto& s : log.steps) {
            losses += fmt::format("{},{},{},{:.8f}\n", s.phase, s.epoch, s.step, s.value);
        }
        write_text(rep / "losses.csv", losses);
        std::string kl = "epoch,heldout_kl_r1\n";
        for (std::size_t i = 0; i < log.heldout_kl.size(); ++i) {
            kl += fmt::format("{},{:.8f}\n", i, log.heldout_kl[i]);
        }
        write_text(rep / "stage1_kl.csv", kl);
    } else {
        gaps.push_back("runlog.json missing: no scoreboard curve or loss trace");
    }
    for (const auto* name : {"summary.csv", "heatmap.csv", "curation.csv"}) {
        if (fs::exists(run / name)) {
            fs::copy_file(run / name, rep / name, fs::copy_options::overwrite_existing);
        } else {
            gaps.push_back(std::string(name) + " missing");
        }
    }
    std::string sweep = "cell,A_seen,A_unseen,Head@m,Tail@n\n";
    bool any_cell = false;
    if (fs::exists(run)) {
        std::vector<fs::path> cells;
        for (const auto& e : fs::directory_iterator(run)) {
            if (e.is_directory() && fs::exists(e.path() / "summary.csv")) {
                cells.push_back(e.path());
            }
        }
        std::sort(cells.begin(), cells.end());
        for (const auto& c : cells) {
            std::istringstream in(read_text(c / "summary.csv"));
            std::string line;
            std::map<std::string, std::string> v;
            while (std::getline(in, line)) {
                if (line.rfind("summary,", 0) == 0) {
                    auto a = line.find(',', 8);
                    auto b = line.find(',', a + 1);
                    v[line.substr(8, a - 8)] = line.substr(a + 1, b - a - 1);
                }
            }
            sweep += fmt::format("{},{},{},{},{}\n", c.filename().string(), v["A_seen"], v["A_unseen"],
                                 v["Head@m"], v["Tail@n"]);
            any_cell = true;
        }
    }
    if (any_cell) {
        write_text(rep / "sweep_grid.csv", sweep);
    }
    std::string note = gaps.empty() ? "complete\n" : "partial report\n";
    for (const auto& g : gaps) {
        note += "gap: " + g + "\n";
    }
    write_text(rep / "report.txt", note);
    std::cout << note;
    return 0;
}

int cmd_sweep(const Options& o)
{
    auto base = resolve_config(o);
    auto counts = o.unseen_counts;
    if (counts.empty()) {
        counts.push_back(base.unseen_tasks.empty() ? base.n_unseen : base.unseen_tasks.size());
    }
    for (double a : o.alphas) {
        for (auto u : counts) {
            auto cfg = base;
            cfg.alpha = a;
            if (u != (base.unseen_tasks.empty() ? base.n_unseen : base.unseen_tasks.size())) {
                cfg.unseen_tasks.clear();
                cfg.n_unseen = u;
            }
            cfg.validate();
            fs::path cell = fs::path(o.out) / fmt::format("alpha_{:.1f}_unseen_{}", a, u);
            auto suite = train_and_eval(cfg, cell, false);
            std::cout << cell.filename().string() << ": ";
            print_summary(suite.summary);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"long-tail open-world QA training"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "INI config file");
        sub->add_option("--out", o.out, "output / run directory");
        sub->add_option("--seed", o.seed, "overrides train.seed");
        sub->add_option("--override", o.overrides, "section.key=value (repeatable)");
        sub->add_option("--ablation", o.ablation, "none|no-pm|no-pk|no-mkd|static-mkd|back-kd|no-prompts");
    };
    auto* curate_cmd = app.add_subcommand("curate", "Zipf curation of the corpus");
    auto* pretrain_cmd = app.add_subcommand("pretrain-rankers", "Stage I ranker training");
    auto* train_cmd = app.add_subcommand("train", "Stage I (unless rankers.json exists), Stage II and evaluation");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on every test split");
    auto* report_cmd = app.add_subcommand("report", "export CSV data from a run directory");
    auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate over an alpha x unseen-count grid");
    for (auto* s : {curate_cmd, pretrain_cmd, train_cmd, eval_cmd, report_cmd, sweep_cmd}) {
        common(s);
    }
    train_cmd->add_flag("--resume", o.resume, "continue from the latest Stage II epoch checkpoint");
    eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint.json (default <out>/checkpoint.json)");
    sweep_cmd->add_option("--alphas", o.alphas, "alpha values");
    sweep_cmd->add_option("--unseen-counts", o.unseen_counts, "numbers of unseen tasks");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    try {
        if (curate_cmd->parsed()) return cmd_curate(o);
        if (pretrain_cmd->parsed()) return cmd_pretrain(o);
        if (train_cmd->parsed()) return cmd_train(o);
        if (eval_cmd->parsed()) return cmd_eval(o);
        if (report_cmd->parsed()) return cmd_report(o);
        if (sweep_cmd->parsed()) return cmd_sweep(o);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
