// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "reference.hpp"
#include "unit/fixtures.hpp"
#include "oltqa/distillation.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"
#include "oltqa/synthetic.hpp"
#include "oltqa/trainer.hpp"

using namespace oltqa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Collects failed checks; the first few are kept for the report line.
struct Checks {
    std::size_t total = 0;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what)
    {
        ++total;
        if (!ok) failures.push_back(what);
    }
    Outcome outcome(const std::string& summary) const
    {
        if (failures.empty()) return {true, fmt::format("{} ({} checks)", summary, total)};
        std::string d = fmt::format("{} of {} checks failed", failures.size(), total);
        for (std::size_t i = 0; i < failures.size() && i < 3; ++i) d += "; " + failures[i];
        return {false, d};
    }
};

ag::RowVector random_row(std::mt19937_64& rng, Eigen::Index n)
{
    std::normal_distribution<double> n01;
    ag::RowVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = n01(rng);
    return v;
}

std::vector<double> row_values(const ag::Var& v)
{
    const auto& m = v.value();
    return {m.data(), m.data() + m.size()};
}

double total(const std::vector<double>& p)
{
    double s = 0.0;
    for (double x : p) s += x;
    return s;
}

// 1. key loss gradient and exact zero on satisfied margins
Outcome key_loss_gradients()
{
    Checks c;
    std::mt19937_64 rng(101);
    int configs = 0;
    while (configs < 100) {
        const Eigen::Index s = 2 + static_cast<Eigen::Index>(rng() % 4), d = 3 + static_cast<Eigen::Index>(rng() % 6);
        ag::Matrix keys(s, d);
        for (Eigen::Index i = 0; i < s; ++i) keys.row(i) = random_row(rng, d);
        auto x = random_row(rng, d);
        std::vector<std::size_t> sel;
        for (Eigen::Index i = 0; i < s; ++i) {
            if (i == 0 || rng() % 2 == 0) sel.push_back(static_cast<std::size_t>(i));
        }
        const double eta = 0.1 + 0.2 * static_cast<double>(rng() % 5), gamma = 0.1 + 0.2 * static_cast<double>(rng() % 5);
        bool near_kink = false;
        for (auto i : sel) {
            near_kink |= std::abs(cosine_distance(keys.row(static_cast<Eigen::Index>(i)), x) - eta) < 1e-3;
            for (auto j : sel) {
                if (i != j) {
                    near_kink |= std::abs(cosine_distance(keys.row(static_cast<Eigen::Index>(i)),
                                                          keys.row(static_cast<Eigen::Index>(j))) - gamma) < 1e-3;
                }
            }
        }
        if (near_kink) continue;
        ++configs;
        auto r = key_loss(keys, x, sel, eta, gamma);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < keys.size(); ++i) {
            ag::Matrix plus = keys, minus = keys;
            plus.data()[i] += h;
            minus.data()[i] -= h;
            double fd = (key_loss(plus, x, sel, eta, gamma).value - key_loss(minus, x, sel, eta, gamma).value) / (2 * h);
            double an = r.grad.data()[i];
            c.expect(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)),
                     fmt::format("config {} entry {}: fd {} analytic {}", configs, i, fd, an));
        }
    }
    // margin-satisfying configurations: keys scattered around x, margins taken from the realised distances
    int satisfied = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index d = 6;
        auto x = random_row(rng, d);
        x /= x.norm();
        ag::Matrix keys(3, d);
        for (Eigen::Index i = 0; i < 3; ++i) {
            ag::RowVector noise = random_row(rng, d);
            keys.row(i) = x + 0.3 * noise;
        }
        std::vector<std::size_t> sel{0, 1, 2};
        double max_to_x = 0.0, min_pair = 2.0;
        for (auto i : sel) {
            max_to_x = std::max(max_to_x, cosine_distance(keys.row(static_cast<Eigen::Index>(i)), x));
            for (auto j : sel) {
                if (i != j) {
                    min_pair = std::min(min_pair, cosine_distance(keys.row(static_cast<Eigen::Index>(i)),
                                                                  keys.row(static_cast<Eigen::Index>(j))));
                }
            }
        }
        auto r = key_loss(keys, x, sel, max_to_x + 1e-9, min_pair - 1e-9);
        c.expect(r.value == 0.0 && r.grad.isZero(0.0), fmt::format("satisfied config {} has loss {}", trial, r.value));
        ++satisfied;
    }
    return c.outcome(fmt::format("{} random configurations, {} margin-satisfying", configs, satisfied));
}

// 2. normalization, shift invariance and KL identities
Outcome distribution_identities()
{
    Checks c;
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    const auto& train = exp.training_pool();
    for (std::size_t qi = 0; qi < 10; ++qi) {
        const auto& inst = train[qi * 3 % train.size()];
        auto cands = exp.subsample(inst, qi);
        exp.ensure_hints(cands, inst);
        std::vector<QAInstance> ex_values;
        std::vector<const QAInstance*> ex;
        for (auto k : cands.examples) {
            ex.push_back(&train[k]);
            ex_values.push_back(train[k]);
        }
        auto lm = lm_distribution(ex_values, inst, exp.cached_oracle()).probabilities;
        auto r1_scores = exp.rankers().retriever_scores(inst, ex);
        auto r2_scores = exp.rankers().reranker_scores(inst, ex, cands.hints);
        auto f_scores = qa_candidate_scores(exp.qa(), inst, cands, exp.meta_prompt(inst));
        std::map<std::string, std::vector<double>> dists{
            {"p_lm", lm},
            {"p_r1", row_values(ag::softmax_rows(r1_scores))},
            {"p_r2", row_values(ag::softmax_rows(r2_scores))},
            {"p_f", row_values(ag::softmax_rows(f_scores))}};
        for (const auto& [name, p] : dists) {
            c.expect(std::abs(total(p) - 1.0) <= 1e-6, fmt::format("{} sums to {}", name, total(p)));
        }
        for (const auto* scores : {&r1_scores, &r2_scores, &f_scores}) {
            auto raw = row_values(*scores);
            auto shifted = raw;
            for (auto& v : shifted) v += 37.5;
            auto p = softmax(raw), q = softmax(shifted);
            for (std::size_t i = 0; i < p.size(); ++i) c.expect(std::abs(p[i] - q[i]) <= 1e-9, "shift changed softmax");
        }
    }
    std::mt19937_64 rng(202);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> a(2 + static_cast<std::size_t>(trial % 7)), b(a.size());
        for (auto& v : a) v = n(rng);
        for (auto& v : b) v = n(rng);
        auto p = softmax(a), q = softmax(b);
        c.expect(kl_divergence(p, q) > 0.0, "KL not positive on distinct pair");
        c.expect(kl_divergence(p, p) == 0.0, "KL(p, p) is not zero");
    }
    return c.outcome("four producers on 10 instances, 1000 KL pairs");
}

bool all_zero(const nn::ParamSet& ps)
{
    for (const auto& [name, v] : ps.items()) {
        if (v.grad().size() != 0 && !v.grad().isZero(0.0)) return false;
    }
    return true;
}

// 3. stop-gradient probes on a miniature end-to-end graph
Outcome stop_gradient()
{
    Checks c;
    auto corpus = fixtures::tiny_corpus();
    auto cfg = fixtures::tiny_config(corpus);
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    const auto& train = exp.training_pool();
    const auto& inst = train[5];
    auto cands = exp.subsample(inst, 9);
    exp.ensure_hints(cands, inst);
    std::vector<const QAInstance*> ex;
    std::vector<QAInstance> ex_values;
    for (auto k : cands.examples) {
        ex.push_back(&train[k]);
        ex_values.push_back(train[k]);
    }
    auto& rk = exp.rankers();
    nn::ParamSet qa_side;
    qa_side.extend(exp.qa().params());
    qa_side.extend(exp.pool().prompt_params());
    auto zero_all = [&] {
        rk.retriever_params().zero_grad();
        rk.reranker_params().zero_grad();
        qa_side.zero_grad();
    };

    // Stage I: p_lm enters as a constant. F and the prompts are not part of this loss at all.
    zero_all();
    auto lm = lm_distribution(ex_values, inst, exp.cached_oracle()).probabilities;
    auto loss1 = stage1_loss(lm, ag::softmax_rows(rk.retriever_scores(inst, ex)),
                             ag::softmax_rows(rk.reranker_scores(inst, ex, cands.hints)));
    ag::backward(loss1);
    c.expect(!all_zero(rk.retriever_params()), "stage I: no gradient into R1");
    c.expect(!all_zero(rk.reranker_params()), "stage I: no gradient into R2");
    c.expect(all_zero(qa_side), "stage I: gradient leaked into F or prompts");
    const auto calls = exp.oracle().score_calls();
    ag::backward(stage1_loss(lm_distribution(ex_values, inst, exp.cached_oracle()).probabilities,
                             ag::softmax_rows(rk.retriever_scores(inst, ex)),
                             ag::softmax_rows(rk.reranker_scores(inst, ex, cands.hints))));
    c.expect(exp.oracle().score_calls() == calls, "stage I backward reached the oracle");

    // mutual KD: a model that is never a student receives nothing
    std::vector<std::array<double, 3>> orders;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int f = 0; f < 3; ++f) orders.push_back({-1.0 - a, -1.0 - b, -1.0 - f});
    std::map<ModelTag, const nn::ParamSet*> params{
        {ModelTag::r1, &rk.retriever_params()}, {ModelTag::r2, &rk.reranker_params()}, {ModelTag::f, &qa_side}};
    for (const auto& o : orders) {
        Scoreboard b;
        b.values = {{ModelTag::r1, o[0]}, {ModelTag::r2, o[1]}, {ModelTag::f, o[2]}};
        b.evaluated_at = 1;
        zero_all();
        auto loss = mutual_kd_loss(ag::softmax_rows(rk.retriever_scores(inst, ex)),
                                   ag::softmax_rows(rk.reranker_scores(inst, ex, cands.hints)),
                                   ag::softmax_rows(qa_candidate_scores(exp.qa(), inst, cands, exp.meta_prompt(inst))),
                                   b, 1);
        ag::backward(loss);
        auto edges = active_edges(b);
        for (auto tag : {ModelTag::r1, ModelTag::r2, ModelTag::f}) {
            bool student = std::any_of(edges.begin(), edges.end(), [&](const KDEdge& e) { return e.second == tag; });
            c.expect(student != all_zero(*params[tag]),
                     fmt::format("order ({},{},{}) model {}: student={} but gradient {}", o[0], o[1], o[2],
                                 to_string(tag), student, all_zero(*params[tag]) ? "zero" : "non-zero"));
        }
        c.expect(all_zero(exp.pool().key_params()), "keys received an MKD gradient");
    }
    return c.outcome(fmt::format("stage I and {} scoreboard orders", orders.size()));
}

// 4. gating truth table
Outcome gating_table()
{
    Checks c;
    const std::array<ModelTag, 3> tags{ModelTag::r1, ModelTag::r2, ModelTag::f};
    std::set<std::vector<int>> types;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            for (int f = 0; f < 3; ++f) {
                const std::array<double, 3> v{-0.5 * a, -0.5 * b, -0.5 * f};
                std::vector<int> type;
                std::set<KDEdge> expected;
                for (std::size_t i = 0; i < 3; ++i) {
                    for (std::size_t j = 0; j < 3; ++j) {
                        type.push_back((v[i] > v[j]) - (v[i] < v[j]));
                        if (v[i] > v[j]) expected.insert({tags[i], tags[j]});
                    }
                }
                types.insert(type);
                Scoreboard board;
                board.values = {{ModelTag::r1, v[0]}, {ModelTag::r2, v[1]}, {ModelTag::f, v[2]}};
                auto got = active_edges(board);
                c.expect(got.size() == expected.size() && std::set<KDEdge>(got.begin(), got.end()) == expected,
                         fmt::format("({}, {}, {}) gave {}", v[0], v[1], v[2], edges_to_string(got)));
            }
        }
    }
    c.expect(types.size() == 13, fmt::format("{} order types enumerated", types.size()));
    return c.outcome(fmt::format("{} order types", types.size()));
}

// 5. retrieval against exhaustive references
Outcome retrieval_oracle()
{
    Checks c;
    static const std::vector<std::string> words{"red", "blue", "cat", "dog", "river", "stone", "moon", "tree",
                                                "lamp", "city", "bird", "fish", "sand", "wind", "road", "salt"};
    std::mt19937_64 rng(505);
    std::vector<QAInstance> pool;
    for (std::size_t i = 0; i < 1000; ++i) {
        std::string q, ctx;
        for (int k = 0, len = 2 + static_cast<int>(rng() % 5); k < len; ++k) q += words[rng() % words.size()] + " ";
        for (int k = 0, len = 1 + static_cast<int>(rng() % 4); k < len; ++k) ctx += words[rng() % words.size()] + " ";
        auto inst = fixtures::make_instance("p" + std::to_string(i), "t" + std::to_string(i % 4), q, ctx,
                                            words[rng() % words.size()]);
        if (i % 25 == 24) {
            inst = pool[i - 3];
            inst.id = "p" + std::to_string(i);
        }
        pool.push_back(inst);
    }
    std::vector<std::string> docs;
    text::Vocabulary vocab;
    for (const auto& p : pool) {
        docs.push_back(query_text(p));
        vocab.add_text(example_text(p));
    }
    Bm25Index bm25(docs);
    RankerConfig rc;
    rc.retriever = {16, 1, 2, 32, 1};
    rc.reranker = {16, 1, 2, 48, 3};
    rc.init_from_encoder = false;
    RankerModels models(vocab, rc, 17);
    RetrievalIndex index(models, pool);
    for (std::size_t qi = 0; qi < 40; ++qi) {
        const auto& inst = pool[(qi * 97) % pool.size()];
        auto mask = reference::self_mask(pool, inst.id);
        auto ref_bm25 = reference::bm25_scores(docs, query_text(inst));
        for (std::size_t k : {1, 16, 128, 999}) {
            c.expect(bm25_candidates(inst, pool, bm25, k).examples == reference::top_k(ref_bm25, k, mask),
                     fmt::format("bm25 top-{} differs for {}", k, inst.id));
        }
        auto ref_r1 = reference::retriever_scores(models, inst, pool);
        for (std::size_t l : {1, 8, 64, 999}) {
            c.expect(index.retrieve(models, inst, l).examples == reference::top_k(ref_r1, l, mask),
                     fmt::format("retriever top-{} differs for {}", l, inst.id));
        }
    }
    return c.outcome("pool of 1000, 40 queries");
}

// 6. Zipf curation
Outcome zipf_curation()
{
    Checks c;
    auto specs = [](const std::vector<std::size_t>& sizes) {
        std::vector<TaskSpec> out;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            TaskSpec t;
            t.task_id = "task" + std::to_string(i + 1);
            t.original_train_size = sizes[i];
            t.val_size = 50;
            t.test_size = 50;
            out.push_back(t);
        }
        return out;
    };
    auto sizes_of = [](const LongTailManifest& m) {
        std::vector<std::size_t> out;
        for (const auto& id : m.seen_task_ids) out.push_back(m.sampled_train_sizes.at(id));
        return out;
    };
    auto m = downsample_tasks(specs({5000, 5000, 5000}), 2.0, 1000, 0);
    c.expect(sizes_of(m) == std::vector<std::size_t>{1000, 250, 111}, "three-task sizes");
    for (std::uint64_t seed : {0, 1, 2}) {
        for (std::size_t budget : {400, 1000, 4000}) {
            auto s = sizes_of(downsample_tasks(specs({9000, 9000, 9000, 9000}), 2.0, budget, seed));
            c.expect(s[0] == 4 * s[1], fmt::format("ratio {}/{} at budget {}", s[0], s[1], budget));
        }
    }
    auto registry = specs({3000, 2500, 800, 600, 90});
    auto first = curate(registry, {"task4"}, 2.0, 1000, 13).dump();
    for (int rerun = 0; rerun < 3; ++rerun) {
        c.expect(curate(registry, {"task4"}, 2.0, 1000, 13).dump() == first, "manifest differs on rerun");
    }
    c.expect(curate(registry, {"task4"}, 2.0, 1000, 14).dump() != first, "seed has no effect");
    return c.outcome("sizes [1000, 250, 111], ratio 4, byte-identical reruns");
}

// 7. metric fixtures
Outcome metric_fixtures()
{
    Checks c;
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
    c.expect(near(f1_token_overlap("a cat sat", "the cat"), 0.4), "f1 fixture");
    c.expect(near(rouge_l("a b c", "a c"), 0.8), "rouge-l fixture");
    c.expect(near(bleu("the cat sat on the mat", "the cat sat on the mat"), 1.0), "bleu identical");
    c.expect(near(bleu("dog", "the cat sat on the mat"), 0.0), "bleu disjoint");
    c.expect(near(exact_match("The Cat!", "the cat"), 1.0), "accuracy normalization");
    c.expect(near(exact_match("dog", "cat"), 0.0), "accuracy mismatch");
    c.expect(closest_option("paris france", {"london", "paris", "rome"}) == 1, "closest option");
    c.expect(near(score_prediction(MetricKind::accuracy, "paris france", "paris", {"london", "paris", "rome"}), 1.0),
             "multiple choice maps to the closest option");
    return c.outcome("f1 0.4, rouge-l 0.8, accuracy, bleu");
}

// 8. Stage I learning signal
struct Stage1Trace {
    std::vector<double> kl;
    std::size_t corpus_size = 0;
};

Stage1Trace stage1_trace(std::uint64_t seed)
{
    SyntheticConfig sc;
    sc.seed = seed;
    sc.entities = 20;
    sc.relations = 2;
    sc.seen_variants = 3;
    sc.unseen_variants = 1;
    sc.train_per_task = 17;
    sc.val_per_task = 6;
    sc.test_per_task = 2;
    auto corpus = make_synthetic_corpus(sc);
    auto cfg = synthetic_suite_config(corpus.unseen_task_ids);
    // Stage I sees every training instance of the seen tasks and every BM25 candidate
    cfg.alpha = 0.0;
    cfg.candidate_subsample = cfg.c;
    cfg.ranker_learning_rate = 1e-2;
    cfg.ranker.retriever_scale = 10.0;
    cfg.stage1_epochs = 3;
    Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
    run_stage1(exp);
    return {exp.log().heldout_kl, corpus.dataset.size()};
}

Outcome stage1_signal()
{
    const auto a = stage1_trace(1);
    const auto b = stage1_trace(1);
    if (a.corpus_size != 200) {
        return {false, fmt::format("corpus has {} instances, expected 200", a.corpus_size)};
    }
    if (a.kl != b.kl) {
        return {false, "held-out KL trace is not deterministic"};
    }
    const double ratio = a.kl.back() / a.kl.front();
    std::string others;
    for (std::uint64_t seed : {2, 3}) {
        auto t = stage1_trace(seed);
        others += fmt::format(" seed {} {:.3f}", seed, t.kl.back() / t.kl.front());
    }
    return {ratio < 0.5, fmt::format("200 instances, seed 1 KL {:.4f} -> {:.4f}, ratio {:.3f} (need < 0.5); "
                                     "for reference:{}",
                                     a.kl.front(), a.kl.back(), ratio, others)};
}

// 9. directional ablations on the planted suite
Outcome ablation_direction()
{
    auto corpus = make_synthetic_corpus(SyntheticConfig{});
    int tail_wins = 0, unseen_wins = 0;
    std::string detail;
    for (std::uint64_t seed : {0, 1, 2}) {
        std::map<Ablation, ScoreSummary> s;
        for (auto ablation : {Ablation::none, Ablation::no_pk, Ablation::no_pm}) {
            auto cfg = synthetic_suite_config(corpus.unseen_task_ids);
            cfg.seed = seed;
            cfg.ablation = ablation;
            Experiment exp(cfg, {}, corpus.dataset, corpus.lexicon);
            run_stage1(exp);
            run_stage2(exp);
            s[ablation] = evaluate_suite(exp).summary;
        }
        const auto& full = s[Ablation::none];
        tail_wins += full.tail_at_n > s[Ablation::no_pk].tail_at_n;
        unseen_wins += full.a_unseen > s[Ablation::no_pm].a_unseen;
        detail += fmt::format(" [seed {}: Tail@{} {:.1f} vs {:.1f}, A_unseen {:.1f} vs {:.1f}]", seed, full.n,
                              full.tail_at_n, s[Ablation::no_pk].tail_at_n, full.a_unseen,
                              s[Ablation::no_pm].a_unseen);
    }
    return {tail_wins >= 2 && unseen_wins >= 2,
            fmt::format("Tail full>no-pk in {}/3, unseen full>no-pm in {}/3;{}", tail_wins, unseen_wins, detail)};
}

// 10. determinism and kill-and-resume
Outcome reproducibility()
{
    Checks c;
    auto corpus = fixtures::tiny_corpus(11);
    auto cfg = fixtures::tiny_config(corpus);
    cfg.epochs = 3;
    auto full_run = [&](const fs::path& out) {
        Experiment exp(cfg, out, corpus.dataset, corpus.lexicon);
        run_stage1(exp);
        run_stage2(exp);
        return exp.log();
    };
    auto a = full_run(fixtures::scratch_dir("acc_a"));
    auto b = full_run(fixtures::scratch_dir("acc_b"));
    for (const auto* phase : {"stage1", "keys", "qa", "mkd"}) {
        c.expect(!a.losses(phase).empty(), std::string("no ") + phase + " steps");
        c.expect(a.losses(phase) == b.losses(phase), std::string(phase) + " losses differ between identical runs");
    }
    auto dir = fixtures::scratch_dir("acc_resume");
    {
        Experiment exp(cfg, dir, corpus.dataset, corpus.lexicon);
        run_stage1(exp);
        run_stage2(exp, false, 2);
    }
    Experiment resumed(cfg, dir, corpus.dataset, corpus.lexicon);
    run_stage2(resumed, true);
    const auto& boards = resumed.log().scoreboards;
    c.expect(boards.size() == 3, fmt::format("{} scoreboards after resume", boards.size()));
    double worst = 0.0;
    if (boards.size() == 3) {
        for (auto tag : {ModelTag::r1, ModelTag::r2, ModelTag::f}) {
            worst = std::max(worst, std::abs(boards[2].at(tag) - a.scoreboards[2].at(tag)));
        }
    }
    c.expect(worst <= 1e-6, fmt::format("epoch-3 scoreboard differs by {}", worst));
    c.expect(resumed.log().losses("qa") == a.losses("qa"), "resumed loss sequence differs");
    return c.outcome(fmt::format("bit-identical losses, resume max diff {:.2e}", worst));
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"key loss gradients", key_loss_gradients},
        {"distribution identities", distribution_identities},
        {"stop-gradient contract", stop_gradient},
        {"gating truth table", gating_table},
        {"retrieval oracle equivalence", retrieval_oracle},
        {"zipf curation", zipf_curation},
        {"metric fixtures", metric_fixtures},
        {"stage I learning signal", stage1_signal},
        {"directional ablations", ablation_direction},
        {"reproducibility and resume", reproducibility},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!only.empty() && only.count(number) == 0) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << fmt::format("{} criterion {}: {} ({:.1f} s) {}", o.pass ? "PASS" : "FAIL", number,
                                 criteria[i].first, secs, o.detail)
                  << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
