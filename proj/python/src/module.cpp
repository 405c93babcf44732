// Python bindings for the core operations. Structured results cross the boundary as JSON
// and come back as plain dicts.

#include <fstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oltqa/distillation.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/knowledge_miner.hpp"
#include "oltqa/lm_oracle.hpp"
#include "oltqa/metrics.hpp"
#include "oltqa/prompt_pool.hpp"
#include "oltqa/synthetic.hpp"
#include "oltqa/trainer.hpp"

namespace py = pybind11;
using namespace oltqa;

namespace {

py::object to_py(const nlohmann::json& j)
{
    return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o)
{
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

QAInstance instance_from_dict(const py::dict& d)
{
    return instance_from_json(from_py(d));
}

std::vector<TaskSpec> specs_from_sizes(const std::vector<std::size_t>& sizes)
{
    std::vector<TaskSpec> out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        TaskSpec t;
        t.task_id = "task" + std::to_string(i + 1);
        t.original_train_size = sizes[i];
        out.push_back(t);
    }
    return out;
}

ModelTag tag_from_string(const std::string& s)
{
    if (s == "r1") return ModelTag::r1;
    if (s == "r2") return ModelTag::r2;
    if (s == "f") return ModelTag::f;
    throw InvalidArgument("model tag must be r1, r2 or f");
}

py::dict summary_dict(const ScoreSummary& s)
{
    py::dict d;
    d["per_task"] = s.per_task;
    d["A_seen"] = s.a_seen;
    d["A_unseen"] = s.a_unseen;
    d["head_at_m"] = s.head_at_m;
    d["tail_at_n"] = s.tail_at_n;
    d["m"] = s.m;
    d["n"] = s.n;
    return d;
}

/// Curates, trains (Stage I then Stage II) and evaluates; artifacts go under out_dir.
py::dict train(const std::string& config_path, const std::string& out_dir, const std::vector<std::string>& overrides)
{
    auto cfg = load_config(config_path, overrides);
    SuiteResult suite;
    {
        py::gil_scoped_release release;
        Experiment exp(cfg, out_dir);
        run_stage1(exp);
        run_stage2(exp);
        suite = evaluate_suite(exp);
        write_run_artifacts(exp, &suite);
    }
    return summary_dict(suite.summary);
}

}  // namespace

PYBIND11_MODULE(_oltqa, m)
{
    m.doc() = "long-tail open-world QA core";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_RuntimeError);
    py::register_exception<OracleError>(m, "OracleError", PyExc_RuntimeError);

    // task curation
    m.def("zipf_weights", &zipf_weights, py::arg("n"), py::arg("alpha"));
    m.def(
        "downsample_sizes",
        [](const std::vector<std::size_t>& sizes, double alpha, std::size_t head_budget, std::uint64_t seed) {
            auto manifest = downsample_tasks(specs_from_sizes(sizes), alpha, head_budget, seed);
            std::vector<std::size_t> out;
            for (const auto& t : specs_from_sizes(sizes)) out.push_back(manifest.sampled_train_sizes.at(t.task_id));
            return out;
        },
        py::arg("sizes"), py::arg("alpha"), py::arg("head_budget"), py::arg("seed") = 0,
        "Sampled training sizes for tasks given in rank order.");
    m.def(
        "curate_corpus",
        [](const std::string& corpus_path, const std::vector<std::string>& unseen, double alpha,
           std::size_t head_budget, std::uint64_t seed) {
            return to_py(curate(read_jsonl(corpus_path).registry(), unseen, alpha, head_budget, seed).to_json());
        },
        py::arg("corpus_path"), py::arg("unseen"), py::arg("alpha"), py::arg("head_budget"), py::arg("seed") = 0);

    // metrics
    m.def("f1_token_overlap", &f1_token_overlap);
    m.def("rouge_l", &rouge_l);
    m.def("bleu", &bleu);
    m.def("exact_match", &exact_match);
    m.def("score_prediction",
          py::overload_cast<const std::string&, const std::string&, const std::string&,
                            const std::vector<std::string>&>(&score_prediction),
          py::arg("metric"), py::arg("prediction"), py::arg("gold"), py::arg("options") = std::vector<std::string>{});
    m.def("serialize", [](const py::dict& inst) {
        auto s = serialize_instance(instance_from_dict(inst));
        return py::make_tuple(s.source_text, s.target_text);
    });

    // distributions and gating
    m.def("softmax", &softmax, py::arg("scores"));
    m.def("kl_divergence", py::overload_cast<const std::vector<double>&, const std::vector<double>&>(&kl_divergence),
          py::arg("p"), py::arg("q"));
    m.def(
        "active_edges",
        [](const std::map<std::string, double>& scores) {
            Scoreboard b;
            for (const auto& [k, v] : scores) b.values[tag_from_string(k)] = v;
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& [t, s] : active_edges(b)) out.emplace_back(to_string(t), to_string(s));
            return out;
        },
        py::arg("scores"), "Teacher -> student edges for a {'r1', 'r2', 'f'} scoreboard.");

    // meta-prompt keys
    m.def(
        "key_loss",
        [](const ag::Matrix& keys, const ag::RowVector& x, const std::vector<std::size_t>& selected, double eta,
           double gamma) {
            auto r = key_loss(keys, x, selected, eta, gamma);
            return py::make_tuple(r.value, r.grad);
        },
        py::arg("keys"), py::arg("x"), py::arg("selected"), py::arg("eta") = 0.15, py::arg("gamma") = 0.3);

    // retrieval
    py::class_<Bm25Index>(m, "Bm25Index")
        .def(py::init<const std::vector<std::string>&, double, double>(), py::arg("documents"), py::arg("k1") = 1.2,
             py::arg("b") = 0.75)
        .def("score_all", &Bm25Index::score_all)
        .def("idf", &Bm25Index::idf)
        .def("__len__", &Bm25Index::size);

    // oracle
    py::class_<MockOracle, std::unique_ptr<MockOracle>>(m, "MockOracle")
        .def(py::init([](std::uint64_t seed, const std::map<std::string, std::string>& lexicon) {
                 MockOracleConfig c;
                 c.seed = seed;
                 c.lexicon = lexicon;
                 return std::make_unique<MockOracle>(c);
             }),
             py::arg("seed") = 0, py::arg("lexicon") = std::map<std::string, std::string>{})
        .def("generate",
             [](MockOracle& o, const py::dict& example, const std::string& context, const std::string& question) {
                 return o.generate(instance_from_dict(example), context, question);
             })
        .def("score", [](MockOracle& o, const py::dict& example, const std::string& context,
                         const std::string& question, const std::string& answer) {
            return o.score(instance_from_dict(example), context, question, answer);
        });

    // synthetic suite and training
    m.def(
        "write_synthetic_suite",
        [](const std::string& out_dir, std::uint64_t seed) {
            SyntheticConfig sc;
            sc.seed = seed;
            auto corpus = make_synthetic_corpus(sc);
            std::filesystem::create_directories(out_dir);
            const std::filesystem::path dir(out_dir);
            std::vector<QAInstance> all;
            for (const auto& task : corpus.dataset.task_order()) {
                for (auto s : {Split::train, Split::val, Split::test}) {
                    const auto& v = corpus.dataset.split(task, s);
                    all.insert(all.end(), v.begin(), v.end());
                }
            }
            write_jsonl((dir / "corpus.jsonl").string(), all);
            std::ofstream(dir / "lexicon.json") << lexicon_to_json(corpus.lexicon).dump(2) << "\n";
            auto tc = synthetic_suite_config(corpus.unseen_task_ids);
            tc.corpus_path = (dir / "corpus.jsonl").string();
            tc.lexicon_path = (dir / "lexicon.json").string();
            std::ofstream(dir / "config.ini") << config_to_ini(tc);
            return (dir / "config.ini").string();
        },
        py::arg("out_dir"), py::arg("seed") = 7, "Writes corpus.jsonl, lexicon.json and config.ini; returns the config path.");
    m.def("default_config_ini", [] { return config_to_ini(TrainConfig{}); });
    m.def(
        "validate_config",
        [](const std::string& text, const std::vector<std::string>& overrides) {
            return config_to_ini(config_from_ini(text, overrides));
        },
        py::arg("text"), py::arg("overrides") = std::vector<std::string>{});
    m.def("train", &train, py::arg("config_path"), py::arg("out_dir"),
          py::arg("overrides") = std::vector<std::string>{});
}
