#include "oltqa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "oltqa/errors.hpp"
#include "oltqa/synthetic.hpp"

namespace fs = std::filesystem;

namespace oltqa {

namespace {

// Salts for per-phase random streams; every stream is derived from (seed, epoch, phase) so a
// resumed run replays exactly the same batches.
constexpr std::uint64_t kPhaseStage1 = 0x51ULL;
constexpr std::uint64_t kPhaseKeys = 0xaULL;
constexpr std::uint64_t kPhaseQa = 0xf1ULL;
constexpr std::uint64_t kPhaseMkd = 0xdULL;
constexpr std::uint64_t kSaltHeldout = 0xe7a1ULL;
constexpr std::uint64_t kSaltValidation = 0x7a1ULL;

std::string read_file(const fs::path& p)
{
    std::ifstream in(p);
    if (!in) {
        throw InvalidArgument("cannot open " + p.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& body)
{
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + p.string());
        }
        out << body;
    }
    fs::rename(tmp, p);
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nn::AdamWConfig adam(const TrainConfig& c, double lr)
{
    nn::AdamWConfig a;
    a.learning_rate = lr;
    a.weight_decay = c.weight_decay;
    a.clip_norm = c.clip_norm;
    return a;
}

}  // namespace

std::vector<double> RunLog::losses(const std::string& phase) const
{
    std::vector<double> out;
    for (const auto& s : steps) {
        if (s.phase == phase) {
            out.push_back(s.value);
        }
    }
    return out;
}

nlohmann::json RunLog::to_json() const
{
    nlohmann::json j;
    j["seed"] = seed;
    j["steps"] = nlohmann::json::array();
    for (const auto& s : steps) {
        j["steps"].push_back({{"phase", s.phase}, {"epoch", s.epoch}, {"step", s.step}, {"value", s.value}});
    }
    j["scoreboards"] = nlohmann::json::array();
    for (const auto& b : scoreboards) {
        j["scoreboards"].push_back(b.to_json());
    }
    j["heldout_kl"] = heldout_kl;
    j["wall_seconds"] = wall_seconds;
    return j;
}

RunLog RunLog::from_json(const nlohmann::json& j)
{
    RunLog log;
    log.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
        log.steps.push_back({s.at("phase").get<std::string>(), s.at("epoch").get<int>(),
                             s.at("step").get<std::size_t>(), s.at("value").get<double>()});
    }
    for (const auto& b : j.at("scoreboards")) {
        Scoreboard sb;
        sb.evaluated_at = b.at("epoch").get<int>();
        sb.values[ModelTag::r1] = b.at("v_r1").get<double>();
        sb.values[ModelTag::r2] = b.at("v_r2").get<double>();
        sb.values[ModelTag::f] = b.at("v_f").get<double>();
        log.scoreboards.push_back(sb);
    }
    log.heldout_kl = j.at("heldout_kl").get<std::vector<double>>();
    log.wall_seconds = j.at("wall_seconds").get<std::map<std::string, double>>();
    return log;
}

std::shared_ptr<text::Vocabulary> build_vocabulary(const std::vector<QAInstance>& training, std::size_t min_count)
{
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    auto count = [&](const std::string& s) {
        for (const auto& t : text::tokenize(s)) {
            if (counts[t]++ == 0) {
                order.push_back(t);
            }
        }
    };
    for (const auto& inst : training) {
        count(inst.question);
        for (const auto& o : inst.options) {
            count(o);
        }
        count(inst.context);
        count(inst.answer);
    }
    auto vocab = std::make_shared<text::Vocabulary>();
    for (const auto& t : order) {
        if (counts[t] >= min_count) {
            vocab->add(t);
        }
    }
    for (const auto& w : MockOracle::noise_words()) {
        vocab->add(w);
    }
    return vocab;
}

std::shared_ptr<text::Vocabulary> build_ranker_vocabulary(const Dataset& dataset,
                                                          const std::vector<QAInstance>& training)
{
    auto vocab = std::make_shared<text::Vocabulary>();
    auto add_inputs = [&](const std::vector<QAInstance>& instances) {
        for (const auto& inst : instances) {
            vocab->add_text(inst.question);
            for (const auto& o : inst.options) {
                vocab->add_text(o);
            }
            vocab->add_text(inst.context);
        }
    };
    for (const auto& task : dataset.task_order()) {
        for (auto split : {Split::train, Split::val, Split::test}) {
            add_inputs(dataset.split(task, split));
        }
    }
    for (const auto& inst : training) {
        vocab->add_text(inst.answer);
    }
    for (const auto& w : MockOracle::noise_words()) {
        vocab->add(w);
    }
    return vocab;
}

Experiment::Experiment(TrainConfig config, fs::path out_dir) : cfg_(std::move(config)), out_(std::move(out_dir))
{
    cfg_.validate();
    if (cfg_.corpus_path.empty()) {
        throw InvalidArgument("config data.corpus is empty");
    }
    dataset_ = read_jsonl(cfg_.corpus_path);
    if (!cfg_.lexicon_path.empty()) {
        lexicon_ = lexicon_from_json(nlohmann::json::parse(read_file(cfg_.lexicon_path)));
    }
    setup(nullptr);
}

Experiment::Experiment(TrainConfig config, fs::path out_dir, Dataset dataset,
                       std::map<std::string, std::string> lexicon)
    : Experiment(std::move(config), std::move(out_dir), std::move(dataset), std::move(lexicon), nullptr)
{
}

Experiment::Experiment(TrainConfig config, fs::path out_dir, Dataset dataset,
                       std::map<std::string, std::string> lexicon, std::unique_ptr<LmOracle> oracle)
    : cfg_(std::move(config)), out_(std::move(out_dir)), dataset_(std::move(dataset)), lexicon_(std::move(lexicon))
{
    cfg_.validate();
    setup(std::move(oracle));
}

void Experiment::setup(std::unique_ptr<LmOracle> oracle)
{
    auto registry = dataset_.registry();
    std::vector<std::string> unseen = cfg_.unseen_tasks;
    if (unseen.empty() && cfg_.n_unseen > 0) {
        unseen = split_seen_unseen(registry, cfg_.n_unseen, cfg_.seed).unseen;
    }
    manifest_ = curate(registry, unseen, cfg_.alpha, cfg_.head_budget, cfg_.seed);
    train_ = dataset_.training_set(manifest_);
    if (train_.size() < 2) {
        throw InvalidArgument("curated training pool has fewer than 2 instances");
    }
    auto val_all = dataset_.validation_set(manifest_);
    if (val_all.size() > cfg_.val_subsample) {
        nn::Rng rng(nn::mix_seed({cfg_.seed, kSaltValidation}));
        auto idx = rng.sample_without_replacement(val_all.size(), cfg_.val_subsample);
        std::sort(idx.begin(), idx.end());
        for (auto i : idx) {
            validation_.push_back(val_all[i]);
        }
    } else {
        validation_ = std::move(val_all);
    }
    c_eff_ = std::min(cfg_.c, train_.size() - 1);
    l_eff_ = std::min(cfg_.l, c_eff_);
    k_eff_ = std::min(cfg_.candidate_subsample, c_eff_);

    vocab_ = build_vocabulary(train_, cfg_.vocab_min_count);
    encoder_ = std::make_unique<FrozenEncoder>(cfg_.encoder_dim, nn::mix_seed({cfg_.seed, 0xe1ULL}), lexicon_,
                                               cfg_.encoder_jitter);
    std::vector<std::string> docs;
    docs.reserve(train_.size());
    for (const auto& t : train_) {
        docs.push_back(query_text(t));
    }
    bm25_ = Bm25Index(docs);

    if (oracle) {
        oracle_ = std::move(oracle);
    } else if (cfg_.oracle_backend == "remote") {
        oracle_ = std::make_unique<RemoteOracle>(
            RemoteOracleConfig{cfg_.oracle_endpoint, cfg_.oracle_model, cfg_.oracle_timeout,
                               static_cast<int>(cfg_.hint_max_tokens)});
    } else {
        auto mc = cfg_.mock;
        mc.lexicon = lexicon_;
        oracle_ = std::make_unique<MockOracle>(mc);
    }
    std::string cache_path = cfg_.oracle_cache;
    if (cache_path.empty() && !out_.empty()) {
        fs::create_directories(out_);
        cache_path = (out_ / "oracle_cache.jsonl").string();
    }
    cache_ = std::make_unique<OracleCache>(cache_path);
    cached_ = std::make_unique<CachedOracle>(*oracle_, *cache_, cfg_.hint_max_tokens);

    ranker_vocab_ = build_ranker_vocabulary(dataset_, train_);
    rankers_ = std::make_unique<RankerModels>(*ranker_vocab_, cfg_.ranker, nn::mix_seed({cfg_.seed, 1}));
    if (cfg_.ranker.init_from_encoder) {
        rankers_->init_token_embeddings([this](const std::string& t) { return encoder_->token_vector(t); });
    }
    pool_ = std::make_unique<MetaPromptPool>(cfg_.pool, nn::mix_seed({cfg_.seed, 2}));
    qa_ = std::make_unique<QAModel>(vocab_, cfg_.qa, nn::mix_seed({cfg_.seed, 3}));
    log_.seed = cfg_.seed;
}

const CandidateSet& Experiment::bm25_pool(const QAInstance& instance)
{
    auto it = bm25_cache_.find(instance.id);
    if (it == bm25_cache_.end()) {
        it = bm25_cache_.emplace(instance.id, bm25_candidates(instance, train_, bm25_, c_eff_)).first;
    }
    return it->second;
}

CandidateSet Experiment::subsample(const QAInstance& instance, std::uint64_t salt)
{
    const auto& full = bm25_pool(instance);
    nn::Rng rng(nn::mix_seed({cfg_.seed, salt, text::fnv1a(instance.id)}));
    auto idx = rng.sample_without_replacement(full.size(), std::min(k_eff_, full.size()));
    std::sort(idx.begin(), idx.end());
    CandidateSet out;
    out.instance_id = instance.id;
    out.provenance = Provenance::bm25_pool;
    for (auto i : idx) {
        out.examples.push_back(full.examples[i]);
    }
    return out;
}

void Experiment::ensure_hints(CandidateSet& candidates, const QAInstance& instance)
{
    if (!candidates.has_hints() || candidates.hints.empty()) {
        attach_hints(candidates, instance, train_, *cached_);
    }
}

ag::Var Experiment::meta_prompt(const QAInstance& instance) const
{
    return meta_prompt_for(instance, uses_meta_prompt() ? pool_.get() : nullptr, encoder_.get());
}

std::vector<std::string> Experiment::training_knowledge_prompt(const QAInstance& instance,
                                                               const RetrievalIndex& index)
{
    if (!uses_knowledge_prompt()) {
        return {};
    }
    const auto& full = bm25_pool(instance);
    ag::RowVector u = rankers_->encode_query(instance).value().row(0);
    if (double n = u.norm(); n > 0.0) {
        u /= n;
    }
    std::vector<double> scores;
    scores.reserve(full.size());
    for (auto i : full.examples) {
        scores.push_back(cfg_.ranker.retriever_scale * index.doc_vectors().row(static_cast<Eigen::Index>(i)).dot(u));
    }
    auto order = rank_descending(scores, full.examples);
    CandidateSet top;
    top.instance_id = instance.id;
    top.provenance = Provenance::retrieved;
    for (std::size_t r = 0; r < l_eff_ && r < order.size(); ++r) {
        top.examples.push_back(full.examples[order[r]]);
    }
    ensure_hints(top, instance);
    return rerank(*rankers_, instance, top, train_, cfg_.l_tilde).hints;
}

std::vector<std::string> Experiment::inference_knowledge_prompt(const QAInstance& instance,
                                                                const RetrievalIndex& index)
{
    if (!uses_knowledge_prompt()) {
        return {};
    }
    auto cands = index.retrieve(*rankers_, instance, l_eff_);
    ensure_hints(cands, instance);
    return rerank(*rankers_, instance, cands, train_, cfg_.l_tilde).hints;
}

double Experiment::heldout_kl_r1(const std::vector<QAInstance>& instances)
{
    if (instances.empty()) {
        throw InvalidArgument("held-out KL over an empty set");
    }
    double total = 0.0;
    for (const auto& inst : instances) {
        auto cands = subsample(inst, kSaltHeldout);
        std::vector<double> lm;
        std::vector<const QAInstance*> ex;
        for (auto i : cands.examples) {
            lm.push_back(cached_->score(train_[i], inst));
            ex.push_back(&train_[i]);
        }
        const ag::Matrix s = rankers_->retriever_scores(inst, ex).value();
        total += kl_divergence(softmax(lm), softmax(std::vector<double>(s.data(), s.data() + s.size())));
    }
    return total / static_cast<double>(instances.size());
}

const std::vector<CandidateSet>& Experiment::validation_candidates()
{
    if (!validation_candidates_) {
        std::vector<CandidateSet> sets;
        sets.reserve(validation_.size());
        for (const auto& inst : validation_) {
            auto c = subsample(inst, kSaltValidation);
            ensure_hints(c, inst);
            sets.push_back(std::move(c));
        }
        validation_candidates_ = std::move(sets);
    }
    return *validation_candidates_;
}

Scoreboard Experiment::evaluate(int epoch)
{
    EvaluationContext ctx;
    ctx.rankers = rankers_.get();
    ctx.qa = qa_.get();
    ctx.pool = uses_meta_prompt() ? pool_.get() : nullptr;
    ctx.encoder = encoder_.get();
    ctx.training_pool = &train_;
    ctx.top_hints = cfg_.l_tilde;
    ctx.use_knowledge_prompt = uses_knowledge_prompt();
    return evaluate_models(validation_, validation_candidates(), ctx, epoch);
}

nlohmann::json Experiment::checkpoint_json() const
{
    return {{"manifest_fingerprint", text::hex64(manifest_.fingerprint())},
            {"ablation", to_string(cfg_.ablation)},
            {"rankers", rankers_->to_json()},
            {"pool", pool_->to_json()},
            {"qa", qa_->to_json(pool_->fingerprint())}};
}

void Experiment::load_checkpoint_json(const nlohmann::json& j)
{
    if (j.at("manifest_fingerprint").get<std::string>() != text::hex64(manifest_.fingerprint())) {
        throw PreconditionError("checkpoint was produced for a different curated manifest");
    }
    rankers_->load_json(j.at("rankers"));
    pool_->load_json(j.at("pool"));
    qa_->load_json(j.at("qa"), pool_->fingerprint());
}

void run_stage1(Experiment& exp)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = exp.config();
    const auto& train = exp.training_pool();
    auto& rankers = exp.rankers();
    nn::ParamSet params;
    params.extend(rankers.retriever_params());
    params.extend(rankers.reranker_params());
    nn::AdamW opt(params, adam(cfg, cfg.ranker_learning_rate));
    auto& log = exp.log();
    const auto& heldout = exp.validation().empty() ? train : exp.validation();
    log.heldout_kl.push_back(exp.heldout_kl_r1(heldout));
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        auto batches = epoch_batches(train.size(), cfg.batch_size,
                                     nn::mix_seed({cfg.seed, std::uint64_t(epoch), kPhaseStage1}));
        for (const auto& batch : batches) {
            std::vector<ag::Var> terms;
            for (auto i : batch) {
                const auto& inst = train[i];
                auto cands = exp.subsample(inst, nn::mix_seed({std::uint64_t(epoch), kPhaseStage1}));
                exp.ensure_hints(cands, inst);
                std::vector<double> lm;
                std::vector<const QAInstance*> ex;
                for (auto k : cands.examples) {
                    lm.push_back(exp.cached_oracle().score(train[k], inst));
                    ex.push_back(&train[k]);
                }
                exp.cached_oracle().require_complete();
                auto p_r1 = ag::softmax_rows(rankers.retriever_scores(inst, ex));
                auto p_r2 = ag::softmax_rows(rankers.reranker_scores(inst, ex, cands.hints));
                terms.push_back(stage1_loss(softmax(lm), p_r1, p_r2));
            }
            auto loss = ag::mean(ag::concat_rows(terms));
            ag::backward(loss);
            opt.step();
            log.steps.push_back({"stage1", epoch, step++, loss.scalar()});
        }
        log.heldout_kl.push_back(exp.heldout_kl_r1(heldout));
        if (!exp.out_dir().empty()) {
            nlohmann::json ck = {{"epoch", epoch}, {"rankers", rankers.to_json()}, {"optimizer", opt.state_json()}};
            write_file(exp.out_dir() / "stage1" / fmt::format("epoch_{}.json", epoch), ck.dump());
        }
    }
    if (!exp.out_dir().empty()) {
        write_file(exp.out_dir() / "rankers.json", rankers.to_json().dump());
    }
    log.wall_seconds["stage1"] += seconds_since(t0);
}

namespace {

struct Stage2Optimizers {
    nn::AdamW keys;
    nn::AdamW qa;
    nn::AdamW rankers;

    nlohmann::json to_json() const
    {
        return {{"keys", keys.state_json()}, {"qa", qa.state_json()}, {"rankers", rankers.state_json()}};
    }
    void load(const nlohmann::json& j)
    {
        keys.load_state_json(j.at("keys"));
        qa.load_state_json(j.at("qa"));
        rankers.load_state_json(j.at("rankers"));
    }
};

Stage2Optimizers make_optimizers(Experiment& exp)
{
    const auto& cfg = exp.config();
    nn::ParamSet qa_params;
    qa_params.extend(exp.qa().params());
    if (exp.uses_meta_prompt()) {
        qa_params.extend(exp.pool().prompt_params());
    }
    nn::ParamSet ranker_params;
    ranker_params.extend(exp.rankers().retriever_params());
    ranker_params.extend(exp.rankers().reranker_params());
    return {nn::AdamW(exp.pool().key_params(), adam(cfg, cfg.learning_rate)),
            nn::AdamW(qa_params, adam(cfg, cfg.learning_rate)),
            nn::AdamW(ranker_params, adam(cfg, cfg.ranker_learning_rate))};
}

double key_step(Experiment& exp, const std::vector<std::size_t>& batch, nn::AdamW& opt)
{
    const auto& train = exp.training_pool();
    auto& pool = exp.pool();
    ag::Matrix grad = ag::Matrix::Zero(pool.keys().rows(), pool.keys().cols());
    double total = 0.0;
    for (auto i : batch) {
        auto x = query_vector(train[i], exp.encoder());
        auto r = pool.key_loss(x, pool.select_keys(x));
        total += r.value;
        grad += r.grad;
    }
    const double scale = exp.config().weight_m / static_cast<double>(batch.size());
    pool.keys().zero_grad();
    pool.keys().node()->accumulate(grad * scale);
    opt.step();
    return total / static_cast<double>(batch.size());
}

std::vector<KDEdge> kd_edges(const Experiment& exp, const Scoreboard& current, const Scoreboard& frozen, int epoch)
{
    switch (exp.config().ablation) {
    case Ablation::no_mkd:
    case Ablation::no_pk:
    case Ablation::no_prompts: return {};
    case Ablation::back_kd: return back_kd_edges();
    case Ablation::static_mkd: return active_edges(frozen);
    default:
        if (current.evaluated_at != epoch) {
            throw PreconditionError("scoreboard is stale");
        }
        return active_edges(current);
    }
}

}  // namespace

void run_stage2(Experiment& exp, bool resume, std::optional<int> stop_after)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = exp.config();
    const auto& train = exp.training_pool();
    auto& log = exp.log();
    auto opts = make_optimizers(exp);
    const fs::path dir = exp.out_dir().empty() ? fs::path() : exp.out_dir() / "stage2";

    int start = 0;
    Scoreboard frozen;
    if (resume && !dir.empty() && fs::exists(dir)) {
        int latest = -1;
        for (const auto& entry : fs::directory_iterator(dir)) {
            int e = -1;
            if (std::sscanf(entry.path().filename().string().c_str(), "epoch_%d.json", &e) == 1 &&
                entry.path().extension() == ".json") {
                latest = std::max(latest, e);
            }
        }
        if (latest >= 0) {
            auto j = nlohmann::json::parse(read_file(dir / fmt::format("epoch_{}.json", latest)));
            exp.load_checkpoint_json(j.at("checkpoint"));
            opts.load(j.at("optimizers"));
            log = RunLog::from_json(j.at("log"));
            if (j.contains("frozen")) {
                frozen = RunLog::from_json({{"seed", 0}, {"steps", nlohmann::json::array()},
                                            {"scoreboards", nlohmann::json::array({j.at("frozen")})},
                                            {"heldout_kl", nlohmann::json::array()},
                                            {"wall_seconds", nlohmann::json::object()}})
                             .scoreboards.front();
            }
            start = latest + 1;
        }
    }
    if (start == 0 && cfg.ablation == Ablation::static_mkd) {
        frozen = exp.evaluate(0);
    }

    auto next_step = [&](const std::string& phase) {
        std::size_t n = 0;
        for (const auto& s : log.steps) {
            n += s.phase == phase;
        }
        return n;
    };

    int done = 0;
    for (int epoch = start; epoch < cfg.epochs; ++epoch) {
        if (stop_after && done >= *stop_after) {
            break;
        }
        const auto e = static_cast<std::uint64_t>(epoch);
        const bool train_keys = exp.uses_meta_prompt() && cfg.weight_m > 0.0;
        // (a) keys
        if (train_keys && cfg.key_schedule == KeySchedule::sequential) {
            std::size_t step = next_step("keys");
            for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, nn::mix_seed({cfg.seed, e, kPhaseKeys}))) {
                log.steps.push_back({"keys", epoch, step++, key_step(exp, batch, opts.keys)});
            }
        }
        // (b) F and meta prompts
        if (cfg.weight_f > 0.0) {
            std::optional<RetrievalIndex> index;
            if (exp.uses_knowledge_prompt()) {
                index.emplace(exp.rankers(), train);
            }
            std::size_t step = next_step("qa");
            std::size_t key_step_no = next_step("keys");
            for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, nn::mix_seed({cfg.seed, e, kPhaseQa}))) {
                if (train_keys && cfg.key_schedule == KeySchedule::interleaved) {
                    log.steps.push_back({"keys", epoch, key_step_no++, key_step(exp, batch, opts.keys)});
                }
                std::vector<PromptedInput> inputs;
                inputs.reserve(batch.size());
                for (auto i : batch) {
                    std::vector<std::string> hints;
                    if (index) {
                        hints = exp.training_knowledge_prompt(train[i], *index);
                    }
                    inputs.push_back({&train[i], exp.meta_prompt(train[i]), std::move(hints)});
                }
                auto loss = qa_loss(exp.qa(), inputs);
                ag::backward(ag::scale(loss, cfg.weight_f));
                opts.qa.step();
                log.steps.push_back({"qa", epoch, step++, loss.scalar()});
            }
        }
        // (c) scoreboard
        Scoreboard board = exp.evaluate(epoch);
        log.scoreboards.push_back(board);
        // (d) mutual KD
        auto edges = cfg.weight_mkd > 0.0 ? kd_edges(exp, board, frozen, epoch) : std::vector<KDEdge>{};
        if (!edges.empty()) {
            std::size_t step = next_step("mkd");
            for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, nn::mix_seed({cfg.seed, e, kPhaseMkd}))) {
                std::vector<ag::Var> terms;
                for (auto i : batch) {
                    const auto& inst = train[i];
                    auto cands = exp.subsample(inst, nn::mix_seed({e, kPhaseMkd}));
                    exp.ensure_hints(cands, inst);
                    std::vector<const QAInstance*> ex;
                    for (auto k : cands.examples) {
                        ex.push_back(&train[k]);
                    }
                    std::map<ModelTag, ag::Var> dists;
                    dists[ModelTag::r1] = ag::softmax_rows(exp.rankers().retriever_scores(inst, ex));
                    dists[ModelTag::r2] = ag::softmax_rows(exp.rankers().reranker_scores(inst, ex, cands.hints));
                    dists[ModelTag::f] =
                        ag::softmax_rows(qa_candidate_scores(exp.qa(), inst, cands, exp.meta_prompt(inst)));
                    terms.push_back(mutual_kd_loss(dists, edges));
                }
                auto loss = ag::mean(ag::concat_rows(terms));
                ag::backward(ag::scale(loss, cfg.weight_mkd));
                opts.rankers.step();
                opts.qa.step();
                log.steps.push_back({"mkd", epoch, step++, loss.scalar()});
            }
        }
        log.wall_seconds["stage2"] += seconds_since(t0);
        if (!dir.empty()) {
            nlohmann::json ck = {{"epoch", epoch},
                                 {"checkpoint", exp.checkpoint_json()},
                                 {"optimizers", opts.to_json()},
                                 {"log", log.to_json()}};
            if (!frozen.values.empty()) {
                ck["frozen"] = frozen.to_json();
            }
            write_file(dir / fmt::format("epoch_{}.json", epoch), ck.dump());
        }
        ++done;
    }
}

SuiteResult evaluate_instances(Experiment& exp, const std::vector<QAInstance>& instances)
{
    if (instances.empty()) {
        throw InvalidArgument("nothing to evaluate");
    }
    RetrievalIndex index(exp.rankers(), exp.training_pool());
    std::map<std::string, double> sums;
    std::map<std::string, std::size_t> counts;
    std::map<std::string, MetricKind> metrics;
    for (const auto& spec : exp.dataset().registry()) {
        metrics[spec.task_id] = spec.metric;
    }
    SuiteResult result;
    for (const auto& inst : instances) {
        auto hints = exp.inference_knowledge_prompt(inst, index);
        auto pm = exp.meta_prompt(inst);
        auto pred = exp.qa().predict({&inst, pm.defined() ? ag::detach(pm) : ag::Var(), hints});
        sums[inst.task_id] += score_prediction(metrics.at(inst.task_id), pred, inst.answer, inst.options);
        ++counts[inst.task_id];
        result.predictions[inst.task_id].push_back(pred);
    }
    std::map<std::string, double> per_task;
    for (const auto& [task, s] : sums) {
        per_task[task] = 100.0 * s / static_cast<double>(counts[task]);
    }
    const auto& m = exp.manifest();
    std::size_t seen = 0;
    for (const auto& t : m.seen_task_ids) {
        seen += per_task.count(t);
    }
    if (seen == 0) {
        result.summary.per_task = per_task;
        result.summary.a_seen = std::nan("");
        double u = 0.0;
        for (auto& [t, v] : per_task) u += v;
        result.summary.a_unseen = u / static_cast<double>(per_task.size());
    } else {
        std::size_t mm = std::min(exp.config().head_m, seen);
        std::size_t nn_ = std::min(exp.config().tail_n, seen);
        result.summary = aggregate(per_task, m, mm, nn_);
        result.summary_csv = summary_csv(result.summary, m, metrics);
    }
    if (exp.uses_meta_prompt()) {
        result.heatmap_csv = selection_frequency(instances, exp.pool(), exp.encoder()).to_csv();
    }
    return result;
}

SuiteResult evaluate_suite(Experiment& exp)
{
    return evaluate_instances(exp, exp.dataset().test_set());
}

void write_run_artifacts(Experiment& exp, const SuiteResult* suite)
{
    const auto& out = exp.out_dir();
    if (out.empty()) {
        return;
    }
    write_file(out / "config.ini", config_to_ini(exp.config()));
    write_file(out / "manifest.json", exp.manifest().dump());
    write_file(out / "checkpoint.json", exp.checkpoint_json().dump());
    write_file(out / "runlog.json", exp.log().to_json().dump(2) + "\n");
    std::string board_lines;
    for (const auto& b : exp.log().scoreboards) {
        board_lines += b.to_json().dump() + "\n";
    }
    write_file(out / "scoreboard.jsonl", board_lines);
    if (suite != nullptr) {
        write_file(out / "summary.csv", suite->summary_csv);
        if (!suite->heatmap_csv.empty()) {
            write_file(out / "heatmap.csv", suite->heatmap_csv);
        }
    }
}

}  // namespace oltqa
