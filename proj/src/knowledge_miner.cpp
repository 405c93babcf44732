#include "oltqa/knowledge_miner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"

namespace oltqa {

Bm25Index::Bm25Index(const std::vector<std::string>& documents, double k1, double b) : k1_(k1), b_(b)
{
    if (k1 < 0.0 || b < 0.0 || b > 1.0) {
        throw InvalidArgument("bm25: k1 must be >= 0 and b in [0, 1]");
    }
    doc_lengths_.reserve(documents.size());
    double total = 0.0;
    for (std::size_t d = 0; d < documents.size(); ++d) {
        auto toks = text::tokenize(documents[d]);
        doc_lengths_.push_back(toks.size());
        total += static_cast<double>(toks.size());
        std::map<std::string, std::size_t> tf;
        for (auto& t : toks) {
            ++tf[t];
        }
        for (auto& [term, n] : tf) {
            postings_[term].emplace_back(d, n);
        }
    }
    avg_length_ = documents.empty() ? 0.0 : total / static_cast<double>(documents.size());
}

double Bm25Index::idf(const std::string& term) const
{
    auto it = postings_.find(term);
    double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    double n = static_cast<double>(doc_lengths_.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<double> Bm25Index::score_all(const std::string& query) const
{
    std::vector<double> scores(doc_lengths_.size(), 0.0);
    if (avg_length_ <= 0.0) {
        return scores;
    }
    for (const auto& term : text::tokenize(query)) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        double w = idf(term);
        for (auto [doc, tf] : it->second) {
            double f = static_cast<double>(tf);
            double norm = k1_ * (1.0 - b_ + b_ * static_cast<double>(doc_lengths_[doc]) / avg_length_);
            scores[doc] += w * f * (k1_ + 1.0) / (f + norm);
        }
    }
    return scores;
}

nlohmann::json Bm25Index::to_json() const
{
    nlohmann::json post = nlohmann::json::object();
    for (const auto& [term, list] : postings_) {
        post[term] = list;
    }
    return {{"k1", k1_}, {"b", b_}, {"avg_length", avg_length_}, {"doc_lengths", doc_lengths_}, {"postings", post}};
}

Bm25Index Bm25Index::from_json(const nlohmann::json& j)
{
    Bm25Index idx;
    idx.k1_ = j.at("k1").get<double>();
    idx.b_ = j.at("b").get<double>();
    idx.avg_length_ = j.at("avg_length").get<double>();
    idx.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::size_t>>();
    for (auto& [term, list] : j.at("postings").items()) {
        idx.postings_[term] = list.get<std::vector<std::pair<std::size_t, std::size_t>>>();
    }
    return idx;
}

namespace {

std::string provenance_name(Provenance p)
{
    return p == Provenance::bm25_pool ? "bm25_pool" : "retrieved";
}

ModelTag parse_model_tag(const std::string& s)
{
    for (auto t : {ModelTag::lm, ModelTag::r1, ModelTag::r2, ModelTag::f}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw InvalidArgument("unknown model tag '" + s + "'");
}

}  // namespace

nlohmann::json CandidateSet::to_json() const
{
    nlohmann::json j;
    j["instance_id"] = instance_id;
    j["examples"] = examples;
    j["provenance"] = provenance_name(provenance);
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : hints) {
        hs.push_back({{"text", h.text}, {"source_example_id", h.source_example_id}});
    }
    j["hints"] = hs;
    nlohmann::json sc = nlohmann::json::object();
    for (const auto& [tag, v] : scores) {
        sc[to_string(tag)] = v;
    }
    j["scores"] = sc;
    return j;
}

CandidateSet CandidateSet::from_json(const nlohmann::json& j)
{
    CandidateSet c;
    c.instance_id = j.at("instance_id").get<std::string>();
    c.examples = j.at("examples").get<std::vector<std::size_t>>();
    c.provenance = j.at("provenance").get<std::string>() == "retrieved" ? Provenance::retrieved
                                                                         : Provenance::bm25_pool;
    for (const auto& h : j.at("hints")) {
        c.hints.push_back({h.at("text").get<std::string>(), h.at("source_example_id").get<std::string>()});
    }
    for (auto& [tag, v] : j.at("scores").items()) {
        c.scores[parse_model_tag(tag)] = v.get<std::vector<double>>();
    }
    return c;
}

std::string query_text(const QAInstance& inst)
{
    return serialize_instance(inst).source_text;
}

std::string example_text(const QAInstance& example)
{
    auto s = serialize_instance(example);
    return s.source_text + "\n" + s.target_text;
}

std::vector<std::size_t> rank_descending(const std::vector<double>& scores, const std::vector<std::size_t>& ids)
{
    if (scores.size() != ids.size()) {
        throw InvalidArgument("rank_descending: scores and ids differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return ids[a] < ids[b];
    });
    return order;
}

CandidateSet bm25_candidates(const QAInstance& instance, const std::vector<QAInstance>& pool, const Bm25Index& index,
                             std::size_t c)
{
    if (c == 0) {
        throw InvalidArgument("bm25_candidates: c must be positive");
    }
    if (pool.size() < c + 1) {
        throw InvalidArgument("bm25_candidates: pool of " + std::to_string(pool.size()) +
                              " examples cannot supply " + std::to_string(c) + " candidates plus the instance");
    }
    if (index.size() != pool.size()) {
        throw InvalidArgument("bm25_candidates: index was built over a different pool");
    }
    auto scores = index.score_all(query_text(instance));
    std::vector<std::size_t> order;
    order.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id != instance.id) {
            order.push_back(i);
        }
    }
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    };
    std::size_t keep = std::min(c, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
    order.resize(keep);
    CandidateSet out;
    out.instance_id = instance.id;
    out.examples = std::move(order);
    out.provenance = Provenance::bm25_pool;
    return out;
}

TextEncoder::TextEncoder(nn::ParamSet& params, const std::string& name, int vocab_size, EncoderConfig config,
                         nn::Rng& rng)
    : cfg_(config)
{
    if (cfg_.dim <= 0 || cfg_.max_tokens <= 0 || cfg_.segments <= 0 || cfg_.layers < 0) {
        throw InvalidArgument("encoder config has a non-positive size");
    }
    if (cfg_.layers > 0 && cfg_.dim % cfg_.heads != 0) {
        throw InvalidArgument("encoder dim must be divisible by the head count");
    }
    double std = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    embedding_ = params.add(name + ".embedding", nn::random_normal(vocab_size, cfg_.dim, std, rng));
    segment_embedding_ = params.add(name + ".segment", nn::random_normal(cfg_.segments, cfg_.dim, std, rng));
    for (int i = 0; i < cfg_.layers; ++i) {
        blocks_.emplace_back(params, name + ".block" + std::to_string(i), cfg_.dim, cfg_.heads, 2 * cfg_.dim, rng);
    }
    if (cfg_.layers > 0) {
        final_norm_ = nn::LayerNorm(params, name + ".norm", cfg_.dim);
        positions_ = nn::sinusoidal_positions(cfg_.max_tokens, cfg_.dim) * 0.1;
    }
    projection_ = nn::Linear(params, name + ".proj", cfg_.dim, cfg_.dim, rng);
}

void TextEncoder::set_token_embeddings(const ag::Matrix& table, bool identity_projection)
{
    if (table.rows() != embedding_.value().rows() || table.cols() != cfg_.dim) {
        throw InvalidArgument("token embedding table has the wrong shape");
    }
    embedding_.mutable_value() = table;
    if (identity_projection) {
        projection_.weight.mutable_value() = ag::Matrix::Identity(cfg_.dim, cfg_.dim);
        projection_.bias.mutable_value().setZero();
    }
}

ag::Var TextEncoder::encode(const std::vector<int>& ids_in, const std::vector<int>& segments_in) const
{
    std::vector<int> ids = ids_in;
    std::vector<int> segs = segments_in;
    if (!segs.empty() && segs.size() != ids.size()) {
        throw InvalidArgument("encoder: segment ids must align with token ids");
    }
    if (segs.empty()) {
        segs.assign(ids.size(), 0);
    }
    if (ids.empty()) {
        ids.push_back(text::Vocabulary::kUnk);
        segs.push_back(0);
    }
    if (ids.size() > static_cast<std::size_t>(cfg_.max_tokens)) {
        ids.resize(cfg_.max_tokens);
        segs.resize(cfg_.max_tokens);
    }
    for (int s : segs) {
        if (s < 0 || s >= cfg_.segments) {
            throw InvalidArgument("encoder: segment id out of range");
        }
    }
    auto x = ag::add(ag::gather_rows(embedding_, ids), ag::gather_rows(segment_embedding_, segs));
    if (!blocks_.empty()) {
        x = ag::add_constant(x, positions_.topRows(static_cast<Eigen::Index>(ids.size())));
        std::vector<bool> valid(ids.size(), true);
        for (const auto& block : blocks_) {
            x = block(x, valid);
        }
        x = final_norm_(x);
    }
    return ag::tanh(projection_(ag::mean_rows(x)));
}

RankerModels::RankerModels(const text::Vocabulary& vocab, RankerConfig config, std::uint64_t seed)
    : cfg_(config), vocab_(&vocab)
{
    if (cfg_.retriever_scale <= 0.0) {
        throw InvalidArgument("retriever scale must be positive");
    }
    if (cfg_.reranker.segments < 3) {
        throw InvalidArgument("reranker needs three segments (example, hint, query)");
    }
    nn::Rng rng(nn::mix_seed({seed, 0x52314ULL}));
    query_encoder_ = TextEncoder(retriever_params_, "ex", vocab.size(), cfg_.retriever, rng);
    doc_encoder_ = TextEncoder(retriever_params_, "ed", vocab.size(), cfg_.retriever, rng);
    nn::Rng rng2(nn::mix_seed({seed, 0x52324ULL}));
    cross_encoder_ = TextEncoder(reranker_params_, "ec", vocab.size(), cfg_.reranker, rng2);
    head_ = nn::Linear(reranker_params_, "fc", cfg_.reranker.dim, 1, rng2);
}

void RankerModels::init_token_embeddings(const std::function<ag::RowVector(const std::string&)>& token_vector)
{
    auto fill = [&](TextEncoder& enc, const nn::ParamSet& params, const std::string& name) {
        ag::Matrix table;
        for (const auto& [n, v] : params.items()) {
            if (n == name + ".embedding") {
                table = v.value();
            }
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(enc.config().dim));
        for (int i = text::Vocabulary::kSep + 1; i < vocab_->size(); ++i) {
            ag::RowVector v = token_vector(vocab_->token(i));
            if (v.size() != enc.config().dim) {
                throw InvalidArgument("token vector size does not match the ranker encoder dim");
            }
            table.row(i) = v * scale;
        }
        enc.set_token_embeddings(table, enc.config().layers == 0);
    };
    fill(query_encoder_, retriever_params_, "ex");
    fill(doc_encoder_, retriever_params_, "ed");
    fill(cross_encoder_, reranker_params_, "ec");
}

ag::Var RankerModels::encode_query(const QAInstance& inst) const
{
    return query_encoder_.encode(vocab_->encode(query_text(inst)));
}

ag::Var RankerModels::encode_example(const QAInstance& example) const
{
    const std::string t = cfg_.example_includes_answer ? example_text(example) : query_text(example);
    return doc_encoder_.encode(vocab_->encode(t));
}

ag::Var RankerModels::retriever_scores(const QAInstance& inst, const std::vector<const QAInstance*>& examples) const
{
    if (examples.empty()) {
        throw InvalidArgument("retriever_scores: no examples");
    }
    auto u = ag::l2_normalize_rows(encode_query(inst));
    std::vector<ag::Var> rows;
    rows.reserve(examples.size());
    for (const auto* e : examples) {
        rows.push_back(encode_example(*e));
    }
    auto v = ag::l2_normalize_rows(ag::concat_rows(rows));
    return ag::scale(ag::matmul_nt(u, v), cfg_.retriever_scale);
}

ag::Var RankerModels::reranker_score(const QAInstance& inst, const QAInstance& example, const std::string& hint) const
{
    // Budget: the query keeps at least a third of the window, the example is cut first.
    const auto e = vocab_->encode(example_text(example));
    const auto h = vocab_->encode(hint);
    const auto q = vocab_->encode(query_text(inst));
    const std::size_t cap = static_cast<std::size_t>(cfg_.reranker.max_tokens);
    std::size_t nq = std::min(q.size(), std::max<std::size_t>(cap / 3, cap > h.size() ? cap - h.size() : 0));
    std::size_t nh = std::min(h.size(), cap - std::min(cap, nq));
    std::size_t ne = std::min(e.size(), cap - std::min(cap, nq + nh));
    std::vector<int> ids;
    std::vector<int> segs;
    ids.reserve(ne + nh + nq);
    ids.insert(ids.end(), e.begin(), e.begin() + static_cast<std::ptrdiff_t>(ne));
    segs.insert(segs.end(), ne, 0);
    ids.insert(ids.end(), h.begin(), h.begin() + static_cast<std::ptrdiff_t>(nh));
    segs.insert(segs.end(), nh, 1);
    ids.insert(ids.end(), q.begin(), q.begin() + static_cast<std::ptrdiff_t>(nq));
    segs.insert(segs.end(), nq, 2);
    return head_(cross_encoder_.encode(ids, segs));
}

ag::Var RankerModels::reranker_scores(const QAInstance& inst, const std::vector<const QAInstance*>& examples,
                                      const std::vector<Hint>& hints) const
{
    if (examples.empty() || examples.size() != hints.size()) {
        throw InvalidArgument("reranker_scores: examples and hints must be non-empty and aligned");
    }
    std::vector<ag::Var> cols;
    cols.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        cols.push_back(reranker_score(inst, *examples[i], hints[i].text));
    }
    return ag::concat_cols(cols);
}

void RankerModels::tie_retriever_encoders()
{
    std::map<std::string, ag::Matrix> ex;
    for (auto& [name, var] : retriever_params_.items()) {
        if (name.rfind("ex.", 0) == 0) {
            ex[name.substr(3)] = var.value();
        }
    }
    for (auto& [name, var] : retriever_params_.items()) {
        if (name.rfind("ed.", 0) == 0) {
            var.mutable_value() = ex.at(name.substr(3));
        }
    }
}

nlohmann::json RankerModels::to_json() const
{
    auto enc = [](const EncoderConfig& c) {
        return nlohmann::json{{"dim", c.dim}, {"layers", c.layers}, {"heads", c.heads},
                              {"max_tokens", c.max_tokens}, {"segments", c.segments}};
    };
    return {{"config",
             {{"retriever", enc(cfg_.retriever)},
              {"reranker", enc(cfg_.reranker)},
              {"retriever_scale", cfg_.retriever_scale},
              {"example_includes_answer", cfg_.example_includes_answer},
              {"vocab_size", vocab_->size()},
              {"vocab_fingerprint", text::hex64(vocab_->fingerprint())}}},
            {"retriever", retriever_params_.to_json()},
            {"reranker", reranker_params_.to_json()}};
}

void RankerModels::load_json(const nlohmann::json& j)
{
    const auto& c = j.at("config");
    if (c.at("vocab_fingerprint").get<std::string>() != text::hex64(vocab_->fingerprint())) {
        throw PreconditionError("ranker checkpoint was trained with a different vocabulary");
    }
    auto check = [](const nlohmann::json& saved, const EncoderConfig& mine, const char* what) {
        if (saved.at("dim").get<int>() != mine.dim || saved.at("layers").get<int>() != mine.layers ||
            saved.at("segments").get<int>() != mine.segments) {
            throw PreconditionError(std::string("ranker checkpoint ") + what + " shape differs from the config");
        }
    };
    check(c.at("retriever"), cfg_.retriever, "retriever");
    check(c.at("reranker"), cfg_.reranker, "reranker");
    retriever_params_.load_json(j.at("retriever"));
    reranker_params_.load_json(j.at("reranker"));
}

std::uint64_t RankerModels::fingerprint() const
{
    return text::fnv1a(text::hex64(reranker_params_.fingerprint()), retriever_params_.fingerprint());
}

RetrievalIndex::RetrievalIndex(const RankerModels& models, const std::vector<QAInstance>& pool) : pool_(&pool)
{
    if (pool.empty()) {
        throw InvalidArgument("retrieval index over an empty pool");
    }
    docs_.resize(static_cast<Eigen::Index>(pool.size()), models.config().retriever.dim);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        ag::RowVector v = models.encode_example(pool[i]).value().row(0);
        double n = v.norm();
        docs_.row(static_cast<Eigen::Index>(i)) = n > 0.0 ? ag::RowVector(v / n) : v;
    }
}

CandidateSet RetrievalIndex::retrieve(const RankerModels& models, const QAInstance& instance, std::size_t l) const
{
    if (l == 0) {
        throw InvalidArgument("retrieve: l must be positive");
    }
    const auto& pool = *pool_;
    ag::RowVector u = models.encode_query(instance).value().row(0);
    double n = u.norm();
    if (n > 0.0) {
        u /= n;
    }
    Eigen::VectorXd s = (docs_ * u.transpose()) * models.config().retriever_scale;
    std::vector<std::size_t> order;
    order.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id != instance.id) {
            order.push_back(i);
        }
    }
    if (order.size() < l) {
        throw InvalidArgument("retrieve: pool has only " + std::to_string(order.size()) + " candidates, need " +
                              std::to_string(l));
    }
    auto better = [&](std::size_t a, std::size_t b) {
        double sa = s(static_cast<Eigen::Index>(a));
        double sb = s(static_cast<Eigen::Index>(b));
        if (sa != sb) {
            return sa > sb;
        }
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(l), order.end(), better);
    order.resize(l);
    CandidateSet out;
    out.instance_id = instance.id;
    out.examples = order;
    out.provenance = Provenance::retrieved;
    std::vector<double> r1;
    r1.reserve(l);
    for (auto i : order) {
        r1.push_back(s(static_cast<Eigen::Index>(i)));
    }
    out.scores[ModelTag::r1] = std::move(r1);
    return out;
}

KnowledgePrompt make_knowledge_prompt(const CandidateSet& candidates, const std::vector<double>& scores,
                                      std::size_t top)
{
    if (!candidates.has_hints()) {
        throw PreconditionError("candidate set for " + candidates.instance_id + " has no hints attached");
    }
    if (scores.size() != candidates.size()) {
        throw InvalidArgument("knowledge prompt: scores not aligned with candidates");
    }
    if (top == 0) {
        throw InvalidArgument("knowledge prompt: top must be positive");
    }
    auto order = rank_descending(scores, candidates.examples);
    KnowledgePrompt kp;
    std::size_t keep = std::min(top, order.size());
    for (std::size_t r = 0; r < keep; ++r) {
        kp.hints.push_back(candidates.hints[order[r]].text);
        kp.examples.push_back(candidates.examples[order[r]]);
    }
    kp.rendered_text = text::join(kp.hints, KnowledgePrompt::kSeparator);
    return kp;
}

void attach_hints(CandidateSet& candidates, const QAInstance& instance, const std::vector<QAInstance>& pool,
                  CachedOracle& oracle)
{
    candidates.hints.clear();
    candidates.hints.reserve(candidates.size());
    for (auto i : candidates.examples) {
        candidates.hints.push_back(oracle.hint(pool.at(i), instance));
    }
}

namespace {

std::vector<const QAInstance*> example_ptrs(const CandidateSet& c, const std::vector<QAInstance>& pool)
{
    std::vector<const QAInstance*> out;
    out.reserve(c.size());
    for (auto i : c.examples) {
        out.push_back(&pool.at(i));
    }
    return out;
}

std::vector<double> row_values(const ag::Var& v)
{
    const auto& m = v.value();
    return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace

KnowledgePrompt rerank(const RankerModels& models, const QAInstance& instance, CandidateSet& candidates,
                       const std::vector<QAInstance>& pool, std::size_t top)
{
    if (!candidates.has_hints()) {
        throw PreconditionError("rerank: candidate set for " + instance.id + " is missing hints");
    }
    auto scores = row_values(models.reranker_scores(instance, example_ptrs(candidates, pool), candidates.hints));
    candidates.scores[ModelTag::r2] = scores;
    return make_knowledge_prompt(candidates, scores, top);
}

ScoringDistribution ranker_distribution(ModelTag model, const RankerModels& models, const CandidateSet& candidates,
                                        const QAInstance& instance, const std::vector<QAInstance>& pool)
{
    if (candidates.size() == 0) {
        throw InvalidArgument("ranker_distribution: empty candidate set");
    }
    auto ex = example_ptrs(candidates, pool);
    if (model == ModelTag::r1) {
        return {model, softmax(row_values(models.retriever_scores(instance, ex)))};
    }
    if (model == ModelTag::r2) {
        if (!candidates.has_hints()) {
            throw PreconditionError("ranker_distribution: R2 needs hints for " + instance.id);
        }
        return {model, softmax(row_values(models.reranker_scores(instance, ex, candidates.hints)))};
    }
    throw InvalidArgument("ranker_distribution: model must be r1 or r2");
}

}  // namespace oltqa
