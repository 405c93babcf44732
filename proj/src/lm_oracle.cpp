#include "oltqa/lm_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

std::string to_string(ModelTag t)
{
    switch (t) {
    case ModelTag::lm: return "lm";
    case ModelTag::r1: return "r1";
    case ModelTag::r2: return "r2";
    case ModelTag::f: return "f";
    }
    return "?";
}

std::vector<double> softmax(const std::vector<double>& scores)
{
    if (scores.empty()) {
        throw InvalidArgument("softmax over an empty candidate set");
    }
    double m = *std::max_element(scores.begin(), scores.end());
    std::vector<double> p(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp(scores[i] - m);
        total += p[i];
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

namespace {

const std::set<std::string>& stopwords()
{
    static const std::set<std::string> words = {
        "a", "an", "the", "of", "is", "are", "was", "what", "which", "who", "whom", "how", "does", "do",
        "did", "in", "on", "at", "to", "for", "and", "or", "it", "its", "s", "this", "that", "be", "by", "with"};
    return words;
}

}  // namespace

MockOracle::MockOracle(MockOracleConfig config) : cfg_(std::move(config)) {}

const std::vector<std::string>& MockOracle::noise_words()
{
    static const std::vector<std::string> words = {"unknown", "unclear", "nothing", "perhaps",
                                                   "various", "someone", "elsewhere", "never"};
    return words;
}

std::set<std::string> MockOracle::content_tokens(const std::string& s) const
{
    std::set<std::string> out;
    for (auto& tok : text::tokenize(s)) {
        if (stopwords().count(tok) != 0) {
            continue;
        }
        auto it = cfg_.lexicon.find(tok);
        out.insert(it == cfg_.lexicon.end() ? tok : it->second);
    }
    return out;
}

std::string MockOracle::generate(const QAInstance& example, const std::string& context, const std::string& question)
{
    ++generate_calls_;
    (void)context;
    return copy_rule(example, question);
}

std::string MockOracle::copy_rule(const QAInstance& example, const std::string& question) const
{
    auto a = content_tokens(example.question);
    auto b = content_tokens(question);
    std::size_t shared = 0;
    for (const auto& t : a) {
        shared += b.count(t);
    }
    if (shared >= cfg_.min_overlap) {
        return text::lowercase(example.answer);
    }
    auto h = text::fnv1a(example.id + "\x1f" + question, cfg_.seed ^ 0xa5a5a5a5ULL);
    return noise_words()[h % noise_words().size()];
}

double MockOracle::score(const QAInstance& example, const std::string& context, const std::string& question,
                         const std::string& answer)
{
    ++score_calls_;
    if (text::tokenize(answer).empty()) {
        throw InvalidArgument("cannot score an empty answer");
    }
    std::string copied = copy_rule(example, question);
    double miss = 1.0 - f1_token_overlap(copied, answer);
    auto ex = content_tokens(example.question + " " + example.context);
    auto q = content_tokens(question + " " + context);
    std::size_t inter = 0;
    for (const auto& t : ex) {
        inter += q.count(t);
    }
    std::size_t uni = ex.size() + q.size() - inter;
    double jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    double n_tokens = static_cast<double>(text::tokenize(answer).size());
    return -cfg_.copy_weight * n_tokens * miss - cfg_.lexical_weight * (1.0 - jaccard);
}

RemoteOracle::RemoteOracle(RemoteOracleConfig config) : cfg_(std::move(config))
{
    if (cfg_.endpoint.empty()) {
        throw InvalidArgument("remote oracle needs an endpoint URL");
    }
}

std::string RemoteOracle::render_prompt(const QAInstance& example, const std::string& context,
                                        const std::string& question)
{
    return example.question + "\n" + example.context + "\nanswer: " + example.answer + "\n\n" + question + "\n" +
           context + "\nanswer:";
}

namespace {

nlohmann::json post_json(const RemoteOracleConfig& cfg, const std::string& route, const nlohmann::json& body)
{
    httplib::Client client(cfg.endpoint);
    client.set_connection_timeout(cfg.timeout_seconds, 0);
    client.set_read_timeout(cfg.timeout_seconds, 0);
    auto res = client.Post(route, body.dump(), "application/json");
    if (!res) {
        throw OracleError("oracle request to " + cfg.endpoint + route + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw OracleError("oracle " + route + " returned HTTP " + std::to_string(res->status));
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw OracleError(std::string("oracle returned malformed JSON: ") + e.what());
    }
}

}  // namespace

std::string RemoteOracle::generate(const QAInstance& example, const std::string& context, const std::string& question)
{
    ++generate_calls_;
    auto reply = post_json(cfg_, "/generate",
                           {{"model", cfg_.model},
                            {"prompt", render_prompt(example, context, question)},
                            {"max_tokens", cfg_.max_tokens}});
    if (!reply.contains("text") || !reply["text"].is_string()) {
        throw OracleError("oracle /generate reply has no text field");
    }
    return reply["text"].get<std::string>();
}

double RemoteOracle::score(const QAInstance& example, const std::string& context, const std::string& question,
                           const std::string& answer)
{
    ++score_calls_;
    auto reply = post_json(cfg_, "/score",
                           {{"model", cfg_.model},
                            {"prompt", render_prompt(example, context, question)},
                            {"target", answer}});
    if (!reply.contains("logprob") || !reply["logprob"].is_number()) {
        throw OracleError("oracle /score reply has no logprob field");
    }
    double lp = reply["logprob"].get<double>();
    if (!std::isfinite(lp) || lp > 0.0) {
        throw OracleError("oracle returned an invalid log-probability");
    }
    return lp;
}

OracleCache::OracleCache(std::string path) : path_(std::move(path))
{
    if (path_.empty()) {
        return;
    }
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            OracleCacheEntry e;
            e.key_hash = j.at("key_hash").get<std::string>();
            e.example_id = j.at("example_id").get<std::string>();
            e.instance_id = j.at("instance_id").get<std::string>();
            if (j.contains("hint") && !j["hint"].is_null()) {
                e.hint = j["hint"].get<std::string>();
            }
            if (j.contains("score") && !j["score"].is_null()) {
                e.score = j["score"].get<double>();
            }
            auto& slot = entries_[e.key_hash];
            if (slot.key_hash.empty()) {
                slot = e;
            } else {
                if (!slot.hint && e.hint) slot.hint = e.hint;
                if (!slot.score && e.score) slot.score = e.score;
            }
        } catch (const std::exception& ex) {
            throw InvalidArgument(path_ + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
}

std::string OracleCache::key_for(const std::string& oracle_name, const QAInstance& example, const QAInstance& instance)
{
    std::uint64_t h = text::fnv1a(oracle_name);
    for (const auto* part : {&example.id, &example.question, &example.context, &example.answer, &instance.id,
                             &instance.question, &instance.context, &instance.answer}) {
        h = text::fnv1a(*part, h);
        h = text::fnv1a("\x1f", h);
    }
    return text::hex64(h);
}

std::optional<OracleCacheEntry> OracleCache::find(const std::string& key) const
{
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second;
}

bool OracleCache::insert_if_absent(const OracleCacheEntry& entry)
{
    std::lock_guard lock(mu_);
    auto& slot = entries_[entry.key_hash];
    bool changed = false;
    if (slot.key_hash.empty()) {
        slot = entry;
        changed = true;
    } else {
        if (!slot.hint && entry.hint) {
            slot.hint = entry.hint;
            changed = true;
        }
        if (!slot.score && entry.score) {
            slot.score = entry.score;
            changed = true;
        }
    }
    if (changed && !path_.empty()) {
        nlohmann::json j;
        j["key_hash"] = slot.key_hash;
        j["example_id"] = slot.example_id;
        j["instance_id"] = slot.instance_id;
        j["hint"] = slot.hint ? nlohmann::json(*slot.hint) : nlohmann::json(nullptr);
        j["score"] = slot.score ? nlohmann::json(*slot.score) : nlohmann::json(nullptr);
        std::ofstream out(path_, std::ios::app);
        out << j.dump() << '\n';
    }
    return changed;
}

std::size_t OracleCache::size() const
{
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::size_t OracleCache::hint_count() const
{
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [](const auto& kv) { return kv.second.hint.has_value(); }));
}

CachedOracle::CachedOracle(LmOracle& oracle, OracleCache& cache, std::size_t hint_max_tokens)
    : oracle_(oracle), cache_(cache), hint_max_tokens_(hint_max_tokens)
{
}

Hint CachedOracle::hint(const QAInstance& example, const QAInstance& instance)
{
    if (text::tokenize(instance.question).empty()) {
        throw InvalidArgument("hint requested for an instance with an empty question");
    }
    if (text::tokenize(example.answer).empty()) {
        throw InvalidArgument("in-context example " + example.id + " has no answer");
    }
    auto key = OracleCache::key_for(oracle_.name(), example, instance);
    if (auto hit = cache_.find(key); hit && hit->hint) {
        return {*hit->hint, example.id};
    }
    if (!allow_calls_) {
        missing_.push_back(key + " (hint " + example.id + " -> " + instance.id + ")");
        return {MockOracle::noise_words().front(), example.id};
    }
    auto tokens = text::tokenize(oracle_.generate(example, instance.context, instance.question));
    if (tokens.size() > hint_max_tokens_) {
        tokens.resize(hint_max_tokens_);
    }
    std::string h = tokens.empty() ? MockOracle::noise_words().front() : text::join(tokens, " ");
    cache_.insert_if_absent({key, example.id, instance.id, h, std::nullopt});
    return {*cache_.find(key)->hint, example.id};
}

double CachedOracle::score(const QAInstance& example, const QAInstance& instance)
{
    auto key = OracleCache::key_for(oracle_.name(), example, instance);
    if (auto hit = cache_.find(key); hit && hit->score) {
        return *hit->score;
    }
    if (!allow_calls_) {
        missing_.push_back(key + " (score " + example.id + " -> " + instance.id + ")");
        return 0.0;
    }
    double s = oracle_.score(example, instance.context, instance.question, instance.answer);
    if (!std::isfinite(s)) {
        throw OracleError("oracle produced a non-finite score");
    }
    cache_.insert_if_absent({key, example.id, instance.id, std::nullopt, s});
    return *cache_.find(key)->score;
}

void CachedOracle::require_complete() const
{
    if (missing_.empty()) {
        return;
    }
    std::string msg = "oracle cache is incomplete; " + std::to_string(missing_.size()) + " missing entries:";
    for (std::size_t i = 0; i < missing_.size() && i < 20; ++i) {
        msg += "\n  " + missing_[i];
    }
    if (missing_.size() > 20) {
        msg += "\n  ...";
    }
    throw PreconditionError(msg);
}

ScoringDistribution lm_distribution(const std::vector<QAInstance>& candidates, const QAInstance& instance,
                                    CachedOracle& oracle)
{
    if (candidates.empty()) {
        throw InvalidArgument("lm_distribution: empty candidate set");
    }
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto& c : candidates) {
        scores.push_back(oracle.score(c, instance));
    }
    return {ModelTag::lm, softmax(scores)};
}

}  // namespace oltqa
