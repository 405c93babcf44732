#include "oltqa/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

FrozenEncoder::FrozenEncoder(int dim, std::uint64_t seed, std::map<std::string, std::string> lexicon,
                             double token_jitter)
    : dim_(dim), seed_(seed), lexicon_(std::move(lexicon)), jitter_(token_jitter)
{
    if (dim <= 0) {
        throw InvalidArgument("frozen encoder dimension must be positive");
    }
}

ag::RowVector FrozenEncoder::hashed_normal(const std::string& key) const
{
    nn::Rng rng(nn::mix_seed({seed_, text::fnv1a(key)}));
    ag::RowVector v(dim_);
    for (int i = 0; i < dim_; ++i) {
        v(i) = rng.normal();
    }
    return v;
}

ag::RowVector FrozenEncoder::token_vector(const std::string& token) const
{
    {
        std::lock_guard lock(*cache_mu_);
        auto cached = cache_.find(token);
        if (cached != cache_.end()) {
            return cached->second;
        }
    }
    ag::RowVector v;
    auto it = lexicon_.find(token);
    if (it != lexicon_.end()) {
        v = hashed_normal("concept:" + it->second) + jitter_ * hashed_normal("token:" + token);
    } else {
        v = hashed_normal("token:" + token);
    }
    std::lock_guard lock(*cache_mu_);
    cache_.emplace(token, v);
    return v;
}

QueryVector FrozenEncoder::encode(const std::string& s) const
{
    auto tokens = text::tokenize(s);
    if (tokens.empty()) {
        throw InvalidArgument("query text is empty");
    }
    QueryVector acc = QueryVector::Zero(dim_);
    for (const auto& t : tokens) {
        acc += token_vector(t);
    }
    return acc / static_cast<double>(tokens.size());
}

std::uint64_t FrozenEncoder::fingerprint() const
{
    std::uint64_t h = text::fnv1a("frozen-encoder");
    h = text::fnv1a(std::to_string(dim_) + ":" + std::to_string(seed_) + ":" + std::to_string(jitter_), h);
    for (const auto& [tok, concept_name] : lexicon_) {
        h = text::fnv1a(tok + "=" + concept_name + ";", h);
    }
    return h;
}

QueryVector query_vector(const std::string& context, const std::string& question, const FrozenEncoder& encoder)
{
    QAInstance inst;
    inst.context = context;
    inst.question = question;
    return encoder.encode(serialize_instance(inst).source_text);
}

QueryVector query_vector(const QAInstance& inst, const FrozenEncoder& encoder)
{
    return encoder.encode(serialize_instance(inst).source_text);
}

double cosine_distance(const ag::RowVector& a, const ag::RowVector& b)
{
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw InvalidArgument("cosine distance undefined for a zero vector");
    }
    return 1.0 - a.dot(b) / (na * nb);
}

namespace {

// d/da of (1 - cos(a, b)).
ag::RowVector cosine_distance_grad(const ag::RowVector& a, const ag::RowVector& b)
{
    double na = a.norm();
    double nb = b.norm();
    double cos = a.dot(b) / (na * nb);
    return -(b / (na * nb) - cos * a / (na * na));
}

}  // namespace

KeyLossResult key_loss(const ag::Matrix& keys, const QueryVector& x, const std::vector<std::size_t>& selected,
                       double eta, double gamma)
{
    KeyLossResult out;
    out.grad = ag::Matrix::Zero(keys.rows(), keys.cols());
    if (selected.empty()) {
        return out;
    }
    const double pair_scale = 1.0 / static_cast<double>(selected.size() * selected.size());
    for (auto i : selected) {
        ag::RowVector ki = keys.row(static_cast<Eigen::Index>(i));
        double d = cosine_distance(ki, x);
        if (d > eta) {
            out.value += d - eta;
            out.grad.row(static_cast<Eigen::Index>(i)) += cosine_distance_grad(ki, x);
        }
    }
    for (auto i : selected) {
        for (auto j : selected) {
            if (i == j) {
                continue;
            }
            ag::RowVector ki = keys.row(static_cast<Eigen::Index>(i));
            ag::RowVector kj = keys.row(static_cast<Eigen::Index>(j));
            double d = cosine_distance(ki, kj);
            if (d < gamma) {
                out.value += (gamma - d) * pair_scale;
                out.grad.row(static_cast<Eigen::Index>(i)) -= pair_scale * cosine_distance_grad(ki, kj);
                out.grad.row(static_cast<Eigen::Index>(j)) -= pair_scale * cosine_distance_grad(kj, ki);
            }
        }
    }
    return out;
}

MetaPromptPool::MetaPromptPool(PoolConfig config, std::uint64_t seed) : cfg_(config)
{
    if (cfg_.size <= 0 || cfg_.select_count <= 0 || cfg_.select_count > cfg_.size) {
        throw InvalidArgument("prompt pool needs 1 <= select_count <= size");
    }
    if (cfg_.prompt_length <= 0 || cfg_.key_dim <= 0 || cfg_.model_dim <= 0) {
        throw InvalidArgument("prompt pool dimensions must be positive");
    }
    nn::Rng rng(nn::mix_seed({seed, 0x9001ULL}));
    ag::Matrix keys = nn::random_normal(cfg_.size, cfg_.key_dim, 1.0, rng);
    for (Eigen::Index r = 0; r < keys.rows(); ++r) {
        keys.row(r).normalize();
    }
    keys_ = key_params_.add("keys", std::move(keys));
    for (int i = 0; i < cfg_.size; ++i) {
        prompts_.push_back(prompt_params_.add(
            "prompt." + std::to_string(i),
            nn::random_normal(cfg_.prompt_length, cfg_.model_dim, cfg_.prompt_init_std, rng)));
    }
}

std::vector<std::size_t> MetaPromptPool::select_keys(const QueryVector& x) const
{
    if (x.size() != cfg_.key_dim) {
        throw InvalidArgument("query dimension does not match the key dimension");
    }
    const auto& k = keys_.value();
    std::vector<double> dist(static_cast<std::size_t>(cfg_.size));
    for (int i = 0; i < cfg_.size; ++i) {
        dist[static_cast<std::size_t>(i)] = cosine_distance(k.row(i), x);
    }
    std::vector<std::size_t> idx(dist.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    idx.resize(static_cast<std::size_t>(cfg_.select_count));
    std::sort(idx.begin(), idx.end());
    return idx;
}

ag::Var MetaPromptPool::compose_meta_prompt(const std::vector<std::size_t>& selected) const
{
    if (selected.size() != static_cast<std::size_t>(cfg_.select_count)) {
        throw InvalidArgument("compose_meta_prompt: selection size must equal select_count");
    }
    auto sorted = selected;
    std::sort(sorted.begin(), sorted.end());
    std::vector<ag::Var> parts;
    for (auto i : sorted) {
        if (i >= prompts_.size()) {
            throw InvalidArgument("compose_meta_prompt: prompt index out of range");
        }
        parts.push_back(prompts_[i]);
    }
    return ag::concat_rows(parts);
}

KeyLossResult MetaPromptPool::key_loss(const QueryVector& x, const std::vector<std::size_t>& selected) const
{
    if (selected.size() != static_cast<std::size_t>(cfg_.select_count)) {
        throw InvalidArgument("key_loss: selection size must equal select_count");
    }
    return oltqa::key_loss(keys_.value(), x, selected, cfg_.eta, cfg_.gamma);
}

nlohmann::json MetaPromptPool::to_json() const
{
    nlohmann::json j;
    j["shape"] = {{"size", cfg_.size},
                  {"select_count", cfg_.select_count},
                  {"prompt_length", cfg_.prompt_length},
                  {"key_dim", cfg_.key_dim},
                  {"model_dim", cfg_.model_dim}};
    j["eta"] = cfg_.eta;
    j["gamma"] = cfg_.gamma;
    j["keys"] = key_params_.to_json();
    j["prompts"] = prompt_params_.to_json();
    return j;
}

void MetaPromptPool::load_json(const nlohmann::json& j)
{
    const auto& shape = j.at("shape");
    if (shape.at("size").get<int>() != cfg_.size || shape.at("prompt_length").get<int>() != cfg_.prompt_length ||
        shape.at("key_dim").get<int>() != cfg_.key_dim || shape.at("model_dim").get<int>() != cfg_.model_dim) {
        throw InvalidArgument("prompt pool checkpoint shape does not match the configured pool");
    }
    key_params_.load_json(j.at("keys"));
    prompt_params_.load_json(j.at("prompts"));
}

std::uint64_t MetaPromptPool::fingerprint() const
{
    std::uint64_t h = key_params_.fingerprint();
    return text::fnv1a(text::hex64(prompt_params_.fingerprint()), h);
}

SelectionFrequency selection_frequency(const std::vector<QAInstance>& instances, const MetaPromptPool& pool,
                                       const FrozenEncoder& encoder)
{
    SelectionFrequency out;
    std::map<std::string, std::size_t> row_of;
    for (const auto& inst : instances) {
        auto it = row_of.find(inst.task_id);
        if (it == row_of.end()) {
            it = row_of.emplace(inst.task_id, out.task_ids.size()).first;
            out.task_ids.push_back(inst.task_id);
            out.counts.emplace_back(static_cast<std::size_t>(pool.config().size), 0);
        }
        for (auto idx : pool.select_keys(query_vector(inst, encoder))) {
            ++out.counts[it->second][idx];
        }
    }
    return out;
}

std::string SelectionFrequency::to_csv() const
{
    std::ostringstream out;
    out << "task_id";
    std::size_t s = counts.empty() ? 0 : counts.front().size();
    for (std::size_t i = 0; i < s; ++i) {
        out << ",p" << i;
    }
    out << '\n';
    for (std::size_t r = 0; r < task_ids.size(); ++r) {
        out << task_ids[r];
        for (auto c : counts[r]) {
            out << ',' << c;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace oltqa
