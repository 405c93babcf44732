#include "oltqa/qa_model.hpp"

#include <algorithm>
#include <cmath>

#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"

namespace oltqa {

namespace {

constexpr std::size_t kMaxPositions = 1024;

}  // namespace

QAModel::QAModel(std::shared_ptr<const text::Vocabulary> vocab, QAModelConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(config), truncations_(std::make_shared<std::atomic<std::size_t>>(0))
{
    if (!vocab_) {
        throw InvalidArgument("QA model needs a vocabulary");
    }
    if (cfg_.dim <= 0 || cfg_.heads <= 0 || cfg_.dim % cfg_.heads != 0) {
        throw InvalidArgument("QA model dim must be positive and divisible by heads");
    }
    if (cfg_.max_source_tokens <= 2 || cfg_.max_target_tokens <= 1) {
        throw InvalidArgument("QA model token budgets are too small");
    }
    nn::Rng rng(nn::mix_seed({seed, 0x51414dULL}));
    embedding_ = params_.add("embedding",
                             nn::random_normal(vocab_->size(), cfg_.dim, 1.0 / std::sqrt(double(cfg_.dim)), rng));
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        encoder_.emplace_back(params_, "enc" + std::to_string(i), cfg_.dim, cfg_.heads, cfg_.ff_dim, rng);
    }
    encoder_norm_ = nn::LayerNorm(params_, "enc_norm", cfg_.dim);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
        decoder_.emplace_back(params_, "dec" + std::to_string(i), cfg_.dim, cfg_.heads, cfg_.ff_dim, rng);
    }
    decoder_norm_ = nn::LayerNorm(params_, "dec_norm", cfg_.dim);
    positions_ = std::make_shared<ag::Matrix>(nn::sinusoidal_positions(kMaxPositions, cfg_.dim) * 0.1);
}

const ag::Matrix& QAModel::positions(std::size_t rows) const
{
    if (rows > kMaxPositions) {
        throw InvalidArgument("sequence of " + std::to_string(rows) + " rows exceeds the position table");
    }
    return *positions_;
}

SourceTokens QAModel::source_tokens(const QAInstance& inst, const std::vector<std::string>& hints) const
{
    QAInstance q_only = inst;
    q_only.context.clear();
    auto question = vocab_->encode(serialize_instance(q_only).source_text);
    auto context = vocab_->encode(text::lowercase(inst.context));
    std::vector<std::vector<int>> hint_ids;
    for (const auto& h : hints) {
        hint_ids.push_back(vocab_->encode(text::lowercase(h)));
    }
    const std::size_t budget = static_cast<std::size_t>(cfg_.max_source_tokens);
    auto hint_len = [&]() {
        std::size_t n = 0;
        for (const auto& h : hint_ids) {
            n += h.size() + 1;
        }
        return n;
    };
    SourceTokens out;
    std::size_t fixed = question.size() + 1;
    if (hint_len() + fixed + context.size() > budget) {
        out.truncated = true;
        std::size_t room = budget > hint_len() + fixed ? budget - hint_len() - fixed : 0;
        context.resize(std::min(context.size(), room));
        while (!hint_ids.empty() && hint_len() + fixed + context.size() > budget) {
            hint_ids.pop_back();
        }
    }
    if (out.truncated) {
        ++*truncations_;
    }
    for (const auto& h : hint_ids) {
        out.ids.insert(out.ids.end(), h.begin(), h.end());
        out.ids.push_back(text::Vocabulary::kSep);
    }
    out.ids.insert(out.ids.end(), question.begin(), question.end());
    out.ids.push_back(text::Vocabulary::kSep);
    out.ids.insert(out.ids.end(), context.begin(), context.end());
    return out;
}

std::vector<int> QAModel::target_tokens(const std::string& answer) const
{
    auto ids = vocab_->encode(text::lowercase(answer));
    if (ids.size() + 1 > static_cast<std::size_t>(cfg_.max_target_tokens)) {
        ids.resize(cfg_.max_target_tokens - 1);
    }
    ids.push_back(text::Vocabulary::kEos);
    return ids;
}

std::pair<ag::Var, std::vector<bool>> QAModel::encode(const ag::Var& meta_prompt, const std::vector<int>& source,
                                                      std::size_t pad_to) const
{
    std::vector<int> ids = source;
    std::vector<bool> valid;
    std::size_t prefix = 0;
    if (meta_prompt.defined()) {
        if (meta_prompt.cols() != cfg_.dim) {
            throw InvalidArgument("meta prompt width differs from the model dimension");
        }
        prefix = static_cast<std::size_t>(meta_prompt.rows());
    }
    valid.assign(prefix + ids.size(), true);
    if (pad_to > ids.size()) {
        valid.resize(prefix + pad_to, false);
        ids.resize(pad_to, text::Vocabulary::kPad);
    }
    auto tokens = ag::gather_rows(embedding_, ids);
    ag::Var x = prefix > 0 ? ag::concat_rows({meta_prompt, tokens}) : tokens;
    const auto rows = static_cast<std::size_t>(x.rows());
    x = ag::add_constant(x, positions(rows).topRows(x.rows()));
    for (const auto& block : encoder_) {
        x = block(x, valid);
    }
    return {encoder_norm_(x), valid};
}

ag::Var QAModel::decoder_log_probs(const ag::Var& memory, const std::vector<bool>& memory_valid,
                                   const std::vector<int>& decoder_input) const
{
    auto y = ag::gather_rows(embedding_, decoder_input);
    y = ag::add_constant(y, positions(decoder_input.size()).topRows(y.rows()));
    for (const auto& block : decoder_) {
        y = block(y, memory, memory_valid);
    }
    y = decoder_norm_(y);
    return ag::log_softmax_rows(ag::matmul_nt(y, embedding_));
}

namespace {

ag::Var target_log_probs(const QAModel& model, const PromptedInput& input, const std::string& answer,
                         std::size_t pad_to)
{
    if (input.instance == nullptr) {
        throw InvalidArgument("prompted input has no instance");
    }
    auto src = model.source_tokens(*input.instance, input.hints);
    auto [memory, valid] = model.encode(input.meta_prompt, src.ids, pad_to);
    auto target = model.target_tokens(answer);
    std::vector<int> dec_in;
    dec_in.reserve(target.size());
    dec_in.push_back(text::Vocabulary::kBos);
    dec_in.insert(dec_in.end(), target.begin(), target.end() - 1);
    return ag::pick(model.decoder_log_probs(memory, valid, dec_in), target);
}

}  // namespace

ag::Var QAModel::log_likelihood(const PromptedInput& input, const std::string& answer, std::size_t pad_to) const
{
    return ag::sum(target_log_probs(*this, input, answer, pad_to));
}

ag::Var QAModel::token_nll(const PromptedInput& input, std::size_t pad_to) const
{
    return ag::scale(ag::mean(target_log_probs(*this, input, input.instance->answer, pad_to)), -1.0);
}

std::string QAModel::predict(const PromptedInput& input) const
{
    if (input.instance == nullptr) {
        throw InvalidArgument("prompted input has no instance");
    }
    auto src = source_tokens(*input.instance, input.hints);
    auto [memory_var, valid] = encode(input.meta_prompt.defined() ? ag::detach(input.meta_prompt) : ag::Var(), src.ids);
    auto memory = ag::detach(memory_var);
    std::vector<int> dec_in{text::Vocabulary::kBos};
    std::vector<int> out;
    for (int step = 0; step < cfg_.max_target_tokens; ++step) {
        auto lp = decoder_log_probs(memory, valid, dec_in).value();
        Eigen::RowVectorXd last = lp.row(lp.rows() - 1);
        last(text::Vocabulary::kPad) = -INFINITY;
        last(text::Vocabulary::kBos) = -INFINITY;
        Eigen::Index best = 0;
        last.maxCoeff(&best);
        int tok = static_cast<int>(best);
        if (tok == text::Vocabulary::kEos) {
            break;
        }
        out.push_back(tok);
        dec_in.push_back(tok);
    }
    return vocab_->decode(out);
}

nlohmann::json QAModel::to_json(std::uint64_t pool_fingerprint) const
{
    return {{"config",
             {{"dim", cfg_.dim},
              {"encoder_layers", cfg_.encoder_layers},
              {"decoder_layers", cfg_.decoder_layers},
              {"heads", cfg_.heads},
              {"ff_dim", cfg_.ff_dim},
              {"max_source_tokens", cfg_.max_source_tokens},
              {"max_target_tokens", cfg_.max_target_tokens}}},
            {"vocab", vocab_->tokens()},
            {"pool_fingerprint", text::hex64(pool_fingerprint)},
            {"params", params_.to_json()}};
}

std::uint64_t QAModel::checkpoint_pool_fingerprint(const nlohmann::json& j)
{
    return std::stoull(j.at("pool_fingerprint").get<std::string>(), nullptr, 16);
}

void QAModel::load_json(const nlohmann::json& j, std::uint64_t expected_pool_fingerprint)
{
    if (checkpoint_pool_fingerprint(j) != expected_pool_fingerprint) {
        throw PreconditionError("QA model checkpoint was trained with prompt pool " +
                                j.at("pool_fingerprint").get<std::string>() + ", but the loaded pool hashes to " +
                                text::hex64(expected_pool_fingerprint));
    }
    if (j.at("vocab").get<std::vector<std::string>>() != vocab_->tokens()) {
        throw PreconditionError("QA model checkpoint vocabulary differs from the current vocabulary");
    }
    const auto& c = j.at("config");
    if (c.at("dim").get<int>() != cfg_.dim || c.at("encoder_layers").get<int>() != cfg_.encoder_layers ||
        c.at("decoder_layers").get<int>() != cfg_.decoder_layers) {
        throw PreconditionError("QA model checkpoint shape differs from the config");
    }
    params_.load_json(j.at("params"));
}

ag::Var qa_loss(const QAModel& model, const std::vector<PromptedInput>& batch, std::size_t pad_to)
{
    if (batch.empty()) {
        throw InvalidArgument("qa_loss over an empty batch");
    }
    std::vector<ag::Var> terms;
    terms.reserve(batch.size());
    for (const auto& in : batch) {
        terms.push_back(model.token_nll(in, pad_to));
    }
    return ag::mean(ag::concat_rows(terms));
}

ag::Var qa_candidate_scores(const QAModel& model, const QAInstance& instance, const CandidateSet& candidates,
                            const ag::Var& meta_prompt)
{
    if (candidates.size() == 0) {
        throw InvalidArgument("qa_candidate_scores: empty candidate set");
    }
    if (!candidates.has_hints()) {
        throw PreconditionError("qa_candidate_scores: hints missing for " + instance.id);
    }
    std::vector<ag::Var> cols;
    cols.reserve(candidates.size());
    for (const auto& h : candidates.hints) {
        cols.push_back(model.log_likelihood({&instance, meta_prompt, {h.text}}, instance.answer));
    }
    return ag::concat_cols(cols);
}

ScoringDistribution qa_candidate_distribution(const QAModel& model, const QAInstance& instance,
                                              const CandidateSet& candidates, const ag::Var& meta_prompt)
{
    const ag::Matrix m = qa_candidate_scores(model, instance, candidates, meta_prompt).value();
    return {ModelTag::f, softmax(std::vector<double>(m.data(), m.data() + m.size()))};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed)
{
    if (batch_size == 0) {
        throw InvalidArgument("batch size must be positive");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    nn::Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return out;
}

std::vector<double> finetune_qa(QAModel& model, const std::vector<QAInstance>& data, const FinetuneConfig& config)
{
    if (data.empty()) {
        throw InvalidArgument("fine-tuning on an empty dataset");
    }
    nn::AdamW opt(model.params(), config.optimizer);
    std::vector<double> losses;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& idx : epoch_batches(data.size(), config.batch_size,
                                             nn::mix_seed({config.seed, std::uint64_t(epoch), 0xf1ULL}))) {
            std::vector<PromptedInput> batch;
            for (auto i : idx) {
                batch.push_back({&data[i], {}, {}});
            }
            auto loss = qa_loss(model, batch);
            ag::backward(loss);
            opt.step();
            losses.push_back(loss.scalar());
        }
    }
    return losses;
}

}  // namespace oltqa
