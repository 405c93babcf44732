#pragma once

// The QA model F: a small transformer encoder-decoder whose encoder input is
// [P_m (soft prefix); P_k hint tokens; question; context].

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/autograd.hpp"
#include "oltqa/knowledge_miner.hpp"
#include "oltqa/lm_oracle.hpp"
#include "oltqa/nn.hpp"
#include "oltqa/task_registry.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

struct QAModelConfig {
    int dim = 64;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int heads = 2;
    int ff_dim = 128;
    int max_source_tokens = 128;  // hard tokens only; the soft prefix is extra
    int max_target_tokens = 16;   // includes the end-of-sequence token
};

/// One forward input: the instance plus its meta prompt (undefined = none) and hints.
struct PromptedInput {
    const QAInstance* instance = nullptr;
    ag::Var meta_prompt;
    std::vector<std::string> hints;
};

/// Token ids after layout and truncation.
struct SourceTokens {
    std::vector<int> ids;
    bool truncated = false;
};

class QAModel {
public:
    QAModel(std::shared_ptr<const text::Vocabulary> vocab, QAModelConfig config, std::uint64_t seed);

    const QAModelConfig& config() const { return cfg_; }
    const text::Vocabulary& vocab() const { return *vocab_; }
    std::shared_ptr<const text::Vocabulary> vocab_ptr() const { return vocab_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// hint_1 <sep> ... hint_k <sep> question(+options) <sep> context. Over budget: the
    /// context tail goes first, then whole hints from the back; the question is never cut.
    SourceTokens source_tokens(const QAInstance& inst, const std::vector<std::string>& hints) const;
    /// Answer tokens followed by <eos>, capped at max_target_tokens.
    std::vector<int> target_tokens(const std::string& answer) const;

    /// Encoder states (prefix rows + source rows + padding rows) and the key mask.
    std::pair<ag::Var, std::vector<bool>> encode(const ag::Var& meta_prompt, const std::vector<int>& source,
                                                 std::size_t pad_to = 0) const;
    /// Per-position log-softmax over the vocabulary for a teacher-forced decoder input.
    ag::Var decoder_log_probs(const ag::Var& memory, const std::vector<bool>& memory_valid,
                              const std::vector<int>& decoder_input) const;

    /// log p_F(answer | input), summed over target tokens (1 x 1).
    ag::Var log_likelihood(const PromptedInput& input, const std::string& answer, std::size_t pad_to = 0) const;
    /// Token-averaged negative log-likelihood of the gold answer (1 x 1).
    ag::Var token_nll(const PromptedInput& input, std::size_t pad_to = 0) const;

    /// Greedy decoding; deterministic.
    std::string predict(const PromptedInput& input) const;

    std::size_t truncation_warnings() const { return truncations_->load(); }

    nlohmann::json to_json(std::uint64_t pool_fingerprint) const;
    /// Loads weights; refuses a checkpoint whose vocabulary, shapes or pool hash differ.
    void load_json(const nlohmann::json& j, std::uint64_t expected_pool_fingerprint);
    static std::uint64_t checkpoint_pool_fingerprint(const nlohmann::json& j);

private:
    const ag::Matrix& positions(std::size_t rows) const;

    std::shared_ptr<const text::Vocabulary> vocab_;
    QAModelConfig cfg_;
    nn::ParamSet params_;
    ag::Var embedding_;
    std::vector<nn::EncoderBlock> encoder_;
    nn::LayerNorm encoder_norm_;
    std::vector<nn::DecoderBlock> decoder_;
    nn::LayerNorm decoder_norm_;
    std::shared_ptr<ag::Matrix> positions_;
    std::shared_ptr<std::atomic<std::size_t>> truncations_;
};

/// Mean over the batch of token-averaged NLL of the gold answers. pad_to pads every source
/// to a common length (masked), which must not change the value.
ag::Var qa_loss(const QAModel& model, const std::vector<PromptedInput>& batch, std::size_t pad_to = 0);

/// 1 x K scores log p_F(a | [P_m; h_i; c; q]) over the candidates' hints.
ag::Var qa_candidate_scores(const QAModel& model, const QAInstance& instance, const CandidateSet& candidates,
                            const ag::Var& meta_prompt);

/// Softmax of qa_candidate_scores.
ScoringDistribution qa_candidate_distribution(const QAModel& model, const QAInstance& instance,
                                              const CandidateSet& candidates, const ag::Var& meta_prompt);

struct FinetuneConfig {
    int epochs = 1;
    int batch_size = 32;
    nn::AdamWConfig optimizer{};
    std::uint64_t seed = 0;
};

/// Plain text-to-text fine-tuning of F (no prompts). Returns the per-step losses.
std::vector<double> finetune_qa(QAModel& model, const std::vector<QAInstance>& data, const FinetuneConfig& config);

/// Shuffled minibatches of indices for one epoch, seeded.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);

}  // namespace oltqa
