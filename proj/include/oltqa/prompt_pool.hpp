#pragma once

// Instance-level meta-prompt pool: s soft prompts, each paired with a key vector.
// A frozen query encoder maps an input to a query vector; the s~ keys closest in cosine
// distance pick which prompts are concatenated into the soft prefix.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/autograd.hpp"
#include "oltqa/nn.hpp"
#include "oltqa/task_registry.hpp"

namespace oltqa {

using QueryVector = ag::RowVector;

/// Fixed, non-trainable text encoder: deterministic token vectors averaged over the
/// serialized source. Tokens mapped to the same concept by the lexicon share a base vector,
/// which stands in for the similarity structure a pre-trained encoder would provide.
class FrozenEncoder {
public:
    FrozenEncoder(int dim, std::uint64_t seed, std::map<std::string, std::string> lexicon = {},
                  double token_jitter = 0.1);

    static constexpr bool trainable() { return false; }
    int dim() const { return dim_; }

    ag::RowVector token_vector(const std::string& token) const;
    /// Mean of token vectors. Empty input throws InvalidArgument.
    QueryVector encode(const std::string& text) const;

    std::uint64_t fingerprint() const;
    const std::map<std::string, std::string>& lexicon() const { return lexicon_; }

private:
    ag::RowVector hashed_normal(const std::string& key) const;

    int dim_;
    std::uint64_t seed_;
    std::map<std::string, std::string> lexicon_;
    double jitter_;
    mutable std::unordered_map<std::string, ag::RowVector> cache_;
    std::shared_ptr<std::mutex> cache_mu_ = std::make_shared<std::mutex>();
};

/// Query for (context, question): encodes the serialized question + context.
QueryVector query_vector(const std::string& context, const std::string& question, const FrozenEncoder& encoder);
QueryVector query_vector(const QAInstance& inst, const FrozenEncoder& encoder);

double cosine_distance(const ag::RowVector& a, const ag::RowVector& b);

struct PoolConfig {
    int size = 30;          // s
    int select_count = 5;   // s~
    int prompt_length = 10; // tokens per meta prompt
    int key_dim = 64;       // must equal the frozen encoder dimension
    int model_dim = 64;     // QA model embedding width
    double eta = 0.15;
    double gamma = 0.3;
    double prompt_init_std = 0.5;
};

struct KeyLossResult {
    double value = 0.0;
    ag::Matrix grad;  // same shape as keys; rows outside the selection are zero
};

/// Hinge loss pulling selected keys within eta of x and pushing every ordered pair of
/// distinct selected keys at least gamma apart (pair term divided by s~^2). Subgradient 0 at
/// the kinks; x receives no gradient.
KeyLossResult key_loss(const ag::Matrix& keys, const QueryVector& x, const std::vector<std::size_t>& selected,
                       double eta, double gamma);

class MetaPromptPool {
public:
    MetaPromptPool(PoolConfig config, std::uint64_t seed);

    const PoolConfig& config() const { return cfg_; }
    const ag::Var& keys() const { return keys_; }
    ag::Var& keys() { return keys_; }
    const std::vector<ag::Var>& prompts() const { return prompts_; }

    /// s~ smallest cosine distances, lower index first on ties; returned in ascending index
    /// order.
    std::vector<std::size_t> select_keys(const QueryVector& x) const;

    /// Concatenation of the selected prompts in ascending index order, trainable.
    ag::Var compose_meta_prompt(const std::vector<std::size_t>& selected) const;

    /// key_loss() against the current keys.
    KeyLossResult key_loss(const QueryVector& x, const std::vector<std::size_t>& selected) const;

    nn::ParamSet& key_params() { return key_params_; }
    nn::ParamSet& prompt_params() { return prompt_params_; }

    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);
    /// Reference hash recorded by QA-model checkpoints.
    std::uint64_t fingerprint() const;

private:
    PoolConfig cfg_;
    ag::Var keys_;
    std::vector<ag::Var> prompts_;
    nn::ParamSet key_params_;
    nn::ParamSet prompt_params_;
};

/// tasks x s selection counts, one row per task in first-appearance order.
struct SelectionFrequency {
    std::vector<std::string> task_ids;
    std::vector<std::vector<std::size_t>> counts;

    std::string to_csv() const;
};

SelectionFrequency selection_frequency(const std::vector<QAInstance>& instances, const MetaPromptPool& pool,
                                       const FrozenEncoder& encoder);

}  // namespace oltqa
