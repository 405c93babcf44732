#pragma once

// Large-LM oracle g: hint generation conditioned on an in-context example, answer scoring,
// and the p_lm distribution over a candidate set. Training code only talks to LmOracle and
// OracleCache; which backend is installed is invisible to it.

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oltqa/autograd.hpp"
#include "oltqa/task_registry.hpp"

namespace oltqa {

enum class ModelTag { lm, r1, r2, f };
std::string to_string(ModelTag t);

struct Hint {
    std::string text;
    std::string source_example_id;
};

/// Normalized distribution over an aligned candidate set.
struct ScoringDistribution {
    ModelTag model_tag = ModelTag::lm;
    std::vector<double> probabilities;
};

/// Max-subtracted softmax. Empty input throws InvalidArgument.
std::vector<double> softmax(const std::vector<double>& scores);

class LmOracle {
public:
    virtual ~LmOracle() = default;

    virtual std::string name() const = 0;
    /// Greedy generation of a hint for [example; context; question].
    virtual std::string generate(const QAInstance& example, const std::string& context,
                                 const std::string& question) = 0;
    /// log p_g(answer | [example; context; question]), summed over answer tokens.
    virtual double score(const QAInstance& example, const std::string& context, const std::string& question,
                         const std::string& answer) = 0;

    std::size_t generate_calls() const { return generate_calls_.load(); }
    std::size_t score_calls() const { return score_calls_.load(); }

protected:
    std::atomic<std::size_t> generate_calls_{0};
    std::atomic<std::size_t> score_calls_{0};
};

struct MockOracleConfig {
    std::uint64_t seed = 0;
    /// Minimum number of shared content tokens between the example question and the query
    /// question for the mock to copy the example's answer.
    std::size_t min_overlap = 1;
    /// Log-probability penalty per answer token when the copied hint misses the answer.
    double copy_weight = 2.0;
    /// Penalty scaled by (1 - Jaccard) between example and query content tokens.
    double lexical_weight = 1.0;
    /// Synonym canonicalization shared with the frozen encoder.
    std::map<std::string, std::string> lexicon;
};

/// Deterministic rule-based stand-in for a large LM.
///
/// generate: copies the example's answer when the two questions share at least
/// min_overlap content tokens (after stop-word removal and lexicon canonicalization),
/// otherwise emits a seeded noise word.
/// score: -copy_weight * |answer tokens| * (1 - F1(hint, answer))
///        - lexical_weight * (1 - Jaccard(example content, query content)).
class MockOracle : public LmOracle {
public:
    explicit MockOracle(MockOracleConfig config = {});

    std::string name() const override { return "mock"; }
    std::string generate(const QAInstance& example, const std::string& context,
                         const std::string& question) override;
    double score(const QAInstance& example, const std::string& context, const std::string& question,
                 const std::string& answer) override;

    std::set<std::string> content_tokens(const std::string& s) const;
    static const std::vector<std::string>& noise_words();

private:
    std::string copy_rule(const QAInstance& example, const std::string& question) const;

    MockOracleConfig cfg_;
};

struct RemoteOracleConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8080
    std::string model;
    int timeout_seconds = 30;
    int max_tokens = 32;
};

/// HTTP text-generation backend.
///   POST {endpoint}/generate  {"model", "prompt", "max_tokens"} -> {"text": ...}
///   POST {endpoint}/score     {"model", "prompt", "target"}     -> {"logprob": ...}
/// Transport or protocol failures raise OracleError.
class RemoteOracle : public LmOracle {
public:
    explicit RemoteOracle(RemoteOracleConfig config);

    std::string name() const override { return "remote:" + cfg_.model; }
    std::string generate(const QAInstance& example, const std::string& context,
                         const std::string& question) override;
    double score(const QAInstance& example, const std::string& context, const std::string& question,
                 const std::string& answer) override;

    static std::string render_prompt(const QAInstance& example, const std::string& context,
                                     const std::string& question);

private:
    RemoteOracleConfig cfg_;
};

struct OracleCacheEntry {
    std::string key_hash;
    std::string example_id;
    std::string instance_id;
    std::optional<std::string> hint;
    std::optional<double> score;
};

/// Hint/score cache keyed by a content hash of (oracle, example, instance). Backed by an
/// append-only JSON-lines file when a path is given. Inserts never overwrite a field that
/// is already present.
class OracleCache {
public:
    explicit OracleCache(std::string path = {});

    static std::string key_for(const std::string& oracle_name, const QAInstance& example, const QAInstance& instance);

    std::optional<OracleCacheEntry> find(const std::string& key) const;
    /// Returns true when something new was stored.
    bool insert_if_absent(const OracleCacheEntry& entry);
    std::size_t size() const;
    /// Entries that carry a hint.
    std::size_t hint_count() const;

private:
    std::string path_;
    mutable std::mutex mu_;
    std::map<std::string, OracleCacheEntry> entries_;
};

/// Oracle access through the cache. With allow_calls == false every miss is recorded instead
/// of reaching the backend; require_complete() then reports the missing keys.
class CachedOracle {
public:
    CachedOracle(LmOracle& oracle, OracleCache& cache, std::size_t hint_max_tokens = 32);

    /// Hint for `instance` conditioned on `example`. Empty question -> InvalidArgument.
    Hint hint(const QAInstance& example, const QAInstance& instance);
    /// log p_g(instance.answer | [example; c; q]).
    double score(const QAInstance& example, const QAInstance& instance);

    void set_allow_calls(bool allow) { allow_calls_ = allow; }
    const std::vector<std::string>& missing() const { return missing_; }
    void clear_missing() { missing_.clear(); }
    /// Throws PreconditionError listing missing keys when any lookup missed.
    void require_complete() const;

    LmOracle& oracle() { return oracle_; }
    OracleCache& cache() { return cache_; }

private:
    LmOracle& oracle_;
    OracleCache& cache_;
    std::size_t hint_max_tokens_;
    bool allow_calls_ = true;
    std::vector<std::string> missing_;
};

/// Softmax over oracle scores of each candidate for `instance`.
ScoringDistribution lm_distribution(const std::vector<QAInstance>& candidates, const QAInstance& instance,
                                    CachedOracle& oracle);

}  // namespace oltqa
