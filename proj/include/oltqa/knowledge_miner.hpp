#pragma once

// Retrieve-then-rerank knowledge mining: BM25 candidate pools, a dual-encoder retriever R1
// (score = E_X([c;q]) . E_D(e)), a cross-encoder reranker R2 (score = f_c(E_C([e;h;c;q]))),
// and knowledge-prompt assembly from the top reranked hints.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/autograd.hpp"
#include "oltqa/lm_oracle.hpp"
#include "oltqa/nn.hpp"
#include "oltqa/task_registry.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

/// Okapi BM25 over normalized tokens with an inverted index.
class Bm25Index {
public:
    Bm25Index() = default;
    Bm25Index(const std::vector<std::string>& documents, double k1 = 1.2, double b = 0.75);

    std::size_t size() const { return doc_lengths_.size(); }
    double k1() const { return k1_; }
    double b() const { return b_; }

    /// Score of every document for the query.
    std::vector<double> score_all(const std::string& query) const;
    double idf(const std::string& term) const;

    nlohmann::json to_json() const;
    static Bm25Index from_json(const nlohmann::json& j);

private:
    double k1_ = 1.2;
    double b_ = 0.75;
    double avg_length_ = 0.0;
    std::vector<std::size_t> doc_lengths_;
    // term -> (doc, term frequency), doc ascending
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;
};

enum class Provenance { bm25_pool, retrieved };

/// Candidate examples for one instance. `examples` index into the training pool; hints and
/// per-model scores are aligned with it.
struct CandidateSet {
    std::string instance_id;
    std::vector<std::size_t> examples;
    std::vector<Hint> hints;
    std::map<ModelTag, std::vector<double>> scores;
    Provenance provenance = Provenance::bm25_pool;

    std::size_t size() const { return examples.size(); }
    bool has_hints() const { return hints.size() == examples.size(); }
    nlohmann::json to_json() const;
    static CandidateSet from_json(const nlohmann::json& j);
};

/// Text the retriever / BM25 sees for a query instance: serialized question + context.
std::string query_text(const QAInstance& inst);
/// Text for an in-context example: serialized source plus its answer.
std::string example_text(const QAInstance& example);

/// Sorts indices by descending score; ties go to the lower index (pool order is task order
/// then offset, so this is the task_id + offset tie-break).
std::vector<std::size_t> rank_descending(const std::vector<double>& scores, const std::vector<std::size_t>& ids);

/// Top-c BM25 candidates from `pool` for `instance`, never including the instance itself.
/// Requires pool.size() >= c + 1.
CandidateSet bm25_candidates(const QAInstance& instance, const std::vector<QAInstance>& pool,
                             const Bm25Index& index, std::size_t c);

struct EncoderConfig {
    int dim = 64;
    /// 0 = bag of embeddings followed by a projection; >= 1 = transformer blocks.
    int layers = 0;
    int heads = 2;
    int max_tokens = 64;
    int segments = 1;
};

/// Small trainable text encoder producing a 1 x dim representation.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(nn::ParamSet& params, const std::string& name, int vocab_size, EncoderConfig config, nn::Rng& rng);

    /// segments[i] selects the segment embedding for token i (empty = all zero).
    ag::Var encode(const std::vector<int>& ids, const std::vector<int>& segments = {}) const;
    const EncoderConfig& config() const { return cfg_; }

    /// Overwrites the token embedding rows (row i = token id i). With `identity_projection`
    /// the projection starts as the identity so a bag-of-embeddings encoder is a plain mean.
    void set_token_embeddings(const ag::Matrix& table, bool identity_projection);

private:
    EncoderConfig cfg_;
    ag::Var embedding_;
    ag::Var segment_embedding_;
    std::vector<nn::EncoderBlock> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear projection_;
    ag::Matrix positions_;
};

struct RankerConfig {
    EncoderConfig retriever{64, 0, 2, 64, 1};
    EncoderConfig reranker{64, 1, 2, 96, 3};
    /// Retriever vectors are L2-normalized and the dot product is scaled by this factor.
    double retriever_scale = 8.0;
    /// Whether E_D sees the example's answer.
    bool example_includes_answer = true;
    /// Start token embeddings from the frozen encoder's token table (a stand-in for
    /// pretrained ranker weights).
    bool init_from_encoder = true;
};

/// R1 and R2 with their parameters.
class RankerModels {
public:
    RankerModels(const text::Vocabulary& vocab, RankerConfig config, std::uint64_t seed);

    const RankerConfig& config() const { return cfg_; }
    const text::Vocabulary& vocab() const { return *vocab_; }

    ag::Var encode_query(const QAInstance& inst) const;      // E_X
    ag::Var encode_example(const QAInstance& example) const; // E_D
    /// 1 x K retriever scores for the examples.
    ag::Var retriever_scores(const QAInstance& inst, const std::vector<const QAInstance*>& examples) const;
    /// Scalar reranker score f_c(E_C([e; h; c; q])).
    ag::Var reranker_score(const QAInstance& inst, const QAInstance& example, const std::string& hint) const;
    /// 1 x K reranker scores.
    ag::Var reranker_scores(const QAInstance& inst, const std::vector<const QAInstance*>& examples,
                            const std::vector<Hint>& hints) const;

    nn::ParamSet& retriever_params() { return retriever_params_; }
    nn::ParamSet& reranker_params() { return reranker_params_; }
    const nn::ParamSet& retriever_params() const { return retriever_params_; }
    const nn::ParamSet& reranker_params() const { return reranker_params_; }

    /// Sets the E_X, E_D and E_C token embeddings from `token_vector`, scaled by 1/sqrt(dim).
    /// Special tokens keep their random rows. Every encoder dim must equal the vector size.
    void init_token_embeddings(const std::function<ag::RowVector(const std::string&)>& token_vector);

    /// Makes E_D share E_X's current weights (copies values).
    void tie_retriever_encoders();

    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);
    std::uint64_t fingerprint() const;

private:
    RankerConfig cfg_;
    const text::Vocabulary* vocab_;
    nn::ParamSet retriever_params_;
    nn::ParamSet reranker_params_;
    TextEncoder query_encoder_;
    TextEncoder doc_encoder_;
    TextEncoder cross_encoder_;
    nn::Linear head_;
};

/// Pre-computed E_D vectors for a pool, so retrieval is one matrix-vector product.
class RetrievalIndex {
public:
    RetrievalIndex(const RankerModels& models, const std::vector<QAInstance>& pool);
    const ag::Matrix& doc_vectors() const { return docs_; }

    /// Top-l pool entries by retriever score, self excluded, ties to the lower pool index.
    CandidateSet retrieve(const RankerModels& models, const QAInstance& instance, std::size_t l) const;

private:
    const std::vector<QAInstance>* pool_;
    ag::Matrix docs_;  // pool x dim, unit rows
};

struct KnowledgePrompt {
    std::vector<std::string> hints;
    std::vector<std::size_t> examples;  // pool indices, same order as hints
    std::string rendered_text;

    static constexpr const char* kSeparator = " | ";
};

KnowledgePrompt make_knowledge_prompt(const CandidateSet& candidates, const std::vector<double>& scores,
                                      std::size_t top);

/// Fills candidates.hints through the oracle cache.
void attach_hints(CandidateSet& candidates, const QAInstance& instance, const std::vector<QAInstance>& pool,
                  CachedOracle& oracle);

/// Reranker scores every candidate and keeps the top l~ hints in descending score order.
/// Missing hints raise PreconditionError naming the instance.
KnowledgePrompt rerank(const RankerModels& models, const QAInstance& instance, CandidateSet& candidates,
                       const std::vector<QAInstance>& pool, std::size_t top);

/// Softmax over R1 or R2 raw scores across the candidate set.
ScoringDistribution ranker_distribution(ModelTag model, const RankerModels& models, const CandidateSet& candidates,
                                        const QAInstance& instance, const std::vector<QAInstance>& pool);

}  // namespace oltqa
