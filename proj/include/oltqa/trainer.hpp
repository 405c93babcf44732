#pragma once

// Training orchestration: configuration, experiment assembly, Stage I ranker pre-training,
// Stage II joint training with adaptive mutual KD, and test-suite evaluation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/distillation.hpp"
#include "oltqa/knowledge_miner.hpp"
#include "oltqa/lm_oracle.hpp"
#include "oltqa/metrics.hpp"
#include "oltqa/nn.hpp"
#include "oltqa/prompt_pool.hpp"
#include "oltqa/qa_model.hpp"
#include "oltqa/task_registry.hpp"

namespace oltqa {

/// no_prompts drops P_m and P_k together (and with them MKD); F is then trained as plain text-to-text.
enum class Ablation { none, no_pm, no_pk, no_mkd, static_mkd, back_kd, no_prompts };
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

enum class KeySchedule { sequential, interleaved };

struct TrainConfig {
    // [data]
    std::string corpus_path;
    std::string lexicon_path;
    std::vector<std::string> unseen_tasks;  // explicit list wins over n_unseen
    std::size_t n_unseen = 0;
    double alpha = 2.0;
    std::size_t head_budget = 1000;
    std::size_t vocab_min_count = 1;
    std::size_t head_m = 4;   // Head@m
    std::size_t tail_n = 4;   // Tail@n

    // [pool]
    PoolConfig pool{};
    int encoder_dim = 64;
    double encoder_jitter = 0.1;

    // [ranker]
    RankerConfig ranker{};
    std::size_t c = 512;
    std::size_t l = 64;
    std::size_t l_tilde = 4;
    std::size_t candidate_subsample = 64;

    // [qa]
    QAModelConfig qa{};

    // [train]
    int stage1_epochs = 5;
    int epochs = 5;
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    double ranker_learning_rate = 1e-4;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    double weight_m = 1.0;
    double weight_f = 1.0;
    double weight_mkd = 1.0;
    std::size_t val_subsample = 256;
    KeySchedule key_schedule = KeySchedule::sequential;
    Ablation ablation = Ablation::none;

    // [oracle]
    std::string oracle_backend = "mock";
    std::string oracle_endpoint;
    std::string oracle_model = "glm-10b";
    std::string oracle_cache;  // empty = <out>/oracle_cache.jsonl
    std::size_t hint_max_tokens = 32;
    int oracle_timeout = 30;
    MockOracleConfig mock{};

    /// Throws InvalidArgument on inconsistent settings (l~ >= l, subsample > c, ...).
    void validate() const;
};

/// INI text with every key and its current value.
std::string config_to_ini(const TrainConfig& config);
/// Parses INI text over the defaults. Unknown sections or keys are rejected.
TrainConfig config_from_ini(const std::string& text, const std::vector<std::string>& overrides = {});
TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
/// Applies "section.key=value" overrides; the key must already exist.
TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides);

struct StepRecord {
    std::string phase;  // stage1, keys, qa, mkd
    int epoch = 0;
    std::size_t step = 0;
    double value = 0.0;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<Scoreboard> scoreboards;
    std::vector<double> heldout_kl;  // Stage I, index = completed epochs
    std::map<std::string, double> wall_seconds;
    std::uint64_t seed = 0;

    /// Loss values of one phase in step order.
    std::vector<double> losses(const std::string& phase) const;
    nlohmann::json to_json() const;
    static RunLog from_json(const nlohmann::json& j);
};

/// All state of one run: data, curated manifest, vocabulary, oracle, and the four models.
class Experiment {
public:
    /// Loads and curates the corpus named in the config.
    Experiment(TrainConfig config, std::filesystem::path out_dir);
    /// Uses an in-memory corpus instead of the config paths.
    Experiment(TrainConfig config, std::filesystem::path out_dir, Dataset dataset,
               std::map<std::string, std::string> lexicon);
    /// Uses an externally owned oracle backend.
    Experiment(TrainConfig config, std::filesystem::path out_dir, Dataset dataset,
               std::map<std::string, std::string> lexicon, std::unique_ptr<LmOracle> oracle);

    const TrainConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return out_; }
    const Dataset& dataset() const { return dataset_; }
    const LongTailManifest& manifest() const { return manifest_; }
    const std::vector<QAInstance>& training_pool() const { return train_; }
    const std::vector<QAInstance>& validation() const { return validation_; }
    const text::Vocabulary& vocab() const { return *vocab_; }
    const text::Vocabulary& ranker_vocab() const { return *ranker_vocab_; }
    const FrozenEncoder& encoder() const { return *encoder_; }
    const Bm25Index& bm25() const { return bm25_; }

    RankerModels& rankers() { return *rankers_; }
    MetaPromptPool& pool() { return *pool_; }
    QAModel& qa() { return *qa_; }
    LmOracle& oracle() { return *oracle_; }
    CachedOracle& cached_oracle() { return *cached_; }
    RunLog& log() { return log_; }
    std::size_t effective_c() const { return c_eff_; }
    std::size_t effective_l() const { return l_eff_; }
    std::size_t effective_subsample() const { return k_eff_; }

    bool uses_meta_prompt() const { return cfg_.ablation != Ablation::no_pm && cfg_.ablation != Ablation::no_prompts; }
    bool uses_knowledge_prompt() const
    {
        return cfg_.ablation != Ablation::no_pk && cfg_.ablation != Ablation::no_prompts;
    }

    /// BM25 pool (size c, clamped to the pool) for an instance, cached.
    const CandidateSet& bm25_pool(const QAInstance& instance);
    /// Uniform subsample of the BM25 pool, seeded by (seed, epoch, instance).
    CandidateSet subsample(const QAInstance& instance, std::uint64_t salt);
    /// Fills hints through the oracle cache.
    void ensure_hints(CandidateSet& candidates, const QAInstance& instance);

    /// P_m for an instance, or an undefined Var when meta prompts are ablated.
    ag::Var meta_prompt(const QAInstance& instance) const;
    /// Training-time P_k: BM25 pool -> R1 top-l -> hints -> R2 top-l~.
    std::vector<std::string> training_knowledge_prompt(const QAInstance& instance, const RetrievalIndex& index);
    /// Test-time P_k: R1 retrieval of top-l from D_tr -> hints -> R2 top-l~.
    std::vector<std::string> inference_knowledge_prompt(const QAInstance& instance, const RetrievalIndex& index);

    /// Mean KL(p_lm || p_r1) over instances with a fixed candidate subsample each.
    double heldout_kl_r1(const std::vector<QAInstance>& instances);
    /// Candidate sets with hints for the fixed validation subsample.
    const std::vector<CandidateSet>& validation_candidates();

    Scoreboard evaluate(int epoch);

    nlohmann::json checkpoint_json() const;
    void load_checkpoint_json(const nlohmann::json& j);
    std::uint64_t manifest_fingerprint() const { return manifest_.fingerprint(); }

private:
    void setup(std::unique_ptr<LmOracle> oracle);

    TrainConfig cfg_;
    std::filesystem::path out_;
    Dataset dataset_;
    std::map<std::string, std::string> lexicon_;
    LongTailManifest manifest_;
    std::vector<QAInstance> train_;
    std::vector<QAInstance> validation_;
    std::shared_ptr<text::Vocabulary> vocab_;
    std::shared_ptr<text::Vocabulary> ranker_vocab_;
    std::unique_ptr<FrozenEncoder> encoder_;
    Bm25Index bm25_;
    std::unique_ptr<LmOracle> oracle_;
    std::unique_ptr<OracleCache> cache_;
    std::unique_ptr<CachedOracle> cached_;
    std::unique_ptr<RankerModels> rankers_;
    std::unique_ptr<MetaPromptPool> pool_;
    std::unique_ptr<QAModel> qa_;
    std::map<std::string, CandidateSet> bm25_cache_;
    std::optional<std::vector<CandidateSet>> validation_candidates_;
    std::size_t c_eff_ = 0;
    std::size_t l_eff_ = 0;
    std::size_t k_eff_ = 0;
    RunLog log_;
};

/// Small configuration sized for the synthetic corpus: 32-dim models, c = 32, l = 8, l~ = 3,
/// 3 Stage I and 8 Stage II epochs. Paths are left empty.
TrainConfig synthetic_suite_config(const std::vector<std::string>& unseen_tasks);

/// Builds the vocabulary from training text plus oracle noise words; tokens seen fewer than
/// min_count times map to <unk>.
std::shared_ptr<text::Vocabulary> build_vocabulary(const std::vector<QAInstance>& training, std::size_t min_count);
/// Ranker tokenizer: every question, option and context in the corpus, the training answers
/// and the oracle noise words. Answers outside the training pool are never added.
std::shared_ptr<text::Vocabulary> build_ranker_vocabulary(const Dataset& dataset,
                                                          const std::vector<QAInstance>& training);

/// Stage I: trains R1 and R2 against p_lm. Writes <out>/stage1/epoch_<k>.json per epoch
/// and records held-out KL(p_lm || p_r1) before training and after each epoch.
void run_stage1(Experiment& exp);

/// Stage II: per epoch (a) keys with L_m, (b) F and prompts with L_f, (c) scoreboard,
/// (d) mutual KD over R1, R2, F and prompts. Resumes from the latest epoch checkpoint in
/// <out>/stage2 when `resume` is set. Stops after `stop_after` epochs if given.
void run_stage2(Experiment& exp, bool resume = false, std::optional<int> stop_after = std::nullopt);

struct SuiteResult {
    ScoreSummary summary;
    std::string summary_csv;
    std::string heatmap_csv;
    std::map<std::string, std::vector<std::string>> predictions;
};

/// Predicts every test instance (seen and unseen) and aggregates per-task scores.
SuiteResult evaluate_suite(Experiment& exp);
/// Same over an explicit instance list (e.g. the training split).
SuiteResult evaluate_instances(Experiment& exp, const std::vector<QAInstance>& instances);

/// Writes the final checkpoint, run log, scoreboard log and summaries under out_dir.
void write_run_artifacts(Experiment& exp, const SuiteResult* suite);

}  // namespace oltqa
