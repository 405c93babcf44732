#pragma once

// KL-based distillation between candidate distributions: the Stage I ranker loss against
// the LM oracle, the validation scoreboard, and mutual KD gated by scoreboard order.

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/autograd.hpp"
#include "oltqa/knowledge_miner.hpp"
#include "oltqa/lm_oracle.hpp"
#include "oltqa/prompt_pool.hpp"
#include "oltqa/qa_model.hpp"

namespace oltqa {

inline constexpr double kProbabilityFloor = 1e-12;

/// KL(teacher || student) in nats on plain vectors. Student floored at 1e-12.
double kl_divergence(const std::vector<double>& teacher, const std::vector<double>& student);

/// Differentiable KL(stopgrad(teacher) || student); both are 1 x K probability rows.
/// Nothing flows back into the teacher.
ag::Var kl_divergence(const ag::Var& teacher, const ag::Var& student);

/// KL(p_lm || p_r1) + KL(p_lm || p_r2), with p_lm a constant.
ag::Var stage1_loss(const std::vector<double>& p_lm, const ag::Var& p_r1, const ag::Var& p_r2);

using KDEdge = std::pair<ModelTag, ModelTag>;  // (teacher, student)

struct Scoreboard {
    std::map<ModelTag, double> values;
    int evaluated_at = -1;

    double at(ModelTag t) const;
    nlohmann::json to_json() const;
};

/// (i, j) for every i != j in {r1, r2, f} with v_i > v_j strictly; enumeration order is
/// r1, r2, f for the teacher then the student.
std::vector<KDEdge> active_edges(const Scoreboard& board);

/// Edges used by the "back KD" variant: F teaches both rankers, unconditionally.
std::vector<KDEdge> back_kd_edges();

std::string edges_to_string(const std::vector<KDEdge>& edges);

/// Sum of KL(stopgrad(p_teacher) || p_student) over the given edges. `dists` maps model tags
/// to 1 x K probability rows over the same candidate set.
ag::Var mutual_kd_loss(const std::map<ModelTag, ag::Var>& dists, const std::vector<KDEdge>& edges);

/// Gated by the scoreboard. A scoreboard evaluated at another epoch is stale and refused.
ag::Var mutual_kd_loss(const ag::Var& p_r1, const ag::Var& p_r2, const ag::Var& p_f, const Scoreboard& board,
                       int current_epoch);

/// Everything needed to score the three models on validation data.
struct EvaluationContext {
    const RankerModels* rankers = nullptr;
    const QAModel* qa = nullptr;
    const MetaPromptPool* pool = nullptr;       // null = no meta prompt
    const FrozenEncoder* encoder = nullptr;
    const std::vector<QAInstance>* training_pool = nullptr;
    std::size_t top_hints = 4;                  // l~
    bool use_knowledge_prompt = true;
};

/// Builds P_m for an instance (undefined Var when the context has no pool).
ag::Var meta_prompt_for(const QAInstance& instance, const MetaPromptPool* pool, const FrozenEncoder* encoder);

/// v_i = mean over validation instances of log p_F(a | [P_m; P_k^i; c; q]), where P_k^i holds
/// the top-l~ hints under model i's scores over the instance's candidate set.
Scoreboard evaluate_models(const std::vector<QAInstance>& validation, const std::vector<CandidateSet>& candidates,
                           const EvaluationContext& ctx, int epoch);

}  // namespace oltqa
