#include "oltqa/distillation.hpp"

#include <cmath>

#include "oltqa/errors.hpp"

namespace oltqa {

double kl_divergence(const std::vector<double>& teacher, const std::vector<double>& student)
{
    if (teacher.size() != student.size()) {
        throw InvalidArgument("kl_divergence: distributions differ in length");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        if (teacher[i] > 0.0) {
            kl += teacher[i] * (std::log(teacher[i]) - std::log(std::max(student[i], kProbabilityFloor)));
        }
    }
    return std::max(kl, 0.0);
}

ag::Var kl_divergence(const ag::Var& teacher, const ag::Var& student)
{
    if (teacher.rows() != 1 || student.rows() != 1 || teacher.cols() != student.cols()) {
        throw InvalidArgument("kl_divergence: distributions must be aligned 1 x K rows");
    }
    const ag::Matrix t = teacher.value();
    double entropy_term = 0.0;
    for (Eigen::Index i = 0; i < t.cols(); ++i) {
        if (t(0, i) > 0.0) {
            entropy_term += t(0, i) * std::log(t(0, i));
        }
    }
    auto log_s = ag::log(ag::clamp_min(student, kProbabilityFloor));
    auto cross = ag::sum(ag::mul(ag::constant(t), log_s));
    // sum t log t - sum t log s
    return ag::add_constant(ag::scale(cross, -1.0), ag::Matrix::Constant(1, 1, entropy_term));
}

ag::Var stage1_loss(const std::vector<double>& p_lm, const ag::Var& p_r1, const ag::Var& p_r2)
{
    if (static_cast<Eigen::Index>(p_lm.size()) != p_r1.cols() || p_r1.cols() != p_r2.cols()) {
        throw InvalidArgument("stage1_loss: distributions are not aligned");
    }
    ag::Matrix t(1, static_cast<Eigen::Index>(p_lm.size()));
    for (std::size_t i = 0; i < p_lm.size(); ++i) {
        t(0, static_cast<Eigen::Index>(i)) = p_lm[i];
    }
    auto teacher = ag::constant(t);
    return ag::add(kl_divergence(teacher, p_r1), kl_divergence(teacher, p_r2));
}

double Scoreboard::at(ModelTag t) const
{
    auto it = values.find(t);
    if (it == values.end()) {
        throw PreconditionError("scoreboard has no value for " + to_string(t));
    }
    return it->second;
}

nlohmann::json Scoreboard::to_json() const
{
    return {{"epoch", evaluated_at},
            {"v_r1", at(ModelTag::r1)},
            {"v_r2", at(ModelTag::r2)},
            {"v_f", at(ModelTag::f)},
            {"active_edges", edges_to_string(active_edges(*this))}};
}

namespace {

constexpr std::array<ModelTag, 3> kStudents = {ModelTag::r1, ModelTag::r2, ModelTag::f};

}  // namespace

std::vector<KDEdge> active_edges(const Scoreboard& board)
{
    std::vector<KDEdge> edges;
    for (auto i : kStudents) {
        for (auto j : kStudents) {
            double vi = board.at(i);
            double vj = board.at(j);
            if (!std::isfinite(vi) || !std::isfinite(vj)) {
                throw PreconditionError("scoreboard holds a non-finite value");
            }
            if (i != j && vi > vj) {
                edges.emplace_back(i, j);
            }
        }
    }
    return edges;
}

std::vector<KDEdge> back_kd_edges()
{
    return {{ModelTag::f, ModelTag::r1}, {ModelTag::f, ModelTag::r2}};
}

std::string edges_to_string(const std::vector<KDEdge>& edges)
{
    std::string out;
    for (const auto& [t, s] : edges) {
        if (!out.empty()) {
            out += ";";
        }
        out += to_string(t) + ">" + to_string(s);
    }
    return out;
}

ag::Var mutual_kd_loss(const std::map<ModelTag, ag::Var>& dists, const std::vector<KDEdge>& edges)
{
    ag::Var total = ag::scalar(0.0);
    for (const auto& [teacher, student] : edges) {
        if (teacher == student) {
            throw InvalidArgument("self edge in the KD edge set");
        }
        auto t = dists.find(teacher);
        auto s = dists.find(student);
        if (t == dists.end() || s == dists.end()) {
            throw InvalidArgument("mutual_kd_loss: missing distribution for an edge");
        }
        total = ag::add(total, kl_divergence(t->second, s->second));
    }
    return total;
}

ag::Var mutual_kd_loss(const ag::Var& p_r1, const ag::Var& p_r2, const ag::Var& p_f, const Scoreboard& board,
                       int current_epoch)
{
    if (board.evaluated_at != current_epoch) {
        throw PreconditionError("scoreboard from epoch " + std::to_string(board.evaluated_at) +
                                " is stale at epoch " + std::to_string(current_epoch));
    }
    return mutual_kd_loss({{ModelTag::r1, p_r1}, {ModelTag::r2, p_r2}, {ModelTag::f, p_f}}, active_edges(board));
}

ag::Var meta_prompt_for(const QAInstance& instance, const MetaPromptPool* pool, const FrozenEncoder* encoder)
{
    if (pool == nullptr) {
        return {};
    }
    if (encoder == nullptr) {
        throw InvalidArgument("meta prompt requested without a query encoder");
    }
    return pool->compose_meta_prompt(pool->select_keys(query_vector(instance, *encoder)));
}

Scoreboard evaluate_models(const std::vector<QAInstance>& validation, const std::vector<CandidateSet>& candidates,
                           const EvaluationContext& ctx, int epoch)
{
    if (validation.empty()) {
        throw InvalidArgument("evaluate_models: empty validation set");
    }
    if (candidates.size() != validation.size()) {
        throw InvalidArgument("evaluate_models: one candidate set per validation instance is required");
    }
    if (ctx.rankers == nullptr || ctx.qa == nullptr || ctx.training_pool == nullptr) {
        throw InvalidArgument("evaluate_models: incomplete evaluation context");
    }
    std::map<ModelTag, double> totals{{ModelTag::r1, 0.0}, {ModelTag::r2, 0.0}, {ModelTag::f, 0.0}};
    for (std::size_t n = 0; n < validation.size(); ++n) {
        const auto& inst = validation[n];
        const auto& cand = candidates[n];
        if (!cand.has_hints()) {
            throw PreconditionError("evaluate_models: hints missing for " + inst.id);
        }
        auto pm = meta_prompt_for(inst, ctx.pool, ctx.encoder);
        auto pm_const = pm.defined() ? ag::detach(pm) : ag::Var();
        std::vector<const QAInstance*> ex;
        for (auto i : cand.examples) {
            ex.push_back(&ctx.training_pool->at(i));
        }
        auto values = [](const ag::Var& v) {
            const auto& m = v.value();
            return std::vector<double>(m.data(), m.data() + m.size());
        };
        std::map<ModelTag, std::vector<double>> scores;
        scores[ModelTag::r1] = values(ctx.rankers->retriever_scores(inst, ex));
        scores[ModelTag::r2] = values(ctx.rankers->reranker_scores(inst, ex, cand.hints));
        scores[ModelTag::f] = values(qa_candidate_scores(*ctx.qa, inst, cand, pm_const));
        for (auto& [tag, s] : scores) {
            std::vector<std::string> hints;
            if (ctx.use_knowledge_prompt) {
                hints = make_knowledge_prompt(cand, s, ctx.top_hints).hints;
            }
            totals[tag] += ctx.qa->log_likelihood({&inst, pm_const, hints}, inst.answer).scalar();
        }
    }
    Scoreboard board;
    board.evaluated_at = epoch;
    for (auto& [tag, v] : totals) {
        board.values[tag] = v / static_cast<double>(validation.size());
    }
    return board;
}

}  // namespace oltqa
