#include "oltqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "oltqa/errors.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

SerializedPair serialize_instance(const QAInstance& inst)
{
    std::string source = inst.question;
    if (inst.format == Format::multiple_choice) {
        for (std::size_t i = 0; i < inst.options.size(); ++i) {
            source += " (";
            source += static_cast<char>('a' + static_cast<int>(i % 26));
            source += ") ";
            source += inst.options[i];
        }
    }
    source += "\n";
    source += inst.context;
    return {text::lowercase(source), text::lowercase(inst.answer)};
}

namespace {

using Tokens = std::vector<std::string>;

std::size_t multiset_overlap(Tokens a, Tokens b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t common = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++common;
            ++ia;
            ++ib;
        }
    }
    return common;
}

double f_measure(double overlap, double pred_len, double gold_len)
{
    if (overlap == 0.0) {
        return 0.0;
    }
    double p = overlap / pred_len;
    double r = overlap / gold_len;
    return 2.0 * p * r / (p + r);
}

void require_gold(const std::string& gold)
{
    if (text::tokenize(gold).empty()) {
        throw InvalidArgument("gold answer is empty after normalization");
    }
}

}  // namespace

double f1_token_overlap(const std::string& prediction, const std::string& gold)
{
    require_gold(gold);
    auto p = text::tokenize(prediction);
    auto g = text::tokenize(gold);
    if (p.empty()) {
        return 0.0;
    }
    auto common = static_cast<double>(multiset_overlap(p, g));
    return f_measure(common, static_cast<double>(p.size()), static_cast<double>(g.size()));
}

double exact_match(const std::string& prediction, const std::string& gold)
{
    require_gold(gold);
    return text::normalize(prediction) == text::normalize(gold) ? 1.0 : 0.0;
}

double rouge_l(const std::string& prediction, const std::string& gold)
{
    require_gold(gold);
    auto p = text::tokenize(prediction);
    auto g = text::tokenize(gold);
    if (p.empty()) {
        return 0.0;
    }
    std::vector<std::size_t> prev(g.size() + 1, 0);
    std::vector<std::size_t> cur(g.size() + 1, 0);
    for (std::size_t i = 1; i <= p.size(); ++i) {
        for (std::size_t j = 1; j <= g.size(); ++j) {
            cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    auto lcs = static_cast<double>(prev[g.size()]);
    return f_measure(lcs, static_cast<double>(p.size()), static_cast<double>(g.size()));
}

double bleu(const std::string& prediction, const std::string& gold)
{
    require_gold(gold);
    auto p = text::tokenize(prediction);
    auto g = text::tokenize(gold);
    if (p.empty()) {
        return 0.0;
    }
    constexpr std::size_t kMaxOrder = 4;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        std::map<Tokens, std::size_t> ref_counts;
        for (std::size_t i = 0; i + n <= g.size(); ++i) {
            ++ref_counts[Tokens(g.begin() + static_cast<long>(i), g.begin() + static_cast<long>(i + n))];
        }
        std::map<Tokens, std::size_t> hyp_counts;
        std::size_t total = 0;
        for (std::size_t i = 0; i + n <= p.size(); ++i) {
            ++hyp_counts[Tokens(p.begin() + static_cast<long>(i), p.begin() + static_cast<long>(i + n))];
            ++total;
        }
        std::size_t matched = 0;
        for (const auto& [gram, count] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) {
                matched += std::min(count, it->second);
            }
        }
        double precision;
        if (n == 1) {
            if (matched == 0) {
                return 0.0;
            }
            precision = static_cast<double>(matched) / static_cast<double>(total);
        } else {
            precision = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);
        }
        log_sum += std::log(precision);
    }
    double bp = p.size() < g.size() ? std::exp(1.0 - static_cast<double>(g.size()) / static_cast<double>(p.size()))
                                    : 1.0;
    return bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

std::size_t closest_option(const std::string& prediction, const std::vector<std::string>& options)
{
    if (options.empty()) {
        throw InvalidArgument("closest_option: no options");
    }
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < options.size(); ++i) {
        double s = text::tokenize(options[i]).empty() ? 0.0 : f1_token_overlap(prediction, options[i]);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

double score_prediction(MetricKind metric, const std::string& prediction, const std::string& gold,
                        const std::vector<std::string>& options)
{
    switch (metric) {
    case MetricKind::f1_overlap: return f1_token_overlap(prediction, gold);
    case MetricKind::rouge_l: return rouge_l(prediction, gold);
    case MetricKind::bleu: return bleu(prediction, gold);
    case MetricKind::accuracy:
        if (!options.empty()) {
            return exact_match(options[closest_option(prediction, options)], gold);
        }
        return exact_match(prediction, gold);
    }
    throw InvalidArgument("unknown metric kind");
}

double score_prediction(const std::string& metric, const std::string& prediction, const std::string& gold,
                        const std::vector<std::string>& options)
{
    return score_prediction(parse_metric(metric), prediction, gold, options);
}

ScoreSummary aggregate(const std::map<std::string, double>& per_task, const LongTailManifest& manifest,
                       std::size_t m, std::size_t n)
{
    const std::size_t seen_count = manifest.seen_task_ids.size();
    if (m == 0 || n == 0 || m > seen_count || n > seen_count) {
        throw InvalidArgument(fmt::format("aggregate: m={} n={} must lie in [1, {}]", m, n, seen_count));
    }
    auto score_of = [&](const std::string& id) {
        auto it = per_task.find(id);
        if (it == per_task.end()) {
            throw InvalidArgument("aggregate: no score for task " + id);
        }
        return it->second;
    };
    auto mean_of = [&](const std::vector<std::string>& ids) {
        if (ids.empty()) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        double total = 0.0;
        for (const auto& id : ids) {
            total += score_of(id);
        }
        return total / static_cast<double>(ids.size());
    };

    ScoreSummary s;
    s.m = m;
    s.n = n;
    for (const auto& id : manifest.seen_task_ids) {
        s.per_task[id] = score_of(id);
    }
    for (const auto& id : manifest.unseen_task_ids) {
        s.per_task[id] = score_of(id);
    }
    s.a_seen = mean_of(manifest.seen_task_ids);
    s.a_unseen = mean_of(manifest.unseen_task_ids);

    auto by_size = manifest.seen_task_ids;
    auto size_of = [&](const std::string& id) { return manifest.sampled_train_sizes.at(id); };
    std::sort(by_size.begin(), by_size.end(), [&](const std::string& a, const std::string& b) {
        if (size_of(a) != size_of(b)) {
            return size_of(a) > size_of(b);
        }
        return a < b;
    });
    s.head_at_m = mean_of({by_size.begin(), by_size.begin() + static_cast<long>(m)});

    std::sort(by_size.begin(), by_size.end(), [&](const std::string& a, const std::string& b) {
        if (size_of(a) != size_of(b)) {
            return size_of(a) < size_of(b);
        }
        return a < b;
    });
    s.tail_at_n = mean_of({by_size.begin(), by_size.begin() + static_cast<long>(n)});
    return s;
}

std::string summary_csv(const ScoreSummary& summary, const LongTailManifest& manifest,
                        const std::map<std::string, MetricKind>& task_metrics)
{
    std::ostringstream out;
    out << "task_id,metric,score,split,sampled_size\n";
    auto row = [&](const std::string& id, const char* split) {
        auto metric = task_metrics.count(id) ? to_string(task_metrics.at(id)) : std::string("f1_overlap");
        auto size = manifest.sampled_train_sizes.count(id) ? manifest.sampled_train_sizes.at(id) : 0;
        out << fmt::format("{},{},{:.6f},{},{}\n", id, metric, summary.per_task.at(id), split, size);
    };
    for (const auto& id : manifest.seen_task_ids) {
        row(id, "seen");
    }
    for (const auto& id : manifest.unseen_task_ids) {
        row(id, "unseen");
    }
    out << fmt::format("summary,A_seen,{:.6f},,\n", summary.a_seen);
    out << fmt::format("summary,A_unseen,{:.6f},,\n", summary.a_unseen);
    out << fmt::format("summary,Head@{},{:.6f},,\n", summary.m, summary.head_at_m);
    out << fmt::format("summary,Tail@{},{:.6f},,\n", summary.n, summary.tail_at_n);
    return out.str();
}

}  // namespace oltqa
