#pragma once

// Text-to-text serialization and per-format QA scoring.

#include <map>
#include <string>
#include <vector>

#include "oltqa/task_registry.hpp"

namespace oltqa {

struct SerializedPair {
    std::string source_text;
    std::string target_text;
};

/// source = question [options as "(a) x (b) y"] newline context, lowercased.
/// target = lowercased answer.
SerializedPair serialize_instance(const QAInstance& inst);

/// Bag-of-token F1 over normalized tokens. Empty prediction scores 0.
double f1_token_overlap(const std::string& prediction, const std::string& gold);
/// Normalized exact match, 1 or 0.
double exact_match(const std::string& prediction, const std::string& gold);
/// LCS-based F-measure over normalized tokens.
double rouge_l(const std::string& prediction, const std::string& gold);
/// Sentence BLEU, n-grams up to 4, brevity penalty, add-one smoothing for n >= 2.
double bleu(const std::string& prediction, const std::string& gold);
/// Index of the option with the highest token F1 against the prediction (first wins ties).
std::size_t closest_option(const std::string& prediction, const std::vector<std::string>& options);

/// Score in [0, 1]. For accuracy with options, the prediction is first mapped to its closest
/// option.
double score_prediction(MetricKind metric, const std::string& prediction, const std::string& gold,
                        const std::vector<std::string>& options = {});
/// Same, with the metric given by name; unknown names throw InvalidArgument.
double score_prediction(const std::string& metric, const std::string& prediction, const std::string& gold,
                        const std::vector<std::string>& options = {});

struct ScoreSummary {
    std::map<std::string, double> per_task;  // same scale as the input (suite results use 0..100)
    double a_seen = 0.0;
    double a_unseen = 0.0;  // NaN when there are no unseen tasks
    double head_at_m = 0.0;
    double tail_at_n = 0.0;
    std::size_t m = 0;
    std::size_t n = 0;
};

/// Head@m / Tail@n use the m largest / n smallest sampled training sets, ties broken by
/// task id.
ScoreSummary aggregate(const std::map<std::string, double>& per_task, const LongTailManifest& manifest,
                       std::size_t m, std::size_t n);

/// CSV with one row per task (task_id, metric, score, split, sampled_size) followed by a
/// summary block.
std::string summary_csv(const ScoreSummary& summary, const LongTailManifest& manifest,
                        const std::map<std::string, MetricKind>& task_metrics);

}  // namespace oltqa
