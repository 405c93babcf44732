#pragma once

// QA task universe, seen/unseen partitioning and Zipf long-tail curation.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oltqa {

enum class Format { extractive, abstractive, multiple_choice, yes_no };
enum class MetricKind { f1_overlap, accuracy, rouge_l, bleu };
enum class Split { train, val, test };

std::string to_string(Format f);
std::string to_string(MetricKind m);
std::string to_string(Split s);
Format parse_format(const std::string& s);
MetricKind parse_metric(const std::string& s);
Split parse_split(const std::string& s);

/// Metric used for a format when the dataset does not say otherwise.
MetricKind default_metric(Format f);
bool metric_allowed(Format f, MetricKind m);

struct QAInstance {
    std::string id;
    std::string task_id;
    Format format = Format::extractive;
    std::string context;
    std::string question;
    std::string answer;
    std::vector<std::string> options;
    Split split = Split::train;

    /// Throws InvalidArgument when the answer is empty or a multiple-choice answer is not
    /// one of its options.
    void validate() const;
};

struct TaskSpec {
    std::string task_id;
    Format format = Format::extractive;
    MetricKind metric = MetricKind::f1_overlap;
    std::size_t original_train_size = 0;
    std::size_t val_size = 0;
    std::size_t test_size = 0;
};

struct LongTailManifest {
    double alpha = 2.0;
    std::size_t head_budget = 0;
    std::uint64_t seed = 0;
    /// Descending sampled size; registry order breaks ties.
    std::vector<std::string> seen_task_ids;
    std::vector<std::string> unseen_task_ids;
    std::map<std::string, std::size_t> sampled_train_sizes;
    /// Positions within each task's train split.
    std::map<std::string, std::vector<std::size_t>> train_indices;
    /// Positions within the task's val split, or within its train split when
    /// val_from_train is set (disjoint from train_indices).
    std::map<std::string, std::vector<std::size_t>> val_indices;
    std::map<std::string, bool> val_from_train;

    std::size_t training_size() const;
    bool is_seen(const std::string& task_id) const;

    nlohmann::json to_json() const;
    static LongTailManifest from_json(const nlohmann::json& j);
    std::string dump() const;
    std::uint64_t fingerprint() const;
};

/// w_r = r^-alpha for r = 1..n.
std::vector<double> zipf_weights(std::size_t n, double alpha);

/// Zipf down-sampling of every task in `seen_registry`, whose order is the rank order.
/// Rank 1 keeps min(head_budget, original); rank r keeps floor(size_1 * r^-alpha) capped by
/// its original size and floored at 1. Each task also gets a validation set of one eighth
/// of its sampled size (at least 1).
LongTailManifest downsample_tasks(const std::vector<TaskSpec>& seen_registry, double alpha,
                                  std::size_t head_budget, std::uint64_t seed);

struct SeenUnseen {
    std::vector<std::string> seen;
    std::vector<std::string> unseen;
};

/// Random disjoint partition; both lists keep registry order.
SeenUnseen split_seen_unseen(const std::vector<TaskSpec>& registry, std::size_t n_unseen,
                             std::uint64_t seed);

/// Partition + down-sampling in one step. Unseen tasks get sampled size 0.
LongTailManifest curate(const std::vector<TaskSpec>& registry, const std::vector<std::string>& unseen_ids,
                        double alpha, std::size_t head_budget, std::uint64_t seed);

/// In-memory dataset with per-task, per-split instance lists in file order.
class Dataset {
public:
    void add(QAInstance inst);

    /// Tasks in first-appearance order; metrics come from `metric_overrides` or the format
    /// default.
    std::vector<TaskSpec> registry(const std::map<std::string, MetricKind>& metric_overrides = {}) const;

    const std::vector<QAInstance>& split(const std::string& task_id, Split s) const;
    const std::vector<std::string>& task_order() const { return order_; }
    bool has_task(const std::string& task_id) const { return tasks_.count(task_id) != 0; }
    std::size_t size() const;

    /// Training / validation instances selected by the manifest, in manifest rank order.
    std::vector<QAInstance> training_set(const LongTailManifest& m) const;
    std::vector<QAInstance> validation_set(const LongTailManifest& m) const;
    /// Test split of every task (seen and unseen).
    std::vector<QAInstance> test_set() const;

private:
    struct Splits {
        std::vector<QAInstance> train, val, test;
    };
    std::map<std::string, Splits> tasks_;
    std::vector<std::string> order_;
};

/// One JSON object per line: {task_id, format, context, question, answer, options?, split?, id?}.
/// Errors name the 1-based line number.
Dataset read_jsonl(const std::string& path);
QAInstance instance_from_json(const nlohmann::json& j);
nlohmann::json instance_to_json(const QAInstance& inst);
void write_jsonl(const std::string& path, const std::vector<QAInstance>& instances);

}  // namespace oltqa
