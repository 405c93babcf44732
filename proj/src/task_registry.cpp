#include "oltqa/task_registry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "oltqa/errors.hpp"
#include "oltqa/nn.hpp"
#include "oltqa/text.hpp"

namespace oltqa {

std::string to_string(Format f)
{
    switch (f) {
    case Format::extractive: return "extractive";
    case Format::abstractive: return "abstractive";
    case Format::multiple_choice: return "multiple_choice";
    case Format::yes_no: return "yes_no";
    }
    return "?";
}

std::string to_string(MetricKind m)
{
    switch (m) {
    case MetricKind::f1_overlap: return "f1_overlap";
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::rouge_l: return "rouge_l";
    case MetricKind::bleu: return "bleu";
    }
    return "?";
}

std::string to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

Format parse_format(const std::string& s)
{
    if (s == "extractive") return Format::extractive;
    if (s == "abstractive") return Format::abstractive;
    if (s == "multiple_choice") return Format::multiple_choice;
    if (s == "yes_no") return Format::yes_no;
    throw InvalidArgument("unknown format: " + s);
}

MetricKind parse_metric(const std::string& s)
{
    if (s == "f1_overlap") return MetricKind::f1_overlap;
    if (s == "accuracy") return MetricKind::accuracy;
    if (s == "rouge_l") return MetricKind::rouge_l;
    if (s == "bleu") return MetricKind::bleu;
    throw InvalidArgument("unknown metric kind: " + s);
}

Split parse_split(const std::string& s)
{
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw InvalidArgument("unknown split: " + s);
}

MetricKind default_metric(Format f)
{
    return f == Format::multiple_choice ? MetricKind::accuracy : MetricKind::f1_overlap;
}

bool metric_allowed(Format f, MetricKind m)
{
    switch (f) {
    case Format::multiple_choice: return m == MetricKind::accuracy;
    case Format::extractive:
    case Format::yes_no: return m == MetricKind::f1_overlap;
    case Format::abstractive: return m != MetricKind::accuracy;
    }
    return false;
}

void QAInstance::validate() const
{
    if (task_id.empty()) {
        throw InvalidArgument("instance has no task_id");
    }
    if (text::normalize(answer).empty()) {
        throw InvalidArgument("instance " + id + " has an empty answer");
    }
    if (format == Format::multiple_choice) {
        if (std::find(options.begin(), options.end(), answer) == options.end()) {
            throw InvalidArgument("instance " + id + ": answer is not one of its options");
        }
    }
}

std::vector<double> zipf_weights(std::size_t n, double alpha)
{
    if (n == 0) {
        throw InvalidArgument("zipf_weights: n must be at least 1");
    }
    if (!(alpha >= 0.0)) {
        throw InvalidArgument("zipf_weights: alpha must be non-negative");
    }
    std::vector<double> w(n);
    for (std::size_t r = 1; r <= n; ++r) {
        w[r - 1] = std::pow(static_cast<double>(r), -alpha);
    }
    return w;
}

namespace {

constexpr std::size_t kValDivisor = 8;

}  // namespace

LongTailManifest downsample_tasks(const std::vector<TaskSpec>& seen_registry, double alpha,
                                  std::size_t head_budget, std::uint64_t seed)
{
    if (seen_registry.empty()) {
        throw InvalidArgument("downsample_tasks: empty registry");
    }
    if (head_budget == 0) {
        throw InvalidArgument("downsample_tasks: head_budget must be at least 1");
    }
    auto weights = zipf_weights(seen_registry.size(), alpha);

    LongTailManifest m;
    m.alpha = alpha;
    m.head_budget = head_budget;
    m.seed = seed;

    const auto& head = seen_registry.front();
    const std::size_t head_size = std::min(head_budget, head.original_train_size);
    std::vector<std::size_t> sizes(seen_registry.size());
    for (std::size_t r = 0; r < seen_registry.size(); ++r) {
        const auto& task = seen_registry[r];
        if (m.sampled_train_sizes.count(task.task_id) != 0) {
            throw InvalidArgument("duplicate task id in registry: " + task.task_id);
        }
        std::size_t target = r == 0 ? head_size
                                    : static_cast<std::size_t>(std::floor(static_cast<double>(head_size) * weights[r]));
        target = std::min(target, task.original_train_size);
        if (task.original_train_size > 0) {
            target = std::max<std::size_t>(target, 1);
        }
        sizes[r] = target;
        m.sampled_train_sizes[task.task_id] = target;

        nn::Rng rng(nn::mix_seed({seed, text::fnv1a(task.task_id)}));
        auto picked = rng.sample_without_replacement(task.original_train_size, target);
        std::sort(picked.begin(), picked.end());
        m.train_indices[task.task_id] = picked;

        std::size_t val_target = target == 0 ? 0 : std::max<std::size_t>(1, target / kValDivisor);
        if (task.val_size > 0) {
            val_target = std::min(val_target, task.val_size);
            auto vals = rng.sample_without_replacement(task.val_size, val_target);
            std::sort(vals.begin(), vals.end());
            m.val_indices[task.task_id] = vals;
            m.val_from_train[task.task_id] = false;
        } else {
            std::vector<std::size_t> leftover;
            std::set<std::size_t> taken(picked.begin(), picked.end());
            for (std::size_t i = 0; i < task.original_train_size; ++i) {
                if (taken.count(i) == 0) {
                    leftover.push_back(i);
                }
            }
            val_target = std::min(val_target, leftover.size());
            auto pos = rng.sample_without_replacement(leftover.size(), val_target);
            std::vector<std::size_t> vals;
            for (auto p : pos) {
                vals.push_back(leftover[p]);
            }
            std::sort(vals.begin(), vals.end());
            m.val_indices[task.task_id] = vals;
            m.val_from_train[task.task_id] = true;
        }
    }

    std::vector<std::size_t> order(seen_registry.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
    for (auto i : order) {
        m.seen_task_ids.push_back(seen_registry[i].task_id);
    }
    return m;
}

SeenUnseen split_seen_unseen(const std::vector<TaskSpec>& registry, std::size_t n_unseen, std::uint64_t seed)
{
    if (n_unseen >= registry.size()) {
        throw InvalidArgument("split_seen_unseen: n_unseen must be smaller than the task count");
    }
    nn::Rng rng(nn::mix_seed({seed, 0x5eedULL}));
    auto picked = rng.sample_without_replacement(registry.size(), n_unseen);
    std::set<std::size_t> unseen(picked.begin(), picked.end());
    SeenUnseen out;
    for (std::size_t i = 0; i < registry.size(); ++i) {
        (unseen.count(i) ? out.unseen : out.seen).push_back(registry[i].task_id);
    }
    return out;
}

LongTailManifest curate(const std::vector<TaskSpec>& registry, const std::vector<std::string>& unseen_ids,
                        double alpha, std::size_t head_budget, std::uint64_t seed)
{
    std::set<std::string> unseen(unseen_ids.begin(), unseen_ids.end());
    std::set<std::string> known;
    for (const auto& t : registry) {
        known.insert(t.task_id);
    }
    for (const auto& u : unseen) {
        if (known.count(u) == 0) {
            throw InvalidArgument("unseen task is not registered: " + u);
        }
    }
    std::vector<TaskSpec> seen;
    for (const auto& t : registry) {
        if (unseen.count(t.task_id) == 0) {
            seen.push_back(t);
        }
    }
    auto m = downsample_tasks(seen, alpha, head_budget, seed);
    for (const auto& t : registry) {
        if (unseen.count(t.task_id) != 0) {
            m.unseen_task_ids.push_back(t.task_id);
            m.sampled_train_sizes[t.task_id] = 0;
        }
    }
    return m;
}

std::size_t LongTailManifest::training_size() const
{
    std::size_t total = 0;
    for (const auto& id : seen_task_ids) {
        total += sampled_train_sizes.at(id);
    }
    return total;
}

bool LongTailManifest::is_seen(const std::string& task_id) const
{
    return std::find(seen_task_ids.begin(), seen_task_ids.end(), task_id) != seen_task_ids.end();
}

nlohmann::json LongTailManifest::to_json() const
{
    nlohmann::json j;
    j["alpha"] = alpha;
    j["head_budget"] = head_budget;
    j["seed"] = seed;
    j["seen_task_ids"] = seen_task_ids;
    j["unseen_task_ids"] = unseen_task_ids;
    j["sampled_train_sizes"] = sampled_train_sizes;
    j["train_indices"] = train_indices;
    j["val_indices"] = val_indices;
    j["val_from_train"] = val_from_train;
    return j;
}

LongTailManifest LongTailManifest::from_json(const nlohmann::json& j)
{
    LongTailManifest m;
    m.alpha = j.at("alpha").get<double>();
    m.head_budget = j.at("head_budget").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.seen_task_ids = j.at("seen_task_ids").get<std::vector<std::string>>();
    m.unseen_task_ids = j.at("unseen_task_ids").get<std::vector<std::string>>();
    m.sampled_train_sizes = j.at("sampled_train_sizes").get<std::map<std::string, std::size_t>>();
    m.train_indices = j.at("train_indices").get<std::map<std::string, std::vector<std::size_t>>>();
    m.val_indices = j.at("val_indices").get<std::map<std::string, std::vector<std::size_t>>>();
    m.val_from_train = j.at("val_from_train").get<std::map<std::string, bool>>();
    return m;
}

std::string LongTailManifest::dump() const
{
    return to_json().dump(2) + "\n";
}

std::uint64_t LongTailManifest::fingerprint() const
{
    return text::fnv1a(to_json().dump());
}

void Dataset::add(QAInstance inst)
{
    inst.validate();
    auto it = tasks_.find(inst.task_id);
    if (it == tasks_.end()) {
        order_.push_back(inst.task_id);
        it = tasks_.emplace(inst.task_id, Splits{}).first;
    }
    auto& bucket = inst.split == Split::train ? it->second.train
                   : inst.split == Split::val ? it->second.val
                                              : it->second.test;
    if (inst.id.empty()) {
        inst.id = inst.task_id + ":" + to_string(inst.split) + ":" + std::to_string(bucket.size());
    }
    bucket.push_back(std::move(inst));
}

std::vector<TaskSpec> Dataset::registry(const std::map<std::string, MetricKind>& metric_overrides) const
{
    std::vector<TaskSpec> out;
    for (const auto& id : order_) {
        const auto& s = tasks_.at(id);
        TaskSpec t;
        t.task_id = id;
        const QAInstance* first = !s.train.empty() ? &s.train.front() : !s.val.empty() ? &s.val.front() : &s.test.front();
        t.format = first->format;
        auto it = metric_overrides.find(id);
        t.metric = it != metric_overrides.end() ? it->second : default_metric(t.format);
        if (!metric_allowed(t.format, t.metric)) {
            throw InvalidArgument("metric " + to_string(t.metric) + " is not valid for " + to_string(t.format) +
                                  " task " + id);
        }
        t.original_train_size = s.train.size();
        t.val_size = s.val.size();
        t.test_size = s.test.size();
        out.push_back(std::move(t));
    }
    return out;
}

const std::vector<QAInstance>& Dataset::split(const std::string& task_id, Split s) const
{
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) {
        throw InvalidArgument("unknown task: " + task_id);
    }
    return s == Split::train ? it->second.train : s == Split::val ? it->second.val : it->second.test;
}

std::size_t Dataset::size() const
{
    std::size_t n = 0;
    for (const auto& [_, s] : tasks_) {
        n += s.train.size() + s.val.size() + s.test.size();
    }
    return n;
}

std::vector<QAInstance> Dataset::training_set(const LongTailManifest& m) const
{
    std::vector<QAInstance> out;
    for (const auto& id : m.seen_task_ids) {
        const auto& train = split(id, Split::train);
        for (auto idx : m.train_indices.at(id)) {
            if (idx >= train.size()) {
                throw InvalidArgument("manifest index out of range for task " + id);
            }
            out.push_back(train[idx]);
        }
    }
    return out;
}

std::vector<QAInstance> Dataset::validation_set(const LongTailManifest& m) const
{
    std::vector<QAInstance> out;
    for (const auto& id : m.seen_task_ids) {
        auto it = m.val_indices.find(id);
        if (it == m.val_indices.end()) {
            continue;
        }
        const auto& pool = m.val_from_train.at(id) ? split(id, Split::train) : split(id, Split::val);
        for (auto idx : it->second) {
            if (idx >= pool.size()) {
                throw InvalidArgument("manifest validation index out of range for task " + id);
            }
            out.push_back(pool[idx]);
        }
    }
    return out;
}

std::vector<QAInstance> Dataset::test_set() const
{
    std::vector<QAInstance> out;
    for (const auto& id : order_) {
        const auto& t = tasks_.at(id).test;
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

QAInstance instance_from_json(const nlohmann::json& j)
{
    QAInstance inst;
    inst.task_id = j.at("task_id").get<std::string>();
    inst.format = parse_format(j.at("format").get<std::string>());
    inst.context = j.value("context", std::string{});
    inst.question = j.at("question").get<std::string>();
    inst.answer = j.at("answer").get<std::string>();
    if (j.contains("options") && !j["options"].is_null()) {
        inst.options = j["options"].get<std::vector<std::string>>();
    }
    if (j.contains("split")) {
        inst.split = parse_split(j["split"].get<std::string>());
    }
    if (j.contains("id")) {
        inst.id = j["id"].get<std::string>();
    }
    return inst;
}

nlohmann::json instance_to_json(const QAInstance& inst)
{
    nlohmann::json j;
    j["id"] = inst.id;
    j["task_id"] = inst.task_id;
    j["format"] = to_string(inst.format);
    j["context"] = inst.context;
    j["question"] = inst.question;
    j["answer"] = inst.answer;
    if (!inst.options.empty()) {
        j["options"] = inst.options;
    }
    j["split"] = to_string(inst.split);
    return j;
}

Dataset read_jsonl(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgument("cannot open dataset " + path);
    }
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            ds.add(instance_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ds;
}

void write_jsonl(const std::string& path, const std::vector<QAInstance>& instances)
{
    std::ofstream out(path);
    if (!out) {
        throw InvalidArgument("cannot write " + path);
    }
    for (const auto& inst : instances) {
        out << instance_to_json(inst).dump() << '\n';
    }
}

}  // namespace oltqa
