#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "oltqa/errors.hpp"
#include "oltqa/trainer.hpp"

namespace oltqa {

std::string to_string(Ablation a)
{
    switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_pm: return "no-pm";
    case Ablation::no_pk: return "no-pk";
    case Ablation::no_mkd: return "no-mkd";
    case Ablation::static_mkd: return "static-mkd";
    case Ablation::back_kd: return "back-kd";
    case Ablation::no_prompts: return "no-prompts";
    }
    return "none";
}

Ablation parse_ablation(const std::string& s)
{
    for (auto a : {Ablation::none, Ablation::no_pm, Ablation::no_pk, Ablation::no_mkd, Ablation::static_mkd,
                   Ablation::back_kd, Ablation::no_prompts}) {
        if (to_string(a) == s) {
            return a;
        }
    }
    throw InvalidArgument("unknown ablation '" + s + "' (none, no-pm, no-pk, no-mkd, static-mkd, back-kd, no-prompts)");
}

void TrainConfig::validate() const
{
    auto fail = [](const std::string& m) { throw InvalidArgument("config: " + m); };
    if (epochs < 1) fail("train.epochs must be >= 1");
    if (stage1_epochs < 0) fail("train.stage1_epochs must be >= 0");
    if (batch_size == 0) fail("train.batch_size must be positive");
    if (learning_rate <= 0.0 || ranker_learning_rate <= 0.0) fail("learning rates must be positive");
    if (c == 0 || l == 0 || l_tilde == 0) fail("ranker.c, ranker.l and ranker.l_tilde must be positive");
    if (l > c) fail("ranker.l must not exceed ranker.c");
    if (ranker.init_from_encoder && (ranker.retriever.dim != encoder_dim || ranker.reranker.dim != encoder_dim)) {
        fail("ranker.init_from_encoder needs retriever_dim and reranker_dim equal to pool.encoder_dim");
    }
    if (l_tilde >= l) fail("ranker.l_tilde must be smaller than ranker.l");
    if (candidate_subsample == 0 || candidate_subsample > c) fail("ranker.candidate_subsample must be in [1, c]");
    if (pool.select_count < 1 || pool.select_count > pool.size) fail("pool.select must be in [1, pool.size]");
    if (pool.key_dim != encoder_dim) fail("pool.key_dim must equal pool.encoder_dim");
    if (pool.model_dim != qa.dim) fail("pool.model_dim must equal qa.dim");
    if (val_subsample == 0) fail("train.val_subsample must be positive");
    if (oracle_backend != "mock" && oracle_backend != "remote") fail("oracle.backend must be mock or remote");
    if (head_m == 0 || tail_n == 0) fail("data.head_m and data.tail_n must be positive");
    if (weight_m < 0.0 || weight_f < 0.0 || weight_mkd < 0.0) fail("loss weights must be non-negative");
}

namespace {

struct Field {
    std::string key;  // section.name
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

std::string trim(std::string s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& raw)
{
    std::string s = trim(raw);
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw InvalidArgument("'" + raw + "' is not a valid number");
    }
    return v;
}

bool parse_bool(const std::string& raw)
{
    std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw InvalidArgument("'" + raw + "' is not a boolean");
}

template <typename T>
std::string show(const T& v)
{
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_floating_point_v<T>) {
        return fmt::format("{}", v);
    } else {
        return std::to_string(v);
    }
}

template <typename T, typename Access>
Field bind(std::string key, Access access)
{
    Field f;
    f.key = std::move(key);
    f.get = [access](const TrainConfig& c) { return show<T>(access(const_cast<TrainConfig&>(c))); };
    f.set = [access](TrainConfig& c, const std::string& v) {
        T& slot = access(c);
        if constexpr (std::is_same_v<T, bool>) {
            slot = parse_bool(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
            slot = trim(v);
        } else {
            slot = parse_number<T>(v);
        }
    };
    return f;
}

#define OLTQA_FIELD(T, key, expr) bind<T>(key, [](TrainConfig& c) -> T& { return expr; })

const std::vector<Field>& fields()
{
    static const std::vector<Field> f = [] {
        std::vector<Field> v = {
            OLTQA_FIELD(std::string, "data.corpus", c.corpus_path),
            OLTQA_FIELD(std::string, "data.lexicon", c.lexicon_path),
            OLTQA_FIELD(std::size_t, "data.n_unseen", c.n_unseen),
            OLTQA_FIELD(double, "data.alpha", c.alpha),
            OLTQA_FIELD(std::size_t, "data.head_budget", c.head_budget),
            OLTQA_FIELD(std::size_t, "data.vocab_min_count", c.vocab_min_count),
            OLTQA_FIELD(std::size_t, "data.head_m", c.head_m),
            OLTQA_FIELD(std::size_t, "data.tail_n", c.tail_n),
            OLTQA_FIELD(int, "pool.size", c.pool.size),
            OLTQA_FIELD(int, "pool.select", c.pool.select_count),
            OLTQA_FIELD(int, "pool.prompt_length", c.pool.prompt_length),
            OLTQA_FIELD(int, "pool.key_dim", c.pool.key_dim),
            OLTQA_FIELD(int, "pool.model_dim", c.pool.model_dim),
            OLTQA_FIELD(double, "pool.eta", c.pool.eta),
            OLTQA_FIELD(double, "pool.gamma", c.pool.gamma),
            OLTQA_FIELD(double, "pool.prompt_init_std", c.pool.prompt_init_std),
            OLTQA_FIELD(int, "pool.encoder_dim", c.encoder_dim),
            OLTQA_FIELD(double, "pool.encoder_jitter", c.encoder_jitter),
            OLTQA_FIELD(int, "ranker.retriever_dim", c.ranker.retriever.dim),
            OLTQA_FIELD(int, "ranker.retriever_layers", c.ranker.retriever.layers),
            OLTQA_FIELD(int, "ranker.retriever_max_tokens", c.ranker.retriever.max_tokens),
            OLTQA_FIELD(int, "ranker.reranker_dim", c.ranker.reranker.dim),
            OLTQA_FIELD(int, "ranker.reranker_layers", c.ranker.reranker.layers),
            OLTQA_FIELD(int, "ranker.reranker_heads", c.ranker.reranker.heads),
            OLTQA_FIELD(int, "ranker.reranker_max_tokens", c.ranker.reranker.max_tokens),
            OLTQA_FIELD(double, "ranker.retriever_scale", c.ranker.retriever_scale),
            OLTQA_FIELD(bool, "ranker.example_includes_answer", c.ranker.example_includes_answer),
            OLTQA_FIELD(bool, "ranker.init_from_encoder", c.ranker.init_from_encoder),
            OLTQA_FIELD(std::size_t, "ranker.c", c.c),
            OLTQA_FIELD(std::size_t, "ranker.l", c.l),
            OLTQA_FIELD(std::size_t, "ranker.l_tilde", c.l_tilde),
            OLTQA_FIELD(std::size_t, "ranker.candidate_subsample", c.candidate_subsample),
            OLTQA_FIELD(int, "qa.dim", c.qa.dim),
            OLTQA_FIELD(int, "qa.encoder_layers", c.qa.encoder_layers),
            OLTQA_FIELD(int, "qa.decoder_layers", c.qa.decoder_layers),
            OLTQA_FIELD(int, "qa.heads", c.qa.heads),
            OLTQA_FIELD(int, "qa.ff_dim", c.qa.ff_dim),
            OLTQA_FIELD(int, "qa.max_source_tokens", c.qa.max_source_tokens),
            OLTQA_FIELD(int, "qa.max_target_tokens", c.qa.max_target_tokens),
            OLTQA_FIELD(int, "train.stage1_epochs", c.stage1_epochs),
            OLTQA_FIELD(int, "train.epochs", c.epochs),
            OLTQA_FIELD(std::size_t, "train.batch_size", c.batch_size),
            OLTQA_FIELD(double, "train.learning_rate", c.learning_rate),
            OLTQA_FIELD(double, "train.ranker_learning_rate", c.ranker_learning_rate),
            OLTQA_FIELD(double, "train.weight_decay", c.weight_decay),
            OLTQA_FIELD(double, "train.clip_norm", c.clip_norm),
            OLTQA_FIELD(std::uint64_t, "train.seed", c.seed),
            OLTQA_FIELD(double, "train.weight_m", c.weight_m),
            OLTQA_FIELD(double, "train.weight_f", c.weight_f),
            OLTQA_FIELD(double, "train.weight_mkd", c.weight_mkd),
            OLTQA_FIELD(std::size_t, "train.val_subsample", c.val_subsample),
            OLTQA_FIELD(std::string, "oracle.backend", c.oracle_backend),
            OLTQA_FIELD(std::string, "oracle.endpoint", c.oracle_endpoint),
            OLTQA_FIELD(std::string, "oracle.model", c.oracle_model),
            OLTQA_FIELD(std::string, "oracle.cache", c.oracle_cache),
            OLTQA_FIELD(std::size_t, "oracle.hint_max_tokens", c.hint_max_tokens),
            OLTQA_FIELD(int, "oracle.timeout", c.oracle_timeout),
            OLTQA_FIELD(std::uint64_t, "oracle.mock_seed", c.mock.seed),
            OLTQA_FIELD(std::size_t, "oracle.mock_min_overlap", c.mock.min_overlap),
            OLTQA_FIELD(double, "oracle.mock_copy_weight", c.mock.copy_weight),
            OLTQA_FIELD(double, "oracle.mock_lexical_weight", c.mock.lexical_weight),
        };
        Field unseen;
        unseen.key = "data.unseen_tasks";
        unseen.get = [](const TrainConfig& c) {
            std::string s;
            for (const auto& t : c.unseen_tasks) {
                s += (s.empty() ? "" : ",") + t;
            }
            return s;
        };
        unseen.set = [](TrainConfig& c, const std::string& v) {
            c.unseen_tasks.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!trim(item).empty()) {
                    c.unseen_tasks.push_back(trim(item));
                }
            }
        };
        v.insert(v.begin() + 2, unseen);
        Field schedule;
        schedule.key = "train.key_schedule";
        schedule.get = [](const TrainConfig& c) {
            return std::string(c.key_schedule == KeySchedule::sequential ? "sequential" : "interleaved");
        };
        schedule.set = [](TrainConfig& c, const std::string& v) {
            auto s = trim(v);
            if (s == "sequential") c.key_schedule = KeySchedule::sequential;
            else if (s == "interleaved") c.key_schedule = KeySchedule::interleaved;
            else throw InvalidArgument("train.key_schedule must be sequential or interleaved");
        };
        v.push_back(schedule);
        Field ablation;
        ablation.key = "train.ablation";
        ablation.get = [](const TrainConfig& c) { return to_string(c.ablation); };
        ablation.set = [](TrainConfig& c, const std::string& v) { c.ablation = parse_ablation(trim(v)); };
        v.push_back(ablation);
        return v;
    }();
    return f;
}

#undef OLTQA_FIELD

const Field& find_field(const std::string& key)
{
    for (const auto& f : fields()) {
        if (f.key == key) {
            return f;
        }
    }
    throw InvalidArgument("unknown config key '" + key + "'");
}

void set_field(TrainConfig& c, const std::string& key, const std::string& value)
{
    const auto& f = find_field(key);
    try {
        f.set(c, value);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument("config key '" + key + "': " + e.what());
    }
}

}  // namespace

std::string config_to_ini(const TrainConfig& config)
{
    std::vector<std::string> sections;
    std::map<std::string, std::string> bodies;
    for (const auto& f : fields()) {
        auto dot = f.key.find('.');
        auto sec = f.key.substr(0, dot);
        if (bodies.count(sec) == 0) {
            sections.push_back(sec);
        }
        bodies[sec] += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
    }
    std::string out;
    for (const auto& sec : sections) {
        out += (out.empty() ? "" : "\n") + ("[" + sec + "]\n") + bodies[sec];
    }
    return out;
}

TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides)
{
    TrainConfig c = base;
    for (const auto& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument("override '" + o + "' is not of the form section.key=value");
        }
        set_field(c, trim(o.substr(0, eq)), o.substr(eq + 1));
    }
    c.validate();
    return c;
}

TrainConfig config_from_ini(const std::string& text, const std::vector<std::string>& overrides)
{
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InvalidArgument(std::string("config parse error: ") + e.what());
    }
    TrainConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw InvalidArgument("config key '" + section + "' must live inside a section");
        }
        for (const auto& [key, value] : body) {
            set_field(c, section + "." + key, value.data());
        }
    }
    return apply_overrides(c, overrides);
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgument("cannot open config file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_ini(ss.str(), overrides);
}

TrainConfig synthetic_suite_config(const std::vector<std::string>& unseen_tasks)
{
    TrainConfig tc;
    tc.unseen_tasks = unseen_tasks;
    tc.head_budget = 200;
    tc.alpha = 1.0;
    tc.head_m = 2;
    tc.tail_n = 2;
    tc.c = 32;
    tc.l = 8;
    tc.l_tilde = 3;
    tc.candidate_subsample = 8;
    tc.stage1_epochs = 3;
    tc.epochs = 8;
    tc.batch_size = 8;
    tc.learning_rate = 3e-3;
    tc.ranker_learning_rate = 3e-3;
    tc.val_subsample = 48;
    tc.pool.size = 8;
    tc.pool.select_count = 2;
    tc.pool.prompt_length = 2;
    tc.pool.key_dim = 32;
    tc.pool.model_dim = 32;
    tc.encoder_dim = 32;
    tc.ranker.retriever.dim = 32;
    tc.ranker.reranker.dim = 32;
    tc.qa.dim = 32;
    tc.qa.ff_dim = 64;
    tc.qa.max_source_tokens = 48;
    tc.qa.max_target_tokens = 4;
    return tc;
}

}  // namespace oltqa
