#include "oltqa/synthetic.hpp"

#include <set>

#include "oltqa/errors.hpp"
#include "oltqa/nn.hpp"

namespace oltqa {

namespace {

struct Relation {
    std::string name;
    std::vector<std::string> values;
    std::vector<std::string> nouns;
    std::vector<std::string> verbs;
};

const std::vector<Relation>& relations()
{
    static const std::vector<Relation> rel = {
        {"color",
         {"red", "blue", "green", "yellow", "purple", "orange"},
         {"color", "hue", "shade", "tint"},
         {"likes", "prefers", "favors", "fancies"}},
        {"city",
         {"paris", "tokyo", "cairo", "lima", "oslo", "delhi"},
         {"city", "town", "hometown", "metropolis"},
         {"inhabits", "resides", "dwells", "occupies"}},
        {"animal",
         {"cat", "dog", "horse", "rabbit", "parrot", "turtle"},
         {"pet", "animal", "creature", "critter"},
         {"owns", "keeps", "raises", "tends"}},
        {"food",
         {"rice", "bread", "soup", "pasta", "salad", "cheese"},
         {"dish", "meal", "food", "cuisine"},
         {"eats", "devours", "consumes", "savors"}},
    };
    return rel;
}

std::vector<std::string> entity_names(int n, nn::Rng& rng)
{
    static const std::vector<std::string> onset = {"k", "m", "z", "t", "v", "b", "n", "r", "s", "l", "d", "g"};
    static const std::vector<std::string> vowel = {"a", "o", "i", "u", "e"};
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (static_cast<int>(out.size()) < n) {
        std::string w;
        for (int s = 0; s < 3; ++s) {
            w += onset[rng.below(onset.size())];
            w += vowel[rng.below(vowel.size())];
        }
        if (seen.insert(w).second) {
            out.push_back(w);
        }
    }
    return out;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg)
{
    const auto& rels = relations();
    if (cfg.relations < 1 || cfg.relations > static_cast<int>(rels.size())) {
        throw InvalidArgument("synthetic corpus supports 1 to " + std::to_string(rels.size()) + " relations");
    }
    if (cfg.seen_variants < 1 || cfg.unseen_variants < 0 ||
        cfg.seen_variants + cfg.unseen_variants > static_cast<int>(rels[0].nouns.size())) {
        throw InvalidArgument("synthetic corpus supports at most 4 wordings per relation");
    }
    if (cfg.entities < 2 || cfg.train_per_task < 1 || cfg.test_per_task < 1 || cfg.val_per_task < 0) {
        throw InvalidArgument("synthetic corpus sizes must be positive");
    }
    nn::Rng rng(nn::mix_seed({cfg.seed, 0x5e7ULL}));
    SyntheticCorpus corpus;
    auto names = entity_names(cfg.entities, rng);
    for (const auto& e : names) {
        for (int r = 0; r < cfg.relations; ++r) {
            corpus.facts[e][rels[r].name] = rels[r].values[rng.below(rels[r].values.size())];
        }
    }
    for (int r = 0; r < cfg.relations; ++r) {
        for (const auto& w : rels[r].nouns) {
            corpus.lexicon[w] = rels[r].name + "_noun";
        }
        for (const auto& w : rels[r].verbs) {
            corpus.lexicon[w] = rels[r].name + "_verb";
        }
    }
    const int variants = cfg.seen_variants + cfg.unseen_variants;
    for (int v = 0; v < variants; ++v) {
        for (int r = 0; r < cfg.relations; ++r) {
            const auto& rel = rels[r];
            bool unseen = v >= cfg.seen_variants;
            std::string task = rel.name + "_" + (unseen ? "u" + std::to_string(v - cfg.seen_variants + 1)
                                                         : std::to_string(v + 1));
            if (unseen) {
                corpus.unseen_task_ids.push_back(task);
            }
            nn::Rng task_rng(nn::mix_seed({cfg.seed, std::uint64_t(r), std::uint64_t(v)}));
            auto emit = [&](Split split, int count) {
                for (int i = 0; i < count; ++i) {
                    const auto& e = names[task_rng.below(names.size())];
                    QAInstance inst;
                    inst.task_id = task;
                    inst.format = Format::abstractive;
                    inst.split = split;
                    inst.question = e + " " + rel.verbs[v] + " which " + rel.nouns[v] + " ?";
                    inst.context = "record of " + e;
                    inst.answer = corpus.facts[e][rel.name];
                    corpus.dataset.add(std::move(inst));
                }
            };
            emit(Split::train, cfg.train_per_task);
            emit(Split::val, cfg.val_per_task);
            emit(Split::test, cfg.test_per_task);
        }
    }
    return corpus;
}

nlohmann::json lexicon_to_json(const std::map<std::string, std::string>& lexicon)
{
    return nlohmann::json(lexicon);
}

std::map<std::string, std::string> lexicon_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw InvalidArgument("lexicon must be a JSON object of word -> concept");
    }
    return j.get<std::map<std::string, std::string>>();
}

}  // namespace oltqa
