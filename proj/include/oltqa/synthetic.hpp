#pragma once

// Seeded synthetic QA suite with planted structure. Every entity has one value per relation;
// each task asks about one relation with its own question wording. Wordings of the same
// relation are synonyms, and the lexicon maps them onto a shared concept so the frozen
// encoder and the mock oracle treat them alike while the trainable models see distinct words.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oltqa/task_registry.hpp"

namespace oltqa {

struct SyntheticConfig {
    std::uint64_t seed = 7;
    int entities = 30;
    int relations = 3;            // up to 4
    int seen_variants = 2;        // seen tasks per relation
    int unseen_variants = 1;      // unseen tasks per relation
    int train_per_task = 120;
    int val_per_task = 16;
    int test_per_task = 24;
};

struct SyntheticCorpus {
    Dataset dataset;
    std::map<std::string, std::string> lexicon;
    std::vector<std::string> unseen_task_ids;
    /// entity -> relation -> value
    std::map<std::string, std::map<std::string, std::string>> facts;
};

/// Task order interleaves relations (variant 1 of every relation first, then variant 2, ...)
/// so the Zipf head holds one wording per relation and the tail the rest.
SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config);

nlohmann::json lexicon_to_json(const std::map<std::string, std::string>& lexicon);
std::map<std::string, std::string> lexicon_from_json(const nlohmann::json& j);

}  // namespace oltqa
