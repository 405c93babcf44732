#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace oltqa::text {

/// Lowercases, replaces every ASCII punctuation character with a space and collapses
/// whitespace runs. Shared by the metrics, BM25 and vocabulary code.
std::string normalize(std::string_view s);

/// normalize() followed by a whitespace split.
std::vector<std::string> tokenize(std::string_view s);

std::string lowercase(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a. Used for content hashes in caches and checkpoints.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 14695981039346656037ULL);
std::string hex64(std::uint64_t v);

/// Word-level vocabulary with reserved special tokens at fixed ids.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSep = 4;

    Vocabulary();

    /// Adds the token if absent, returns its id.
    int add(const std::string& token);
    void add_text(std::string_view s);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }

    std::vector<int> encode(std::string_view s) const;
    /// Drops special tokens except <unk>.
    std::string decode(const std::vector<int>& ids) const;

    const std::vector<std::string>& tokens() const { return tokens_; }
    static Vocabulary from_tokens(const std::vector<std::string>& tokens);

    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace oltqa::text
