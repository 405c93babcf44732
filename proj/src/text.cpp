#include "oltqa/text.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

#include "oltqa/errors.hpp"

namespace oltqa::text {

std::string lowercase(std::string_view s)
{
    std::string out(s);
    for (auto& ch : out) {
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

std::string normalize(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char raw : s) {
        auto ch = static_cast<unsigned char>(raw);
        if (std::isspace(ch) || std::ispunct(ch)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(ch)));
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view s)
{
    std::vector<std::string> tokens;
    std::istringstream in(normalize(s));
    std::string tok;
    while (in >> tok) {
        tokens.push_back(std::move(tok));
    }
    return tokens;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out.append(sep);
        }
        out.append(parts[i]);
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Vocabulary::Vocabulary()
{
    for (const char* special : {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"}) {
        add(special);
    }
}

int Vocabulary::add(const std::string& token)
{
    auto it = ids_.find(token);
    if (it != ids_.end()) {
        return it->second;
    }
    int id = size();
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

void Vocabulary::add_text(std::string_view s)
{
    for (const auto& tok : tokenize(s)) {
        add(tok);
    }
}

int Vocabulary::id(const std::string& token) const
{
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const
{
    if (id < 0 || id >= size()) {
        throw InvalidArgument("vocabulary id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view s) const
{
    std::vector<int> ids;
    for (const auto& tok : tokenize(s)) {
        ids.push_back(id(tok));
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const
{
    std::vector<std::string> words;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos || id == kSep) {
            continue;
        }
        words.push_back(token(id));
    }
    return join(words, " ");
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens)
{
    Vocabulary v;
    if (tokens.size() < 5) {
        throw InvalidArgument("vocabulary token list is missing the reserved specials");
    }
    for (std::size_t i = 0; i < 5; ++i) {
        if (tokens[i] != v.tokens_[i]) {
            throw InvalidArgument("vocabulary token list has unexpected specials");
        }
    }
    for (std::size_t i = 5; i < tokens.size(); ++i) {
        v.add(tokens[i]);
    }
    return v;
}

std::uint64_t Vocabulary::fingerprint() const
{
    std::uint64_t h = fnv1a("vocab");
    for (const auto& t : tokens_) {
        h = fnv1a(t, h);
        h = fnv1a("\x1f", h);
    }
    return h;
}

}  // namespace oltqa::text
