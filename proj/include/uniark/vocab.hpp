#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniark {

inline std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

inline std::string lowercase_first(const std::string& word) {
    if (word.empty()) return word;
    std::string out = word;
    out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
    return out;
}

// Closed whitespace-delimited vocabulary. Token ids are stable: the special
// tokens come first, then all remaining tokens in lexicographic order, so the
// same token set always produces the same mapping.
class Vocabulary {
public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kMask = "[MASK]";

    Vocabulary() = default;

    explicit Vocabulary(const std::set<std::string>& tokens) {
        add_token(kPad);
        add_token(kMask);
        for (const auto& t : tokens) {
            if (t == kPad || t == kMask) continue;
            add_token(t);
        }
    }

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t pad_id() const { return 0; }
    std::size_t mask_id() const { return 1; }

    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    std::size_t id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end()) {
            throw std::invalid_argument("vocabulary: unknown token '" + token + "'");
        }
        return it->second;
    }

    const std::string& token(std::size_t id) const {
        if (id >= id_to_token_.size()) throw std::out_of_range("vocabulary: id out of range");
        return id_to_token_[id];
    }

    std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<std::size_t> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id(t));
        return ids;
    }

    std::vector<std::size_t> encode_text(const std::string& text) const {
        return encode(split_whitespace(text));
    }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    void add_token(const std::string& t) {
        token_to_id_.emplace(t, id_to_token_.size());
        id_to_token_.push_back(t);
    }

    std::map<std::string, std::size_t> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace uniark
