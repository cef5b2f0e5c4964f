#include "stagerl/vocab.hpp"

#include <sstream>

#include "stagerl/errors.hpp"

namespace stagerl {

Vocab::Vocab(std::vector<std::string> tokens, std::string_view eos) : tokens_(std::move(tokens)) {
    int eos_count = 0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw InvalidConfig("empty token in vocabulary");
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
            throw InvalidConfig("duplicate token '" + tokens_[i] + "'");
        if (tokens_[i] == eos) {
            eos_ = static_cast<TokenId>(i);
            ++eos_count;
        }
    }
    if (eos_count != 1) throw InvalidConfig("vocabulary must contain exactly one EOS token");
}

const std::string& Vocab::token(TokenId id) const {
    if (!contains(id)) throw UnknownToken("id " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) throw UnknownToken("'" + std::string(tok) + "'");
    return it->second;
}

TokenId Vocab::find(std::string_view tok) const noexcept {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kBos : it->second;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) out.push_back(id(tok));
    return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto t : ids) {
        if (!out.empty()) out += ' ';
        out += token(t);
    }
    return out;
}

const Vocab& desk_vocab() {
    static const Vocab v = [] {
        std::vector<std::string> toks;
        for (int d = 0; d < 10; ++d) toks.push_back(std::to_string(d));
        for (const char* t : {"+", "-", "*", "=", ";", "x", "<box>", "</box>"}) toks.emplace_back(t);
        for (int d = 0; d < 10; ++d) toks.push_back("PUSH" + std::to_string(d));
        for (const char* t : {"IN", "ADD", "SUB", "MUL", "DUP", "SWAP", "POP", "HALT", "EOS"})
            toks.emplace_back(t);
        return Vocab(std::move(toks));
    }();
    return v;
}

}  // namespace stagerl
