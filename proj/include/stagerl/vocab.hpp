#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stagerl {

using TokenId = std::int32_t;

/// Sentinel used to left-pad context windows. Never part of a vocabulary.
inline constexpr TokenId kBos = -1;

/// Stand-in for any digit token in shape-tier context windows.
inline constexpr TokenId kDigitClass = -2;

/// Ordered token list with exactly one end-of-sequence token. Ids are
/// positions in the list and stay stable across save/load.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens, std::string_view eos = "EOS");

    std::size_t size() const noexcept { return tokens_.size(); }
    TokenId eos() const noexcept { return eos_; }

    const std::string& token(TokenId id) const;
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    /// Throws UnknownToken when absent.
    TokenId id(std::string_view tok) const;
    /// Returns kBos when absent.
    TokenId find(std::string_view tok) const noexcept;
    bool contains(TokenId id) const noexcept { return id >= 0 && id < static_cast<TokenId>(tokens_.size()); }

    std::vector<TokenId> encode(std::string_view space_separated) const;
    std::string decode(std::span<const TokenId> ids) const;

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId eos_ = kBos;
};

/// Shared math/code vocabulary: digits, operators, separators, the answer
/// wrapper, the mini-VM opcodes, the input placeholder and EOS.
const Vocab& desk_vocab();

}  // namespace stagerl
