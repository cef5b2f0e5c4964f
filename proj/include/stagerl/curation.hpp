#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stagerl {

enum class CorpusKind : std::uint8_t { Train, Eval };

struct CorpusItem {
    std::string id;
    std::string text;
    std::optional<std::int64_t> response_length;

    bool operator==(const CorpusItem&) const = default;
};

struct Corpus {
    std::vector<CorpusItem> items;
    CorpusKind kind = CorpusKind::Train;

    /// Throws BadArgs on duplicate ids.
    void validate() const;
    std::vector<std::string> ids() const;
    bool operator==(const Corpus&) const = default;
};

/// Case-folds and collapses runs of whitespace to one space, trimming ends.
std::string normalize_text(std::string_view text);

struct DedupResult {
    Corpus corpus;
    std::vector<std::string> removed;
};

/// Keeps the first item of each normalized form.
DedupResult dedup(const Corpus& corpus);

enum class NgramUnit : std::uint8_t { Word, Char };

/// n-grams of the normalized text, joined with single spaces for words.
/// Texts shorter than n yield nothing.
std::vector<std::string> ngrams(std::string_view text, int n, NgramUnit unit = NgramUnit::Word);

struct DecontamMatch {
    std::string train_id;
    std::string eval_id;
    std::string ngram;
};

struct DecontamReport {
    int n = 9;
    std::vector<std::string> removed;
    /// First eval match per removed id, in train order.
    std::vector<DecontamMatch> matches;

    std::string to_json() const;
};

struct DecontamResult {
    Corpus train;
    DecontamReport report;
};

/// Drops every train item that shares at least one n-gram with any eval item.
DecontamResult decontaminate(const Corpus& train, const Corpus& eval, int n = 9, NgramUnit unit = NgramUnit::Word);

/// Half-open response-length range [lo, hi) with its target share.
struct LengthBucket {
    std::int64_t lo = 0;
    std::int64_t hi = std::numeric_limits<std::int64_t>::max();
    double target = 0.0;
};

inline constexpr double kBalanceTolerance = 0.02;

/// Randomly drops items from over-represented buckets so each realized
/// share is within kBalanceTolerance of its target. A corpus already
/// within tolerance is returned unchanged; retained items keep their
/// input order. Throws Unsatisfiable when a positive-target bucket is
/// empty or the targets cannot be met by removal alone.
Corpus length_balance(const Corpus& corpus, const std::vector<LengthBucket>& buckets, std::uint64_t seed);

/// Parses "lo-hi:frac,lo-:frac" (hi exclusive, empty hi is unbounded).
std::vector<LengthBucket> parse_buckets(const std::string& spec);

/// JSON-lines corpus: {"id", "text", "response_length"?} per line.
Corpus load_corpus(const std::string& path, CorpusKind kind);
std::string corpus_to_jsonl(const Corpus& corpus);

}  // namespace stagerl
