#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "stagerl/curation.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/rng.hpp"

using namespace stagerl;

namespace {

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// All-pairs window comparison, no hashing.
bool shares_window(const std::string& a, const std::string& b, std::size_t n) {
    const auto wa = words_of(a), wb = words_of(b);
    if (wa.size() < n || wb.size() < n) return false;
    for (std::size_t i = 0; i + n <= wa.size(); ++i)
        for (std::size_t j = 0; j + n <= wb.size(); ++j)
            if (std::equal(wa.begin() + static_cast<std::ptrdiff_t>(i), wa.begin() + static_cast<std::ptrdiff_t>(i + n),
                           wb.begin() + static_cast<std::ptrdiff_t>(j)))
                return true;
    return false;
}

std::string random_text(Rng& rng, std::size_t len) {
    static const char* vocab[] = {"alpha", "Beta", "gamma", "delta", "EPS"};
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        if (i) s += rng.bernoulli(0.2) ? "  \t" : " ";
        s += vocab[rng.below(5)];
    }
    return s;
}

Corpus lengths_corpus(const std::vector<std::int64_t>& lens) {
    Corpus c;
    for (std::size_t i = 0; i < lens.size(); ++i) c.items.push_back({"i" + std::to_string(i), "t", lens[i]});
    return c;
}

}  // namespace

TEST_CASE("normalization folds case and whitespace") {
    CHECK(normalize_text("  Hello\t\tWORLD \n x ") == "hello world x");
    CHECK(normalize_text("") == "");
}

TEST_CASE("dedup keeps the first of each normalized form") {
    Corpus c;
    c.items = {{"a", "Two plus two", 3}, {"b", "two  PLUS two", 4}, {"c", "three", 1}, {"d", "TWO plus two ", 9}};
    const auto r = dedup(c);
    CHECK(r.corpus.ids() == std::vector<std::string>{"a", "c"});
    CHECK(r.removed == std::vector<std::string>{"b", "d"});
    c.items.push_back({"a", "dup id", 1});
    CHECK_THROWS_AS(c.validate(), BadArgs);
}

TEST_CASE("n-gram extraction") {
    CHECK(ngrams("A b  C d", 2) == std::vector<std::string>{"a b", "b c", "c d"});
    CHECK(ngrams("a b", 3).empty());
    CHECK(ngrams("AbC", 2, NgramUnit::Char) == std::vector<std::string>{"ab", "bc"});
    CHECK_THROWS_AS(ngrams("a", 0), BadArgs);
}

TEST_CASE("decontamination matches a brute-force all-pairs scan") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        Corpus train, eval;
        const auto n_train = 20 + rng.below(60), n_eval = 10 + rng.below(40);
        for (std::uint64_t i = 0; i < n_train; ++i)
            train.items.push_back({"t" + std::to_string(i), random_text(rng, 5 + rng.below(12)), std::nullopt});
        for (std::uint64_t i = 0; i < n_eval; ++i)
            eval.items.push_back({"e" + std::to_string(i), random_text(rng, 5 + rng.below(12)), std::nullopt});
        for (int n : {4, 5, 9}) {
            const auto res = decontaminate(train, eval, n);
            std::vector<std::string> expect, kept;
            for (const auto& t : train.items) {
                bool hit = false;
                for (const auto& e : eval.items) hit = hit || shares_window(t.text, e.text, static_cast<std::size_t>(n));
                (hit ? expect : kept).push_back(t.id);
            }
            CHECK(res.report.removed == expect);
            CHECK(res.train.ids() == kept);
            REQUIRE(res.report.matches.size() == expect.size());
            for (const auto& m : res.report.matches) CHECK(m.ngram.size() > 0);
        }
    }
}

TEST_CASE("an 8-word overlap survives 9-gram decontamination") {
    Corpus train, eval;
    eval.items = {{"e", "one two three four five six seven eight nine ten", std::nullopt}};
    train.items = {{"near", "zero two three four five six seven eight nine zero", std::nullopt},
                   {"hit", "x one two three four five six seven eight nine y", std::nullopt}};
    const auto r = decontaminate(train, eval, 9);
    CHECK(r.train.ids() == std::vector<std::string>{"near"});
    REQUIRE(r.report.matches.size() == 1);
    CHECK(r.report.matches[0].eval_id == "e");
    CHECK(r.report.matches[0].ngram == "one two three four five six seven eight nine");
    CHECK(r.report.to_json().find("\"hit\"") != std::string::npos);
}

TEST_CASE("length balance meets targets by removal only") {
    const auto buckets = parse_buckets("0-10:0.5,10-:0.5");
    REQUIRE(buckets.size() == 2);
    CHECK(buckets[1].lo == 10);
    CHECK(buckets[1].hi == std::numeric_limits<std::int64_t>::max());

    std::vector<std::int64_t> lens;
    for (int i = 0; i < 30; ++i) lens.push_back(i % 10);
    for (int i = 0; i < 70; ++i) lens.push_back(20 + i);
    const auto c = lengths_corpus(lens);
    const auto out = length_balance(c, buckets, 3);
    std::size_t shortn = 0;
    for (const auto& it : out.items) shortn += *it.response_length < 10;
    const double share = static_cast<double>(shortn) / static_cast<double>(out.items.size());
    CHECK(std::abs(share - 0.5) <= kBalanceTolerance);
    CHECK(shortn == 30);

    // Retained items keep input order.
    std::size_t k = 0;
    for (const auto& it : c.items)
        if (k < out.items.size() && out.items[k].id == it.id) ++k;
    CHECK(k == out.items.size());
    CHECK(length_balance(c, buckets, 3) == out);

    const auto balanced = lengths_corpus({1, 2, 30, 40});
    CHECK(length_balance(balanced, buckets, 9) == balanced);

    CHECK_THROWS_AS(length_balance(lengths_corpus({1, 2, 3}), buckets, 0), Unsatisfiable);
    CHECK_THROWS_AS(parse_buckets("0-10:0.5,5-:0.5"), BadArgs);
    CHECK_THROWS_AS(parse_buckets("0-10:0.4,10-:0.4"), BadArgs);
    CHECK_THROWS_AS(parse_buckets("nonsense"), BadArgs);
}

TEST_CASE("corpus files round-trip") {
    Corpus c;
    c.items = {{"a", "x y", 3}, {"b", "z", std::nullopt}};
    const auto path = (std::filesystem::temp_directory_path() / "stagerl_corpus_rt.jsonl").string();
    {
        std::ofstream f(path);
        f << corpus_to_jsonl(c);
    }
    CHECK(load_corpus(path, CorpusKind::Train) == c);
    {
        std::ofstream f(path);
        f << "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": \"a\", \"text\": \"y\"}\n";
    }
    CHECK_THROWS_AS(load_corpus(path, CorpusKind::Train), ParseError);
    std::filesystem::remove(path);
}
