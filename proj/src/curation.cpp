#include "stagerl/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"
#include "stagerl/io.hpp"
#include "stagerl/rng.hpp"

namespace stagerl {

void Corpus::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& it : items)
        if (!seen.insert(it.id).second) throw BadArgs("duplicate corpus id '" + it.id + "'");
}

std::vector<std::string> Corpus::ids() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.id);
    return out;
}

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

DedupResult dedup(const Corpus& corpus) {
    DedupResult r;
    r.corpus.kind = corpus.kind;
    std::unordered_set<std::string> seen;
    for (const auto& it : corpus.items) {
        if (seen.insert(normalize_text(it.text)).second) r.corpus.items.push_back(it);
        else r.removed.push_back(it.id);
    }
    return r;
}

std::vector<std::string> ngrams(std::string_view text, int n, NgramUnit unit) {
    if (n < 1) throw BadArgs("n-gram size must be at least 1");
    const std::string norm = normalize_text(text);
    std::vector<std::string> out;
    const auto un = static_cast<std::size_t>(n);
    if (unit == NgramUnit::Char) {
        for (std::size_t i = 0; i + un <= norm.size(); ++i) out.push_back(norm.substr(i, un));
        return out;
    }
    std::vector<std::string> words;
    std::istringstream in(norm);
    for (std::string w; in >> w;) words.push_back(std::move(w));
    for (std::size_t i = 0; i + un <= words.size(); ++i) {
        std::string g = words[i];
        for (std::size_t k = 1; k < un; ++k) g += ' ' + words[i + k];
        out.push_back(std::move(g));
    }
    return out;
}

std::string DecontamReport::to_json() const {
    nlohmann::ordered_json j;
    j["n"] = n;
    j["removed"] = removed;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& m : matches)
        arr.push_back({{"train_id", m.train_id}, {"eval_id", m.eval_id}, {"ngram", m.ngram}});
    j["matches"] = std::move(arr);
    return j.dump(2);
}

DecontamResult decontaminate(const Corpus& train, const Corpus& eval, int n, NgramUnit unit) {
    if (n < 1) throw BadArgs("n-gram size must be at least 1");
    // first eval id owning each n-gram
    std::unordered_map<std::string, std::string> owner;
    for (const auto& e : eval.items)
        for (auto& g : ngrams(e.text, n, unit)) owner.try_emplace(std::move(g), e.id);

    DecontamResult r;
    r.train.kind = train.kind;
    r.report.n = n;
    for (const auto& it : train.items) {
        const DecontamMatch* hit = nullptr;
        DecontamMatch m;
        if (!owner.empty()) {
            for (auto& g : ngrams(it.text, n, unit)) {
                auto f = owner.find(g);
                if (f == owner.end()) continue;
                m = {it.id, f->second, std::move(g)};
                hit = &m;
                break;
            }
        }
        if (hit) {
            r.report.removed.push_back(it.id);
            r.report.matches.push_back(std::move(m));
        } else {
            r.train.items.push_back(it);
        }
    }
    return r;
}

namespace {

void check_buckets(const std::vector<LengthBucket>& buckets) {
    if (buckets.empty()) throw BadArgs("no length buckets");
    double total = 0.0;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
        const auto& b = buckets[i];
        if (b.lo >= b.hi) throw BadArgs("empty length bucket");
        if (!(b.target >= 0.0)) throw BadArgs("negative bucket target");
        total += b.target;
        for (std::size_t k = 0; k < i; ++k)
            if (b.lo < buckets[k].hi && buckets[k].lo < b.hi) throw BadArgs("length buckets overlap");
    }
    if (std::abs(total - 1.0) > 1e-9) throw BadArgs("bucket targets must sum to 1");
}

std::size_t bucket_of(const std::vector<LengthBucket>& buckets, const CorpusItem& it) {
    if (!it.response_length) throw BadArgs("item '" + it.id + "' has no response length");
    const auto len = *it.response_length;
    for (std::size_t b = 0; b < buckets.size(); ++b)
        if (len >= buckets[b].lo && len < buckets[b].hi) return b;
    throw BadArgs("item '" + it.id + "' falls outside every length bucket");
}

bool within_tolerance(const std::vector<std::size_t>& counts, const std::vector<LengthBucket>& buckets) {
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) return false;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        const double share = static_cast<double>(counts[b]) / static_cast<double>(total);
        if (std::abs(share - buckets[b].target) > kBalanceTolerance + 1e-12) return false;
    }
    return true;
}

}  // namespace

Corpus length_balance(const Corpus& corpus, const std::vector<LengthBucket>& buckets, std::uint64_t seed) {
    check_buckets(buckets);
    const std::size_t B = buckets.size();
    std::vector<std::vector<std::size_t>> members(B);
    for (std::size_t i = 0; i < corpus.items.size(); ++i) members[bucket_of(buckets, corpus.items[i])].push_back(i);
    std::vector<std::size_t> counts(B);
    for (std::size_t b = 0; b < B; ++b) counts[b] = members[b].size();
    if (within_tolerance(counts, buckets)) return corpus;

    // Largest total the scarcest positive-target bucket can support.
    double total = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < B; ++b)
        if (buckets[b].target > 0.0) total = std::min(total, static_cast<double>(counts[b]) / buckets[b].target);
    std::vector<std::size_t> keep(B);
    for (std::size_t b = 0; b < B; ++b)
        keep[b] = std::min(counts[b], static_cast<std::size_t>(std::floor(buckets[b].target * total + 0.5)));
    if (!within_tolerance(keep, buckets)) throw Unsatisfiable("length targets cannot be met by removal");

    std::vector<bool> retained(corpus.items.size(), false);
    for (std::size_t b = 0; b < B; ++b) {
        auto idx = members[b];
        Rng rng(derive_seed({seed, b}));
        rng.shuffle(idx.begin(), idx.end());
        for (std::size_t k = 0; k < keep[b]; ++k) retained[idx[k]] = true;
    }
    Corpus out;
    out.kind = corpus.kind;
    for (std::size_t i = 0; i < corpus.items.size(); ++i)
        if (retained[i]) out.items.push_back(corpus.items[i]);
    return out;
}

std::vector<LengthBucket> parse_buckets(const std::string& spec) {
    std::vector<LengthBucket> out;
    std::istringstream in(spec);
    for (std::string part; std::getline(in, part, ',');) {
        const auto colon = part.find(':');
        const auto dash = part.find('-');
        if (colon == std::string::npos || dash == std::string::npos || dash > colon)
            throw BadArgs("bad bucket '" + part + "', expected lo-hi:fraction");
        try {
            LengthBucket b;
            b.lo = std::stoll(part.substr(0, dash));
            const auto hi = part.substr(dash + 1, colon - dash - 1);
            if (!hi.empty()) b.hi = std::stoll(hi);
            b.target = std::stod(part.substr(colon + 1));
            out.push_back(b);
        } catch (const std::logic_error&) {
            throw BadArgs("bad bucket '" + part + "', expected lo-hi:fraction");
        }
    }
    check_buckets(out);
    return out;
}

Corpus load_corpus(const std::string& path, CorpusKind kind) {
    Corpus c;
    c.kind = kind;
    for (const auto& [lineno, line] : io::read_nonempty_lines(path)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path, lineno, e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() ||
            !j["text"].is_string())
            throw ParseError(path, lineno, "expected an object with string 'id' and 'text'");
        CorpusItem it{j["id"].get<std::string>(), j["text"].get<std::string>(), std::nullopt};
        if (j.contains("response_length")) {
            if (!j["response_length"].is_number_integer())
                throw ParseError(path, lineno, "'response_length' must be an integer");
            it.response_length = j["response_length"].get<std::int64_t>();
        }
        c.items.push_back(std::move(it));
    }
    try {
        c.validate();
    } catch (const BadArgs& e) {
        throw ParseError(path, 0, e.what());
    }
    return c;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& it : corpus.items) {
        nlohmann::ordered_json j;
        j["id"] = it.id;
        j["text"] = it.text;
        if (it.response_length) j["response_length"] = *it.response_length;
        out += j.dump() + '\n';
    }
    return out;
}

}  // namespace stagerl
