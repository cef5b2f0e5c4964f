#include "stagerl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"
#include "stagerl/io.hpp"

namespace stagerl {

using nlohmann::json;

namespace {

constexpr int kMaxOffset = 31;
constexpr std::uint64_t kTierPrompt = 0x70726f6d;
constexpr std::uint64_t kTierFocus = 0x666f6375;
constexpr std::uint64_t kTierShape = 0x73686170;
constexpr std::uint64_t kTierSplit = 0x73706c74;

enum Phase : std::uint64_t { kStep = 1, kAnswer = 2, kEnd = 3, kFree = 4 };

std::uint64_t tok(TokenId t) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(t)); }

bool is_digit_token(const Vocab& v, TokenId t) {
    const auto& s = v.token(t);
    return s.size() == 1 && s[0] >= '0' && s[0] <= '9';
}

bool is_operator_token(const Vocab& v, TokenId t) {
    const auto& s = v.token(t);
    return s == "+" || s == "-" || s == "*";
}

}  // namespace

// ---------------------------------------------------------------- ContextKey

std::string ContextKey::to_string() const {
    char buf[40];
    std::snprintf(buf, sizeof buf, "c%u:h%016llx:r", static_cast<unsigned>(category),
                  static_cast<unsigned long long>(prompt_hash));
    std::string out = buf;
    for (int i = 0; i < order; ++i) {
        if (i) out += ',';
        const auto t = recent[static_cast<std::size_t>(i)];
        out += t == kBos ? std::string("^") : std::to_string(t);
    }
    return out;
}

ContextKey ContextKey::parse(const std::string& text) {
    ContextKey k;
    unsigned cat = 0;
    unsigned long long h = 0;
    int consumed = 0;
    if (std::sscanf(text.c_str(), "c%u:h%16llx:r%n", &cat, &h, &consumed) != 2 || consumed == 0)
        throw ParseError("<context key>", 0, "malformed key '" + text + "'");
    k.category = static_cast<std::uint8_t>(cat);
    k.prompt_hash = h;
    std::string rest = text.substr(static_cast<std::size_t>(consumed));
    std::istringstream in(rest);
    std::string part;
    int n = 0;
    while (std::getline(in, part, ',')) {
        if (n >= kMaxContextOrder) throw ParseError("<context key>", 0, "context too long in '" + text + "'");
        k.recent[static_cast<std::size_t>(n++)] = part == "^" ? kBos : static_cast<TokenId>(std::stoi(part));
    }
    k.order = static_cast<std::uint8_t>(n);
    return k;
}

// ---------------------------------------------------------------- FeatureSet

std::vector<std::string> FeatureSet::names() const {
    std::vector<std::string> out;
    if (prompt) out.emplace_back("prompt");
    if (focus) out.emplace_back("focus");
    if (shape) out.emplace_back("shape");
    if (split) out.emplace_back("split");
    return out;
}

FeatureSet FeatureSet::from_names(const std::vector<std::string>& names) {
    FeatureSet f{false, false, false, false};
    for (const auto& n : names) {
        if (n == "prompt") f.prompt = true;
        else if (n == "focus") f.focus = true;
        else if (n == "shape") f.shape = true;
        else if (n == "split") f.split = true;
        else throw InvalidConfig("unknown feature tier '" + n + "'");
    }
    if (!f.prompt && !f.focus && !f.shape && !f.split) throw InvalidConfig("at least one feature tier required");
    return f;
}

// ---------------------------------------------------------------- PolicyParams

PolicyParams::PolicyParams(Vocab v, int order, FeatureSet f)
    : vocab(std::move(v)), context_order(order), features(f) {
    if (order < 1 || order > kMaxContextOrder)
        throw InvalidConfig("context_order must be in [1, " + std::to_string(kMaxContextOrder) + "]");
    if (!features.prompt && !features.focus && !features.shape && !features.split)
        throw InvalidConfig("at least one feature tier required");
}

const double* PolicyParams::find_row(const ContextKey& key) const {
    auto it = table.find(key);
    return it == table.end() ? nullptr : it->second.data();
}

std::vector<double>& PolicyParams::row(const ContextKey& key) {
    auto [it, inserted] = table.try_emplace(key);
    if (inserted) it->second.assign(vocab.size(), 0.0);
    return it->second;
}

bool PolicyParams::all_finite() const {
    for (const auto& [k, r] : table)
        for (double v : r)
            if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------- ContextTracker

ContextTracker::ContextTracker(const PolicyParams& params, const Task& task)
    : params_(&params), task_(&task) {
    const auto& v = params.vocab;
    semi_ = v.find(";");
    std::uint64_t h = derive_seed({kTierPrompt, static_cast<std::uint64_t>(task.category)});
    for (auto t : task.prompt_tokens) h = mix64(h ^ tok(t));
    prompt_digest_ = h;

    // operand (op operand)*
    const auto& p = task.prompt_tokens;
    parsed_ = !p.empty() && p.size() % 2 == 1;
    for (std::size_t i = 0; parsed_ && i < p.size(); ++i) {
        if (!v.contains(p[i])) {
            parsed_ = false;
        } else if (i % 2 == 0) {
            if (!is_digit_token(v, p[i]) && v.token(p[i]) != "x") parsed_ = false;
            else operands_.push_back(p[i]);
        } else {
            if (!is_operator_token(v, p[i])) parsed_ = false;
            else ops_.push_back(p[i]);
        }
    }
    if (!parsed_) {
        operands_.clear();
        ops_.clear();
    }
    if (parsed_ && task.category == Category::Math && operands_.size() == 1)
        answer_head_ = {operands_[0], kBos};

    window_.fill(kBos);
    rebuild();
}

void ContextTracker::push(TokenId t) {
    const int k = params_->context_order;
    for (int i = 0; i + 1 < k; ++i) window_[static_cast<std::size_t>(i)] = window_[static_cast<std::size_t>(i + 1)];
    window_[static_cast<std::size_t>(k - 1)] = t;

    if (t == semi_ && semi_ != kBos) {
        ++steps_;
        prev_head_ = cur_head_;
        cur_head_ = {kBos, kBos};
        offset_ = 0;
        if (parsed_ && task_->category == Category::Math &&
            steps_ == static_cast<int>(operands_.size()) - 1)
            answer_head_ = prev_head_;
    } else {
        if (offset_ < 2) cur_head_[static_cast<std::size_t>(offset_)] = t;
        if (offset_ < kMaxOffset) ++offset_;
    }
    rebuild();
}

void ContextTracker::rebuild() {
    const auto& f = params_->features;
    const int k = params_->context_order;
    const auto cat = static_cast<std::uint8_t>(task_->category);
    const auto off = static_cast<std::uint64_t>(offset_);

    auto make = [&](std::uint64_t hash) {
        ContextKey key;
        key.category = cat;
        key.prompt_hash = hash;
        key.order = static_cast<std::uint8_t>(k);
        for (int i = 0; i < k; ++i) key.recent[static_cast<std::size_t>(i)] = window_[static_cast<std::size_t>(i)];
        return key;
    };
    auto collapsed = [&](std::uint64_t hash) {
        auto key = make(hash);
        for (int i = 0; i < k; ++i) {
            auto& t = key.recent[static_cast<std::size_t>(i)];
            if (t != kBos && is_digit_token(params_->vocab, t)) t = kDigitClass;
        }
        return key;
    };

    std::uint64_t phase = kFree;
    std::uint64_t focus = 0;
    // running value digits (tens, units) and the pending op/operand; set on MATH steps
    std::optional<std::array<std::uint64_t, 4>> split;
    if (parsed_) {
        const int n = static_cast<int>(operands_.size());
        if (task_->category == Category::Math) {
            if (steps_ < n - 1) {
                phase = kStep;
                const auto s = static_cast<std::size_t>(steps_);
                const TokenId l0 = steps_ == 0 ? operands_[0] : prev_head_[0];
                const TokenId l1 = steps_ == 0 ? kBos : prev_head_[1];
                focus = derive_seed({kTierFocus, phase, tok(l0), tok(l1), tok(ops_[s]), tok(operands_[s + 1]), off});
                // step 0 starts from a one-digit operand, so its tens digit is 0
                const TokenId hi = steps_ == 0 ? params_->vocab.find("0") : l0;
                split = std::array<std::uint64_t, 4>{tok(hi), tok(steps_ == 0 ? l0 : l1), tok(ops_[s]),
                                                     tok(operands_[s + 1])};
            } else {
                phase = kAnswer;
                const auto extra = static_cast<std::uint64_t>(std::min(steps_ - (n - 1), 3));
                focus = derive_seed({kTierFocus, phase, tok(answer_head_[0]), tok(answer_head_[1]), extra, off});
            }
        } else {
            if (steps_ < n) {
                phase = kStep;
                const auto s = static_cast<std::size_t>(steps_);
                const TokenId op = steps_ == 0 ? kBos : ops_[s - 1];
                focus = derive_seed({kTierFocus + 1, phase, tok(op), tok(operands_[s]), off});
            } else {
                phase = kEnd;
                const auto extra = static_cast<std::uint64_t>(std::min(steps_ - n, 3));
                focus = derive_seed({kTierFocus + 1, phase, extra, off});
            }
        }
    } else {
        focus = derive_seed({kTierFocus + 2, prompt_digest_, static_cast<std::uint64_t>(std::min(steps_, 15)), off});
    }

    n_keys_ = 0;
    if (f.prompt) keys_[n_keys_++] = make(prompt_digest_);
    if (f.focus) keys_[n_keys_++] = make(focus);
    if (f.shape) {
        keys_[n_keys_++] = collapsed(derive_seed({kTierShape, phase, off}));
        // window-free backoff: still informative after an unseen token
        auto bare = make(derive_seed({kTierShape + 1, phase, off}));
        bare.recent.fill(kBos);
        keys_[n_keys_++] = bare;
    }
    // column-aligned: the digit written at offset j reads digit j of the running value
    if (f.split && split && off < 2) {
        const auto& [hi, lo, op, rhs] = *split;
        keys_[n_keys_++] = collapsed(derive_seed({kTierSplit, off, off == 0 ? hi : lo, op, rhs}));
    }
}

// ---------------------------------------------------------------- distributions

void SamplingConfig::validate() const {
    if (!(temperature > 0.0)) throw InvalidConfig("temperature must be > 0");
    if (max_tokens < 1) throw InvalidConfig("max_tokens must be >= 1");
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0)) throw InvalidConfig("top_p must lie in (0, 1]");
}

namespace {

/// Fills probs and logprobs for one position.
void distribution(std::span<const double> logits, double temperature, std::optional<double> top_p,
                  bool greedy, std::span<double> probs, std::span<double> logp,
                  std::vector<std::size_t>& order) {
    const std::size_t V = logits.size();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    if (greedy || temperature <= kGreedyTemperature) {
        std::size_t best = 0;
        for (std::size_t v = 1; v < V; ++v)
            if (logits[v] > logits[best]) best = v;
        for (std::size_t v = 0; v < V; ++v) {
            probs[v] = v == best ? 1.0 : 0.0;
            logp[v] = v == best ? 0.0 : kNegInf;
        }
        return;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V; ++v) m = std::max(m, logits[v] / temperature);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
        logp[v] = logits[v] / temperature - m;
        probs[v] = std::exp(logp[v]);
        sum += probs[v];
    }
    if (top_p && *top_p < 1.0) {
        order.resize(V);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
        const double threshold = *top_p * sum;
        double cum = 0.0;
        double kept = 0.0;
        std::size_t i = 0;
        for (; i < V; ++i) {
            cum += probs[order[i]];
            kept = cum;
            if (cum >= threshold) break;
        }
        for (std::size_t r = i + 1; r < V; ++r) {
            probs[order[r]] = 0.0;
            logp[order[r]] = kNegInf;
        }
        sum = kept;
    }
    const double log_sum = std::log(sum);
    for (std::size_t v = 0; v < V; ++v) {
        if (logp[v] == kNegInf) continue;
        logp[v] -= log_sum;
        probs[v] /= sum;
    }
}

struct Scratch {
    std::vector<double> logits, probs, logp;
    std::vector<std::size_t> order;
    explicit Scratch(std::size_t V) : logits(V), probs(V), logp(V) {}
};

}  // namespace

void next_token_distribution(std::span<const double> logits, double temperature,
                             std::optional<double> top_p, bool greedy, std::span<double> probs) {
    std::vector<double> logp(logits.size());
    std::vector<std::size_t> order;
    distribution(logits, temperature, top_p, greedy, probs, logp, order);
}

void accumulate_logits(const PolicyParams& params, std::span<const ContextKey> keys,
                       std::span<double> logits) {
    std::fill(logits.begin(), logits.end(), 0.0);
    for (const auto& key : keys) {
        if (const double* row = params.find_row(key))
            for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += row[v];
    }
}

Rollout sample(const PolicyParams& params, const Task& task, const SamplingConfig& cfg) {
    cfg.validate();
    if (task.prompt_tokens.empty()) throw InvalidConfig("task '" + task.id + "' has an empty prompt");
    const std::size_t V = params.vocab_size();
    const bool greedy = cfg.greedy || cfg.temperature <= kGreedyTemperature;
    Scratch s(V);
    Rng rng(cfg.seed_stream);
    ContextTracker tracker(params, task);
    Rollout out;
    out.tokens.reserve(static_cast<std::size_t>(cfg.max_tokens));
    out.logprobs.reserve(static_cast<std::size_t>(cfg.max_tokens));
    const TokenId eos = params.vocab.eos();
    for (int t = 0; t < cfg.max_tokens; ++t) {
        accumulate_logits(params, tracker.keys(), s.logits);
        distribution(s.logits, cfg.temperature, cfg.top_p, greedy, s.probs, s.logp, s.order);
        const double u = rng.uniform();
        std::size_t pick = V;
        double cum = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t v = 0; v < V; ++v) {
            if (s.probs[v] <= 0.0) continue;
            last_positive = v;
            cum += s.probs[v];
            if (u < cum) {
                pick = v;
                break;
            }
        }
        if (pick == V) pick = last_positive;
        const auto id = static_cast<TokenId>(pick);
        out.tokens.push_back(id);
        out.logprobs.push_back(s.logp[pick]);
        if (id == eos) break;
        tracker.push(id);
    }
    out.truncated = out.tokens.back() != eos;
    return out;
}

std::vector<double> logprob_trace(const PolicyParams& params, const Task& task,
                                  std::span<const TokenId> tokens, double temperature,
                                  std::optional<double> top_p, bool greedy) {
    const std::size_t V = params.vocab_size();
    Scratch s(V);
    ContextTracker tracker(params, task);
    std::vector<double> out;
    out.reserve(tokens.size());
    for (auto t : tokens) {
        if (!params.vocab.contains(t)) throw UnknownToken("id " + std::to_string(t));
        accumulate_logits(params, tracker.keys(), s.logits);
        distribution(s.logits, temperature, top_p, greedy, s.probs, s.logp, s.order);
        out.push_back(s.logp[static_cast<std::size_t>(t)]);
        tracker.push(t);
    }
    return out;
}

double entropy_sum(const PolicyParams& params, const Task& task, std::span<const TokenId> tokens,
                   double temperature) {
    const std::size_t V = params.vocab_size();
    Scratch s(V);
    ContextTracker tracker(params, task);
    double total = 0.0;
    for (auto t : tokens) {
        if (!params.vocab.contains(t)) throw UnknownToken("id " + std::to_string(t));
        accumulate_logits(params, tracker.keys(), s.logits);
        distribution(s.logits, temperature, std::nullopt, false, s.probs, s.logp, s.order);
        double h = 0.0;
        for (std::size_t v = 0; v < V; ++v)
            if (s.probs[v] > 0.0) h -= s.probs[v] * s.logp[v];
        total += h;
        tracker.push(t);
    }
    return total;
}

double entropy_tau(const PolicyParams& params, const Task& task, const Rollout& rollout,
                   double temperature) {
    if (rollout.length() == 0) throw EmptyRollout("task '" + task.id + "'");
    return entropy_sum(params, task, rollout.tokens, temperature) / static_cast<double>(rollout.length());
}

// ---------------------------------------------------------------- gradients

std::vector<double>& SparseGrad::row(const ContextKey& key) {
    auto [it, inserted] = rows_.try_emplace(key);
    if (inserted) it->second.assign(vocab_size_, 0.0);
    return it->second;
}

const double* SparseGrad::find_row(const ContextKey& key) const {
    auto it = rows_.find(key);
    return it == rows_.end() ? nullptr : it->second.data();
}

void SparseGrad::add(const SparseGrad& other, double s) {
    for (const auto& [key, r] : other.rows_) {
        auto& dst = row(key);
        for (std::size_t v = 0; v < vocab_size_; ++v) dst[v] += s * r[v];
    }
}

void SparseGrad::scale(double s) {
    for (auto& [key, r] : rows_)
        for (double& x : r) x *= s;
}

double SparseGrad::norm() const {
    // Sorted accumulation keeps the value independent of hash-map layout.
    std::vector<double> sq;
    sq.reserve(rows_.size());
    for (const auto& [key, r] : rows_) {
        double acc = 0.0;
        for (double x : r) acc += x * x;
        sq.push_back(acc);
    }
    std::sort(sq.begin(), sq.end());
    return std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0));
}

void SparseGrad::apply_to(PolicyParams& params, double lr) const {
    for (const auto& [key, r] : rows_) {
        auto& dst = params.row(key);
        for (std::size_t v = 0; v < vocab_size_; ++v) dst[v] += lr * r[v];
    }
}

void accumulate_grad_logprob(const PolicyParams& params, const Task& task,
                             std::span<const TokenId> tokens, double temperature, double scale,
                             SparseGrad& out) {
    if (!(temperature > 0.0)) throw InvalidConfig("temperature must be > 0");
    const std::size_t V = params.vocab_size();
    Scratch s(V);
    ContextTracker tracker(params, task);
    const double c = scale / temperature;
    for (auto t : tokens) {
        if (!params.vocab.contains(t)) throw UnknownToken("id " + std::to_string(t));
        accumulate_logits(params, tracker.keys(), s.logits);
        distribution(s.logits, temperature, std::nullopt, false, s.probs, s.logp, s.order);
        for (const auto& key : tracker.keys()) {
            auto& g = out.row(key);
            for (std::size_t w = 0; w < V; ++w) g[w] -= c * s.probs[w];
            g[static_cast<std::size_t>(t)] += c;
        }
        tracker.push(t);
    }
}

SparseGrad grad_logprob(const PolicyParams& params, const Task& task,
                        std::span<const TokenId> tokens, double temperature) {
    SparseGrad g(params.vocab_size());
    accumulate_grad_logprob(params, task, tokens, temperature, 1.0, g);
    return g;
}

// ---------------------------------------------------------------- checkpoints

std::string to_checkpoint_json(const PolicyParams& params) {
    std::vector<std::pair<std::string, const std::vector<double>*>> entries;
    entries.reserve(params.table.size());
    for (const auto& [key, r] : params.table) entries.emplace_back(key.to_string(), &r);
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    json j;
    j["format"] = "stagerl.policy";
    j["version"] = 1;
    j["param_version"] = params.version;
    j["vocab"] = params.vocab.tokens();
    j["context_order"] = params.context_order;
    j["features"] = params.features.names();
    json arr = json::array();
    for (const auto& [k, r] : entries) arr.push_back(json::array({k, *r}));
    j["entries"] = std::move(arr);
    return j.dump() + "\n";
}

PolicyParams from_checkpoint_json(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(source, 0, e.what());
    }
    try {
        if (j.at("version").get<int>() != 1) throw ParseError(source, 0, "unsupported checkpoint version");
        PolicyParams p(Vocab(j.at("vocab").get<std::vector<std::string>>()), j.at("context_order").get<int>(),
                       FeatureSet::from_names(j.value("features", std::vector<std::string>{"prompt"})));
        p.version = j.value("param_version", std::uint64_t{0});
        for (const auto& e : j.at("entries")) {
            auto key = ContextKey::parse(e.at(0).get<std::string>());
            if (key.order != p.context_order) throw ParseError(source, 0, "key order mismatch");
            auto row = e.at(1).get<std::vector<double>>();
            if (row.size() != p.vocab_size()) throw ParseError(source, 0, "row length != |vocab|");
            p.table.emplace(key, std::move(row));
        }
        return p;
    } catch (const json::exception& e) {
        throw ParseError(source, 0, e.what());
    } catch (const InvalidConfig& e) {
        throw ParseError(source, 0, e.what());
    }
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
    io::write_file_atomic(path, to_checkpoint_json(params));
}

PolicyParams load_checkpoint(const std::string& path) {
    return from_checkpoint_json(io::read_file(path), path);
}

}  // namespace stagerl
