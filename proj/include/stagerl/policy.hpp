#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagerl/rng.hpp"
#include "stagerl/task.hpp"
#include "stagerl/vocab.hpp"

namespace stagerl {

inline constexpr int kMaxContextOrder = 8;

/// Lookup key of one logit row: task category, a digest of (a view of)
/// the prompt, and the last k generated tokens left-padded with kBos.
struct ContextKey {
    std::uint8_t category = 0;
    std::uint64_t prompt_hash = 0;
    std::uint8_t order = 0;
    std::array<TokenId, kMaxContextOrder> recent{};

    bool operator==(const ContextKey& o) const noexcept {
        if (category != o.category || prompt_hash != o.prompt_hash || order != o.order) return false;
        for (int i = 0; i < order; ++i)
            if (recent[static_cast<std::size_t>(i)] != o.recent[static_cast<std::size_t>(i)]) return false;
        return true;
    }

    /// Canonical text form, e.g. `c0:h00000000deadbeef:r^,^,7`.
    std::string to_string() const;
    static ContextKey parse(const std::string& text);
};

struct ContextKeyHash {
    std::size_t operator()(const ContextKey& k) const noexcept {
        std::uint64_t h = mix64(k.prompt_hash ^ (std::uint64_t{k.category} << 56) ^ k.order);
        for (int i = 0; i < k.order; ++i)
            h = mix64(h ^ static_cast<std::uint32_t>(k.recent[static_cast<std::size_t>(i)]));
        return static_cast<std::size_t>(h);
    }
};

/// Which keys feed a position's logits. Logits are the sum of the rows of
/// every enabled tier (a log-linear model over tabular features).
///  - prompt: digest of the whole prompt (pure per-prompt table)
///  - focus:  digest of the prompt element the trace is currently working
///            on, the value it last wrote and the offset inside the step
///  - shape:  phase and offset with digits in the window collapsed to one
///            class, plus a window-free row for the same phase and offset;
///            shared by every prompt of a category
///  - split:  MATH steps only; while writing digit j of a result, digit j
///            of the running value with the pending operator and operand
struct FeatureSet {
    bool prompt = true;
    bool focus = false;
    bool shape = false;
    bool split = false;

    bool operator==(const FeatureSet&) const = default;
    std::vector<std::string> names() const;
    static FeatureSet from_names(const std::vector<std::string>& names);
};

using LogitTable = std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash>;

/// Tabular log-linear autoregressive policy. Absent keys are all-zero rows.
struct PolicyParams {
    Vocab vocab;
    int context_order = 2;
    FeatureSet features{};
    std::uint64_t version = 0;
    LogitTable table;

    PolicyParams() = default;
    PolicyParams(Vocab v, int order, FeatureSet f = {});

    std::size_t vocab_size() const noexcept { return vocab.size(); }
    std::size_t num_parameters() const noexcept { return table.size() * vocab.size(); }

    /// Pointer to the row for `key`, or nullptr when absent.
    const double* find_row(const ContextKey& key) const;
    /// Row for `key`, inserted as zeros when absent.
    std::vector<double>& row(const ContextKey& key);

    bool all_finite() const;
};

/// Incrementally derives the context keys of each generation position for
/// one (policy, task) pair. Deterministic in (task, generated prefix).
class ContextTracker {
public:
    ContextTracker(const PolicyParams& params, const Task& task);

    void push(TokenId t);
    std::span<const ContextKey> keys() const noexcept { return {keys_.data(), n_keys_}; }

private:
    void rebuild();

    const PolicyParams* params_;
    const Task* task_;
    std::uint64_t prompt_digest_ = 0;
    // parsed prompt: operands[i], ops[i] joins operands[i-1] and operands[i]
    std::vector<TokenId> operands_;
    std::vector<TokenId> ops_;
    bool parsed_ = false;

    TokenId semi_ = kBos;
    std::array<TokenId, kMaxContextOrder> window_{};
    int steps_ = 0;       // separators emitted so far
    int offset_ = 0;      // tokens since the last separator
    std::array<TokenId, 2> cur_head_{kBos, kBos};
    std::array<TokenId, 2> prev_head_{kBos, kBos};
    std::array<TokenId, 2> answer_head_{kBos, kBos};

    std::array<ContextKey, 5> keys_{};
    std::size_t n_keys_ = 0;
};

/// Sampling controls. top_p is for evaluation; training samples use the
/// plain temperature distribution.
struct SamplingConfig {
    double temperature = 1.0;
    std::optional<double> top_p;
    int max_tokens = 64;
    SeedStream seed_stream{};
    /// Forces argmax decoding (lowest id wins ties). Implied when
    /// temperature is at or below kGreedyTemperature.
    bool greedy = false;

    void validate() const;
};

inline constexpr double kGreedyTemperature = 1e-6;

struct Rollout {
    std::vector<TokenId> tokens;
    std::vector<double> logprobs;
    bool truncated = false;

    std::size_t length() const noexcept { return tokens.size(); }
    bool operator==(const Rollout&) const = default;
};

/// Next-token distribution at one position. `logits` are raw row sums.
/// Writes probabilities into `probs`; returns nothing else so every caller
/// derives log-probabilities the same way.
void next_token_distribution(std::span<const double> logits, double temperature,
                             std::optional<double> top_p, bool greedy, std::span<double> probs);

/// Sum of the rows addressed by `keys`.
void accumulate_logits(const PolicyParams& params, std::span<const ContextKey> keys,
                       std::span<double> logits);

Rollout sample(const PolicyParams& params, const Task& task, const SamplingConfig& cfg);

/// Teacher-forced log-probabilities of `tokens` under the same
/// distribution `sample` would use.
std::vector<double> logprob_trace(const PolicyParams& params, const Task& task,
                                  std::span<const TokenId> tokens, double temperature,
                                  std::optional<double> top_p = std::nullopt, bool greedy = false);

/// Mean per-position Shannon entropy (nats) of softmax(logits / temperature)
/// along the rollout.
double entropy_tau(const PolicyParams& params, const Task& task, const Rollout& rollout,
                   double temperature);

/// Sum of per-position entropies; pairs with rollout lengths for
/// length-weighted batch means.
double entropy_sum(const PolicyParams& params, const Task& task,
                   std::span<const TokenId> tokens, double temperature);

/// Sparse gradient over touched rows.
class SparseGrad {
public:
    explicit SparseGrad(std::size_t vocab_size = 0) : vocab_size_(vocab_size) {}

    std::vector<double>& row(const ContextKey& key);
    const double* find_row(const ContextKey& key) const;
    const LogitTable& rows() const noexcept { return rows_; }
    std::size_t vocab_size() const noexcept { return vocab_size_; }

    void add(const SparseGrad& other, double scale = 1.0);
    void scale(double s);
    double norm() const;
    /// params += lr * grad
    void apply_to(PolicyParams& params, double lr) const;

private:
    std::size_t vocab_size_;
    LogitTable rows_;
};

/// Exact gradient of sum_t log pi(token_t | context_t) with respect to the
/// table, accumulated into `out` with weight `scale`.
void accumulate_grad_logprob(const PolicyParams& params, const Task& task,
                             std::span<const TokenId> tokens, double temperature, double scale,
                             SparseGrad& out);

SparseGrad grad_logprob(const PolicyParams& params, const Task& task,
                        std::span<const TokenId> tokens, double temperature);

/// Versioned JSON checkpoint with entries sorted by key text, so equal
/// parameters always serialize to identical bytes.
std::string to_checkpoint_json(const PolicyParams& params);
PolicyParams from_checkpoint_json(const std::string& text, const std::string& source = "<checkpoint>");
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace stagerl
