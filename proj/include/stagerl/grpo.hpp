#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stagerl/optim.hpp"
#include "stagerl/policy.hpp"
#include "stagerl/task.hpp"
#include "stagerl/verifier.hpp"

namespace stagerl {

/// G rollouts of one prompt with their assigned rewards. Masked entries
/// carry no reward (their slot in `rewards` is ignored).
struct RolloutGroup {
    std::string task_id;
    std::vector<Rollout> rollouts;
    std::vector<double> rewards;
    std::vector<bool> masks;

    void validate() const;
};

enum class SkipReason : std::uint8_t { None, ZeroStd, TooFewUnmasked };

std::string to_string(SkipReason r);

struct AdvantageAssignment {
    std::vector<double> per_rollout;
    bool group_skipped = false;
    SkipReason skip_reason = SkipReason::None;
};

/// Group-standardized advantages over the unmasked entries, using the
/// population standard deviation. Degenerate groups are skipped with all
/// advantages zero.
AdvantageAssignment compute_advantages(std::span<const double> rewards, const std::vector<bool>& masks);

struct ObjectiveResult {
    double value = 0.0;
    SparseGrad gradient;
    std::size_t groups_used = 0;
};

/// Token-level objective: per group (sum_i A_i sum_t log pi(o_it)) / sum_i |o_i|
/// over unmasked rollouts, averaged over non-skipped groups. Log-probs are
/// re-scored under `params`, so this is also the function finite
/// differences perturb. `tasks[k]` is the prompt of `groups[k]`.
/// Throws EmptyBatch when every group is skipped.
ObjectiveResult grpo_objective(const PolicyParams& params, std::span<const Task> tasks,
                               std::span<const RolloutGroup> groups,
                               std::span<const AdvantageAssignment> advs, double temperature);

/// Same value from the log-probs recorded at sampling time.
double grpo_objective_recorded(std::span<const RolloutGroup> groups, std::span<const AdvantageAssignment> advs);

struct RlConfig {
    int G = 8;
    int batch_prompts = 64;
    double learning_rate = 0.5;
    double temperature = 1.0;
    OverlongMode overlong_mode = OverlongMode::Filter;
    int budget = 64;
    std::uint64_t seed = 0;
    /// Heavy-ball coefficient for SGD; 0 is plain SGD.
    double momentum = 0.0;
    OptimizerKind optimizer = OptimizerKind::Sgd;

    OptimizerConfig optimizer_config() const;
    /// Plain SGD is the only stateless update.
    bool needs_state() const noexcept { return optimizer != OptimizerKind::Sgd || momentum > 0.0; }
    void validate() const;
};

struct TrainStepMetrics {
    std::uint64_t step = 0;
    int stage_id = 0;
    double mean_reward = 0.0;
    double entropy_tau = 0.0;
    double mean_response_len = 0.0;
    double truncation_rate = 0.0;
    int groups_skipped = 0;
    double grad_norm = 0.0;
    double temperature = 0.0;
    bool empty_batch = false;

    std::string to_json_line() const;
};

struct RlStepResult {
    PolicyParams params;
    TrainStepMetrics metrics;
    std::vector<RolloutGroup> groups;
    std::vector<AdvantageAssignment> advantages;
};

/// One strict on-policy update: G rollouts per task from `params`, verify,
/// assign rewards, standardize, then a single ascent step. A batch with no
/// usable group leaves the parameters unchanged and flags empty_batch.
/// Random streams are keyed by (cfg.seed, step, prompt index, rollout index).
/// Stateful optimizers need `opt`, built from cfg.optimizer_config().
RlStepResult rl_step(const PolicyParams& params, std::span<const Task> batch, const RlConfig& cfg,
                     std::uint64_t step = 0, int stage_id = 0, Optimizer* opt = nullptr);

struct ProbeConfig {
    int rollouts_per_task = 4;
    int max_tokens = 64;
    std::uint64_t seed = 0;
};

/// Token-weighted mean entropy of the temperature-scaled policy over probe
/// samples drawn at `temperature`.
double probe_entropy(const PolicyParams& params, std::span<const Task> probe_tasks, double temperature,
                     const ProbeConfig& probe = {});

/// Candidate whose probe entropy is closest to `target`; ties go to the
/// lower temperature.
double tune_temperature(const PolicyParams& params, std::span<const Task> probe_tasks,
                        std::span<const double> candidates, double target = 0.3, const ProbeConfig& probe = {});

}  // namespace stagerl
