#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stagerl/errors.hpp"
#include "stagerl/evaluate.hpp"
#include "stagerl/grpo.hpp"
#include "stagerl/policy.hpp"
#include "stagerl/task.hpp"
#include "stagerl/verifier.hpp"

namespace stagerl {

struct EarlyStop {
    enum class Kind : std::uint8_t { None, Plateau };
    Kind kind = Kind::None;
    /// Steps per window of mean train reward.
    int window = 20;
    /// Stop once the latest window beats the one before by less than this.
    double epsilon = 0.01;

    bool operator==(const EarlyStop&) const = default;
};

struct DatasetFilter {
    enum class Kind : std::uint8_t { None, Difficulty, Solved };
    Kind kind = Kind::None;
    double low = 0.05;
    double high = 0.95;
    int G = 8;
    /// Solved filter only: also re-apply after every pass over the data.
    bool every_epoch = false;

    bool operator==(const DatasetFilter&) const = default;
};

struct StageConfig {
    int stage_id = 1;
    Category domain = Category::Math;
    int budget = 64;
    OverlongMode overlong_mode = OverlongMode::Filter;
    int max_steps = 50;
    EarlyStop early_stop{};
    DatasetFilter dataset_filter{};
    /// Fixed sampling temperature; tuned on the incoming checkpoint when empty.
    std::optional<double> temperature;
    /// Per-stage override of the pipeline learning rate.
    std::optional<double> learning_rate;

    bool operator==(const StageConfig&) const = default;
};

/// Throws InvalidConfig when budgets shrink within a domain or ids repeat.
void validate_plan(std::span<const StageConfig> stages);

/// MATH 64 -> MATH 128 -> MATH 192 -> CODE 192 -> CODE 256 -> MATH 256.
std::vector<StageConfig> default_pipeline();

std::string plan_to_json(std::span<const StageConfig> stages);
std::vector<StageConfig> plan_from_json(const std::string& text, const std::string& source = "<plan>");

enum class RemovalReason : std::uint8_t { Kept, TooEasy, TooHard, Solved };

std::string to_string(RemovalReason r);

struct DatasetSnapshot {
    int stage_id = 0;
    std::vector<std::string> retained;
    /// Every input task in input order.
    std::vector<std::pair<std::string, RemovalReason>> reasons;

    std::string to_jsonl() const;
};

/// Per-task rewards of G rollouts at budget, seeded by (seed, 0, task, rollout).
std::vector<std::vector<double>> rollout_rewards(const PolicyParams& params, std::span<const Task> tasks, int G,
                                                 double temperature, int budget, std::uint64_t seed);

/// Keeps tasks whose solve rate lies in [low, high].
DatasetSnapshot classify_difficulty(std::span<const Task> tasks, const std::vector<std::vector<double>>& rewards,
                                    double low, double high, int stage_id = 0);
/// Removes exactly the tasks where every reward is 1.
DatasetSnapshot classify_solved(std::span<const Task> tasks, const std::vector<std::vector<double>>& rewards,
                                int stage_id = 0);

DatasetSnapshot filter_difficulty(std::span<const Task> tasks, const PolicyParams& checkpoint, int G, double low,
                                  double high, double temperature, int budget = 256, std::uint64_t seed = 0);
DatasetSnapshot filter_solved(std::span<const Task> tasks, const PolicyParams& checkpoint, int G, double temperature,
                              int budget = 256, std::uint64_t seed = 0);

std::vector<Task> retained_tasks(std::span<const Task> tasks, const DatasetSnapshot& snap);

struct PipelineConfig {
    std::uint64_t seed = 0;
    int G = 8;
    int batch_prompts = 64;
    double learning_rate = 0.5;
    double momentum = 0.0;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    /// Held-out sets per domain for start/end evaluation; a domain without
    /// one is not evaluated.
    std::map<Category, std::vector<Task>> eval_sets;
    EvalConfig eval{};
    std::vector<double> temperature_candidates{0.6, 0.8, 1.0};
    double target_entropy = 0.3;
    int probe_tasks = 16;
    ProbeConfig probe{};
    /// Temperature used by dataset filters.
    double filter_temperature = 1.0;
};

struct StageReport {
    int stage_id = 0;
    Category domain = Category::Math;
    int budget = 0;
    OverlongMode overlong_mode = OverlongMode::Filter;
    double temperature = 0.0;
    int steps_run = 0;
    bool early_stopped = false;
    std::optional<double> start_eval;
    std::optional<double> end_eval;
    std::vector<double> mean_length;
    std::vector<double> truncation_rate;
    std::vector<double> mean_reward;
    std::vector<DatasetSnapshot> snapshots;
    std::size_t dataset_size = 0;

    std::string to_json() const;
};

struct PipelineResult {
    PolicyParams params;
    std::vector<StageReport> reports;
};

/// Raised when parameters stop being finite; carries the last finite state.
class Divergence : public Error {
public:
    Divergence(PolicyParams last_good, int stage_id, std::uint64_t step)
        : Error("Divergence: non-finite parameters in stage " + std::to_string(stage_id) + " at step " +
                std::to_string(step)),
          last_good_(std::move(last_good)), stage_id_(stage_id), step_(step) {}

    const PolicyParams& last_good() const noexcept { return last_good_; }
    int stage_id() const noexcept { return stage_id_; }
    std::uint64_t step() const noexcept { return step_; }

private:
    PolicyParams last_good_;
    int stage_id_;
    std::uint64_t step_;
};

struct PipelineHooks {
    std::function<void(const TrainStepMetrics&)> on_step;
    /// Called with each stage's final checkpoint and report.
    std::function<void(const StageConfig&, const PolicyParams&, const StageReport&)> on_stage_end;
};

/// Plain training loop of one stage on an already filtered dataset.
/// Batches walk seeded per-epoch permutations of `tasks`.
StageReport run_stage(PolicyParams& params, const StageConfig& stage, std::span<const Task> tasks,
                      const PipelineConfig& cfg, const PipelineHooks& hooks = {});

/// Runs `stages[first_stage..]` in order, each starting from its
/// predecessor's final checkpoint. Stage randomness derives from
/// (cfg.seed, stage_id) only, so resuming at a stage with its predecessor's
/// checkpoint reproduces an uninterrupted run.
PipelineResult run_pipeline(const PolicyParams& initial, std::span<const StageConfig> stages,
                            std::span<const std::vector<Task>> datasets, const PipelineConfig& cfg,
                            const PipelineHooks& hooks = {}, std::size_t first_stage = 0);

}  // namespace stagerl
