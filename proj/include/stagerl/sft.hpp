#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stagerl/environment.hpp"
#include "stagerl/evaluate.hpp"
#include "stagerl/optim.hpp"
#include "stagerl/policy.hpp"

namespace stagerl {

/// x unique prompts times y teacher traces per prompt.
struct SftDatasetSpec {
    int n_prompts = 1;
    int responses_per_prompt = 1;
    /// Share of examples written in VERBOSE style.
    double verbose_fraction = 0.0;
    std::uint64_t seed = 0;
    GeneratorSpec source{};

    void validate() const;
};

struct SftExample {
    std::string task_id;
    Task task;
    std::vector<TokenId> target_tokens;
    TraceStyle style = TraceStyle::Concise;
    double weight = 1.0;

    bool operator==(const SftExample&) const = default;
};

/// Deterministic in (spec, eval_tasks). Prompts that occur in the eval set,
/// or share an n-gram with it, are replaced by fresh draws. Throws
/// InfeasibleSpec when x clean prompts cannot be found.
std::vector<SftExample> build_sft_dataset(const SftDatasetSpec& spec, std::span<const Task> eval_tasks = {},
                                          int ngram = 9);

std::string sft_example_to_json_line(const SftExample& ex);
SftExample sft_example_from_json_line(const std::string& line, const std::string& source = "<sft>",
                                      std::size_t lineno = 0);

struct SftConfig {
    int epochs = 1;
    double learning_rate = 1.0;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    /// Examples per update; gradients are normalized by the minibatch token count.
    int batch_size = 16;
    std::uint64_t seed = 0;
    /// Stop once eval improves by less than plateau_points over plateau_window
    /// epochs. Disabled when empty.
    std::optional<double> plateau_points;
    int plateau_window = 2;

    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    /// Mean per-token negative log-likelihood of the training targets after the epoch.
    double train_cross_entropy = 0.0;
    /// avg@n pass@1 on the held-out set, in points; empty without an eval set.
    std::optional<double> eval_pass1;
    std::string checkpoint_path;

    std::string to_json() const;
};

struct SftResult {
    PolicyParams params;
    std::vector<EpochReport> reports;
    std::vector<PolicyParams> checkpoints;
};

/// Mean per-token negative log-likelihood at temperature 1.
double sft_cross_entropy(const PolicyParams& params, std::span<const SftExample> dataset);

/// Exact gradient of sum_examples weight * sum_t log pi(target_t) at temperature 1.
SparseGrad sft_gradient(const PolicyParams& params, std::span<const SftExample> examples);

/// Shuffled minibatch ascent on the teacher-forced log-likelihood. When
/// `out_dir` is set, epoch k is saved as `<out_dir>/epoch_<k>.json`.
SftResult sft_train(const PolicyParams& init, std::span<const SftExample> dataset, const SftConfig& cfg,
                    std::span<const Task> eval_tasks = {}, const EvalConfig& eval = {},
                    const std::string& out_dir = {});

struct GridRow {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;  // final eval, points
    int epochs_run = 0;
    std::string error;  // non-empty when the cell failed
};

/// Trains each spec from `init` to plateau (or cfg.epochs) and reports
/// (x, y, final eval). A failing cell is recorded and the grid continues.
std::vector<GridRow> scaling_grid(const PolicyParams& init, std::span<const SftDatasetSpec> specs,
                                  const SftConfig& cfg, std::span<const Task> eval_tasks, const EvalConfig& eval);

}  // namespace stagerl
