#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stagerl/evalkit.hpp"
#include "stagerl/policy.hpp"
#include "stagerl/task.hpp"

namespace stagerl {

/// Sampling settings for scoring a checkpoint on a task set.
struct EvalConfig {
    int samples = 16;
    double temperature = 0.6;
    std::optional<double> top_p = 0.95;
    int max_tokens = 256;
    std::uint64_t seed = 0;
};

/// samples x tasks verifier outcomes; sample s of task p uses seed stream
/// (seed, 0, p, s), so results are independent of evaluation order.
OutcomeMatrix sample_outcomes(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg);

/// Mean pass@1 over all samples, in percentage points.
double eval_accuracy(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg);

}  // namespace stagerl
