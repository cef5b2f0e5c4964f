#pragma once

#include <cstdint>
#include <vector>

#include "stagerl/curriculum.hpp"
#include "stagerl/environment.hpp"
#include "stagerl/evaluate.hpp"
#include "stagerl/policy.hpp"
#include "stagerl/sft.hpp"

namespace stagerl {

/// The reference desk-scale setup behind the golden runs: held-out sets,
/// SFT data and schedule, one RL task set per stage, and the pipeline
/// settings. Every field is a deterministic function of the seed.
struct DeskSuite {
    std::uint64_t seed = 0;
    std::vector<Task> math_eval;
    std::vector<Task> code_eval;
    /// MATH then CODE; each is decontaminated against its own held-out set.
    std::vector<SftDatasetSpec> sft_specs;
    /// Mostly VERBOSE traces, so stage 1 has something to compress.
    std::vector<SftExample> sft_data;
    SftConfig sft{};
    int context_order = 3;
    FeatureSet features{};
    /// Six stages shaped like default_pipeline() with desk step counts.
    std::vector<StageConfig> plan;
    /// Stage k trains on stage_tasks[k]; sets never contain a held-out prompt.
    std::vector<std::vector<Task>> stage_tasks;
    PipelineConfig pipeline{};

    /// Untrained policy with the suite's features.
    PolicyParams initial_policy() const;
};

/// MATH operands are drawn from 0..5, which keeps the arithmetic facts a
/// 200-prompt stage touches mostly shared with the SFT data.
GeneratorSpec desk_math_spec(std::uint64_t seed, int count, const char* id_prefix);
GeneratorSpec desk_code_spec(std::uint64_t seed, int count, const char* id_prefix);

DeskSuite make_desk_suite(std::uint64_t seed = 1);

/// Training set for `stage` keyed by (suite seed, stage id, domain), disjoint
/// from the suite's held-out prompts. Plans other than the suite's own use
/// this to get desk data for their stages.
std::vector<Task> desk_stage_tasks(const DeskSuite& suite, const StageConfig& stage);

/// One epoch of the suite's SFT from initial_policy(); deterministic.
PolicyParams desk_sft_checkpoint(const DeskSuite& suite);

/// The suite's plan and datasets restricted to stage indices [first, last).
struct PlanSlice {
    std::vector<StageConfig> stages;
    std::vector<std::vector<Task>> datasets;
};
PlanSlice desk_slice(const DeskSuite& suite, std::size_t first, std::size_t last);

}  // namespace stagerl
