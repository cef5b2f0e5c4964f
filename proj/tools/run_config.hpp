#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stagerl/curriculum.hpp"
#include "stagerl/desk.hpp"
#include "stagerl/sft.hpp"

namespace stagerl::cli {

inline constexpr const char* kRunSchema = "stagerl.run/1";

/// A validated run configuration with every default filled in.
///
/// `"preset": "desk"` starts from make_desk_suite(seed); the explicit
/// sections (policy, sft, rl, eval, plan, paths) then override field by
/// field. Without a preset the SFT data specs and RL task file must be
/// given explicitly.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string source;
    std::optional<DeskSuite> desk;

    int context_order = 3;
    FeatureSet features{};
    std::vector<SftDatasetSpec> sft_specs;
    SftConfig sft{};
    std::vector<StageConfig> plan;
    PipelineConfig pipeline{};
    /// Held-out tasks across domains; also the decontamination reference.
    std::vector<Task> eval_tasks;
    EvalConfig eval{};
    std::vector<int> ks;
    int reps = 100;
    /// RL tasks from paths.tasks; each stage takes those of its domain.
    std::vector<Task> rl_tasks;
    std::string out_dir;

    PolicyParams fresh_policy() const;
    /// Every spec decontaminated against the held-out tasks of its domains.
    std::vector<SftExample> build_sft_data() const;
    std::vector<std::vector<Task>> datasets_for(const std::vector<StageConfig>& stages) const;
};

/// Throws ParseError (with the file name) for malformed or unknown fields
/// and for paths that do not resolve.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);

GeneratorSpec generator_from_json(const nlohmann::json& j);
nlohmann::ordered_json generator_to_json(const GeneratorSpec& g);

}  // namespace stagerl::cli
