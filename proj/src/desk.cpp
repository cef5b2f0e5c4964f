#include "stagerl/desk.hpp"

#include <set>

#include "stagerl/rng.hpp"

namespace stagerl {

namespace {

constexpr std::array<double, 5> kHeldOutHist{0.1, 0.1, 0.2, 0.3, 0.3};
// SFT leans harder: short prompts are cheap to learn and scarce at operands 0..5.
constexpr std::array<double, 5> kSftHist{0.05, 0.05, 0.3, 0.3, 0.3};

constexpr int kMathEval = 100;
constexpr int kCodeEval = 50;
constexpr int kStageTasks = 200;
constexpr int kSftMath = 300;
constexpr int kSftCode = 100;
constexpr double kVerboseFraction = 0.8;

std::vector<Task> disjoint_draw(GeneratorSpec spec, std::span<const Task> held_out, int want) {
    std::set<std::vector<TokenId>> seen;
    for (const auto& t : held_out) seen.insert(t.prompt_tokens);
    // Oversample so that removing held-out collisions still leaves `want`.
    spec.count = want + want / 2;
    std::vector<Task> out;
    for (auto& t : generate_tasks(spec)) {
        if (static_cast<int>(out.size()) == want) break;
        if (!seen.count(t.prompt_tokens)) out.push_back(std::move(t));
    }
    if (static_cast<int>(out.size()) < want) throw InfeasibleSpec("desk stage set collides with held-out prompts");
    return out;
}

}  // namespace

GeneratorSpec desk_math_spec(std::uint64_t seed, int count, const char* id_prefix) {
    GeneratorSpec g;
    g.seed = seed;
    g.count = count;
    g.operand_min = 0;
    g.operand_max = 5;
    g.difficulty_hist = kHeldOutHist;
    g.id_prefix = id_prefix;
    return g;
}

GeneratorSpec desk_code_spec(std::uint64_t seed, int count, const char* id_prefix) {
    GeneratorSpec g;
    g.seed = seed;
    g.count = count;
    g.category_mix = {{Category::Code, 1.0}};
    g.id_prefix = id_prefix;
    return g;
}

PolicyParams DeskSuite::initial_policy() const { return PolicyParams(desk_vocab(), context_order, features); }

DeskSuite make_desk_suite(std::uint64_t seed) {
    DeskSuite s;
    s.seed = seed;
    s.features.prompt = false;
    s.features.focus = true;
    s.features.shape = true;
    s.features.split = true;

    s.math_eval = generate_tasks(desk_math_spec(derive_seed({seed, 0x6576616cULL, 0}), kMathEval, "math-eval"));
    s.code_eval = generate_tasks(desk_code_spec(derive_seed({seed, 0x6576616cULL, 1}), kCodeEval, "code-eval"));

    SftDatasetSpec math;
    math.n_prompts = kSftMath;
    math.verbose_fraction = kVerboseFraction;
    math.seed = derive_seed({seed, 0x736674ULL, 0});
    math.source = desk_math_spec(derive_seed({seed, 0x736674ULL, 1}), kSftMath, "sft-math");
    math.source.difficulty_hist = kSftHist;
    s.sft_specs.push_back(math);
    s.sft_data = build_sft_dataset(math, s.math_eval);

    SftDatasetSpec code;
    code.n_prompts = kSftCode;
    code.verbose_fraction = kVerboseFraction;
    code.seed = derive_seed({seed, 0x736674ULL, 2});
    code.source = desk_code_spec(derive_seed({seed, 0x736674ULL, 3}), kSftCode, "sft-code");
    s.sft_specs.push_back(code);
    auto code_data = build_sft_dataset(code, s.code_eval);
    s.sft_data.insert(s.sft_data.end(), code_data.begin(), code_data.end());

    s.sft.epochs = 1;
    s.sft.learning_rate = 0.3;
    s.sft.optimizer = OptimizerKind::Adam;
    s.sft.batch_size = 16;
    s.sft.seed = seed;

    s.plan = default_pipeline();
    const int steps[6] = {150, 250, 60, 60, 60, 60};
    for (std::size_t i = 0; i < s.plan.size(); ++i) s.plan[i].max_steps = steps[i];
    // Under FILTER the train reward stays flat for the first ~60 desk steps
    // while lengths come down; a shorter window stops before compression.
    s.plan[0].early_stop.window = 50;

    for (const auto& st : s.plan) s.stage_tasks.push_back(desk_stage_tasks(s, st));

    s.pipeline.seed = seed;
    s.pipeline.G = 8;
    s.pipeline.batch_prompts = 32;
    s.pipeline.learning_rate = 0.03;
    s.pipeline.optimizer = OptimizerKind::Adam;
    s.pipeline.eval.seed = derive_seed({seed, 0x6576616cULL, 2});
    s.pipeline.eval_sets[Category::Math] = s.math_eval;
    s.pipeline.eval_sets[Category::Code] = s.code_eval;
    return s;
}

std::vector<Task> desk_stage_tasks(const DeskSuite& suite, const StageConfig& stage) {
    const std::uint64_t sd = derive_seed({suite.seed, 0x7374616765ULL, static_cast<std::uint64_t>(stage.stage_id)});
    const std::string prefix = "stage" + std::to_string(stage.stage_id);
    if (stage.domain == Category::Math)
        return disjoint_draw(desk_math_spec(sd, kStageTasks, prefix.c_str()), suite.math_eval, kStageTasks);
    return disjoint_draw(desk_code_spec(sd, kStageTasks, prefix.c_str()), suite.code_eval, kStageTasks);
}

PolicyParams desk_sft_checkpoint(const DeskSuite& suite) {
    return sft_train(suite.initial_policy(), suite.sft_data, suite.sft).params;
}

PlanSlice desk_slice(const DeskSuite& suite, std::size_t first, std::size_t last) {
    if (first > last || last > suite.plan.size()) throw InvalidConfig("desk plan slice out of range");
    PlanSlice out;
    out.stages.assign(suite.plan.begin() + static_cast<std::ptrdiff_t>(first),
                      suite.plan.begin() + static_cast<std::ptrdiff_t>(last));
    out.datasets.assign(suite.stage_tasks.begin() + static_cast<std::ptrdiff_t>(first),
                        suite.stage_tasks.begin() + static_cast<std::ptrdiff_t>(last));
    return out;
}

}  // namespace stagerl
