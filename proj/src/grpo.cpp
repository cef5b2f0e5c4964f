#include "stagerl/grpo.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"

namespace stagerl {

void RolloutGroup::validate() const {
    if (rollouts.size() < 2) throw BadArgs("group '" + task_id + "' needs at least 2 rollouts");
    if (rewards.size() != rollouts.size() || masks.size() != rollouts.size())
        throw BadArgs("group '" + task_id + "' has mismatched rollouts/rewards/masks");
}

std::string to_string(SkipReason r) {
    switch (r) {
        case SkipReason::None: return "NONE";
        case SkipReason::ZeroStd: return "ZERO_STD";
        case SkipReason::TooFewUnmasked: return "TOO_FEW_UNMASKED";
    }
    return "?";
}

AdvantageAssignment compute_advantages(std::span<const double> rewards, const std::vector<bool>& masks) {
    if (masks.size() != rewards.size()) throw BadArgs("rewards and masks differ in length");
    AdvantageAssignment out;
    out.per_rollout.assign(rewards.size(), 0.0);
    double sum = 0.0;
    double max_abs = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (masks[i]) continue;
        sum += rewards[i];
        max_abs = std::max(max_abs, std::abs(rewards[i]));
        ++n;
    }
    if (n < 2) {
        out.group_skipped = true;
        out.skip_reason = SkipReason::TooFewUnmasked;
        return out;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        if (!masks[i]) ss += (rewards[i] - mean) * (rewards[i] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd == 0.0 || sd <= 1e-12 * max_abs) {
        out.group_skipped = true;
        out.skip_reason = SkipReason::ZeroStd;
        return out;
    }
    for (std::size_t i = 0; i < rewards.size(); ++i)
        if (!masks[i]) out.per_rollout[i] = (rewards[i] - mean) / sd;
    return out;
}

namespace {

std::size_t unmasked_tokens(const RolloutGroup& g) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.rollouts.size(); ++i)
        if (!g.masks[i]) n += g.rollouts[i].length();
    return n;
}

bool usable(const RolloutGroup& g, const AdvantageAssignment& a) {
    return !a.group_skipped && unmasked_tokens(g) > 0;
}

void check_shapes(std::size_t groups, std::size_t advs) {
    if (groups != advs) throw BadArgs("groups and advantages differ in length");
}

}  // namespace

ObjectiveResult grpo_objective(const PolicyParams& params, std::span<const Task> tasks,
                               std::span<const RolloutGroup> groups,
                               std::span<const AdvantageAssignment> advs, double temperature) {
    check_shapes(groups.size(), advs.size());
    if (tasks.size() != groups.size()) throw BadArgs("tasks and groups differ in length");
    std::size_t used = 0;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        groups[k].validate();
        if (usable(groups[k], advs[k])) ++used;
    }
    if (used == 0) throw EmptyBatch("every group was skipped");

    ObjectiveResult out;
    out.gradient = SparseGrad(params.vocab_size());
    out.groups_used = used;
    const double inv_groups = 1.0 / static_cast<double>(used);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        const auto& g = groups[k];
        if (!usable(g, advs[k])) continue;
        const double inv_len = 1.0 / static_cast<double>(unmasked_tokens(g));
        double group_value = 0.0;
        for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
            if (g.masks[i]) continue;
            const double a = advs[k].per_rollout[i];
            const auto& tokens = g.rollouts[i].tokens;
            double lp = 0.0;
            for (double x : logprob_trace(params, tasks[k], tokens, temperature)) lp += x;
            group_value += a * lp;
            if (a != 0.0)
                accumulate_grad_logprob(params, tasks[k], tokens, temperature, a * inv_len * inv_groups,
                                        out.gradient);
        }
        out.value += group_value * inv_len * inv_groups;
    }
    return out;
}

double grpo_objective_recorded(std::span<const RolloutGroup> groups, std::span<const AdvantageAssignment> advs) {
    check_shapes(groups.size(), advs.size());
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        const auto& g = groups[k];
        g.validate();
        if (!usable(g, advs[k])) continue;
        double v = 0.0;
        for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
            if (g.masks[i]) continue;
            double lp = 0.0;
            for (double x : g.rollouts[i].logprobs) lp += x;
            v += advs[k].per_rollout[i] * lp;
        }
        total += v / static_cast<double>(unmasked_tokens(g));
        ++used;
    }
    if (used == 0) throw EmptyBatch("every group was skipped");
    return total / static_cast<double>(used);
}

void RlConfig::validate() const {
    if (G < 2) throw InvalidConfig("G must be at least 2");
    if (batch_prompts < 1) throw InvalidConfig("batch_prompts must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidConfig("learning_rate must be positive");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw InvalidConfig("temperature must be >= 0");
    if (budget < 1) throw InvalidConfig("budget must be at least 1");
    optimizer_config().validate();
}

OptimizerConfig RlConfig::optimizer_config() const {
    OptimizerConfig o;
    o.kind = optimizer;
    o.learning_rate = learning_rate;
    o.momentum = momentum;
    return o;
}

std::string TrainStepMetrics::to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["stage_id"] = stage_id;
    j["mean_reward"] = mean_reward;
    j["entropy_tau"] = entropy_tau;
    j["mean_response_len"] = mean_response_len;
    j["truncation_rate"] = truncation_rate;
    j["groups_skipped"] = groups_skipped;
    j["grad_norm"] = grad_norm;
    j["temperature"] = temperature;
    j["empty_batch"] = empty_batch;
    return j.dump();
}

RlStepResult rl_step(const PolicyParams& params, std::span<const Task> batch, const RlConfig& cfg,
                     std::uint64_t step, int stage_id, Optimizer* opt) {
    cfg.validate();
    if (batch.size() != static_cast<std::size_t>(cfg.batch_prompts))
        throw BadArgs("batch has " + std::to_string(batch.size()) + " tasks, expected " +
                      std::to_string(cfg.batch_prompts));
    if (cfg.needs_state() && opt == nullptr) throw InvalidConfig(to_string(cfg.optimizer) + " needs optimizer state");

    RlStepResult out;
    auto& m = out.metrics;
    m.step = step;
    m.stage_id = stage_id;
    m.temperature = cfg.temperature;

    const auto G = static_cast<std::size_t>(cfg.G);
    double reward_sum = 0.0;
    double entropy_total = 0.0;
    std::size_t token_total = 0;
    std::size_t truncated = 0;

    out.groups.reserve(batch.size());
    out.advantages.reserve(batch.size());
    for (std::size_t p = 0; p < batch.size(); ++p) {
        RolloutGroup g;
        g.task_id = batch[p].id;
        for (std::size_t i = 0; i < G; ++i) {
            SamplingConfig sc;
            sc.temperature = cfg.temperature;
            sc.max_tokens = cfg.budget;
            sc.seed_stream = {cfg.seed, step, p, i};
            Rollout r = sample(params, batch[p], sc);
            const RewardScore score = verify(r, batch[p], params.vocab);
            const RewardAssignment ra = reward_assign(r, score, cfg.overlong_mode);
            reward_sum += score.value;
            entropy_total += entropy_sum(params, batch[p], r.tokens, cfg.temperature);
            token_total += r.length();
            truncated += r.truncated ? 1 : 0;
            g.rewards.push_back(ra.reward.value_or(0.0));
            g.masks.push_back(ra.masked);
            g.rollouts.push_back(std::move(r));
        }
        auto adv = compute_advantages(g.rewards, g.masks);
        if (adv.group_skipped || unmasked_tokens(g) == 0) ++m.groups_skipped;
        out.groups.push_back(std::move(g));
        out.advantages.push_back(std::move(adv));
    }
    const double n_rollouts = static_cast<double>(batch.size() * G);
    m.mean_reward = reward_sum / n_rollouts;
    m.mean_response_len = static_cast<double>(token_total) / n_rollouts;
    m.truncation_rate = static_cast<double>(truncated) / n_rollouts;
    m.entropy_tau = token_total > 0 ? entropy_total / static_cast<double>(token_total) : 0.0;

    out.params = params;
    try {
        const ObjectiveResult obj = grpo_objective(params, batch, out.groups, out.advantages, cfg.temperature);
        m.grad_norm = obj.gradient.norm();
        if (opt) opt->step(out.params, obj.gradient);
        else obj.gradient.apply_to(out.params, cfg.learning_rate);
        ++out.params.version;
    } catch (const EmptyBatch&) {
        m.empty_batch = true;
    }
    return out;
}

double probe_entropy(const PolicyParams& params, std::span<const Task> probe_tasks, double temperature,
                     const ProbeConfig& probe) {
    if (probe_tasks.empty()) throw BadArgs("empty probe set");
    double h = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < probe_tasks.size(); ++p) {
        for (int i = 0; i < probe.rollouts_per_task; ++i) {
            SamplingConfig sc;
            sc.temperature = temperature;
            sc.max_tokens = probe.max_tokens;
            sc.seed_stream = {probe.seed, 0, p, static_cast<std::uint64_t>(i)};
            const Rollout r = sample(params, probe_tasks[p], sc);
            h += entropy_sum(params, probe_tasks[p], r.tokens, temperature);
            n += r.length();
        }
    }
    return n > 0 ? h / static_cast<double>(n) : 0.0;
}

double tune_temperature(const PolicyParams& params, std::span<const Task> probe_tasks,
                        std::span<const double> candidates, double target, const ProbeConfig& probe) {
    if (candidates.empty()) throw BadArgs("no temperature candidates");
    std::vector<double> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() == 1) return sorted.front();
    double best = sorted.front();
    double best_gap = std::abs(probe_entropy(params, probe_tasks, best, probe) - target);
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        const double gap = std::abs(probe_entropy(params, probe_tasks, sorted[i], probe) - target);
        // equal up to summation noise counts as a tie
        if (gap < best_gap - 1e-12) {
            best = sorted[i];
            best_gap = gap;
        }
    }
    return best;
}

}  // namespace stagerl
