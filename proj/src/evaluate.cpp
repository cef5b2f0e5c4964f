#include "stagerl/evaluate.hpp"

#include "stagerl/errors.hpp"
#include "stagerl/verifier.hpp"

namespace stagerl {

OutcomeMatrix sample_outcomes(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg) {
    if (cfg.samples < 1) throw InvalidConfig("eval samples must be at least 1");
    std::vector<std::string> ids;
    ids.reserve(tasks.size());
    for (const auto& t : tasks) ids.push_back(t.id);
    OutcomeMatrix m(std::move(ids), static_cast<std::size_t>(cfg.samples), "checkpoint");
    for (std::size_t p = 0; p < tasks.size(); ++p) {
        for (int s = 0; s < cfg.samples; ++s) {
            SamplingConfig sc;
            sc.temperature = cfg.temperature;
            sc.top_p = cfg.top_p;
            sc.max_tokens = cfg.max_tokens;
            sc.seed_stream = {cfg.seed, 0, p, static_cast<std::uint64_t>(s)};
            const Rollout r = sample(params, tasks[p], sc);
            m.set(p, static_cast<std::size_t>(s), verify(r, tasks[p], params.vocab).value == 1.0);
        }
    }
    return m;
}

double eval_accuracy(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg) {
    if (tasks.empty()) throw BadArgs("empty evaluation set");
    return 100.0 * sample_outcomes(params, tasks, cfg).accuracy();
}

}  // namespace stagerl
