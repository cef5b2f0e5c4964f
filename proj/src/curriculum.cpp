#include "stagerl/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stagerl/rng.hpp"

namespace stagerl {

void validate_plan(std::span<const StageConfig> stages) {
    if (stages.empty()) throw InvalidConfig("stage plan is empty");
    std::map<Category, int> last_budget;
    std::vector<int> ids;
    for (const auto& s : stages) {
        if (s.budget < 1) throw InvalidConfig("stage " + std::to_string(s.stage_id) + " has budget < 1");
        if (s.max_steps < 0) throw InvalidConfig("stage " + std::to_string(s.stage_id) + " has max_steps < 0");
        if (s.early_stop.kind == EarlyStop::Kind::Plateau && s.early_stop.window < 1)
            throw InvalidConfig("plateau window must be at least 1");
        const auto& f = s.dataset_filter;
        if (f.kind != DatasetFilter::Kind::None && f.G < 1) throw InvalidConfig("filter G must be at least 1");
        if (f.kind == DatasetFilter::Kind::Difficulty && !(f.low >= 0.0 && f.low < f.high && f.high <= 1.0))
            throw InvalidConfig("difficulty filter needs 0 <= low < high <= 1");
        if (s.temperature && !(*s.temperature > 0.0)) throw InvalidConfig("stage temperature must be positive");
        if (auto it = last_budget.find(s.domain); it != last_budget.end() && s.budget < it->second)
            throw InvalidConfig("budgets must not shrink within a domain");
        last_budget[s.domain] = s.budget;
        if (std::find(ids.begin(), ids.end(), s.stage_id) != ids.end())
            throw InvalidConfig("duplicate stage id " + std::to_string(s.stage_id));
        ids.push_back(s.stage_id);
    }
}

std::vector<StageConfig> default_pipeline() {
    std::vector<StageConfig> p(6);
    const Category domains[6] = {Category::Math, Category::Math, Category::Math,
                                 Category::Code, Category::Code, Category::Math};
    const int budgets[6] = {64, 128, 192, 192, 256, 256};
    for (int i = 0; i < 6; ++i) {
        auto& s = p[static_cast<std::size_t>(i)];
        s.stage_id = i + 1;
        s.domain = domains[i];
        s.budget = budgets[i];
        s.overlong_mode = OverlongMode::Filter;
    }
    p[0].early_stop = {EarlyStop::Kind::Plateau, 20, 0.01};
    p[2].dataset_filter.kind = DatasetFilter::Kind::Difficulty;
    p[4].dataset_filter.kind = DatasetFilter::Kind::Solved;
    p[4].dataset_filter.every_epoch = true;
    p[5].dataset_filter.kind = DatasetFilter::Kind::Solved;
    p[5].overlong_mode = OverlongMode::Penalty;
    return p;
}

namespace {

std::string filter_kind_name(DatasetFilter::Kind k) {
    switch (k) {
        case DatasetFilter::Kind::None: return "NONE";
        case DatasetFilter::Kind::Difficulty: return "DIFFICULTY";
        case DatasetFilter::Kind::Solved: return "SOLVED";
    }
    return "?";
}

DatasetFilter::Kind filter_kind_from(const std::string& s) {
    if (s == "NONE") return DatasetFilter::Kind::None;
    if (s == "DIFFICULTY") return DatasetFilter::Kind::Difficulty;
    if (s == "SOLVED") return DatasetFilter::Kind::Solved;
    throw InvalidConfig("unknown dataset filter '" + s + "'");
}

}  // namespace

std::string plan_to_json(std::span<const StageConfig> stages) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : stages) {
        nlohmann::ordered_json j;
        j["stage_id"] = s.stage_id;
        j["domain"] = to_string(s.domain);
        j["budget"] = s.budget;
        j["overlong_mode"] = to_string(s.overlong_mode);
        j["max_steps"] = s.max_steps;
        if (s.early_stop.kind == EarlyStop::Kind::Plateau)
            j["early_stop"] = {{"kind", "PLATEAU"}, {"window", s.early_stop.window}, {"epsilon", s.early_stop.epsilon}};
        else
            j["early_stop"] = {{"kind", "NONE"}};
        const auto& f = s.dataset_filter;
        j["dataset_filter"] = {{"kind", filter_kind_name(f.kind)}, {"low", f.low},    {"high", f.high},
                               {"G", f.G},                        {"every_epoch", f.every_epoch}};
        j["temperature"] = s.temperature ? nlohmann::ordered_json(*s.temperature) : nlohmann::ordered_json(nullptr);
        j["learning_rate"] =
            s.learning_rate ? nlohmann::ordered_json(*s.learning_rate) : nlohmann::ordered_json(nullptr);
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

std::vector<StageConfig> plan_from_json(const std::string& text, const std::string& source) {
    std::vector<StageConfig> out;
    try {
        const auto arr = nlohmann::json::parse(text);
        if (!arr.is_array()) throw ParseError(source, 0, "stage plan must be a JSON list");
        for (const auto& j : arr) {
            StageConfig s;
            s.stage_id = j.at("stage_id").get<int>();
            s.domain = category_from_string(j.at("domain").get<std::string>());
            s.budget = j.at("budget").get<int>();
            s.overlong_mode = overlong_mode_from_string(j.value("overlong_mode", std::string("FILTER")));
            s.max_steps = j.value("max_steps", s.max_steps);
            if (j.contains("early_stop")) {
                const auto& e = j["early_stop"];
                const auto kind = e.value("kind", std::string("NONE"));
                if (kind == "PLATEAU") {
                    s.early_stop.kind = EarlyStop::Kind::Plateau;
                    s.early_stop.window = e.value("window", s.early_stop.window);
                    s.early_stop.epsilon = e.value("epsilon", s.early_stop.epsilon);
                } else if (kind != "NONE") {
                    throw InvalidConfig("unknown early_stop kind '" + kind + "'");
                }
            }
            if (j.contains("dataset_filter")) {
                const auto& f = j["dataset_filter"];
                s.dataset_filter.kind = filter_kind_from(f.value("kind", std::string("NONE")));
                s.dataset_filter.low = f.value("low", s.dataset_filter.low);
                s.dataset_filter.high = f.value("high", s.dataset_filter.high);
                s.dataset_filter.G = f.value("G", s.dataset_filter.G);
                s.dataset_filter.every_epoch = f.value("every_epoch", false);
            }
            if (j.contains("temperature") && !j["temperature"].is_null())
                s.temperature = j["temperature"].get<double>();
            if (j.contains("learning_rate") && !j["learning_rate"].is_null())
                s.learning_rate = j["learning_rate"].get<double>();
            out.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source, 0, e.what());
    } catch (const InvalidConfig& e) {
        throw ParseError(source, 0, e.what());
    }
    validate_plan(out);
    return out;
}

std::string to_string(RemovalReason r) {
    switch (r) {
        case RemovalReason::Kept: return "KEPT";
        case RemovalReason::TooEasy: return "TOO_EASY";
        case RemovalReason::TooHard: return "TOO_HARD";
        case RemovalReason::Solved: return "SOLVED";
    }
    return "?";
}

std::string DatasetSnapshot::to_jsonl() const {
    std::string out;
    for (const auto& [id, reason] : reasons) {
        nlohmann::ordered_json j;
        j["stage_id"] = stage_id;
        j["task_id"] = id;
        j["reason"] = to_string(reason);
        out += j.dump() + '\n';
    }
    return out;
}

std::vector<std::vector<double>> rollout_rewards(const PolicyParams& params, std::span<const Task> tasks, int G,
                                                 double temperature, int budget, std::uint64_t seed) {
    if (G < 1) throw BadArgs("G must be at least 1");
    std::vector<std::vector<double>> out(tasks.size());
    for (std::size_t p = 0; p < tasks.size(); ++p) {
        for (int i = 0; i < G; ++i) {
            SamplingConfig sc;
            sc.temperature = temperature;
            sc.max_tokens = budget;
            sc.seed_stream = {seed, 0, p, static_cast<std::uint64_t>(i)};
            const Rollout r = sample(params, tasks[p], sc);
            out[p].push_back(verify(r, tasks[p], params.vocab).value);
        }
    }
    return out;
}

DatasetSnapshot classify_difficulty(std::span<const Task> tasks, const std::vector<std::vector<double>>& rewards,
                                    double low, double high, int stage_id) {
    if (!(low >= 0.0 && low < high && high <= 1.0)) throw BadArgs("difficulty filter needs 0 <= low < high <= 1");
    if (rewards.size() != tasks.size()) throw BadArgs("one reward row per task required");
    DatasetSnapshot s;
    s.stage_id = stage_id;
    for (std::size_t p = 0; p < tasks.size(); ++p) {
        const auto& r = rewards[p];
        if (r.empty()) throw BadArgs("task '" + tasks[p].id + "' has no rewards");
        const double rate = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
        RemovalReason why = RemovalReason::Kept;
        if (rate > high) why = RemovalReason::TooEasy;
        else if (rate < low) why = RemovalReason::TooHard;
        s.reasons.emplace_back(tasks[p].id, why);
        if (why == RemovalReason::Kept) s.retained.push_back(tasks[p].id);
    }
    return s;
}

DatasetSnapshot classify_solved(std::span<const Task> tasks, const std::vector<std::vector<double>>& rewards,
                                int stage_id) {
    if (rewards.size() != tasks.size()) throw BadArgs("one reward row per task required");
    DatasetSnapshot s;
    s.stage_id = stage_id;
    for (std::size_t p = 0; p < tasks.size(); ++p) {
        const auto& r = rewards[p];
        const bool solved = !r.empty() && std::all_of(r.begin(), r.end(), [](double v) { return v == 1.0; });
        s.reasons.emplace_back(tasks[p].id, solved ? RemovalReason::Solved : RemovalReason::Kept);
        if (!solved) s.retained.push_back(tasks[p].id);
    }
    return s;
}

DatasetSnapshot filter_difficulty(std::span<const Task> tasks, const PolicyParams& checkpoint, int G, double low,
                                  double high, double temperature, int budget, std::uint64_t seed) {
    return classify_difficulty(tasks, rollout_rewards(checkpoint, tasks, G, temperature, budget, seed), low, high);
}

DatasetSnapshot filter_solved(std::span<const Task> tasks, const PolicyParams& checkpoint, int G, double temperature,
                              int budget, std::uint64_t seed) {
    return classify_solved(tasks, rollout_rewards(checkpoint, tasks, G, temperature, budget, seed));
}

std::vector<Task> retained_tasks(std::span<const Task> tasks, const DatasetSnapshot& snap) {
    std::vector<Task> out;
    std::size_t k = 0;
    for (const auto& t : tasks)
        if (k < snap.retained.size() && snap.retained[k] == t.id) {
            out.push_back(t);
            ++k;
        }
    return out;
}

std::string StageReport::to_json() const {
    nlohmann::ordered_json j;
    j["stage_id"] = stage_id;
    j["domain"] = to_string(domain);
    j["budget"] = budget;
    j["overlong_mode"] = to_string(overlong_mode);
    j["temperature"] = temperature;
    j["steps_run"] = steps_run;
    j["early_stopped"] = early_stopped;
    j["dataset_size"] = dataset_size;
    j["start_eval"] = start_eval ? nlohmann::ordered_json(*start_eval) : nlohmann::ordered_json(nullptr);
    j["end_eval"] = end_eval ? nlohmann::ordered_json(*end_eval) : nlohmann::ordered_json(nullptr);
    j["mean_length"] = mean_length;
    j["truncation_rate"] = truncation_rate;
    j["mean_reward"] = mean_reward;
    auto snaps = nlohmann::ordered_json::array();
    for (const auto& s : snapshots) {
        std::map<std::string, int> counts;
        for (const auto& [id, why] : s.reasons) ++counts[to_string(why)];
        snaps.push_back({{"retained", s.retained.size()}, {"reasons", counts}});
    }
    j["snapshots"] = std::move(snaps);
    return j.dump(2);
}

namespace {

std::uint64_t stage_seed(std::uint64_t global, int stage_id) {
    return derive_seed({global, static_cast<std::uint64_t>(stage_id)});
}

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to),
                           0.0) /
           static_cast<double>(to - from);
}

DatasetSnapshot apply_filter(const StageConfig& stage, std::span<const Task> tasks, const PolicyParams& params,
                             const PipelineConfig& cfg, std::uint64_t seed) {
    const auto& f = stage.dataset_filter;
    const auto rewards = rollout_rewards(params, tasks, f.G, cfg.filter_temperature, stage.budget, seed);
    return f.kind == DatasetFilter::Kind::Difficulty ? classify_difficulty(tasks, rewards, f.low, f.high, stage.stage_id)
                                                     : classify_solved(tasks, rewards, stage.stage_id);
}

}  // namespace

StageReport run_stage(PolicyParams& params, const StageConfig& stage, std::span<const Task> tasks,
                      const PipelineConfig& cfg, const PipelineHooks& hooks) {
    validate_plan(std::span<const StageConfig>(&stage, 1));
    const std::uint64_t seed = stage_seed(cfg.seed, stage.stage_id);
    StageReport rep;
    rep.stage_id = stage.stage_id;
    rep.domain = stage.domain;
    rep.budget = stage.budget;
    rep.overlong_mode = stage.overlong_mode;

    std::vector<Task> data(tasks.begin(), tasks.end());
    std::uint64_t epoch = 0;
    if (stage.dataset_filter.kind != DatasetFilter::Kind::None && !data.empty()) {
        auto snap = apply_filter(stage, data, params, cfg, derive_seed({seed, 0x66696c74ULL, epoch}));
        data = retained_tasks(data, snap);
        rep.snapshots.push_back(std::move(snap));
    }
    rep.dataset_size = data.size();

    if (stage.temperature) {
        rep.temperature = *stage.temperature;
    } else if (!data.empty()) {
        const std::size_t n_probe = std::min<std::size_t>(data.size(), static_cast<std::size_t>(cfg.probe_tasks));
        ProbeConfig probe = cfg.probe;
        probe.max_tokens = stage.budget;
        probe.seed = derive_seed({seed, 0x70726f6265ULL});
        rep.temperature = tune_temperature(params, std::span<const Task>(data.data(), n_probe),
                                           cfg.temperature_candidates, cfg.target_entropy, probe);
    } else {
        rep.temperature = cfg.temperature_candidates.empty() ? 1.0 : cfg.temperature_candidates.front();
    }

    const auto eval_it = cfg.eval_sets.find(stage.domain);
    const bool has_eval = eval_it != cfg.eval_sets.end() && !eval_it->second.empty();
    if (has_eval) rep.start_eval = eval_accuracy(params, eval_it->second, cfg.eval);

    RlConfig rl;
    rl.G = cfg.G;
    rl.batch_prompts = cfg.batch_prompts;
    rl.learning_rate = stage.learning_rate.value_or(cfg.learning_rate);
    rl.temperature = rep.temperature;
    rl.overlong_mode = stage.overlong_mode;
    rl.budget = stage.budget;
    rl.seed = seed;
    rl.momentum = cfg.momentum;
    rl.optimizer = cfg.optimizer;
    Optimizer opt(rl.optimizer_config());

    std::vector<std::size_t> order;
    std::size_t pos = 0;
    auto new_epoch = [&] {
        order.resize(data.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed({seed, 0x65706f6368ULL, epoch}));
        rng.shuffle(order.begin(), order.end());
        pos = 0;
    };
    if (!data.empty()) new_epoch();

    for (int step = 0; step < stage.max_steps && !data.empty(); ++step) {
        std::vector<Task> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_prompts));
        while (batch.size() < static_cast<std::size_t>(cfg.batch_prompts) && !data.empty()) {
            if (pos == order.size()) {
                ++epoch;
                if (stage.dataset_filter.kind == DatasetFilter::Kind::Solved && stage.dataset_filter.every_epoch) {
                    auto snap = apply_filter(stage, data, params, cfg, derive_seed({seed, 0x66696c74ULL, epoch}));
                    data = retained_tasks(data, snap);
                    rep.snapshots.push_back(std::move(snap));
                }
                if (data.empty()) break;
                new_epoch();
            }
            batch.push_back(data[order[pos++]]);
        }
        if (batch.size() < static_cast<std::size_t>(cfg.batch_prompts)) break;

        auto res = rl_step(params, batch, rl, static_cast<std::uint64_t>(step), stage.stage_id,
                           rl.needs_state() ? &opt : nullptr);
        if (!res.params.all_finite()) throw Divergence(params, stage.stage_id, static_cast<std::uint64_t>(step));
        params = std::move(res.params);
        const auto& m = res.metrics;
        rep.mean_length.push_back(m.mean_response_len);
        rep.truncation_rate.push_back(m.truncation_rate);
        rep.mean_reward.push_back(m.mean_reward);
        ++rep.steps_run;
        if (hooks.on_step) hooks.on_step(m);

        const auto& es = stage.early_stop;
        const auto t = rep.mean_reward.size();
        const auto w = static_cast<std::size_t>(es.window);
        if (es.kind == EarlyStop::Kind::Plateau && t >= 2 * w && t % w == 0) {
            const double gain = window_mean(rep.mean_reward, t - w, t) - window_mean(rep.mean_reward, t - 2 * w, t - w);
            if (gain < es.epsilon) {
                rep.early_stopped = true;
                break;
            }
        }
    }
    if (has_eval) rep.end_eval = eval_accuracy(params, eval_it->second, cfg.eval);
    return rep;
}

PipelineResult run_pipeline(const PolicyParams& initial, std::span<const StageConfig> stages,
                            std::span<const std::vector<Task>> datasets, const PipelineConfig& cfg,
                            const PipelineHooks& hooks, std::size_t first_stage) {
    validate_plan(stages);
    if (datasets.size() != stages.size()) throw InvalidConfig("one dataset per stage required");
    if (first_stage > stages.size()) throw InvalidConfig("first_stage out of range");
    PipelineResult out;
    out.params = initial;
    for (std::size_t i = first_stage; i < stages.size(); ++i) {
        auto rep = run_stage(out.params, stages[i], datasets[i], cfg, hooks);
        if (hooks.on_stage_end) hooks.on_stage_end(stages[i], out.params, rep);
        out.reports.push_back(std::move(rep));
    }
    return out;
}

}  // namespace stagerl
