#include <cmath>
#include <numeric>

#include "doctest.h"
#include "stagerl/environment.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/grpo.hpp"

using namespace stagerl;

namespace {

PolicyParams random_policy(const Task& t, std::uint64_t seed, int k = 2) {
    FeatureSet fs;
    fs.focus = fs.shape = true;
    PolicyParams p(desk_vocab(), k, fs);
    Rng rng(seed);
    const auto trace = teacher_trace(t, TraceStyle::Concise).tokens;
    ContextTracker tr(p, t);
    for (std::size_t i = 0; i <= trace.size(); ++i) {
        for (const auto& key : tr.keys())
            for (auto& x : p.row(key)) x = 2.0 * rng.uniform() - 1.0;
        if (i < trace.size()) tr.push(trace[i]);
    }
    return p;
}

RolloutGroup sampled_group(const PolicyParams& p, const Task& t, int G, int budget, double tau, std::uint64_t seed,
                           Rng& rng) {
    RolloutGroup g;
    g.task_id = t.id;
    for (int i = 0; i < G; ++i) {
        SamplingConfig c;
        c.temperature = tau;
        c.max_tokens = budget;
        c.seed_stream = {seed, 0, 0, static_cast<std::uint64_t>(i)};
        g.rollouts.push_back(sample(p, t, c));
        g.rewards.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
        g.masks.push_back(rng.bernoulli(0.15));
    }
    return g;
}

double objective_value(const PolicyParams& p, std::span<const Task> tasks, std::span<const RolloutGroup> groups,
                       std::span<const AdvantageAssignment> advs, double tau) {
    return grpo_objective(p, tasks, groups, advs, tau).value;
}

// Policy that writes the concise teacher trace with probability ~1.
PolicyParams oracle_policy(std::span<const Task> tasks) {
    PolicyParams p(desk_vocab(), kMaxContextOrder);
    for (const auto& t : tasks) {
        const auto trace = teacher_trace(t, TraceStyle::Concise).tokens;
        ContextTracker tr(p, t);
        for (auto tok : trace) {
            p.row(tr.keys()[0])[static_cast<std::size_t>(tok)] = 80.0;
            tr.push(tok);
        }
    }
    return p;
}

}  // namespace

TEST_CASE("advantage worked examples") {
    const std::vector<bool> none4(4, false);
    auto a = compute_advantages(std::vector<double>{1, 0, 0, 0}, none4);
    CHECK_FALSE(a.group_skipped);
    CHECK(a.per_rollout[0] == doctest::Approx(1.7320508).epsilon(1e-7));
    for (int i = 1; i < 4; ++i) CHECK(a.per_rollout[static_cast<std::size_t>(i)] == doctest::Approx(-0.5773503).epsilon(1e-7));

    a = compute_advantages(std::vector<double>{1, 0}, std::vector<bool>(2, false));
    CHECK(a.per_rollout == std::vector<double>{1.0, -1.0});

    a = compute_advantages(std::vector<double>{1, 1, 1, 1}, none4);
    CHECK(a.group_skipped);
    CHECK(a.skip_reason == SkipReason::ZeroStd);
    CHECK(a.per_rollout == std::vector<double>(4, 0.0));

    // Masked slot holds garbage that must not leak into the statistics.
    a = compute_advantages(std::vector<double>{1, 0, 1e9, 0}, std::vector<bool>{false, false, true, false});
    const auto ref = compute_advantages(std::vector<double>{1, 0, 0}, std::vector<bool>(3, false));
    CHECK(a.per_rollout[0] == ref.per_rollout[0]);
    CHECK(a.per_rollout[1] == ref.per_rollout[1]);
    CHECK(a.per_rollout[3] == ref.per_rollout[2]);
    CHECK(a.per_rollout[2] == 0.0);

    a = compute_advantages(std::vector<double>{1, 0, 0}, std::vector<bool>{false, true, true});
    CHECK(a.group_skipped);
    CHECK(a.skip_reason == SkipReason::TooFewUnmasked);
    CHECK_THROWS_AS(compute_advantages(std::vector<double>{1, 0}, std::vector<bool>{false}), BadArgs);
}

TEST_CASE("advantages are standardized over unmasked entries") {
    Rng rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t G = 2 + rng.below(15);
        std::vector<double> r(G);
        std::vector<bool> m(G);
        for (std::size_t i = 0; i < G; ++i) {
            r[i] = rng.bernoulli(0.3) ? rng.uniform() * 5 : static_cast<double>(rng.below(2));
            m[i] = rng.bernoulli(0.2);
        }
        const auto a = compute_advantages(r, m);
        if (a.group_skipped) continue;
        double s = 0, ss = 0, n = 0;
        for (std::size_t i = 0; i < G; ++i)
            if (!m[i]) {
                s += a.per_rollout[i];
                ss += a.per_rollout[i] * a.per_rollout[i];
                ++n;
            }
        CHECK(std::abs(s / n) < 1e-10);
        CHECK(std::abs(std::sqrt(ss / n - (s / n) * (s / n)) - 1.0) < 1e-10);
    }
}

TEST_CASE("G=2 gradient is the half-length difference of the two score functions") {
    const Task t = make_math_task("m", "3 + 4");
    const PolicyParams p = random_policy(t, 5);
    RolloutGroup g;
    g.task_id = t.id;
    const auto a = desk_vocab().encode("0 7 ; <box> 7 </box> EOS");
    const auto b = desk_vocab().encode("0 8 ; <box> 8 </box> EOS");
    for (const auto* toks : {&a, &b}) {
        Rollout r;
        r.tokens = *toks;
        r.logprobs = logprob_trace(p, t, r.tokens, 1.0);
        g.rollouts.push_back(r);
    }
    g.rewards = {1.0, 0.0};
    g.masks = {false, false};
    const std::vector<RolloutGroup> groups{g};
    const std::vector<AdvantageAssignment> advs{compute_advantages(g.rewards, g.masks)};
    const std::vector<Task> tasks{t};
    const auto res = grpo_objective(p, tasks, groups, advs, 1.0);

    SparseGrad expect = grad_logprob(p, t, a, 1.0);
    expect.add(grad_logprob(p, t, b, 1.0), -1.0);
    expect.scale(1.0 / (2.0 * static_cast<double>(a.size())));
    for (const auto& [key, row] : expect.rows()) {
        const double* got = res.gradient.find_row(key);
        REQUIRE(got != nullptr);
        for (std::size_t w = 0; w < row.size(); ++w) CHECK(got[w] == doctest::Approx(row[w]).epsilon(1e-12));
    }
}

TEST_CASE("objective gradient matches central differences") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        const Task t = make_math_task("m", trial % 2 ? "2 * 3 + 1" : "5 - 2");
        const double tau = 0.7 + 0.2 * trial;
        PolicyParams p = random_policy(t, 10 + static_cast<std::uint64_t>(trial), 1 + trial % 2);
        std::vector<RolloutGroup> groups{sampled_group(p, t, 4, 6, tau, 3, rng)};
        groups[0].rewards = {1, 0, 1, 0};
        groups[0].masks = {false, false, false, trial % 2 == 1};
        std::vector<AdvantageAssignment> advs{compute_advantages(groups[0].rewards, groups[0].masks)};
        const std::vector<Task> tasks{t};
        const auto res = grpo_objective(p, tasks, groups, advs, tau);
        double worst = 0;
        for (const auto& [key, row] : res.gradient.rows()) {
            for (std::size_t w = 0; w < row.size(); ++w) {
                auto& cell = p.row(key)[w];
                const double keep = cell;
                cell = keep + 1e-5;
                const double up = objective_value(p, tasks, groups, advs, tau);
                cell = keep - 1e-5;
                const double dn = objective_value(p, tasks, groups, advs, tau);
                cell = keep;
                const double fd = (up - dn) / 2e-5;
                worst = std::max(worst, std::abs(fd - row[w]) / std::max(1e-4, std::abs(fd) + std::abs(row[w])));
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("affine reward maps leave advantages and gradients unchanged") {
    Rng rng(9);
    const Task t = make_math_task("m", "6 - 1 * 2");
    const PolicyParams p = random_policy(t, 2);
    const std::vector<Task> tasks{t};
    for (int trial = 0; trial < 10; ++trial) {
        auto g = sampled_group(p, t, 6, 8, 1.0, static_cast<std::uint64_t>(trial), rng);
        g.rewards = {1, 0, 0, 1, 0, 1};
        std::fill(g.masks.begin(), g.masks.end(), false);
        const double alpha = 0.1 + 5 * rng.uniform(), beta = 10 * (rng.uniform() - 0.5);
        auto h = g;
        for (auto& r : h.rewards) r = alpha * r + beta;
        const std::vector<RolloutGroup> G1{g}, G2{h};
        const std::vector<AdvantageAssignment> A1{compute_advantages(g.rewards, g.masks)},
            A2{compute_advantages(h.rewards, h.masks)};
        for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(A1[0].per_rollout[i] - A2[0].per_rollout[i]) < 1e-12);
        const auto r1 = grpo_objective(p, tasks, G1, A1, 1.0), r2 = grpo_objective(p, tasks, G2, A2, 1.0);
        CHECK(std::abs(r1.value - r2.value) < 1e-12);
        for (const auto& [key, row] : r1.gradient.rows()) {
            const double* o = r2.gradient.find_row(key);
            REQUIRE(o != nullptr);
            for (std::size_t w = 0; w < row.size(); ++w) CHECK(std::abs(row[w] - o[w]) < 1e-12);
        }
    }
}

TEST_CASE("on-policy value equals the recorded log-probability form") {
    Rng rng(4);
    const Task t = make_math_task("m", "9 + 9");
    const PolicyParams p = random_policy(t, 8);
    std::vector<RolloutGroup> groups{sampled_group(p, t, 8, 10, 0.9, 1, rng), sampled_group(p, t, 8, 10, 0.9, 2, rng)};
    std::vector<AdvantageAssignment> advs;
    for (auto& g : groups) {
        g.rewards = {1, 0, 1, 0, 0, 0, 1, 0};
        advs.push_back(compute_advantages(g.rewards, g.masks));
    }
    const std::vector<Task> tasks{t, t};
    CHECK(grpo_objective(p, tasks, groups, advs, 0.9).value ==
          doctest::Approx(grpo_objective_recorded(groups, advs)).epsilon(1e-12));
}

TEST_CASE("token-level weighting counts every token") {
    const Task t = make_math_task("m", "1 + 1");
    const PolicyParams p = random_policy(t, 3);
    auto make = [&](const char* text) {
        Rollout r;
        r.tokens = desk_vocab().encode(text);
        r.logprobs = logprob_trace(p, t, r.tokens, 1.0);
        return r;
    };
    // Second rollout repeats the first one's tokens twice over.
    RolloutGroup g;
    g.rollouts = {make("0 2 ;"), make("0 2 ; 0 2 ;"), make("<box> 2 </box> EOS")};
    g.rewards = {1, 1, 0};
    g.masks = {false, false, false};
    const auto adv = compute_advantages(g.rewards, g.masks);
    double lp0 = 0, lp1 = 0;
    for (double x : g.rollouts[0].logprobs) lp0 += x;
    for (double x : g.rollouts[1].logprobs) lp1 += x;
    CHECK(g.rollouts[1].length() == 2 * g.rollouts[0].length());
    const std::vector<RolloutGroup> groups{g};
    const std::vector<AdvantageAssignment> advs{adv};
    const double denom = 3.0 + 6.0 + 4.0;
    double lp2 = 0;
    for (double x : g.rollouts[2].logprobs) lp2 += x;
    const double expect = (adv.per_rollout[0] * lp0 + adv.per_rollout[1] * lp1 + adv.per_rollout[2] * lp2) / denom;
    CHECK(grpo_objective_recorded(groups, advs) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("a batch of skipped groups is empty") {
    RolloutGroup g;
    g.rollouts.resize(2);
    g.rollouts[0].tokens = {desk_vocab().eos()};
    g.rollouts[1].tokens = {desk_vocab().eos()};
    g.rollouts[0].logprobs = g.rollouts[1].logprobs = {0.0};
    g.rewards = {1, 1};
    g.masks = {false, false};
    const std::vector<RolloutGroup> groups{g};
    const std::vector<AdvantageAssignment> advs{compute_advantages(g.rewards, g.masks)};
    const std::vector<Task> tasks{make_math_task("m", "1 + 1")};
    CHECK_THROWS_AS(grpo_objective(PolicyParams(desk_vocab(), 2), tasks, groups, advs, 1.0), EmptyBatch);
}

TEST_CASE("rl_step is deterministic and leaves solved batches alone") {
    GeneratorSpec gs;
    gs.count = 8;
    gs.seed = 12;
    gs.difficulty_hist = {0, 0, 1, 0, 0};
    const auto tasks = generate_tasks(gs);
    RlConfig cfg;
    cfg.G = 4;
    cfg.batch_prompts = 8;
    cfg.budget = 32;
    cfg.seed = 99;

    const PolicyParams solved = oracle_policy(tasks);
    const auto res = rl_step(solved, tasks, cfg);
    CHECK(res.metrics.empty_batch);
    CHECK(res.metrics.mean_reward == 1.0);
    CHECK(res.metrics.groups_skipped == 8);
    CHECK(to_checkpoint_json(res.params) == to_checkpoint_json(solved));

    // Noisy version: some groups learn.
    PolicyParams noisy = solved;
    // About 0.94 per token, so groups mix successes and failures.
    for (auto& [k, row] : noisy.table)
        for (auto& x : row) x *= 0.08;
    const auto a = rl_step(noisy, tasks, cfg, 3, 1);
    const auto b = rl_step(noisy, tasks, cfg, 3, 1);
    CHECK_FALSE(a.metrics.empty_batch);
    CHECK(to_checkpoint_json(a.params) == to_checkpoint_json(b.params));
    CHECK(a.metrics.to_json_line() == b.metrics.to_json_line());
    CHECK(a.metrics.truncation_rate >= 0.0);
    CHECK(a.metrics.truncation_rate <= 1.0);
    CHECK(a.metrics.mean_response_len <= cfg.budget);
}

TEST_CASE("overlong modes coincide when nothing is truncated") {
    GeneratorSpec gs;
    gs.count = 6;
    gs.seed = 2;
    const auto tasks = generate_tasks(gs);
    PolicyParams p = oracle_policy(tasks);
    for (auto& [k, row] : p.table)
        for (auto& x : row) x *= 0.08;
    RlConfig cfg;
    cfg.G = 6;
    cfg.batch_prompts = 6;
    cfg.budget = 200;
    cfg.seed = 5;
    cfg.overlong_mode = OverlongMode::Filter;
    const auto f = rl_step(p, tasks, cfg);
    cfg.overlong_mode = OverlongMode::Penalty;
    const auto q = rl_step(p, tasks, cfg);
    REQUIRE(f.metrics.truncation_rate == 0.0);
    REQUIRE_FALSE(f.metrics.empty_batch);
    CHECK(to_checkpoint_json(f.params) == to_checkpoint_json(q.params));
}

TEST_CASE("temperature tuning") {
    const Vocab v({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s", "EOS"});
    PolicyParams uniform(v, 2);
    Task t;
    t.id = "u";
    t.prompt_tokens = {0, 1};
    const std::vector<Task> probe{t};
    const std::vector<double> one{0.85};
    CHECK(tune_temperature(uniform, probe, one) == 0.85);
    const std::vector<double> cands{1.0, 0.85, 0.6};
    CHECK(tune_temperature(uniform, probe, cands) == 0.6);
    CHECK(probe_entropy(uniform, probe, 0.85) == doctest::Approx(std::log(20.0)).epsilon(1e-12));

    // Sharpened policy: entropy rises with temperature and the pick is closest to the target.
    GeneratorSpec gs;
    gs.count = 6;
    gs.seed = 8;
    const auto tasks = generate_tasks(gs);
    PolicyParams sharp = oracle_policy(tasks);
    for (auto& [k, row] : sharp.table)
        for (auto& x : row) x *= 0.06;
    const std::vector<double> grid{0.6, 0.8, 1.0};
    std::vector<double> h;
    for (double tau : grid) h.push_back(probe_entropy(sharp, tasks, tau));
    CHECK(h[0] < h[1]);
    CHECK(h[1] < h[2]);
    const double pick = tune_temperature(sharp, tasks, grid);
    const double hp = probe_entropy(sharp, tasks, pick);
    for (double x : h) CHECK(std::abs(hp - 0.3) <= std::abs(x - 0.3));
}

TEST_CASE("rl config validation") {
    RlConfig c;
    c.G = 1;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = {};
    c.batch_prompts = 0;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    c = {};
    c.learning_rate = -1;
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
}
