// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stagerl/curation.hpp"
#include "stagerl/curriculum.hpp"
#include "stagerl/desk.hpp"
#include "stagerl/environment.hpp"
#include "stagerl/evalkit.hpp"
#include "stagerl/grpo.hpp"
#include "stagerl/verifier.hpp"

using namespace stagerl;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ------------------------------------------------------------ 1. advantages

Outcome advantages() {
    Rng rng(101);
    double worst_mean = 0.0, worst_std = 0.0;
    int checked = 0;
    for (int g = 0; g < 1000; ++g) {
        const auto G = static_cast<std::size_t>(2 + rng.below(15));
        std::vector<double> r(G);
        std::vector<bool> m(G);
        for (std::size_t i = 0; i < G; ++i) {
            r[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.below(2)) : 10.0 * rng.uniform() - 5.0;
            m[i] = rng.bernoulli(0.2);
        }
        const auto a = compute_advantages(r, m);
        if (a.group_skipped) continue;
        double s = 0, ss = 0, n = 0;
        for (std::size_t i = 0; i < G; ++i)
            if (!m[i]) s += a.per_rollout[i], n += 1;
        const double mean = s / n;
        for (std::size_t i = 0; i < G; ++i)
            if (!m[i]) ss += (a.per_rollout[i] - mean) * (a.per_rollout[i] - mean);
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(ss / n) - 1.0));
        ++checked;
    }

    // Affine invariance of advantages and of the gradient.
    const Task t = make_math_task("a", "3 + 4 * 2");
    PolicyParams p(desk_vocab(), 2);
    double worst_affine_adv = 0.0, worst_affine_grad = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        RolloutGroup grp;
        grp.task_id = t.id;
        for (int i = 0; i < 6; ++i) {
            SamplingConfig sc;
            sc.max_tokens = 6;
            sc.seed_stream = {7, static_cast<std::uint64_t>(trial), 0, static_cast<std::uint64_t>(i)};
            grp.rollouts.push_back(sample(p, t, sc));
            grp.rewards.push_back(rng.uniform());
            grp.masks.push_back(i == 5 && rng.bernoulli(0.5));
        }
        const double alpha = 0.01 + 100.0 * rng.uniform(), beta = 20.0 * rng.uniform() - 10.0;
        RolloutGroup moved = grp;
        for (auto& x : moved.rewards) x = alpha * x + beta;
        const std::vector<AdvantageAssignment> a1{compute_advantages(grp.rewards, grp.masks)};
        const std::vector<AdvantageAssignment> a2{compute_advantages(moved.rewards, moved.masks)};
        for (std::size_t i = 0; i < 6; ++i)
            worst_affine_adv = std::max(worst_affine_adv, std::abs(a1[0].per_rollout[i] - a2[0].per_rollout[i]));
        const std::vector<Task> tasks{t};
        const std::vector<RolloutGroup> g1{grp}, g2{moved};
        const auto o1 = grpo_objective(p, tasks, g1, a1, 1.0);
        const auto o2 = grpo_objective(p, tasks, g2, a2, 1.0);
        for (const auto& [key, row] : o1.gradient.rows()) {
            const double* other = o2.gradient.find_row(key);
            for (std::size_t v = 0; v < row.size(); ++v)
                worst_affine_grad = std::max(worst_affine_grad, std::abs(row[v] - (other ? other[v] : 0.0)));
        }
    }

    const std::vector<double> r4{1, 0, 0, 0};
    const auto ex = compute_advantages(r4, std::vector<bool>(4, false));
    const double want[4] = {1.7320508, -0.5773503, -0.5773503, -0.5773503};
    double worst_ex = 0.0;
    for (int i = 0; i < 4; ++i) worst_ex = std::max(worst_ex, std::abs(ex.per_rollout[static_cast<std::size_t>(i)] - want[i]));

    const bool ok = checked > 900 && worst_mean < 1e-10 && worst_std < 1e-10 && worst_affine_adv < 1e-12 &&
                    worst_affine_grad < 1e-12 && worst_ex < 5e-8;
    return {ok, fmt("groups=%d max|mean|=%.1e max|std-1|=%.1e affine adv=%.1e grad=%.1e [1,0,0,0] err=%.1e", checked,
                    worst_mean, worst_std, worst_affine_adv, worst_affine_grad, worst_ex)};
}

// -------------------------------------------------------------- 2. gradient

Outcome gradient() {
    Rng rng(202);
    GeneratorSpec gs;
    gs.seed = 5;
    gs.count = 40;
    const auto pool = generate_tasks(gs);
    int instances = 0;
    double worst = 0.0;
    std::size_t max_params = 0;
    while (instances < 25) {
        const auto n_groups = 1 + rng.below(2);
        const auto G = static_cast<int>(2 + rng.below(2));
        const int budget = static_cast<int>(2 + rng.below(2));
        const double tau = 0.5 + rng.uniform();
        PolicyParams p(desk_vocab(), static_cast<int>(1 + rng.below(2)));
        std::vector<Task> tasks;
        std::vector<RolloutGroup> groups;
        for (std::uint64_t k = 0; k < n_groups; ++k) {
            tasks.push_back(pool[rng.below(pool.size())]);
            RolloutGroup grp;
            grp.task_id = tasks.back().id;
            for (int i = 0; i < G; ++i) {
                SamplingConfig sc;
                sc.temperature = tau;
                sc.max_tokens = budget;
                sc.seed_stream = {static_cast<std::uint64_t>(instances), k, 0, static_cast<std::uint64_t>(i)};
                grp.rollouts.push_back(sample(p, tasks.back(), sc));
                grp.rewards.push_back(rng.uniform());
                grp.masks.push_back(G > 2 && i == 0 && rng.bernoulli(0.3));
            }
            groups.push_back(std::move(grp));
        }
        std::vector<AdvantageAssignment> advs;
        for (const auto& g : groups) advs.push_back(compute_advantages(g.rewards, g.masks));

        // Randomize every row the objective touches, then differentiate there.
        const auto rows = grpo_objective(p, tasks, groups, advs, tau).gradient.rows();
        const std::size_t n_params = rows.size() * p.vocab_size();
        if (n_params > 500) continue;
        for (const auto& [key, row] : rows)
            for (auto& x : p.row(key)) x = 2.0 * rng.uniform() - 1.0;
        const auto grad = grpo_objective(p, tasks, groups, advs, tau).gradient;

        const double h = 1e-5;
        double diff2 = 0.0, norm2 = 0.0;
        for (const auto& [key, row] : rows) {
            const double* an = grad.find_row(key);
            for (std::size_t v = 0; v < p.vocab_size(); ++v) {
                double& x = p.row(key)[v];
                const double x0 = x;
                x = x0 + h;
                const double up = grpo_objective(p, tasks, groups, advs, tau).value;
                x = x0 - h;
                const double dn = grpo_objective(p, tasks, groups, advs, tau).value;
                x = x0;
                const double fd = (up - dn) / (2.0 * h);
                const double a = an ? an[v] : 0.0;
                diff2 += (fd - a) * (fd - a);
                norm2 += a * a;
            }
        }
        worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-12));
        max_params = std::max(max_params, n_params);
        ++instances;
    }
    return {worst < 1e-4, fmt("instances=%d max params=%zu worst relative error=%.2e", instances, max_params, worst)};
}

// ---------------------------------------------------------------- 3. pass@K

Outcome pass_at_k_criterion() {
    const std::size_t N = 128, P = 20;
    const int Ks[] = {1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128};
    double err_sum = 0.0;
    int err_n = 0;
    bool monotone = true, exhaustive = true;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed({303, seed}));
        std::vector<std::string> ids;
        for (std::size_t p = 0; p < P; ++p) ids.push_back("p" + std::to_string(p));
        OutcomeMatrix m(ids, N);
        for (std::size_t p = 0; p < P; ++p) {
            const auto c = rng.below(N + 1);
            std::vector<std::size_t> cols(N);
            std::iota(cols.begin(), cols.end(), 0);
            rng.shuffle(cols.begin(), cols.end());
            for (std::size_t k = 0; k < c; ++k) m.set(p, cols[k], true);
        }
        double prev = -1.0;
        for (int K : Ks) {
            const auto e = pass_at_k(m, K, 100, seed);
            double exact = 0.0;
            for (std::size_t p = 0; p < P; ++p)
                exact += pass_at_k_exact(static_cast<std::int64_t>(m.successes(p)), N, K);
            exact /= static_cast<double>(P);
            err_sum += std::abs(e.estimate - exact);
            ++err_n;
            if (e.estimate < prev) monotone = false;
            prev = e.estimate;
            // No sampling error remains at K = N; only summation order differs.
            if (K == static_cast<int>(N)) exhaustive = exhaustive && std::abs(e.estimate - exact) < 1e-12;
        }
        const auto full = avg_at_n(m, static_cast<int>(N), 10, seed);
        exhaustive = exhaustive && std::abs(full.mean - m.accuracy()) < 1e-12 && full.std < 1e-12;
    }
    const double mean_err = err_sum / err_n;
    return {mean_err < 0.02 && monotone && exhaustive,
            fmt("mean |estimate-exact|=%.4f monotone=%s exhaustive exact=%s", mean_err, monotone ? "yes" : "no",
                exhaustive ? "yes" : "no")};
}

// ------------------------------------------------------------ 4. avg@n law

Outcome avg_std_law() {
    // A wide pool keeps the without-replacement correction near 1.
    const std::size_t N = 4096, P = 50;
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed({404, seed}));
        std::vector<std::string> ids;
        for (std::size_t p = 0; p < P; ++p) ids.push_back("p" + std::to_string(p));
        OutcomeMatrix m(ids, N);
        for (std::size_t p = 0; p < P; ++p) {
            const double rate = rng.uniform();
            for (std::size_t s = 0; s < N; ++s) m.set(p, s, rng.bernoulli(rate));
        }
        ratios.push_back(avg_at_n(m, 16, 200, seed).std / avg_at_n(m, 64, 200, seed).std);
    }
    const double mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    return {std::abs(mean - 2.0) <= 0.3,
            fmt("mean std(avg@16)/std(avg@64)=%.3f over 50 seeds (range %.2f..%.2f)", mean, *lo, *hi)};
}

// ------------------------------------------------------ 5. scaling regression

Outcome scaling() {
    const double a = 4.831, b = 2.635;
    Rng rng(505);
    double worst = 0.0, worst_r2 = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ScalingPoint> pts;
        const auto nx = 3 + rng.below(3), ny = 2 + rng.below(3);
        for (std::uint64_t i = 0; i < nx; ++i)
            for (std::uint64_t j = 0; j < ny; ++j)
                pts.push_back({std::ldexp(1.0, static_cast<int>(6 + i * (1 + rng.below(2)))),
                               std::ldexp(1.0, static_cast<int>(j)) * (1.0 + rng.uniform()), 0.0});
        const double c = 50.0 * rng.uniform();
        double mx = 0, my = 0;
        for (const auto& p : pts) mx += std::log2(p.x), my += std::log2(p.y);
        const auto n = static_cast<double>(pts.size());
        mx /= n;
        my /= n;
        double sx = 0, sy = 0;
        for (const auto& p : pts) sx += std::pow(std::log2(p.x) - mx, 2), sy += std::pow(std::log2(p.y) - my, 2);
        sx = std::sqrt(sx / n);
        sy = std::sqrt(sy / n);
        for (auto& p : pts) p.z = a * (std::log2(p.x) - mx) / sx + b * (std::log2(p.y) - my) / sy + c;
        const auto f = fit_scaling(pts);
        worst = std::max({worst, std::abs(f.a - a), std::abs(f.b - b), std::abs(f.c - c)});
        worst_r2 = std::max(worst_r2, std::abs(f.r_squared - 1.0));
    }
    int rejected = 0;
    const std::vector<std::vector<ScalingPoint>> bad{
        {{1, 1, 1}, {2, 2, 2}},
        {{8, 1, 1}, {8, 2, 2}, {8, 4, 3}},
        {{1, 2, 1}, {2, 4, 2}, {4, 8, 3}},
        {{1, 1, 5}, {2, 1, 5}, {1, 2, 5}},
    };
    for (const auto& pts : bad) {
        try {
            fit_scaling(pts);
        } catch (const Degenerate&) {
            ++rejected;
        }
    }
    return {worst < 1e-9 && worst_r2 < 1e-12 && rejected == 4,
            fmt("max coefficient error=%.1e max |R2-1|=%.1e degenerate rejected %d/4", worst, worst_r2, rejected)};
}

// --------------------------------------------------------- 6. decontamination

std::vector<std::string> lower_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string w; in >> w;) {
        for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out.push_back(w);
    }
    return out;
}

bool brute_overlap(const std::string& a, const std::string& b, std::size_t n) {
    const auto wa = lower_words(a), wb = lower_words(b);
    for (std::size_t i = 0; i + n <= wa.size(); ++i)
        for (std::size_t j = 0; j + n <= wb.size(); ++j) {
            std::size_t k = 0;
            while (k < n && wa[i + k] == wb[j + k]) ++k;
            if (k == n) return true;
        }
    return false;
}

Outcome decontamination() {
    Rng rng(606);
    static const char* words[] = {"add", "the", "Two", "numbers", "then", "SUM", "of", "x"};
    auto text = [&](std::size_t len) {
        std::string s;
        for (std::size_t i = 0; i < len; ++i) s += std::string(i ? " " : "") + words[rng.below(8)];
        return s;
    };
    int mismatches = 0, removed_total = 0, kept_total = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Corpus train, eval;
        for (int i = 0; i < 50; ++i) eval.items.push_back({"e" + std::to_string(i), text(12 + rng.below(20)), {}});
        for (int i = 0; i < 150; ++i) {
            std::string t = text(3 + rng.below(10));
            // Splice a 7..11 word window of some eval item into a third of the train items.
            if (rng.bernoulli(0.35)) {
                const auto w = lower_words(eval.items[rng.below(50)].text);
                const auto len = 7 + rng.below(5);
                const auto at = rng.below(w.size() - len + 1);
                for (std::size_t k = at; k < at + len; ++k) t += " " + w[k];
                t += " " + text(1 + rng.below(5));
            }
            train.items.push_back({"t" + std::to_string(i), t, {}});
        }
        const auto r = decontaminate(train, eval, 9);
        std::vector<std::string> expect;
        for (const auto& t : train.items)
            for (const auto& e : eval.items)
                if (brute_overlap(t.text, e.text, 9)) {
                    expect.push_back(t.id);
                    break;
                }
        mismatches += r.report.removed != expect;
        removed_total += static_cast<int>(expect.size());
        kept_total += static_cast<int>(r.train.items.size());
    }

    // Planted pairs: exactly 8 shared words must survive, 9 must not.
    Corpus eval, train;
    eval.items = {{"e", "alpha beta gamma delta epsilon zeta eta theta iota kappa", {}}};
    train.items = {{"eight", "one beta gamma delta epsilon zeta eta theta iota two", {}},
                   {"eight-split", "alpha beta gamma delta epsilon zeta eta theta X iota kappa", {}},
                   {"nine", "zz alpha beta gamma delta epsilon zeta eta theta iota", {}}};
    const auto planted = decontaminate(train, eval, 9);
    const bool planted_ok = planted.train.ids() == std::vector<std::string>{"eight", "eight-split"} &&
                            planted.report.removed == std::vector<std::string>{"nine"};
    return {mismatches == 0 && removed_total > 0 && kept_total > 0 && planted_ok,
            fmt("10 corpora of 200 items: %d mismatches vs brute force (%d removed, %d kept); 8-gram overlaps kept=%s",
                mismatches, removed_total, kept_total, planted_ok ? "yes" : "no")};
}

// ------------------------------------------------------------------- 7. VM

// Reference semantics written independently of the library interpreter.
VmResult reference_vm(const std::vector<Opcode>& prog, const std::vector<std::int64_t>& in, int limit) {
    VmResult r;
    auto& st = r.state;
    for (const Opcode op : prog) {
        if (st.steps >= limit) {
            r.fault = VmFault::StepLimit;
            return r;
        }
        ++st.steps;
        auto& s = st.stack;
        const int code = static_cast<int>(op);
        auto fault = [&](VmFault f) {
            r.fault = f;
            return r;
        };
        if (code <= 9) {
            if (s.size() == kVmMaxDepth) return fault(VmFault::StackOverflow);
            s.push_back(code);
        } else if (op == Opcode::In) {
            if (st.input_cursor == in.size()) return fault(VmFault::InputExhausted);
            if (s.size() == kVmMaxDepth) return fault(VmFault::StackOverflow);
            s.push_back(in[st.input_cursor++]);
        } else if (op == Opcode::Add || op == Opcode::Sub || op == Opcode::Mul) {
            if (s.size() < 2) return fault(VmFault::StackUnderflow);
            const __int128 x = s[s.size() - 2], y = s.back();
            const __int128 v = op == Opcode::Add ? x + y : op == Opcode::Sub ? x - y : x * y;
            if (v > INT64_MAX || v < INT64_MIN) return fault(VmFault::Overflow);
            s.pop_back();
            s.back() = static_cast<std::int64_t>(v);
        } else if (op == Opcode::Dup) {
            if (s.empty()) return fault(VmFault::StackUnderflow);
            if (s.size() == kVmMaxDepth) return fault(VmFault::StackOverflow);
            s.push_back(s.back());
        } else if (op == Opcode::Swap) {
            if (s.size() < 2) return fault(VmFault::StackUnderflow);
            std::swap(s[s.size() - 1], s[s.size() - 2]);
        } else if (op == Opcode::Pop) {
            if (s.empty()) return fault(VmFault::StackUnderflow);
            s.pop_back();
        } else {
            st.halted = true;
            if (s.empty()) return fault(VmFault::EmptyStackAtHalt);
            r.value = s.back();
            return r;
        }
    }
    r.fault = VmFault::NoHalt;
    return r;
}

Outcome minivm() {
    Rng rng(707);
    int bad_bound = 0, bad_ref = 0, bad_repeat = 0;
    std::map<VmFault, int> faults;
    for (int i = 0; i < 10000; ++i) {
        std::vector<Opcode> prog(1 + rng.below(300));
        // Push-heavy mixes reach deep stacks and overflow; uniform mixes underflow.
        const bool pushy = rng.bernoulli(0.5);
        for (auto& op : prog) {
            if (pushy && rng.bernoulli(0.5)) op = rng.bernoulli(0.3) ? Opcode::Mul : static_cast<Opcode>(rng.below(10));
            else op = static_cast<Opcode>(rng.below(18));
        }
        std::vector<std::int64_t> in(rng.below(5));
        for (auto& x : in) x = static_cast<std::int64_t>(rng.next()) >> rng.below(64);
        const int limit = static_cast<int>(1 + rng.below(kDefaultStepLimit));
        const auto a = run_minivm(prog, in, limit);
        const auto b = run_minivm(prog, in, limit);
        ++faults[a.fault];
        bad_repeat += !(a == b);
        bad_ref += !(a == reference_vm(prog, in, limit));
        bad_bound += a.state.steps > limit || a.state.stack.size() > kVmMaxDepth || a.state.input_cursor > in.size() ||
                     (a.ok() != a.value.has_value()) || (a.ok() && a.state.stack.back() != *a.value);
    }
    return {bad_bound == 0 && bad_ref == 0 && bad_repeat == 0 && faults.size() >= 6,
            fmt("10000 runs: bound violations=%d reference mismatches=%d non-repeatable=%d distinct outcomes=%zu",
                bad_bound, bad_ref, bad_repeat, faults.size())};
}

// ------------------------------------------------------------- desk runs

struct SeedRuns {
    StageReport s1_filter, s2_staged, s2_skip, s1_penalty, s6_filter, s6_penalty;
};

constexpr std::uint64_t kPinnedSeed = 1;

StageReport one_stage(PolicyParams& params, const DeskSuite& suite, std::size_t index, OverlongMode mode) {
    StageConfig st = suite.plan[index];
    st.overlong_mode = mode;
    const std::vector<StageConfig> plan{st};
    const std::vector<std::vector<Task>> data{suite.stage_tasks[index]};
    auto res = run_pipeline(params, plan, data, suite.pipeline);
    params = std::move(res.params);
    return res.reports[0];
}

std::map<std::uint64_t, SeedRuns> g_runs;
std::map<std::uint64_t, int> g_stage;

// Runs whatever part of the per-seed ladder is still missing, up to `level`:
// 1 = stage 1 FILTER then stage 2, 2 = plus skip-stage-1, 3 = plus the
// overlong-mode comparisons.
const SeedRuns& seed_runs(std::uint64_t seed, int level) {
    auto& r = g_runs[seed];
    int& done = g_stage[seed];
    if (done >= level) return r;
    const auto suite = make_desk_suite(seed);
    const auto sft = desk_sft_checkpoint(suite);
    PolicyParams after1 = sft, after2;
    if (done < 1 || level >= 3) {
        r.s1_filter = one_stage(after1, suite, 0, OverlongMode::Filter);
        after2 = after1;
        r.s2_staged = one_stage(after2, suite, 1, OverlongMode::Filter);
    }
    if (done < 2 && level >= 2) {
        PolicyParams p = sft;
        r.s2_skip = one_stage(p, suite, 1, OverlongMode::Filter);
    }
    if (level >= 3) {
        PolicyParams p = sft;
        r.s1_penalty = one_stage(p, suite, 0, OverlongMode::Penalty);
        PolicyParams f = after2, q = after2;
        r.s6_filter = one_stage(f, suite, 5, OverlongMode::Filter);
        r.s6_penalty = one_stage(q, suite, 5, OverlongMode::Penalty);
    }
    done = level;
    return r;
}

Outcome desk_gain() {
    const auto& r = seed_runs(kPinnedSeed, 1);
    const double start = *r.s1_filter.start_eval, end = *r.s2_staged.end_eval;
    const int steps = r.s1_filter.steps_run + r.s2_staged.steps_run;
    return {end - start >= 20.0 && steps <= 400,
            fmt("seed %llu: held-out avg@16 %.2f -> %.2f (+%.2f points) in %d steps",
                static_cast<unsigned long long>(kPinnedSeed), start, end, end - start, steps)};
}

Outcome compression() {
    const auto& pinned = seed_runs(kPinnedSeed, 2);
    const double len0 = pinned.s1_filter.mean_length.front(), len1 = pinned.s1_filter.mean_length.back();
    const double cut = 1.0 - len1 / len0;
    int wins = 0;
    std::string per;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const auto& r = seed_runs(s, 2);
        const double staged = *r.s2_staged.end_eval, skip = *r.s2_skip.end_eval;
        wins += staged >= skip;
        per += fmt(" %.1f/%.1f", staged, skip);
    }
    return {cut >= 0.25 && wins >= 4, fmt("stage-1 length %.1f -> %.1f (-%.0f%%); staged>=skip on %d/5 seeds (staged/skip:%s)",
                                          len0, len1, 100.0 * cut, wins, per.c_str())};
}

Outcome overlong_order() {
    int wins = 0, close = 0;
    double trunc64 = 0.0, trunc256 = 0.0;
    std::string per64, per256;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const auto& r = seed_runs(s, 3);
        const double f = *r.s1_filter.end_eval, p = *r.s1_penalty.end_eval;
        wins += f >= p;
        trunc64 += r.s1_filter.truncation_rate.front() / 5.0;
        per64 += fmt(" %.1f/%.1f@%.0f%%", f, p, 100.0 * r.s1_filter.truncation_rate.front());
        const double f6 = *r.s6_filter.end_eval, p6 = *r.s6_penalty.end_eval;
        close += std::abs(f6 - p6) < 2.0;
        trunc256 = std::max({trunc256, r.s6_filter.truncation_rate.front(), r.s6_penalty.truncation_rate.front()});
        per256 += fmt(" %.1f/%.1f", f6, p6);
    }
    const bool ok = trunc64 >= 0.30 && wins >= 4 && trunc256 < 0.05 && close == 5;
    return {ok, fmt("budget 64: mean initial truncation %.0f%%, FILTER>=PENALTY on %d/5 (filter/penalty@trunc:%s); "
                    "budget 256: max initial truncation %.1f%%, |diff|<2 on %d/5 (%s)",
                    100.0 * trunc64, wins, per64.c_str(), 100.0 * trunc256, close, per256.c_str())};
}

// ---------------------------------------------------------- 11. filter contract

PolicyParams oracle_for(std::span<const Task> tasks) {
    PolicyParams p(desk_vocab(), kMaxContextOrder);
    for (const auto& t : tasks) {
        ContextTracker tr(p, t);
        for (auto tok : teacher_trace(t, TraceStyle::Concise).tokens) {
            p.row(tr.keys()[0])[static_cast<std::size_t>(tok)] = 80.0;
            tr.push(tok);
        }
    }
    return p;
}

Outcome filter_contract() {
    GeneratorSpec gs;
    gs.seed = 11;
    gs.count = 40;
    gs.category_mix = {{Category::Math, 0.5}, {Category::Code, 0.5}};
    const auto tasks = generate_tasks(gs);
    // Every third task is learned perfectly; the rest stay at the uniform policy.
    std::vector<Task> taught;
    std::set<std::string> expect_removed;
    for (std::size_t i = 0; i < tasks.size(); i += 3) {
        taught.push_back(tasks[i]);
        expect_removed.insert(tasks[i].id);
    }
    const auto policy = oracle_for(taught);
    const auto snap = filter_solved(tasks, policy, 8, 1.0, 256, 3);
    std::set<std::string> removed;
    for (const auto& [id, why] : snap.reasons)
        if (why == RemovalReason::Solved) removed.insert(id);
    bool exact = removed == expect_removed && snap.retained.size() + removed.size() == tasks.size();

    // Constructed reward tables: only all-ones rows go.
    const std::vector<std::vector<double>> rewards{{1, 1, 1}, {1, 0, 1}, {0, 0, 0}, {1, 1, 1, 1, 1}};
    const auto cs = classify_solved(std::span(tasks).first(4), rewards);
    exact = exact && cs.retained == std::vector<std::string>{tasks[1].id, tasks[2].id};

    // Zero-truncation batches: FILTER and PENALTY must give identical bytes.
    PolicyParams noisy = oracle_for(tasks);
    for (auto& [key, row] : noisy.table)
        for (auto& x : row) x *= 0.08;
    int identical = 0, trials = 0;
    for (std::uint64_t step = 0; step < 5; ++step) {
        RlConfig c;
        c.G = 8;
        c.batch_prompts = 8;
        c.budget = 200;
        c.learning_rate = 0.5;
        c.seed = 99;
        const auto batch = std::span(tasks).subspan(step * 8, 8);
        c.overlong_mode = OverlongMode::Filter;
        const auto a = rl_step(noisy, batch, c, step);
        c.overlong_mode = OverlongMode::Penalty;
        const auto b = rl_step(noisy, batch, c, step);
        if (a.metrics.truncation_rate != 0.0 || a.metrics.empty_batch) continue;
        ++trials;
        identical += to_checkpoint_json(a.params) == to_checkpoint_json(b.params) &&
                     a.metrics.to_json_line() == b.metrics.to_json_line();
    }
    return {exact && trials >= 3 && identical == trials,
            fmt("solved filter removed %zu/%zu taught tasks exactly=%s; FILTER==PENALTY bytes on %d/%d zero-truncation "
                "batches",
                removed.size(), expect_removed.size(), exact ? "yes" : "no", identical, trials)};
}

// ------------------------------------------------------------ 12. determinism

struct GoldenRun {
    std::vector<std::string> checkpoints;
    std::string log;
};

GoldenRun golden_run() {
    const auto suite = make_desk_suite(kPinnedSeed);
    GoldenRun out;
    const auto sft = desk_sft_checkpoint(suite);
    out.checkpoints.push_back(to_checkpoint_json(sft));
    PipelineHooks hooks;
    hooks.on_step = [&](const TrainStepMetrics& m) { out.log += m.to_json_line() + '\n'; };
    hooks.on_stage_end = [&](const StageConfig&, const PolicyParams& p, const StageReport& r) {
        out.checkpoints.push_back(to_checkpoint_json(p));
        out.log += r.to_json() + '\n';
    };
    run_pipeline(sft, suite.plan, suite.stage_tasks, suite.pipeline, hooks);
    return out;
}

Outcome determinism() {
    const auto a = golden_run();
    const auto b = golden_run();
    std::size_t bytes = a.log.size();
    for (const auto& c : a.checkpoints) bytes += c.size();
    const bool same = a.checkpoints == b.checkpoints && a.log == b.log;
    return {same && a.checkpoints.size() == 7,
            fmt("two runs of the 6-stage plan: %zu checkpoints, %zu bytes compared, identical=%s", a.checkpoints.size(),
                bytes, same ? "yes" : "no")};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "advantage correctness", 5, advantages},
        {2, "gradient vs finite differences", 60, gradient},
        {3, "pass@K estimator", 30, pass_at_k_criterion},
        {4, "avg@n std law", 30, avg_std_law},
        {5, "scaling regression", 1, scaling},
        {6, "decontamination vs brute force", 5, decontamination},
        {7, "mini-VM determinism and safety", 30, minivm},
        {8, "desk RL gain", 600, desk_gain},
        {9, "stage-1 compression", 900, compression},
        {10, "overlong-mode ordering", 900, overlong_order},
        {11, "epoch-wise filtering contract", 10, filter_contract},
        // One pipeline run takes about a minute; two are compared.
        {12, "full determinism", 600, determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs < c.limit_s;
        failed += !pass;
        std::printf("%s criterion %2d %s: %s [%.1fs, limit %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.limit_s);
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
