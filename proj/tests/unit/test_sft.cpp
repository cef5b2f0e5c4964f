#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "stagerl/curation.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/sft.hpp"
#include "stagerl/verifier.hpp"

using namespace stagerl;

namespace {

SftDatasetSpec small_spec(int x, int y, double verbose) {
    SftDatasetSpec s;
    s.n_prompts = x;
    s.responses_per_prompt = y;
    s.verbose_fraction = verbose;
    s.seed = 9;
    s.source.seed = 2;
    s.source.count = x;
    return s;
}

PolicyParams fresh() {
    FeatureSet fs;
    fs.focus = fs.shape = true;
    return PolicyParams(desk_vocab(), 3, fs);
}

double weighted_loglik(const PolicyParams& p, std::span<const SftExample> data) {
    double s = 0.0;
    for (const auto& ex : data)
        for (double lp : logprob_trace(p, ex.task, ex.target_tokens, 1.0)) s += ex.weight * lp;
    return s;
}

}  // namespace

TEST_CASE("SFT dataset has x*y examples with the requested style mix") {
    const auto data = build_sft_dataset(small_spec(40, 3, 0.25));
    REQUIRE(data.size() == 120);
    CHECK(data == build_sft_dataset(small_spec(40, 3, 0.25)));
    std::set<std::string> prompts;
    int verbose = 0;
    for (const auto& ex : data) {
        prompts.insert(ex.task_id);
        verbose += ex.style == TraceStyle::Verbose;
        Rollout r;
        r.tokens = ex.target_tokens;
        r.logprobs.assign(r.tokens.size(), 0.0);
        CHECK(verify(r, ex.task).value == 1.0);
        if (ex.style == TraceStyle::Concise) CHECK(ex.target_tokens == teacher_trace(ex.task, ex.style).tokens);
    }
    CHECK(prompts.size() == 40);
    CHECK(verbose == 30);
    CHECK_THROWS_AS(build_sft_dataset(small_spec(0, 1, 0.0)), InvalidConfig);
}

TEST_CASE("SFT prompts avoid the eval set") {
    GeneratorSpec g;
    g.seed = 2;
    g.count = 150;
    const auto eval = generate_tasks(g);
    const auto data = build_sft_dataset(small_spec(60, 1, 0.0), eval, 3);
    REQUIRE(data.size() == 60);
    Corpus train, ev;
    for (const auto& ex : data) train.items.push_back({ex.task_id, prompt_text(ex.task), std::nullopt});
    for (const auto& t : eval) ev.items.push_back({t.id, prompt_text(t), std::nullopt});
    CHECK(decontaminate(train, ev, 3).report.removed.empty());
}

TEST_CASE("SFT example JSON lines round-trip") {
    for (const auto& ex : build_sft_dataset(small_spec(10, 2, 0.5)))
        CHECK(sft_example_from_json_line(sft_example_to_json_line(ex)) == ex);
    CHECK_THROWS_AS(sft_example_from_json_line("{\"task_id\": 3}", "f", 2), ParseError);
}

TEST_CASE("SFT gradient matches finite differences of the log-likelihood") {
    auto data = build_sft_dataset(small_spec(4, 1, 0.5));
    data[1].weight = 2.5;
    PolicyParams p = fresh();
    Rng rng(4);
    const auto g = sft_gradient(p, data);
    for (const auto& [key, row] : g.rows()) {
        auto& prow = p.row(key);
        for (auto& x : prow) x = rng.uniform() - 0.5;
    }
    const auto grad = sft_gradient(p, data);
    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    for (const auto& [key, row] : grad.rows()) {
        for (std::size_t v = 0; v < row.size(); v += 5) {
            auto& x = p.row(key)[v];
            const double x0 = x;
            x = x0 + h;
            const double up = weighted_loglik(p, data);
            x = x0 - h;
            const double dn = weighted_loglik(p, data);
            x = x0;
            const double fd = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(fd - row[v]) / std::max(1.0, std::abs(fd)));
            ++checked;
        }
        if (checked > 300) break;
    }
    CHECK(checked > 50);
    CHECK(worst < 1e-6);
}

TEST_CASE("SFT training lowers cross-entropy and saves epoch checkpoints") {
    const auto data = build_sft_dataset(small_spec(60, 1, 0.0));
    SftConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.3;
    cfg.optimizer = OptimizerKind::Adam;
    const auto dir = (std::filesystem::temp_directory_path() / "stagerl_sft_test").string();
    std::filesystem::remove_all(dir);
    const auto before = sft_cross_entropy(fresh(), data);
    const auto res = sft_train(fresh(), data, cfg, {}, {}, dir);
    REQUIRE(res.reports.size() == 3);
    CHECK(res.reports[0].train_cross_entropy < before);
    CHECK(res.reports[2].train_cross_entropy < res.reports[0].train_cross_entropy);
    CHECK_FALSE(res.reports[0].eval_pass1.has_value());
    for (int e = 1; e <= 3; ++e) CHECK(std::filesystem::exists(dir + "/epoch_" + std::to_string(e) + ".json"));
    CHECK(to_checkpoint_json(load_checkpoint(dir + "/epoch_3.json")) == to_checkpoint_json(res.params));
    CHECK(to_checkpoint_json(sft_train(fresh(), data, cfg).params) == to_checkpoint_json(res.params));
    std::filesystem::remove_all(dir);
}

TEST_CASE("scaling grid records failing cells and keeps going") {
    GeneratorSpec g;
    g.seed = 77;
    g.count = 20;
    const auto eval = generate_tasks(g);
    std::vector<SftDatasetSpec> specs{small_spec(20, 1, 0.0), small_spec(10, 2, 0.0)};
    // Two-operand products alone cannot supply this many prompts.
    specs.insert(specs.begin() + 1, small_spec(500, 1, 0.0));
    specs[1].source.difficulty_hist = {0, 1, 0, 0, 0};
    SftConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.3;
    cfg.optimizer = OptimizerKind::Adam;
    EvalConfig ev;
    ev.samples = 2;
    const auto rows = scaling_grid(fresh(), specs, cfg, eval, ev);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].error.empty());
    CHECK_FALSE(rows[1].error.empty());
    CHECK(rows[2].error.empty());
    CHECK(rows[2].x == 10);
    CHECK(rows[2].y == 2);
    CHECK(rows[2].epochs_run >= 1);
}
