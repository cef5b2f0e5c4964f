#include "stagerl/sft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "stagerl/curation.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/rng.hpp"

namespace stagerl {

void SftDatasetSpec::validate() const {
    if (n_prompts < 1) throw InvalidConfig("n_prompts must be at least 1");
    if (responses_per_prompt < 1) throw InvalidConfig("responses_per_prompt must be at least 1");
    if (!(verbose_fraction >= 0.0 && verbose_fraction <= 1.0))
        throw InvalidConfig("verbose_fraction must lie in [0, 1]");
    source.validate();
}

namespace {

std::string prompt_key(const Task& t) { return to_string(t.category) + "|" + prompt_text(t); }

/// Candidate tasks minus anything seen in the eval set.
std::vector<Task> clean_tasks(std::vector<Task> tasks, const std::set<std::string>& eval_keys,
                              const Corpus& eval_corpus, int ngram) {
    std::vector<Task> kept;
    for (auto& t : tasks)
        if (!eval_keys.count(prompt_key(t))) kept.push_back(std::move(t));
    if (eval_corpus.items.empty()) return kept;
    Corpus train;
    for (const auto& t : kept) train.items.push_back({t.id, prompt_text(t), std::nullopt});
    const auto removed = decontaminate(train, eval_corpus, ngram).report.removed;
    const std::set<std::string> drop(removed.begin(), removed.end());
    std::erase_if(kept, [&](const Task& t) { return drop.count(t.id) > 0; });
    return kept;
}

}  // namespace

std::vector<SftExample> build_sft_dataset(const SftDatasetSpec& spec, std::span<const Task> eval_tasks, int ngram) {
    spec.validate();
    std::set<std::string> eval_keys;
    Corpus eval_corpus;
    eval_corpus.kind = CorpusKind::Eval;
    for (const auto& t : eval_tasks) {
        eval_keys.insert(prompt_key(t));
        eval_corpus.items.push_back({t.id, prompt_text(t), std::nullopt});
    }

    const auto x = static_cast<std::size_t>(spec.n_prompts);
    std::vector<Task> tasks;
    for (int factor = 1; factor <= 16 && tasks.size() < x; factor *= 2) {
        GeneratorSpec g = spec.source;
        g.seed = derive_seed({spec.seed, spec.source.seed});
        g.count = spec.n_prompts * factor;
        try {
            tasks = clean_tasks(generate_tasks(g), eval_keys, eval_corpus, ngram);
        } catch (const InfeasibleSpec&) {
            break;
        }
    }
    if (tasks.size() < x)
        throw InfeasibleSpec("cannot draw " + std::to_string(x) + " prompts disjoint from the eval set");
    tasks.resize(x);

    const std::size_t y = static_cast<std::size_t>(spec.responses_per_prompt);
    const std::size_t total = x * y;
    const auto n_verbose = static_cast<std::size_t>(std::floor(spec.verbose_fraction * static_cast<double>(total) + 0.5));
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed({spec.seed, 0x7374796c65ULL}));
    rng.shuffle(order.begin(), order.end());
    std::vector<bool> verbose(total, false);
    for (std::size_t i = 0; i < n_verbose; ++i) verbose[order[i]] = true;

    std::vector<SftExample> out;
    out.reserve(total);
    for (std::size_t p = 0; p < x; ++p) {
        for (std::size_t r = 0; r < y; ++r) {
            const auto style = verbose[p * y + r] ? TraceStyle::Verbose : TraceStyle::Concise;
            auto trace = teacher_trace(tasks[p], style, p + r);
            out.push_back({tasks[p].id, tasks[p], std::move(trace.tokens), style, 1.0});
        }
    }
    return out;
}

std::string sft_example_to_json_line(const SftExample& ex) {
    nlohmann::ordered_json j;
    j["task_id"] = ex.task_id;
    j["task"] = nlohmann::json::parse(task_to_json_line(ex.task));
    j["target"] = desk_vocab().decode(ex.target_tokens);
    j["style"] = to_string(ex.style);
    j["weight"] = ex.weight;
    return j.dump();
}

SftExample sft_example_from_json_line(const std::string& line, const std::string& source, std::size_t lineno) {
    try {
        const auto j = nlohmann::json::parse(line);
        SftExample ex;
        ex.task_id = j.at("task_id").get<std::string>();
        ex.task = task_from_json_line(j.at("task").dump(), source, lineno);
        ex.target_tokens = desk_vocab().encode(j.at("target").get<std::string>());
        ex.style = trace_style_from_string(j.at("style").get<std::string>());
        ex.weight = j.value("weight", 1.0);
        return ex;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source, lineno, e.what());
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(source, lineno, e.what());
    }
}

void SftConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidConfig("learning_rate must be positive");
    if (batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
    if (plateau_window < 1) throw InvalidConfig("plateau_window must be at least 1");
}

std::string EpochReport::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_cross_entropy"] = train_cross_entropy;
    j["eval_pass1"] = eval_pass1 ? nlohmann::ordered_json(*eval_pass1) : nlohmann::ordered_json(nullptr);
    j["checkpoint"] = checkpoint_path;
    return j.dump();
}

double sft_cross_entropy(const PolicyParams& params, std::span<const SftExample> dataset) {
    double nll = 0.0;
    double tokens = 0.0;
    for (const auto& ex : dataset) {
        for (double lp : logprob_trace(params, ex.task, ex.target_tokens, 1.0)) nll -= ex.weight * lp;
        tokens += ex.weight * static_cast<double>(ex.target_tokens.size());
    }
    return tokens > 0.0 ? nll / tokens : 0.0;
}

SparseGrad sft_gradient(const PolicyParams& params, std::span<const SftExample> examples) {
    SparseGrad g(params.vocab_size());
    for (const auto& ex : examples) accumulate_grad_logprob(params, ex.task, ex.target_tokens, 1.0, ex.weight, g);
    return g;
}

SftResult sft_train(const PolicyParams& init, std::span<const SftExample> dataset, const SftConfig& cfg,
                    std::span<const Task> eval_tasks, const EvalConfig& eval, const std::string& out_dir) {
    cfg.validate();
    if (dataset.empty()) throw BadArgs("empty SFT dataset");
    SftResult res;
    res.params = init;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    OptimizerConfig oc;
    oc.kind = cfg.optimizer;
    oc.learning_rate = cfg.learning_rate;
    Optimizer opt(oc);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch)}));
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += B) {
            const std::size_t end = std::min(order.size(), start + B);
            SparseGrad g(res.params.vocab_size());
            double tokens = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = dataset[order[k]];
                accumulate_grad_logprob(res.params, ex.task, ex.target_tokens, 1.0, ex.weight, g);
                tokens += ex.weight * static_cast<double>(ex.target_tokens.size());
            }
            if (tokens <= 0.0) continue;
            g.scale(1.0 / tokens);
            opt.step(res.params, g);
        }
        ++res.params.version;

        EpochReport rep;
        rep.epoch = epoch;
        rep.train_cross_entropy = sft_cross_entropy(res.params, dataset);
        if (!eval_tasks.empty()) rep.eval_pass1 = eval_accuracy(res.params, eval_tasks, eval);
        if (!out_dir.empty()) {
            rep.checkpoint_path = out_dir + "/epoch_" + std::to_string(epoch) + ".json";
            save_checkpoint(res.params, rep.checkpoint_path);
        }
        res.reports.push_back(rep);
        res.checkpoints.push_back(res.params);

        const auto w = static_cast<std::size_t>(cfg.plateau_window);
        if (cfg.plateau_points && rep.eval_pass1 && res.reports.size() > w) {
            const auto& before = res.reports[res.reports.size() - 1 - w];
            if (*rep.eval_pass1 - *before.eval_pass1 < *cfg.plateau_points) break;
        }
    }
    return res;
}

std::vector<GridRow> scaling_grid(const PolicyParams& init, std::span<const SftDatasetSpec> specs,
                                  const SftConfig& cfg, std::span<const Task> eval_tasks, const EvalConfig& eval) {
    if (eval_tasks.empty()) throw BadArgs("scaling grid needs an eval set");
    std::vector<GridRow> rows;
    for (const auto& spec : specs) {
        GridRow row;
        row.x = spec.n_prompts;
        row.y = spec.responses_per_prompt;
        try {
            const auto data = build_sft_dataset(spec, eval_tasks);
            SftConfig c = cfg;
            if (!c.plateau_points) c.plateau_points = 0.5;
            const auto res = sft_train(init, data, c, eval_tasks, eval);
            row.z = *res.reports.back().eval_pass1;
            row.epochs_run = static_cast<int>(res.reports.size());
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace stagerl
