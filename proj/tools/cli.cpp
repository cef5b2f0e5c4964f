#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "run_config.hpp"
#include "stagerl/curation.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/evalkit.hpp"
#include "stagerl/io.hpp"

namespace stagerl::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::string default_out() {
    const char* env = std::getenv(kOutEnv);
    return env && *env ? env : "stagerl_out";
}

std::string join(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

/// SOURCE_DATE_EPOCH pins the clock so logs can be compared byte for byte.
std::string timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH"); e && *e) t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Append-only MetricsRecord log, `<out>/<command>.metrics.jsonl`,
/// restarted by each invocation so reruns reproduce it.
class MetricsLog {
public:
    MetricsLog(const std::string& out_dir, std::string command)
        : path_(join(out_dir, command + ".metrics.jsonl")), command_(std::move(command)) {
        std::filesystem::create_directories(out_dir);
        std::filesystem::remove(path_);
    }

    void record(const char* counter_key, std::int64_t counter, const ojson& payload) const {
        ojson j;
        j["timestamp"] = timestamp();
        j["command"] = command_;
        j[counter_key] = counter;
        j["payload"] = payload;
        io::append_line(path_, j.dump());
    }

private:
    std::string path_;
    std::string command_;
};

// ------------------------------------------------------------------ curate

struct CurateArgs {
    std::string train, eval, balance, unit = "word", out;
    int ngram = 9;
    bool dedup = false;
    std::uint64_t seed = 0;
};

int cmd_curate(const CurateArgs& a, std::ostream& out) {
    Corpus corpus = load_corpus(a.train, CorpusKind::Train);
    Corpus eval;
    eval.kind = CorpusKind::Eval;
    if (!a.eval.empty()) eval = load_corpus(a.eval, CorpusKind::Eval);
    const auto unit = a.unit == "char" ? NgramUnit::Char : NgramUnit::Word;
    if (a.unit != "char" && a.unit != "word") throw BadArgs("--unit must be word or char");

    ojson summary;
    summary["input"] = corpus.items.size();
    std::vector<std::string> dedup_removed;
    if (a.dedup) {
        auto d = dedup(corpus);
        corpus = std::move(d.corpus);
        dedup_removed = std::move(d.removed);
    }
    summary["dedup_removed"] = dedup_removed;
    auto dc = decontaminate(corpus, eval, a.ngram, unit);
    corpus = std::move(dc.train);
    summary["decontam_removed"] = dc.report.removed.size();
    std::size_t before_balance = corpus.items.size();
    if (!a.balance.empty()) corpus = length_balance(corpus, parse_buckets(a.balance), a.seed);
    summary["balance_removed"] = before_balance - corpus.items.size();
    summary["output"] = corpus.items.size();

    io::write_file_atomic(join(a.out, "corpus.jsonl"), corpus_to_jsonl(corpus));
    io::write_file_atomic(join(a.out, "decontam_report.json"), dc.report.to_json() + "\n");
    io::write_file_atomic(join(a.out, "curate_summary.json"), summary.dump(2) + "\n");
    MetricsLog(a.out, "curate").record("step", 0, summary);
    out << "kept " << corpus.items.size() << " of " << summary["input"].get<std::size_t>() << " items; "
        << dc.report.removed.size() << " removed by " << a.ngram << "-gram overlap\n";
    return kOk;
}

// --------------------------------------------------------------------- sft

struct SftArgs {
    std::string config, out, grid;
    int epochs = 0;
};

std::vector<std::pair<int, int>> parse_grid(const std::string& spec) {
    std::vector<std::pair<int, int>> cells;
    std::istringstream in(spec);
    for (std::string part; std::getline(in, part, ',');) {
        const auto colon = part.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument(part);
            cells.emplace_back(std::stoi(part.substr(0, colon)), std::stoi(part.substr(colon + 1)));
        } catch (const std::exception&) {
            throw BadArgs("bad grid cell '" + part + "', expected x:y");
        }
    }
    if (cells.empty()) throw BadArgs("--grid needs at least one x:y cell");
    return cells;
}

int cmd_sft(const SftArgs& a, std::ostream& out) {
    const auto cfg = load_run_config(a.config);
    SftConfig sc = cfg.sft;
    if (a.epochs > 0) sc.epochs = a.epochs;
    sc.validate();
    MetricsLog log(a.out, "sft");

    if (!a.grid.empty()) {
        if (cfg.sft_specs.empty()) throw InvalidConfig("sft.data is empty");
        if (cfg.eval_tasks.empty()) throw InvalidConfig("the scaling grid needs held-out tasks");
        std::vector<SftDatasetSpec> specs;
        for (const auto& [x, y] : parse_grid(a.grid)) {
            SftDatasetSpec s = cfg.sft_specs.front();
            s.n_prompts = x;
            s.responses_per_prompt = y;
            specs.push_back(s);
        }
        std::vector<Task> ref;
        for (const auto& t : cfg.eval_tasks)
            if (specs.front().source.category_mix.count(t.category)) ref.push_back(t);
        const auto rows = scaling_grid(cfg.fresh_policy(), specs, sc, ref, cfg.eval);
        std::string csv = "x,y,z\n";
        auto arr = ojson::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            ojson row{{"x", r.x}, {"y", r.y}, {"z", r.z}, {"epochs_run", r.epochs_run}, {"error", r.error}};
            log.record("step", static_cast<std::int64_t>(i), row);
            arr.push_back(row);
            if (r.error.empty()) {
                std::ostringstream line;
                line.precision(17);
                line << r.x << ',' << r.y << ',' << r.z << '\n';
                csv += line.str();
            } else {
                out << "grid cell " << r.x << ":" << r.y << " failed: " << r.error << "\n";
            }
        }
        io::write_file_atomic(join(a.out, "grid.csv"), csv);
        io::write_file_atomic(join(a.out, "grid.json"), arr.dump(2) + "\n");
        out << "wrote " << join(a.out, "grid.csv") << "\n";
        return kOk;
    }

    const auto data = cfg.build_sft_data();
    std::string lines;
    for (const auto& ex : data) lines += sft_example_to_json_line(ex) + '\n';
    io::write_file_atomic(join(a.out, "sft_data.jsonl"), lines);
    const auto res = sft_train(cfg.fresh_policy(), data, sc, cfg.eval_tasks, cfg.eval, a.out);
    auto reports = ojson::array();
    for (const auto& r : res.reports) {
        const auto j = ojson::parse(r.to_json());
        log.record("epoch", r.epoch, j);
        reports.push_back(j);
        out << "epoch " << r.epoch << " train_ce=" << r.train_cross_entropy;
        if (r.eval_pass1) out << " eval=" << *r.eval_pass1;
        out << "\n";
    }
    io::write_file_atomic(join(a.out, "epochs.json"), reports.dump(2) + "\n");
    return kOk;
}

// ---------------------------------------------------------------------- rl

struct RlArgs {
    std::string config, init, stages, out;
    int first_stage = 0;
};

int cmd_rl(const RlArgs& a, std::ostream& out, std::ostream& err) {
    const auto cfg = load_run_config(a.config);
    const auto init = load_checkpoint(a.init);
    const auto plan = a.stages.empty() ? cfg.plan : plan_from_json(io::read_file(a.stages), a.stages);
    if (a.first_stage < 0 || static_cast<std::size_t>(a.first_stage) > plan.size())
        throw BadArgs("--first-stage out of range");
    const auto datasets = cfg.datasets_for(plan);
    MetricsLog log(a.out, "rl");
    io::write_file_atomic(join(a.out, "plan.json"), plan_to_json(plan) + "\n");

    PipelineHooks hooks;
    std::int64_t global_step = 0;
    hooks.on_step = [&](const TrainStepMetrics& m) {
        log.record("step", global_step++, ojson::parse(m.to_json_line()));
    };
    auto reports = ojson::array();
    hooks.on_stage_end = [&](const StageConfig& st, const PolicyParams& p, const StageReport& r) {
        const auto id = std::to_string(st.stage_id);
        save_checkpoint(p, join(a.out, "stage_" + id + ".json"));
        io::write_file_atomic(join(a.out, "stage_" + id + "_report.json"), r.to_json() + "\n");
        std::string snaps;
        for (const auto& s : r.snapshots) snaps += s.to_jsonl();
        if (!r.snapshots.empty()) io::write_file_atomic(join(a.out, "stage_" + id + "_filter.jsonl"), snaps);
        reports.push_back(ojson::parse(r.to_json()));
        out << "stage " << id << " steps=" << r.steps_run << " T=" << r.temperature;
        if (r.start_eval) out << " eval " << *r.start_eval << " -> " << *r.end_eval;
        out << "\n";
    };
    try {
        const auto res = run_pipeline(init, plan, datasets, cfg.pipeline, hooks, static_cast<std::size_t>(a.first_stage));
        save_checkpoint(res.params, join(a.out, "final.json"));
        io::write_file_atomic(join(a.out, "reports.json"), reports.dump(2) + "\n");
    } catch (const Divergence& d) {
        save_checkpoint(d.last_good(), join(a.out, "last_good.json"));
        io::write_file_atomic(join(a.out, "reports.json"), reports.dump(2) + "\n");
        err << d.what() << "; last finite checkpoint kept at " << join(a.out, "last_good.json") << "\n";
        return kDivergence;
    }
    return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint, outcomes, config, tasks, out, ks;
    int samples = 0, n = 0, reps = 100, max_tokens = 256;
    double temperature = 0.6;
    std::uint64_t seed = 0;
};

std::vector<int> parse_ks(const std::string& s) {
    std::vector<int> ks;
    std::istringstream in(s);
    for (std::string part; std::getline(in, part, ',');) {
        try {
            ks.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw BadArgs("bad K '" + part + "'");
        }
    }
    return ks;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.checkpoint.empty() == a.outcomes.empty()) throw BadArgs("give exactly one of --checkpoint or --outcomes");
    OutcomeMatrix m;
    std::vector<int> ks = parse_ks(a.ks);
    if (!a.outcomes.empty()) {
        m = ingest_outcomes(a.outcomes);
    } else {
        std::vector<Task> tasks;
        EvalConfig ec;
        ec.samples = a.samples > 0 ? a.samples : 16;
        ec.temperature = a.temperature;
        ec.max_tokens = a.max_tokens;
        ec.seed = a.seed;
        if (!a.config.empty()) {
            const auto cfg = load_run_config(a.config);
            tasks = cfg.eval_tasks;
            ec.top_p = cfg.eval.top_p;
            if (a.samples <= 0) ec.samples = cfg.eval.samples;
            // Configured Ks beyond the sample count are dropped rather than rejected.
            if (ks.empty())
                for (int k : cfg.ks)
                    if (k <= ec.samples) ks.push_back(k);
        }
        if (!a.tasks.empty()) tasks = load_tasks(a.tasks);
        if (tasks.empty()) throw BadArgs("no eval tasks: give --tasks or a --config with held-out tasks");
        m = sample_outcomes(load_checkpoint(a.checkpoint), tasks, ec);
        io::write_file_atomic(join(a.out, "outcomes.csv"), export_outcomes_csv(m));
    }
    m.validate();
    const int N = static_cast<int>(m.samples_per_problem);
    if (ks.empty())
        for (int k = 1; k <= N; k *= 2) ks.push_back(k);
    const int n = a.n > 0 ? a.n : N;

    ojson j;
    j["problems"] = m.num_problems();
    j["samples_per_problem"] = N;
    j["accuracy"] = m.accuracy();
    const auto avg = avg_at_n(m, n, a.reps, a.seed);
    j["avg_at_n"] = {{"n", avg.n}, {"mean", avg.mean}, {"std", avg.std}, {"repetitions", avg.repetitions},
                     {"seed", avg.seed}};
    std::string csv = "K,estimate,closed_form\n";
    auto arr = ojson::array();
    for (int K : ks) {
        const auto e = pass_at_k(m, K, a.reps, a.seed);
        arr.push_back({{"K", K}, {"estimate", e.estimate}, {"closed_form", e.closed_form}, {"repetitions", e.repetitions}});
        std::ostringstream line;
        line.precision(17);
        line << K << ',' << e.estimate << ',' << e.closed_form << '\n';
        csv += line.str();
        out << "pass@" << K << " = " << e.estimate << "\n";
    }
    j["pass_at_k"] = arr;
    const std::vector<double> edges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    const auto h = solve_rate_histogram(m, edges);
    j["solve_rate_histogram"] = {{"edges", h.edges}, {"counts", h.counts}, {"zero_rate", h.zero_rate}};
    std::string hcsv = "lo,hi,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        std::ostringstream line;
        line << edges[b] << ',' << edges[b + 1] << ',' << h.counts[b] << '\n';
        hcsv += line.str();
    }
    io::write_file_atomic(join(a.out, "eval.json"), j.dump(2) + "\n");
    io::write_file_atomic(join(a.out, "pass_at_k.csv"), csv);
    io::write_file_atomic(join(a.out, "solve_rate_histogram.csv"), hcsv);
    MetricsLog(a.out, "eval").record("step", 0, j);
    out << "avg@" << n << " = " << avg.mean << " (std " << avg.std << ")\n";
    return kOk;
}

// ----------------------------------------------------------------- regress

int cmd_regress(const std::string& points, const std::string& out_dir, std::ostream& out) {
    const auto pts = load_points(points);
    const auto fit = fit_scaling(pts);
    io::write_file_atomic(join(out_dir, "fit.json"), fit.to_json() + "\n");
    MetricsLog(out_dir, "regress").record("step", 0, ojson::parse(fit.to_json()));
    out << fit.summary() << "\n";
    return kOk;
}

// --------------------------------------------------------------- gen, plan

struct GenArgs {
    std::string spec, out, category = "MATH";
    std::uint64_t seed = 0;
    int count = 100;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    GeneratorSpec g;
    if (!a.spec.empty()) {
        try {
            g = generator_from_json(nlohmann::json::parse(io::read_file(a.spec)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(a.spec, 0, e.what());
        } catch (const InvalidConfig& e) {
            throw ParseError(a.spec, 0, e.what());
        }
    } else {
        g.seed = a.seed;
        g.count = a.count;
        if (a.category == "MIXED") g.category_mix = {{Category::Math, 0.5}, {Category::Code, 0.5}};
        else g.category_mix = {{category_from_string(a.category), 1.0}};
    }
    const auto tasks = generate_tasks(g);
    std::string text;
    for (const auto& t : tasks) text += task_to_json_line(t) + '\n';
    io::write_file_atomic(a.out, text);
    out << "wrote " << tasks.size() << " tasks to " << a.out << "\n";
    return kOk;
}

int cmd_plan(const std::string& config, const std::string& out_path, std::ostream& out) {
    const auto plan = config.empty() ? default_pipeline() : load_run_config(config).plan;
    const auto text = plan_to_json(plan) + "\n";
    if (out_path.empty()) out << text;
    else io::write_file_atomic(out_path, text);
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Staged GRPO training, evaluation and data tooling at desk scale"};
    app.name(args.empty() ? "stagerl" : std::filesystem::path(args[0]).filename().string());
    app.require_subcommand(1);
    const std::string out_help = std::string("Output directory (default $") + kOutEnv + " or ./stagerl_out)";

    CurateArgs ca;
    ca.out = default_out();
    auto* curate = app.add_subcommand("curate", "dedup, n-gram decontamination and length balancing");
    curate->add_option("--train", ca.train, "Training corpus (JSON lines)")->required();
    curate->add_option("--eval", ca.eval, "Held-out corpus (JSON lines)");
    curate->add_option("--ngram", ca.ngram, "n-gram size")->capture_default_str();
    curate->add_option("--unit", ca.unit, "n-gram unit: word or char")->capture_default_str();
    curate->add_flag("--dedup", ca.dedup, "Drop normalized duplicates first");
    curate->add_option("--balance", ca.balance, "Length buckets, e.g. 0-100:0.5,100-:0.5");
    curate->add_option("--seed", ca.seed, "Seed for length balancing")->capture_default_str();
    curate->add_option("--out", ca.out, out_help);

    SftArgs sa;
    sa.out = default_out();
    auto* sft = app.add_subcommand("sft", "build the SFT set and train, one checkpoint per epoch");
    sft->add_option("--config", sa.config, "Run config (JSON)")->required();
    sft->add_option("--epochs", sa.epochs, "Override the configured epoch count");
    sft->add_option("--grid", sa.grid, "Scaling grid cells x:y,... (writes grid.csv instead of training once)");
    sft->add_option("--out", sa.out, out_help);

    RlArgs ra;
    ra.out = default_out();
    auto* rl = app.add_subcommand("rl", "run the staged RL pipeline");
    rl->add_option("--config", ra.config, "Run config (JSON)")->required();
    rl->add_option("--init", ra.init, "Initial checkpoint")->required();
    rl->add_option("--stages", ra.stages, "Stage plan (JSON); defaults to the configured plan");
    rl->add_option("--first-stage", ra.first_stage, "Resume at this plan index with --init as its input")
        ->capture_default_str();
    rl->add_option("--out", ra.out, out_help);

    EvalArgs ea;
    ea.out = default_out();
    auto* ev = app.add_subcommand("eval", "avg@n, pass@K and solve-rate histogram");
    auto* ck = ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint to sample from");
    auto* oc = ev->add_option("--outcomes", ea.outcomes, "Outcome matrix (CSV or JSON lines)");
    ck->excludes(oc);
    ev->add_option("--config", ea.config, "Run config supplying held-out tasks");
    ev->add_option("--tasks", ea.tasks, "Held-out tasks (JSON lines)");
    ev->add_option("--samples", ea.samples, "Samples per task when sampling a checkpoint (default: config, else 16)");
    ev->add_option("--n", ea.n, "n for avg@n (default: all samples)");
    ev->add_option("--k", ea.ks, "Comma-separated K list (default: powers of two up to N)");
    ev->add_option("--reps", ea.reps, "Repetitions")->capture_default_str();
    ev->add_option("--temperature", ea.temperature, "Sampling temperature")->capture_default_str();
    ev->add_option("--max-tokens", ea.max_tokens, "Sampling budget")->capture_default_str();
    ev->add_option("--seed", ea.seed, "Seed for sampling and repetitions")->capture_default_str();
    ev->add_option("--out", ea.out, out_help);

    std::string points, rout = default_out();
    auto* reg = app.add_subcommand("regress", "fit z = a*std(log2 x) + b*std(log2 y) + c");
    reg->add_option("--points", points, "CSV with header x,y,z")->required();
    reg->add_option("--out", rout, out_help);

    GenArgs ga;
    auto* gen = app.add_subcommand("gen", "generate synthetic tasks");
    gen->add_option("--spec", ga.spec, "Generator spec (JSON)");
    gen->add_option("--seed", ga.seed)->capture_default_str();
    gen->add_option("--count", ga.count)->capture_default_str();
    gen->add_option("--category", ga.category, "MATH, CODE or MIXED")->capture_default_str();
    gen->add_option("--out", ga.out, "Task file (JSON lines)")->required();

    std::string pconfig, pout;
    auto* plan = app.add_subcommand("plan", "print the default or configured stage plan");
    plan->add_option("--config", pconfig, "Run config (JSON)");
    plan->add_option("--out", pout, "Write to this file instead of stdout");

    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kInputError;
    }

    try {
        if (*curate) return cmd_curate(ca, out);
        if (*sft) return cmd_sft(sa, out);
        if (*rl) return cmd_rl(ra, out, err);
        if (*ev) return cmd_eval(ea, out);
        if (*reg) return cmd_regress(points, rout, out);
        if (*gen) return cmd_gen(ga, out);
        if (*plan) return cmd_plan(pconfig, pout, out);
    } catch (const Unsatisfiable& e) {
        err << e.what() << "\n";
        return kUnsatisfiable;
    } catch (const Degenerate& e) {
        err << e.what() << "\n";
        return kUnsatisfiable;
    } catch (const InfeasibleSpec& e) {
        err << e.what() << "\n";
        return kUnsatisfiable;
    } catch (const Divergence& e) {
        err << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        err << e.what() << "\n";
        return kInputError;
    }
    return kInputError;
}

}  // namespace stagerl::cli
