#include "run_config.hpp"

#include <filesystem>
#include <set>

#include "stagerl/errors.hpp"
#include "stagerl/io.hpp"

namespace stagerl::cli {

namespace {

using json = nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidConfig(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw InvalidConfig("unknown key '" + k + "' in " + where);
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

std::string resolve_path(const std::string& p, const std::string& base) {
    namespace fs = std::filesystem;
    fs::path path(p);
    if (path.is_relative()) path = fs::path(base).parent_path() / path;
    if (!fs::exists(path)) throw InvalidConfig("path '" + p + "' does not exist");
    return path.string();
}

SftDatasetSpec sft_spec_from_json(const json& j) {
    only_keys(j, {"n_prompts", "responses_per_prompt", "verbose_fraction", "seed", "generator"}, "sft.data[]");
    SftDatasetSpec s;
    maybe(j, "n_prompts", s.n_prompts);
    maybe(j, "responses_per_prompt", s.responses_per_prompt);
    maybe(j, "verbose_fraction", s.verbose_fraction);
    maybe(j, "seed", s.seed);
    if (j.contains("generator")) s.source = generator_from_json(j["generator"]);
    s.validate();
    return s;
}

void apply_sft_train(const json& j, SftConfig& c) {
    only_keys(j, {"epochs", "learning_rate", "optimizer", "batch_size", "seed", "plateau_points", "plateau_window"},
              "sft.train");
    maybe(j, "epochs", c.epochs);
    maybe(j, "learning_rate", c.learning_rate);
    if (j.contains("optimizer")) c.optimizer = optimizer_kind_from_string(j["optimizer"].get<std::string>());
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "seed", c.seed);
    if (j.contains("plateau_points"))
        c.plateau_points = j["plateau_points"].is_null() ? std::nullopt
                                                         : std::optional<double>(j["plateau_points"].get<double>());
    maybe(j, "plateau_window", c.plateau_window);
}

void apply_rl(const json& j, PipelineConfig& p) {
    only_keys(j, {"G", "batch_prompts", "learning_rate", "optimizer", "momentum", "filter_temperature",
                  "target_entropy", "temperature_candidates", "probe_tasks"},
              "rl");
    maybe(j, "G", p.G);
    maybe(j, "batch_prompts", p.batch_prompts);
    maybe(j, "learning_rate", p.learning_rate);
    if (j.contains("optimizer")) p.optimizer = optimizer_kind_from_string(j["optimizer"].get<std::string>());
    maybe(j, "momentum", p.momentum);
    maybe(j, "filter_temperature", p.filter_temperature);
    maybe(j, "target_entropy", p.target_entropy);
    maybe(j, "temperature_candidates", p.temperature_candidates);
    maybe(j, "probe_tasks", p.probe_tasks);
}

void apply_eval(const json& j, RunConfig& c) {
    only_keys(j, {"samples", "temperature", "top_p", "max_tokens", "seed", "k", "reps"}, "eval");
    maybe(j, "samples", c.eval.samples);
    maybe(j, "temperature", c.eval.temperature);
    if (j.contains("top_p"))
        c.eval.top_p = j["top_p"].is_null() ? std::nullopt : std::optional<double>(j["top_p"].get<double>());
    maybe(j, "max_tokens", c.eval.max_tokens);
    maybe(j, "seed", c.eval.seed);
    maybe(j, "k", c.ks);
    maybe(j, "reps", c.reps);
}

std::vector<int> default_ks(int n) {
    std::vector<int> ks;
    for (int k = 1; k <= n; k *= 2) ks.push_back(k);
    return ks;
}

}  // namespace

GeneratorSpec generator_from_json(const json& j) {
    only_keys(j, {"seed", "count", "category_mix", "difficulty_hist", "operand_min", "operand_max", "operators",
                  "opcodes", "code_min_operands", "code_max_operands", "code_test_cases", "id_prefix"},
              "generator");
    GeneratorSpec g;
    maybe(j, "seed", g.seed);
    maybe(j, "count", g.count);
    if (j.contains("category_mix")) {
        g.category_mix.clear();
        for (const auto& [k, v] : j["category_mix"].items()) g.category_mix[category_from_string(k)] = v.get<double>();
    }
    maybe(j, "difficulty_hist", g.difficulty_hist);
    maybe(j, "operand_min", g.operand_min);
    maybe(j, "operand_max", g.operand_max);
    maybe(j, "operators", g.operators);
    maybe(j, "opcodes", g.opcodes);
    maybe(j, "code_min_operands", g.code_min_operands);
    maybe(j, "code_max_operands", g.code_max_operands);
    maybe(j, "code_test_cases", g.code_test_cases);
    maybe(j, "id_prefix", g.id_prefix);
    g.validate();
    return g;
}

nlohmann::ordered_json generator_to_json(const GeneratorSpec& g) {
    nlohmann::ordered_json j;
    j["seed"] = g.seed;
    j["count"] = g.count;
    nlohmann::ordered_json mix;
    for (const auto& [c, w] : g.category_mix) mix[to_string(c)] = w;
    j["category_mix"] = mix;
    j["difficulty_hist"] = g.difficulty_hist;
    j["operand_min"] = g.operand_min;
    j["operand_max"] = g.operand_max;
    j["operators"] = g.operators;
    j["opcodes"] = g.opcodes;
    j["code_min_operands"] = g.code_min_operands;
    j["code_max_operands"] = g.code_max_operands;
    j["code_test_cases"] = g.code_test_cases;
    j["id_prefix"] = g.id_prefix;
    return j;
}

PolicyParams RunConfig::fresh_policy() const { return PolicyParams(desk_vocab(), context_order, features); }

std::vector<SftExample> RunConfig::build_sft_data() const {
    std::vector<SftExample> out;
    for (const auto& spec : sft_specs) {
        std::vector<Task> ref;
        for (const auto& t : eval_tasks)
            if (spec.source.category_mix.count(t.category)) ref.push_back(t);
        auto part = build_sft_dataset(spec, ref);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<std::vector<Task>> RunConfig::datasets_for(const std::vector<StageConfig>& stages) const {
    std::vector<std::vector<Task>> out;
    for (const auto& st : stages) {
        if (!rl_tasks.empty()) {
            std::vector<Task> d;
            for (const auto& t : rl_tasks)
                if (t.category == st.domain) d.push_back(t);
            if (d.empty())
                throw InvalidConfig("paths.tasks has no " + to_string(st.domain) + " task for stage " +
                                    std::to_string(st.stage_id));
            out.push_back(std::move(d));
        } else if (desk) {
            out.push_back(desk_stage_tasks(*desk, st));
        } else {
            throw InvalidConfig("no RL tasks: set paths.tasks or preset");
        }
    }
    return out;
}

RunConfig parse_run_config(const json& j, const std::string& source) {
    try {
        only_keys(j, {"schema", "seed", "preset", "paths", "policy", "sft", "rl", "eval", "plan"}, "config");
        if (j.value("schema", std::string()) != kRunSchema)
            throw InvalidConfig(std::string("schema must be \"") + kRunSchema + "\"");
        if (!j.contains("seed")) throw InvalidConfig("seed is mandatory");
        RunConfig c;
        c.source = source;
        c.seed = j["seed"].get<std::uint64_t>();
        c.plan = default_pipeline();
        c.pipeline.seed = c.seed;
        c.sft.seed = c.seed;

        if (j.contains("preset")) {
            const auto name = j["preset"].get<std::string>();
            if (name != "desk") throw InvalidConfig("unknown preset '" + name + "'");
            c.desk = make_desk_suite(c.seed);
            const auto& d = *c.desk;
            c.context_order = d.context_order;
            c.features = d.features;
            c.sft_specs = d.sft_specs;
            c.sft = d.sft;
            c.plan = d.plan;
            c.pipeline = d.pipeline;
            c.eval_tasks = d.math_eval;
            c.eval_tasks.insert(c.eval_tasks.end(), d.code_eval.begin(), d.code_eval.end());
            c.eval = d.pipeline.eval;
        }

        if (j.contains("paths")) {
            const auto& p = j["paths"];
            only_keys(p, {"tasks", "eval", "out"}, "paths");
            if (p.contains("tasks")) c.rl_tasks = load_tasks(resolve_path(p["tasks"].get<std::string>(), source));
            if (p.contains("eval")) {
                c.eval_tasks = load_tasks(resolve_path(p["eval"].get<std::string>(), source));
                c.pipeline.eval_sets.clear();
            }
            maybe(p, "out", c.out_dir);
        }
        if (j.contains("policy")) {
            const auto& p = j["policy"];
            only_keys(p, {"context_order", "features"}, "policy");
            maybe(p, "context_order", c.context_order);
            if (p.contains("features")) c.features = FeatureSet::from_names(p["features"].get<std::vector<std::string>>());
        }
        if (j.contains("sft")) {
            const auto& s = j["sft"];
            only_keys(s, {"data", "train"}, "sft");
            if (s.contains("data")) {
                c.sft_specs.clear();
                for (const auto& d : s["data"]) c.sft_specs.push_back(sft_spec_from_json(d));
            }
            if (s.contains("train")) apply_sft_train(s["train"], c.sft);
        }
        if (j.contains("rl")) apply_rl(j["rl"], c.pipeline);
        if (j.contains("eval")) apply_eval(j["eval"], c);
        if (j.contains("plan")) c.plan = plan_from_json(j["plan"].dump(), source);

        if (c.ks.empty()) c.ks = default_ks(c.eval.samples);
        if (c.reps < 1) throw InvalidConfig("eval.reps must be at least 1");
        if (c.pipeline.eval_sets.empty())
            for (const auto& t : c.eval_tasks) c.pipeline.eval_sets[t.category].push_back(t);
        c.pipeline.eval = c.eval;
        c.sft.validate();
        validate_plan(c.plan);
        if (c.context_order < 0 || c.context_order > kMaxContextOrder)
            throw InvalidConfig("policy.context_order must lie in [0, " + std::to_string(kMaxContextOrder) + "]");
        return c;
    } catch (const ParseError&) {
        throw;
    } catch (const json::exception& e) {
        throw ParseError(source, 0, e.what());
    } catch (const Error& e) {
        throw ParseError(source, 0, e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    const auto text = io::read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
    return parse_run_config(j, path);
}

}  // namespace stagerl::cli
