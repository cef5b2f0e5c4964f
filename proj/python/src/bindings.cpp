#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "run_config.hpp"
#include "stagerl/curation.hpp"
#include "stagerl/curriculum.hpp"
#include "stagerl/environment.hpp"
#include "stagerl/errors.hpp"
#include "stagerl/evalkit.hpp"
#include "stagerl/verifier.hpp"

namespace py = pybind11;
using namespace stagerl;

namespace {

using Rows = std::vector<std::vector<bool>>;

OutcomeMatrix to_matrix(const Rows& rows) {
    if (rows.empty()) throw BadArgs("outcome matrix has no rows");
    std::vector<std::string> ids;
    for (std::size_t p = 0; p < rows.size(); ++p) ids.push_back(std::to_string(p));
    OutcomeMatrix m(ids, rows.front().size(), "<python>");
    for (std::size_t p = 0; p < rows.size(); ++p) {
        if (rows[p].size() != m.samples_per_problem) throw RaggedMatrix("row " + std::to_string(p) + " has a different length");
        for (std::size_t s = 0; s < rows[p].size(); ++s) m.set(p, s, rows[p][s]);
    }
    return m;
}

Corpus to_corpus(const std::vector<std::pair<std::string, std::string>>& items, CorpusKind kind) {
    Corpus c;
    c.kind = kind;
    for (const auto& [id, text] : items) c.items.push_back({id, text, std::nullopt});
    return c;
}

NgramUnit to_unit(const std::string& s) {
    if (s == "word") return NgramUnit::Word;
    if (s == "char") return NgramUnit::Char;
    throw BadArgs("unit must be 'word' or 'char'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core: verifiers, evaluation statistics, curation and the command-line driver";

    auto error = py::register_exception<Error>(m, "Error");
    py::register_exception<ParseError>(m, "ParseError", error);
    py::register_exception<BadArgs>(m, "BadArgs", error);
    py::register_exception<Unsatisfiable>(m, "Unsatisfiable", error);
    py::register_exception<Degenerate>(m, "Degenerate", error);
    py::register_exception<RaggedMatrix>(m, "RaggedMatrix", error);

    m.def("normalize_text", [](const std::string& s) { return normalize_text(s); });
    m.def("ngrams", [](const std::string& s, int n, const std::string& unit) { return ngrams(s, n, to_unit(unit)); },
          py::arg("text"), py::arg("n"), py::arg("unit") = "word");
    m.def(
        "decontaminate",
        [](const std::vector<std::pair<std::string, std::string>>& train,
           const std::vector<std::pair<std::string, std::string>>& eval, int n, const std::string& unit) {
            auto r = decontaminate(to_corpus(train, CorpusKind::Train), to_corpus(eval, CorpusKind::Eval), n, to_unit(unit));
            return std::make_pair(r.train.ids(), r.report.removed);
        },
        py::arg("train"), py::arg("eval"), py::arg("n") = 9, py::arg("unit") = "word",
        "Returns (kept ids, removed ids).");

    m.def("pass_at_k_exact", &pass_at_k_exact, py::arg("c"), py::arg("N"), py::arg("K"));
    m.def(
        "pass_at_k",
        [](const Rows& rows, int K, int reps, std::uint64_t seed) {
            const auto e = pass_at_k(to_matrix(rows), K, reps, seed);
            return std::make_pair(e.estimate, e.closed_form);
        },
        py::arg("outcomes"), py::arg("K"), py::arg("reps") = 100, py::arg("seed") = 0,
        "Returns (sampled estimate, closed form).");
    m.def(
        "avg_at_n",
        [](const Rows& rows, int n, int reps, std::uint64_t seed) {
            const auto a = avg_at_n(to_matrix(rows), n, reps, seed);
            return std::make_pair(a.mean, a.std);
        },
        py::arg("outcomes"), py::arg("n"), py::arg("reps") = 100, py::arg("seed") = 0, "Returns (mean, std).");
    m.def("_fit_scaling_json", [](const std::vector<std::tuple<double, double, double>>& pts) {
        std::vector<ScalingPoint> v;
        for (const auto& [x, y, z] : pts) v.push_back({x, y, z});
        return fit_scaling(v).to_json();
    });

    m.def(
        "run_minivm",
        [](const std::vector<std::string>& program, const std::vector<std::int64_t>& inputs, int step_limit) {
            std::vector<Opcode> ops;
            for (const auto& s : program) {
                const auto op = opcode_from_string(s);
                if (!op) throw BadArgs("unknown opcode '" + s + "'");
                ops.push_back(*op);
            }
            const auto r = run_minivm(ops, inputs, step_limit);
            return std::make_pair(r.value, to_string(r.fault));
        },
        py::arg("program"), py::arg("inputs") = std::vector<std::int64_t>{}, py::arg("step_limit") = kDefaultStepLimit,
        "Returns (value or None, fault name).");
    m.def(
        "verify",
        [](const std::string& task_json, const std::string& response, bool truncated) {
            const auto task = task_from_json_line(task_json, "<python>");
            Rollout r;
            r.tokens = desk_vocab().encode(response);
            r.truncated = truncated;
            const auto s = verify(r, task);
            return std::make_pair(s.value, to_string(s.verdict));
        },
        py::arg("task_json"), py::arg("response"), py::arg("truncated") = false,
        "Scores a space-separated response against one task; returns (reward, verdict).");
    m.def(
        "teacher_trace",
        [](const std::string& task_json, const std::string& style, std::uint64_t variant) {
            const auto t = teacher_trace(task_from_json_line(task_json, "<python>"), trace_style_from_string(style), variant);
            return desk_vocab().decode(t.tokens);
        },
        py::arg("task_json"), py::arg("style") = "CONCISE", py::arg("variant") = 0,
        "Scripted demonstration for one task as space-separated tokens.");
    m.def("_generate_tasks", [](const std::string& spec_json) {
        const auto tasks = generate_tasks(cli::generator_from_json(nlohmann::json::parse(spec_json)));
        std::vector<std::string> lines;
        for (const auto& t : tasks) lines.push_back(task_to_json_line(t));
        return lines;
    });
    m.def("_default_plan_json", [] { return plan_to_json(default_pipeline()); });

    m.def(
        "cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "stagerl");
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return std::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI command in process; returns (exit code, stdout, stderr).");
}
