#include "stagerl/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"
#include "stagerl/io.hpp"
#include "stagerl/rng.hpp"

namespace stagerl {

using nlohmann::json;

std::string to_string(Category c) { return c == Category::Math ? "MATH" : "CODE"; }

Category category_from_string(const std::string& s) {
    if (s == "MATH") return Category::Math;
    if (s == "CODE") return Category::Code;
    throw InvalidConfig("unknown category '" + s + "'");
}

std::string to_string(TraceStyle s) { return s == TraceStyle::Verbose ? "VERBOSE" : "CONCISE"; }

TraceStyle trace_style_from_string(const std::string& s) {
    if (s == "VERBOSE") return TraceStyle::Verbose;
    if (s == "CONCISE") return TraceStyle::Concise;
    throw InvalidConfig("unknown trace style '" + s + "'");
}

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

std::string opcode_for(const std::string& op) {
    if (op == "+") return "ADD";
    if (op == "-") return "SUB";
    return "MUL";
}

/// Splits `total` by `weights` with the largest-remainder rule.
std::vector<int> apportion(int total, const std::vector<double>& weights) {
    std::vector<int> out(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] * total;
        out[i] = static_cast<int>(std::floor(exact));
        assigned += out[i];
        rem.emplace_back(exact - out[i], i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total && i < rem.size(); ++i, ++assigned) ++out[rem[i].second];
    return out;
}

std::int64_t mod100(std::int64_t v) { return ((v % 100) + 100) % 100; }

std::int64_t apply_op(const std::string& op, std::int64_t a, std::int64_t b) {
    if (op == "+") return a + b;
    if (op == "-") return a - b;
    return a * b;
}

std::string two_digits(std::int64_t v) {
    char buf[4];
    std::snprintf(buf, sizeof buf, "%02lld", static_cast<long long>(v));
    return buf;
}

}  // namespace

void GeneratorSpec::validate() const {
    if (count < 1) throw InvalidConfig("count must be >= 1");
    double cat_sum = 0.0;
    for (auto& [c, f] : category_mix) {
        if (f < 0) throw InvalidConfig("negative category fraction");
        cat_sum += f;
    }
    if (std::abs(cat_sum - 1.0) > 1e-9) throw InvalidConfig("category fractions must sum to 1");
    double d_sum = 0.0;
    for (double f : difficulty_hist) {
        if (f < 0) throw InvalidConfig("negative difficulty fraction");
        d_sum += f;
    }
    if (std::abs(d_sum - 1.0) > 1e-9) throw InvalidConfig("difficulty fractions must sum to 1");
    if (operand_min < 0 || operand_max > 9 || operand_min > operand_max)
        throw InvalidConfig("operand range must lie within [0, 9]");
    if (operators.empty()) throw InvalidConfig("operator set is empty");
    for (auto& op : operators)
        if (op != "+" && op != "-" && op != "*") throw InvalidConfig("unknown operator '" + op + "'");
    if (code_min_operands < 1 || code_max_operands < code_min_operands)
        throw InvalidConfig("bad program length bounds");
    if (code_test_cases < 2) throw InvalidConfig("CODE tasks need at least two test cases");
}

int math_operand_count(int difficulty) {
    static constexpr std::array<int, 5> n{2, 2, 3, 4, 4};
    return n.at(static_cast<std::size_t>(std::clamp(difficulty, 1, 5) - 1));
}

int code_operand_count(int difficulty) { return std::clamp(difficulty, 1, 5) + 1; }

std::int64_t evaluate_math_prompt(const std::vector<TokenId>& prompt) {
    const auto& v = desk_vocab();
    if (prompt.empty() || prompt.size() % 2 == 0) throw BadArgs("malformed MATH prompt");
    std::int64_t acc = std::stoll(v.token(prompt[0]));
    for (std::size_t i = 1; i + 1 < prompt.size(); i += 2)
        acc = mod100(apply_op(v.token(prompt[i]), acc, std::stoll(v.token(prompt[i + 1]))));
    return mod100(acc);
}

std::int64_t evaluate_code_prompt(const std::vector<TokenId>& prompt, const std::vector<std::int64_t>& inputs) {
    const auto& v = desk_vocab();
    if (prompt.empty() || prompt.size() % 2 == 0) throw BadArgs("malformed CODE prompt");
    std::size_t cursor = 0;
    auto operand = [&](TokenId t) -> std::int64_t {
        const auto& s = v.token(t);
        if (s == "x") {
            if (cursor >= inputs.size()) throw BadArgs("not enough inputs for CODE prompt");
            return inputs[cursor++];
        }
        return std::stoll(s);
    };
    std::int64_t acc = operand(prompt[0]);
    for (std::size_t i = 1; i + 1 < prompt.size(); i += 2) acc = apply_op(v.token(prompt[i]), acc, operand(prompt[i + 1]));
    return acc;
}

Task make_math_task(const std::string& id, const std::string& prompt, int difficulty) {
    Task t;
    t.id = id;
    t.category = Category::Math;
    t.prompt_tokens = desk_vocab().encode(prompt);
    t.truth = evaluate_math_prompt(t.prompt_tokens);
    t.difficulty = difficulty;
    return t;
}

Task make_code_task(const std::string& id, const std::string& prompt,
                    const std::vector<std::vector<std::int64_t>>& inputs, int difficulty) {
    Task t;
    t.id = id;
    t.category = Category::Code;
    t.prompt_tokens = desk_vocab().encode(prompt);
    for (const auto& in : inputs) t.test_cases.push_back({in, evaluate_code_prompt(t.prompt_tokens, in)});
    if (t.test_cases.size() < 2) throw BadArgs("CODE tasks need at least two test cases");
    t.truth = t.test_cases.front().expected;
    t.difficulty = difficulty;
    return t;
}

std::string prompt_text(const Task& task) { return desk_vocab().decode(task.prompt_tokens); }

std::vector<Task> generate_tasks(const GeneratorSpec& spec) {
    spec.validate();
    const auto& v = desk_vocab();
    Rng rng(derive_seed({spec.seed, 0x67656e6572617465ULL}));

    std::vector<Category> cats;
    std::vector<double> cat_w;
    for (auto& [c, f] : spec.category_mix) {
        cats.push_back(c);
        cat_w.push_back(f);
    }
    const auto per_cat = apportion(spec.count, cat_w);
    const std::vector<double> diff_w(spec.difficulty_hist.begin(), spec.difficulty_hist.end());

    std::vector<std::string> code_ops;
    for (auto& op : spec.operators)
        if (contains(spec.opcodes, opcode_for(op))) code_ops.push_back(op);
    std::vector<int> code_consts;
    for (int d = 0; d < 10; ++d)
        if (contains(spec.opcodes, "PUSH" + std::to_string(d))) code_consts.push_back(d);
    const bool code_has_input = contains(spec.opcodes, "IN") && contains(spec.opcodes, "HALT");

    std::vector<Task> tasks;
    std::set<std::pair<Category, std::vector<TokenId>>> seen;
    const long budget = 10L * spec.count;
    long attempts = 0;

    auto pick = [&](const std::vector<std::string>& from) { return from[rng.below(from.size())]; };

    for (std::size_t ci = 0; ci < cats.size(); ++ci) {
        const auto per_diff = apportion(per_cat[ci], diff_w);
        for (int d = 1; d <= 5; ++d) {
            int need = per_diff[static_cast<std::size_t>(d - 1)];
            if (need > 0 && cats[ci] == Category::Code && (!code_has_input || code_ops.empty()))
                throw InfeasibleSpec("opcode set cannot express CODE tasks");
            while (need > 0) {
                if (++attempts > budget)
                    throw InfeasibleSpec("difficulty histogram not met within 10x oversampling");
                Task t;
                t.category = cats[ci];
                t.difficulty = d;
                if (cats[ci] == Category::Math) {
                    const int n = math_operand_count(d);
                    std::vector<std::string> ops;
                    for (auto& op : spec.operators)
                        if ((d != 1 && d != 4) || op != "*") ops.push_back(op);
                    if (ops.empty()) ops = spec.operators;
                    bool has_mul = false;
                    for (int i = 0; i < n; ++i) {
                        if (i) {
                            auto op = pick(ops);
                            has_mul |= op == "*";
                            t.prompt_tokens.push_back(v.id(op));
                        }
                        t.prompt_tokens.push_back(v.id(std::to_string(rng.between(spec.operand_min, spec.operand_max))));
                    }
                    if ((d == 2 || d == 5) && contains(ops, "*") && !has_mul) continue;
                    t.truth = evaluate_math_prompt(t.prompt_tokens);
                } else {
                    const int n = std::clamp(code_operand_count(d), spec.code_min_operands, spec.code_max_operands);
                    int inputs = 0;
                    for (int i = 0; i < n; ++i) {
                        if (i) t.prompt_tokens.push_back(v.id(pick(code_ops)));
                        const bool use_input = code_consts.empty() || rng.bernoulli(0.5);
                        if (use_input) {
                            t.prompt_tokens.push_back(v.id("x"));
                            ++inputs;
                        } else {
                            t.prompt_tokens.push_back(v.id(std::to_string(code_consts[rng.below(code_consts.size())])));
                        }
                    }
                    if (inputs == 0) {
                        const auto slot = 2 * rng.below(static_cast<std::uint64_t>(n));
                        t.prompt_tokens[slot] = v.id("x");
                        inputs = 1;
                    }
                    std::set<std::vector<std::int64_t>> used;
                    for (int c = 0; c < spec.code_test_cases; ++c) {
                        std::vector<std::int64_t> in(static_cast<std::size_t>(inputs));
                        for (int tries = 0; tries < 8; ++tries) {
                            for (auto& x : in) x = rng.between(0, 9);
                            if (!used.count(in)) break;
                        }
                        used.insert(in);
                        t.test_cases.push_back({in, evaluate_code_prompt(t.prompt_tokens, in)});
                    }
                    t.truth = t.test_cases.front().expected;
                }
                if (!seen.emplace(t.category, t.prompt_tokens).second) continue;
                tasks.push_back(std::move(t));
                --need;
            }
        }
    }
    rng.shuffle(tasks.begin(), tasks.end());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%05zu", i);
        tasks[i].id = spec.id_prefix + "-" + buf;
    }
    return tasks;
}

int verbose_restatements(std::uint64_t variant) { return 6 + static_cast<int>(variant % 3); }

TeacherTrace teacher_trace(const Task& task, TraceStyle style, std::uint64_t variant) {
    const auto& v = desk_vocab();
    TeacherTrace tr{task.id, style, {}};
    auto& out = tr.tokens;
    auto put = [&](const std::string& s) { out.push_back(v.id(s)); };
    const int m = style == TraceStyle::Verbose ? verbose_restatements(variant) : 0;
    const auto& p = task.prompt_tokens;

    if (task.category == Category::Math) {
        std::int64_t acc = std::stoll(v.token(p.at(0)));
        for (std::size_t i = 1; i + 1 < p.size(); i += 2) {
            acc = mod100(apply_op(v.token(p[i]), acc, std::stoll(v.token(p[i + 1]))));
            const auto r = two_digits(acc);
            put(std::string(1, r[0]));
            put(std::string(1, r[1]));
            for (int k = 0; k < m; ++k) {
                put("=");
                put(std::string(1, r[0]));
                put(std::string(1, r[1]));
            }
            put(";");
        }
        put("<box>");
        for (char c : std::to_string(mod100(acc))) put(std::string(1, c));
        put("</box>");
    } else {
        auto operand_op = [&](TokenId t) { return v.token(t) == "x" ? std::string("IN") : "PUSH" + v.token(t); };
        for (std::size_t i = 0; i < p.size(); i += 2) {
            put(operand_op(p[i]));
            if (i) put(opcode_for(v.token(p[i - 1])));
            for (int k = 0; k < m; ++k) {
                put("=");
                if (i) out.push_back(p[i - 1]);
                out.push_back(p[i]);
            }
            put(";");
        }
        put("HALT");
    }
    out.push_back(v.eos());
    return tr;
}

// ---------------------------------------------------------------- task files

std::string task_to_json_line(const Task& task) {
    json j;
    j["id"] = task.id;
    j["category"] = to_string(task.category);
    j["prompt"] = prompt_text(task);
    j["truth"] = task.truth;
    j["difficulty"] = task.difficulty;
    json cases = json::array();
    for (const auto& c : task.test_cases) cases.push_back({{"inputs", c.inputs}, {"expected", c.expected}});
    j["test_cases"] = std::move(cases);
    return j.dump();
}

Task task_from_json_line(const std::string& line, const std::string& source, std::size_t lineno) {
    try {
        const auto j = json::parse(line);
        Task t;
        t.id = j.at("id").get<std::string>();
        t.category = category_from_string(j.at("category").get<std::string>());
        t.prompt_tokens = desk_vocab().encode(j.at("prompt").get<std::string>());
        if (t.prompt_tokens.empty()) throw ParseError(source, lineno, "empty prompt");
        t.truth = j.at("truth").get<std::int64_t>();
        t.difficulty = j.value("difficulty", 1);
        for (const auto& c : j.value("test_cases", json::array()))
            t.test_cases.push_back({c.at("inputs").get<std::vector<std::int64_t>>(), c.at("expected").get<std::int64_t>()});
        if (t.category == Category::Math && (t.truth < 0 || t.truth > 99))
            throw ParseError(source, lineno, "MATH truth outside [0, 99]");
        if (t.category == Category::Code && t.test_cases.size() < 2)
            throw ParseError(source, lineno, "CODE task needs >= 2 test cases");
        return t;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(source, lineno, e.what());
    }
}

void save_tasks(const std::vector<Task>& tasks, const std::string& path) {
    std::string out;
    for (const auto& t : tasks) out += task_to_json_line(t) + "\n";
    io::write_file_atomic(path, out);
}

std::vector<Task> load_tasks(const std::string& path) {
    std::vector<Task> out;
    for (const auto& [n, line] : io::read_nonempty_lines(path)) out.push_back(task_from_json_line(line, path, n));
    return out;
}

}  // namespace stagerl
