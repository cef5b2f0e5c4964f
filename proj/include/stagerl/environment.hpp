#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stagerl/task.hpp"

namespace stagerl {

/// Parameters of the synthetic task generator.
struct GeneratorSpec {
    std::uint64_t seed = 0;
    int count = 1;
    /// Fraction of tasks per category; must sum to 1.
    std::map<Category, double> category_mix{{Category::Math, 1.0}};
    /// Fraction of tasks per difficulty 1..5; must sum to 1.
    std::array<double, 5> difficulty_hist{0.2, 0.2, 0.2, 0.2, 0.2};
    int operand_min = 0;  // MATH operands, within [0, 9]
    int operand_max = 9;
    std::vector<std::string> operators{"+", "-", "*"};
    /// Opcodes a CODE solution may use. Constants need the matching PUSHc.
    std::vector<std::string> opcodes{"PUSH0", "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6",
                                     "PUSH7", "PUSH8", "PUSH9", "IN",    "ADD",   "SUB",   "MUL",
                                     "DUP",   "SWAP",  "POP",   "HALT"};
    int code_min_operands = 2;  // program length bounds, in operands
    int code_max_operands = 6;
    int code_test_cases = 3;
    std::string id_prefix = "task";

    void validate() const;
};

/// Operand count for a MATH task of the given difficulty.
int math_operand_count(int difficulty);
/// Operand count for a CODE task of the given difficulty, before clamping.
int code_operand_count(int difficulty);

/// Deterministic in `spec`. Throws InfeasibleSpec when the requested
/// difficulty histogram cannot be filled with distinct prompts within 10x
/// oversampling.
std::vector<Task> generate_tasks(const GeneratorSpec& spec);

/// Builds a task from an explicit prompt, e.g. "8 * 9 + 3" or "x + x * 3".
/// CODE tasks need `inputs` per test case; expected values are computed.
Task make_math_task(const std::string& id, const std::string& prompt, int difficulty = 1);
Task make_code_task(const std::string& id, const std::string& prompt,
                    const std::vector<std::vector<std::int64_t>>& inputs, int difficulty = 1);

/// Left-to-right value of a MATH prompt reduced into [0, 99].
std::int64_t evaluate_math_prompt(const std::vector<TokenId>& prompt);
/// Exact left-to-right value of a CODE prompt on `inputs`.
std::int64_t evaluate_code_prompt(const std::vector<TokenId>& prompt, const std::vector<std::int64_t>& inputs);

std::string prompt_text(const Task& task);

enum class TraceStyle : std::uint8_t { Verbose, Concise };

std::string to_string(TraceStyle s);
TraceStyle trace_style_from_string(const std::string& s);

struct TeacherTrace {
    std::string task_id;
    TraceStyle style = TraceStyle::Concise;
    std::vector<TokenId> tokens;
};

/// Number of restatements per step in a VERBOSE trace of the given variant.
int verbose_restatements(std::uint64_t variant);

/// Scripted demonstration ending in the answer format and EOS.
/// MATH CONCISE writes each intermediate result once as two digits then
/// `;`; VERBOSE restates each one several times. CODE traces emit the
/// stack program step by step and end in HALT.
TeacherTrace teacher_trace(const Task& task, TraceStyle style, std::uint64_t variant = 0);

/// JSON-lines task files.
std::string task_to_json_line(const Task& task);
Task task_from_json_line(const std::string& line, const std::string& source = "<tasks>", std::size_t lineno = 0);
void save_tasks(const std::vector<Task>& tasks, const std::string& path);
std::vector<Task> load_tasks(const std::string& path);

}  // namespace stagerl
