#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stagerl/policy.hpp"
#include "stagerl/task.hpp"

namespace stagerl {

enum class Verdict : std::uint8_t { Correct, WrongAnswer, FormatError, VmError, Timeout, Truncated };

std::string to_string(Verdict v);

struct RewardScore {
    double value = 0.0;  // 1 iff verdict == Correct
    Verdict verdict = Verdict::FormatError;
    std::vector<bool> per_test;  // CODE only

    bool operator==(const RewardScore&) const = default;
};

// ---------------------------------------------------------------- answers

/// Content of the last top-level answer wrapper in `text`. Understands
/// `\boxed{...}` (braces balanced, content verbatim) and the toy
/// `<box> ... </box>` marker (whitespace-separated tokens joined without
/// spaces). Throws NoAnswer / Unbalanced.
std::string extract_boxed(std::string_view text);
/// Token form of the toy wrapper.
std::string extract_boxed(std::span<const TokenId> tokens, const Vocab& vocab);

/// Optional sign then digits; leading zeros ignored.
std::optional<std::int64_t> canonical_integer(std::string_view s);

RewardScore verify_math(const Rollout& rollout, const Task& task, const Vocab& vocab = desk_vocab());

// ---------------------------------------------------------------- mini-VM

enum class Opcode : std::uint8_t {
    Push0, Push1, Push2, Push3, Push4, Push5, Push6, Push7, Push8, Push9,
    In, Add, Sub, Mul, Dup, Swap, Pop, Halt
};

std::optional<Opcode> opcode_from_string(std::string_view s);
std::string to_string(Opcode op);

enum class VmFault : std::uint8_t {
    None, StackUnderflow, StackOverflow, InputExhausted, StepLimit, NoHalt, EmptyStackAtHalt, Overflow
};

std::string to_string(VmFault f);

inline constexpr std::size_t kVmMaxDepth = 64;
inline constexpr int kDefaultStepLimit = 256;

struct VmState {
    std::vector<std::int64_t> stack;
    std::size_t input_cursor = 0;
    int steps = 0;
    bool halted = false;

    bool operator==(const VmState&) const = default;
};

struct VmResult {
    std::optional<std::int64_t> value;
    VmFault fault = VmFault::None;
    VmState state;

    bool ok() const noexcept { return fault == VmFault::None; }
    bool operator==(const VmResult&) const = default;
};

/// Executes a straight-line stack program. SUB pops a then b and pushes
/// b - a; IN pushes the next input; the result is the stack top at HALT.
/// Arithmetic is checked signed 64-bit.
VmResult run_minivm(std::span<const Opcode> program, std::span<const std::int64_t> input,
                    int step_limit = kDefaultStepLimit);

/// Opcode tokens of the rollout up to and including the first HALT;
/// other tokens are treated as commentary and skipped.
std::vector<Opcode> extract_program(std::span<const TokenId> tokens, const Vocab& vocab);

RewardScore verify_code(const Rollout& rollout, const Task& task, const Vocab& vocab = desk_vocab(),
                        int step_limit = kDefaultStepLimit);

/// Dispatches on task category.
RewardScore verify(const Rollout& rollout, const Task& task, const Vocab& vocab = desk_vocab());

// ---------------------------------------------------------------- rewards

enum class OverlongMode : std::uint8_t { Filter, Penalty };

std::string to_string(OverlongMode m);
OverlongMode overlong_mode_from_string(const std::string& s);

struct RewardAssignment {
    std::optional<double> reward;  // empty when masked
    bool masked = false;
};

/// Non-truncated rollouts keep the verifier score. Truncated ones are
/// scored 0 under PENALTY and masked out entirely under FILTER.
RewardAssignment reward_assign(const Rollout& rollout, const RewardScore& score, OverlongMode mode);

/// One verdict-log line: {task_id, rollout_index, verdict, value, length, truncated}.
std::string verdict_log_line(const std::string& task_id, std::size_t rollout_index, const Rollout& rollout,
                             const RewardScore& score);

}  // namespace stagerl
