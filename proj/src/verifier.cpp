#include "stagerl/verifier.hpp"

#include <array>
#include <cctype>
#include <limits>

#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"

namespace stagerl {

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Correct: return "CORRECT";
        case Verdict::WrongAnswer: return "WRONG_ANSWER";
        case Verdict::FormatError: return "FORMAT_ERROR";
        case Verdict::VmError: return "VM_ERROR";
        case Verdict::Timeout: return "TIMEOUT";
        case Verdict::Truncated: return "TRUNCATED";
    }
    return "?";
}

// ---------------------------------------------------------------- answers

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string strip_spaces(std::string_view s) {
    std::string out;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) out += c;
    return out;
}

constexpr std::string_view kBoxed = "\\boxed{";
constexpr std::string_view kOpen = "<box>";
constexpr std::string_view kClose = "</box>";

}  // namespace

std::string extract_boxed(std::string_view text) {
    std::optional<std::string> last;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.substr(i, kBoxed.size()) == kBoxed) {
            std::size_t j = i + kBoxed.size();
            int depth = 1;
            for (; j < text.size(); ++j) {
                if (text[j] == '{') ++depth;
                else if (text[j] == '}' && --depth == 0) break;
            }
            if (depth != 0) throw Unbalanced("\\boxed{ never closed");
            last = std::string(trim(text.substr(i + kBoxed.size(), j - i - kBoxed.size())));
            i = j + 1;
        } else if (text.substr(i, kOpen.size()) == kOpen) {
            std::size_t j = i + kOpen.size();
            int depth = 1;
            while (j < text.size()) {
                if (text.substr(j, kOpen.size()) == kOpen) {
                    ++depth;
                    j += kOpen.size();
                } else if (text.substr(j, kClose.size()) == kClose) {
                    if (--depth == 0) break;
                    j += kClose.size();
                } else {
                    ++j;
                }
            }
            if (depth != 0) throw Unbalanced("<box> never closed");
            last = strip_spaces(text.substr(i + kOpen.size(), j - i - kOpen.size()));
            i = j + kClose.size();
        } else {
            ++i;
        }
    }
    if (!last) throw NoAnswer("no answer wrapper");
    return *last;
}

std::string extract_boxed(std::span<const TokenId> tokens, const Vocab& vocab) {
    const TokenId open = vocab.find(kOpen);
    const TokenId close = vocab.find(kClose);
    std::optional<std::string> last;
    std::size_t i = 0;
    while (i < tokens.size()) {
        if (tokens[i] != open || open == kBos) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        int depth = 1;
        for (; j < tokens.size(); ++j) {
            if (tokens[j] == open) ++depth;
            else if (tokens[j] == close && --depth == 0) break;
        }
        if (depth != 0) throw Unbalanced("<box> never closed");
        std::string content;
        for (std::size_t k = i + 1; k < j; ++k) content += vocab.token(tokens[k]);
        last = std::move(content);
        i = j + 1;
    }
    if (!last) throw NoAnswer("no answer wrapper");
    return *last;
}

std::optional<std::int64_t> canonical_integer(std::string_view s) {
    s = trim(s);
    bool neg = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        neg = s.front() == '-';
        s.remove_prefix(1);
    }
    if (s.empty()) return std::nullopt;
    std::int64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        if (__builtin_mul_overflow(v, 10, &v) || __builtin_add_overflow(v, c - '0', &v)) return std::nullopt;
    }
    return neg ? -v : v;
}

RewardScore verify_math(const Rollout& rollout, const Task& task, const Vocab& vocab) {
    if (task.category != Category::Math) throw BadArgs("verify_math on a non-MATH task");
    RewardScore s;
    if (rollout.truncated) {
        s.verdict = Verdict::Truncated;
        return s;
    }
    std::string answer;
    try {
        answer = extract_boxed(rollout.tokens, vocab);
    } catch (const NoAnswer&) {
        s.verdict = Verdict::FormatError;
        return s;
    } catch (const Unbalanced&) {
        s.verdict = Verdict::FormatError;
        return s;
    }
    const auto value = canonical_integer(answer);
    if (!value) {
        s.verdict = Verdict::FormatError;
    } else if (*value == task.truth) {
        s.verdict = Verdict::Correct;
        s.value = 1.0;
    } else {
        s.verdict = Verdict::WrongAnswer;
    }
    return s;
}

// ---------------------------------------------------------------- mini-VM

namespace {
constexpr std::array<std::string_view, 18> kOpcodeNames{
    "PUSH0", "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8",
    "PUSH9", "IN",    "ADD",   "SUB",   "MUL",   "DUP",   "SWAP",  "POP",   "HALT"};
}

std::optional<Opcode> opcode_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kOpcodeNames.size(); ++i)
        if (kOpcodeNames[i] == s) return static_cast<Opcode>(i);
    return std::nullopt;
}

std::string to_string(Opcode op) { return std::string(kOpcodeNames[static_cast<std::size_t>(op)]); }

std::string to_string(VmFault f) {
    switch (f) {
        case VmFault::None: return "None";
        case VmFault::StackUnderflow: return "StackUnderflow";
        case VmFault::StackOverflow: return "StackOverflow";
        case VmFault::InputExhausted: return "InputExhausted";
        case VmFault::StepLimit: return "StepLimit";
        case VmFault::NoHalt: return "NoHalt";
        case VmFault::EmptyStackAtHalt: return "EmptyStackAtHalt";
        case VmFault::Overflow: return "Overflow";
    }
    return "?";
}

VmResult run_minivm(std::span<const Opcode> program, std::span<const std::int64_t> input, int step_limit) {
    VmResult r;
    auto& st = r.state;
    auto fail = [&](VmFault f) {
        r.fault = f;
        return r;
    };
    for (const Opcode op : program) {
        if (st.steps >= step_limit) return fail(VmFault::StepLimit);
        ++st.steps;
        auto& s = st.stack;
        switch (op) {
            case Opcode::In:
                if (st.input_cursor >= input.size()) return fail(VmFault::InputExhausted);
                if (s.size() >= kVmMaxDepth) return fail(VmFault::StackOverflow);
                s.push_back(input[st.input_cursor++]);
                break;
            case Opcode::Add:
            case Opcode::Sub:
            case Opcode::Mul: {
                if (s.size() < 2) return fail(VmFault::StackUnderflow);
                const std::int64_t a = s.back();
                const std::int64_t b = s[s.size() - 2];
                std::int64_t out = 0;
                const bool overflow = op == Opcode::Add   ? __builtin_add_overflow(b, a, &out)
                                      : op == Opcode::Sub ? __builtin_sub_overflow(b, a, &out)
                                                          : __builtin_mul_overflow(b, a, &out);
                if (overflow) return fail(VmFault::Overflow);
                s.pop_back();
                s.back() = out;
                break;
            }
            case Opcode::Dup:
                if (s.empty()) return fail(VmFault::StackUnderflow);
                if (s.size() >= kVmMaxDepth) return fail(VmFault::StackOverflow);
                s.push_back(s.back());
                break;
            case Opcode::Swap:
                if (s.size() < 2) return fail(VmFault::StackUnderflow);
                std::swap(s.back(), s[s.size() - 2]);
                break;
            case Opcode::Pop:
                if (s.empty()) return fail(VmFault::StackUnderflow);
                s.pop_back();
                break;
            case Opcode::Halt:
                st.halted = true;
                if (s.empty()) return fail(VmFault::EmptyStackAtHalt);
                r.value = s.back();
                return r;
            default: {
                if (s.size() >= kVmMaxDepth) return fail(VmFault::StackOverflow);
                s.push_back(static_cast<std::int64_t>(op) - static_cast<std::int64_t>(Opcode::Push0));
                break;
            }
        }
    }
    return fail(VmFault::NoHalt);
}

std::vector<Opcode> extract_program(std::span<const TokenId> tokens, const Vocab& vocab) {
    std::vector<Opcode> prog;
    for (auto t : tokens) {
        if (!vocab.contains(t)) continue;
        if (auto op = opcode_from_string(vocab.token(t))) {
            prog.push_back(*op);
            if (*op == Opcode::Halt) break;
        }
    }
    return prog;
}

RewardScore verify_code(const Rollout& rollout, const Task& task, const Vocab& vocab, int step_limit) {
    if (task.category != Category::Code) throw BadArgs("verify_code on a non-CODE task");
    RewardScore s;
    if (rollout.truncated) {
        s.verdict = Verdict::Truncated;
        s.per_test.assign(task.test_cases.size(), false);
        return s;
    }
    const auto prog = extract_program(rollout.tokens, vocab);
    bool timeout = false;
    bool fault = false;
    bool all = true;
    for (const auto& tc : task.test_cases) {
        const auto r = run_minivm(prog, tc.inputs, step_limit);
        const bool pass = r.ok() && *r.value == tc.expected;
        timeout |= r.fault == VmFault::StepLimit;
        fault |= !r.ok() && r.fault != VmFault::StepLimit;
        all &= pass;
        s.per_test.push_back(pass);
    }
    if (all && !task.test_cases.empty()) {
        s.verdict = Verdict::Correct;
        s.value = 1.0;
    } else if (timeout) {
        s.verdict = Verdict::Timeout;
    } else if (fault) {
        s.verdict = Verdict::VmError;
    } else {
        s.verdict = Verdict::WrongAnswer;
    }
    return s;
}

RewardScore verify(const Rollout& rollout, const Task& task, const Vocab& vocab) {
    return task.category == Category::Math ? verify_math(rollout, task, vocab) : verify_code(rollout, task, vocab);
}

// ---------------------------------------------------------------- rewards

std::string to_string(OverlongMode m) { return m == OverlongMode::Filter ? "FILTER" : "PENALTY"; }

OverlongMode overlong_mode_from_string(const std::string& s) {
    if (s == "FILTER") return OverlongMode::Filter;
    if (s == "PENALTY") return OverlongMode::Penalty;
    throw InvalidConfig("unknown overlong mode '" + s + "'");
}

RewardAssignment reward_assign(const Rollout& rollout, const RewardScore& score, OverlongMode mode) {
    if (!rollout.truncated) return {score.value, false};
    if (mode == OverlongMode::Penalty) return {0.0, false};
    return {std::nullopt, true};
}

std::string verdict_log_line(const std::string& task_id, std::size_t rollout_index, const Rollout& rollout,
                             const RewardScore& score) {
    nlohmann::json j;
    j["task_id"] = task_id;
    j["rollout_index"] = rollout_index;
    j["verdict"] = to_string(score.verdict);
    j["value"] = score.value;
    j["length"] = rollout.length();
    j["truncated"] = rollout.truncated;
    return j.dump();
}

}  // namespace stagerl
