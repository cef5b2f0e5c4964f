#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stagerl/vocab.hpp"

namespace stagerl {

enum class Category : std::uint8_t { Math = 0, Code = 1 };

std::string to_string(Category c);
Category category_from_string(const std::string& s);

struct TestCase {
    std::vector<std::int64_t> inputs;
    std::int64_t expected = 0;

    bool operator==(const TestCase&) const = default;
};

/// A verifiable problem. Prompts are `operand (op operand)*` token runs
/// evaluated strictly left to right; MATH operands are digits, CODE
/// operands are digits or the input placeholder `x`.
struct Task {
    std::string id;
    Category category = Category::Math;
    std::vector<TokenId> prompt_tokens;
    /// MATH: answer in [0, 99]. CODE: expected output of the first test case.
    std::int64_t truth = 0;
    /// CODE only, at least two cases.
    std::vector<TestCase> test_cases;
    int difficulty = 1;

    bool operator==(const Task&) const = default;
};

}  // namespace stagerl
