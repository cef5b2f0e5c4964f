#pragma once

#include <stdexcept>
#include <string>

namespace stagerl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define STAGERL_DEFINE_ERROR(Name)                     \
    class Name : public Error {                        \
    public:                                            \
        explicit Name(const std::string& what_arg)     \
            : Error(#Name ": " + what_arg) {}          \
    }

STAGERL_DEFINE_ERROR(UnknownToken);
STAGERL_DEFINE_ERROR(EmptyRollout);
STAGERL_DEFINE_ERROR(InvalidConfig);
STAGERL_DEFINE_ERROR(InfeasibleSpec);
STAGERL_DEFINE_ERROR(NoAnswer);
STAGERL_DEFINE_ERROR(Unbalanced);
STAGERL_DEFINE_ERROR(EmptyBatch);
STAGERL_DEFINE_ERROR(BadN);
STAGERL_DEFINE_ERROR(BadArgs);
STAGERL_DEFINE_ERROR(BadEdges);
STAGERL_DEFINE_ERROR(Degenerate);
STAGERL_DEFINE_ERROR(RaggedMatrix);
STAGERL_DEFINE_ERROR(Unsatisfiable);

#undef STAGERL_DEFINE_ERROR

/// Malformed input file. Carries the offending location when known.
class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& msg)
        : Error("ParseError: " + source + ":" + std::to_string(line) + ": " + msg),
          source_(source), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

}  // namespace stagerl
