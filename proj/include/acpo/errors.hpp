#pragma once

#include <stdexcept>
#include <string>

namespace acpo {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    data = 3,
    numerical = 4,
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Malformed model input (bad context, wrong prompt head).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss). Carries the offending step.
struct NumericalAbort : std::runtime_error {
    NumericalAbort(const std::string& what, long step)
        : std::runtime_error(what), step(step) {}
    long step;
};

}  // namespace acpo
