#pragma once

#include <stdexcept>
#include <string>

namespace iovqa {

/// Precondition violation: bad sizes, out-of-domain values, malformed config.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Filesystem failure: unwritable path, missing file, short read.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Model output text is not a bare integer (decimal point, prose, empty).
struct ScoreFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Model output parses as an integer but falls outside [10,50].
struct ScoreRangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Metric input with zero variance or too few points to correlate.
struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during optimization; carries the step index.
struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, long long step_index)
        : std::runtime_error(what), step(step_index) {}
    long long step;
};

/// Transient transport failure talking to a scoring service (retryable).
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// More than half of a scoring batch failed; the configuration is almost
/// certainly wrong, so partial results are not returned.
struct BatchAborted : std::runtime_error {
    BatchAborted(const std::string& what, std::size_t failed_count, std::size_t total_count)
        : std::runtime_error(what), failed(failed_count), total(total_count) {}
    std::size_t failed;
    std::size_t total;
};

}  // namespace iovqa
