#pragma once

#include <stdexcept>
#include <string>

namespace lprobe {

/// Operand shapes disagree.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Bad on-disk bytes: magic, version, header, truncation.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A value that must be finite is NaN or Inf.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A configuration or spec violates its invariants.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A metric is undefined on its input (e.g. balanced accuracy with one class).
struct UndefinedMetricError : std::domain_error {
    using std::domain_error::domain_error;
};

} // namespace lprobe
