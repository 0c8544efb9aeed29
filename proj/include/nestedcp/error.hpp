#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nestedcp {

/// Malformed input data: bad records, out-of-range indices, duplicates.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line) {}

    /// 1-based line number in the offending file, 0 if not file-related.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite losses, failed factorizations, diverged fits.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace nestedcp
