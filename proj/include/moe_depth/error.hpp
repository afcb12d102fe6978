#pragma once

#include <stdexcept>
#include <string>

namespace moe_depth {

/// Violated precondition of an API call (shape mismatch, bad parameter, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Operating-system level failure while touching the filesystem.
class IoError : public std::runtime_error {
public:
    IoError(const std::string& path, const std::string& cause)
        : std::runtime_error(path + ": " + cause), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A file exists but does not follow the expected binary or text layout.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training (NaN loss, non-finite gradient).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Scene generator could not satisfy its placement constraints.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition)
        throw ContractError(message);
}

}  // namespace moe_depth
