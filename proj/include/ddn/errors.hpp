// errors.hpp - exception types shared by all ddn modules.

#ifndef DDN_ERRORS_HPP_
#define DDN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ddn {

// Dimension or layout mismatch between operands.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Argument outside the mathematical domain of the operation.
struct DomainError : std::invalid_argument {
    explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Linear system is rank deficient beyond tolerance.
struct SingularSystemError : std::runtime_error {
    SingularSystemError(const std::string& msg, std::size_t estimated_rank)
        : std::runtime_error(msg), rank(estimated_rank) {}
    std::size_t rank;
};

// Training produced a non-finite quantity.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract broken at runtime (stale trace, incompatible checkpoint, ...).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Bad configuration document (unknown key, invalid value).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data file.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ddn

#endif  // DDN_ERRORS_HPP_
