#pragma once

#include <stdexcept>
#include <string>

namespace entroguard {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdaptationError : std::runtime_error {
    explicit AdaptationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TransportError : std::runtime_error {
    explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace entroguard
