#pragma once

#include <stdexcept>
#include <string>

namespace tpusim {

/// Base class for every error raised by the simulator libraries.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration field failed to parse or violates an invariant.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace tpusim
