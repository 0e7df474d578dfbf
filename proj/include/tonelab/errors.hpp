#pragma once

#include <stdexcept>
#include <string>

namespace tonelab {

// Everything the library throws derives from Error.  The kind string is a
// short stable tag the CLI maps to exit codes and the tests match on.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Bad input: violated preconditions, malformed configs, wrong dimensions.
class ValidationError : public Error {
public:
    using Error::Error;
};

// The computation ran but did not produce a trustworthy answer.
class NumericalError : public Error {
public:
    using Error::Error;
};

inline ValidationError validation(const std::string& kind, const std::string& what)
{
    return ValidationError(kind, what);
}

inline NumericalError numerical(const std::string& kind, const std::string& what)
{
    return NumericalError(kind, what);
}

}  // namespace tonelab
