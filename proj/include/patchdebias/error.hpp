#pragma once

#include <stdexcept>
#include <string>

namespace patchdebias {

// Raised when an input violates a documented precondition (bad spec, bad
// config field, mismatched shapes).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised for I/O and format problems with on-disk artifacts.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace patchdebias
