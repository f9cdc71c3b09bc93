#ifndef STDIFF_ERRORS_HPP
#define STDIFF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stdiff {

// Non-finite values produced by a numeric routine (integration, training).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or incompatible on-disk artifacts (checkpoints, clips).
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stdiff

#endif
