#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace symbranch {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (t < 0, |rho| > 1, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Site index outside the kernel's site set.
class IndexError : public Error {
public:
    using Error::Error;
};

// Inputs are well-formed but violate an operation's stated precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Malformed configuration; carries the offending field path ("kernel.side").
class UsageError : public Error {
public:
    UsageError(std::string field_path, const std::string& message)
        : Error(field_path.empty() ? message : field_path + ": " + message),
          field_path_(std::move(field_path)) {}

    const std::string& field_path() const noexcept { return field_path_; }

private:
    std::string field_path_;
};

class NumericalBlowup : public Error {
public:
    NumericalBlowup(std::size_t site, std::size_t step, std::optional<std::size_t> replica = {})
        : Error(format(site, step, replica)), site_(site), step_(step), replica_(replica) {}

    std::size_t site() const noexcept { return site_; }
    std::size_t step() const noexcept { return step_; }
    std::optional<std::size_t> replica() const noexcept { return replica_; }

    NumericalBlowup with_replica(std::size_t replica) const { return {site_, step_, replica}; }

private:
    static std::string format(std::size_t site, std::size_t step, std::optional<std::size_t> replica) {
        std::string msg = "non-finite field value at site " + std::to_string(site) + ", step " +
                          std::to_string(step);
        if (replica) msg += ", replica " + std::to_string(*replica);
        return msg;
    }

    std::size_t site_;
    std::size_t step_;
    std::optional<std::size_t> replica_;
};

} // namespace symbranch
