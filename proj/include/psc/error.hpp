#pragma once

#include <stdexcept>
#include <string>

namespace psc {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A violated precondition: mismatched dims, bad parameters, empty inputs.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A malformed file or payload.
class FormatError : public Error {
public:
    enum class Kind {
        io,
        bad_magic,
        bad_version,
        size_mismatch,
        coord_out_of_range,
        duplicate_coord,
        unsorted_sites,
        unnormalized_probs,
        value_out_of_range,
        bad_label,
    };

    FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace psc
