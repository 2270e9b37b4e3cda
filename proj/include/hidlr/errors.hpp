#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace hidlr {

// Root of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HIDLR_DEFINE_ERROR(Name)        \
    class Name : public Error {         \
    public:                             \
        using Error::Error;             \
    }

HIDLR_DEFINE_ERROR(LengthMismatch);
HIDLR_DEFINE_ERROR(DimensionMismatch);
HIDLR_DEFINE_ERROR(SingularSystem);
HIDLR_DEFINE_ERROR(SingularFit);
HIDLR_DEFINE_ERROR(NotPositiveDefinite);
HIDLR_DEFINE_ERROR(NonFiniteLoss);
HIDLR_DEFINE_ERROR(UnknownStrategy);
HIDLR_DEFINE_ERROR(MissingColumn);
HIDLR_DEFINE_ERROR(ValidationError);
HIDLR_DEFINE_ERROR(IoError);

#undef HIDLR_DEFINE_ERROR

// Raised for malformed CSV cells and malformed config files. `where` is a
// "row 3, col 2" style location or a dotted config key path.
class ParseError : public Error {
public:
    ParseError(std::string where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

}  // namespace hidlr
