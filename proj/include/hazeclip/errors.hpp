#pragma once

#include <stdexcept>
#include <string>

namespace hazeclip {

// Base of every error thrown by the library. `kind()` is a stable short tag
// used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define HAZECLIP_DEFINE_ERROR(Name, tag)                                         \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(tag, what) {}             \
    };

HAZECLIP_DEFINE_ERROR(NotFoundError, "not_found")
HAZECLIP_DEFINE_ERROR(FormatError, "format")
HAZECLIP_DEFINE_ERROR(DimensionError, "dimension")
HAZECLIP_DEFINE_ERROR(ArgumentError, "argument")
HAZECLIP_DEFINE_ERROR(BackendError, "backend")
HAZECLIP_DEFINE_ERROR(RegistrationError, "registration")
HAZECLIP_DEFINE_ERROR(LookupError, "lookup")
HAZECLIP_DEFINE_ERROR(ContractError, "contract")
HAZECLIP_DEFINE_ERROR(IncompatibleVersionError, "incompatible_version")
HAZECLIP_DEFINE_ERROR(StageError, "stage")

#undef HAZECLIP_DEFINE_ERROR

}  // namespace hazeclip
