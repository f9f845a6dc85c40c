#pragma once

#include <stdexcept>
#include <string>

namespace kanfpn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define KANFPN_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                     \
    public:                                                         \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

KANFPN_DEFINE_ERROR(ShapeMismatch);
KANFPN_DEFINE_ERROR(InvalidGeometry);
KANFPN_DEFINE_ERROR(DegenerateInput);
KANFPN_DEFINE_ERROR(NotScalar);
KANFPN_DEFINE_ERROR(NoTape);
KANFPN_DEFINE_ERROR(DomainViolation);
KANFPN_DEFINE_ERROR(InvalidSpec);
KANFPN_DEFINE_ERROR(PlacementFailure);
KANFPN_DEFINE_ERROR(NonFiniteLoss);
KANFPN_DEFINE_ERROR(UnknownScope);
KANFPN_DEFINE_ERROR(ConfigError);
KANFPN_DEFINE_ERROR(FormatError);
KANFPN_DEFINE_ERROR(CheckpointMismatch);

#undef KANFPN_DEFINE_ERROR

} // namespace kanfpn
