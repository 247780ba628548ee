#pragma once

// Error taxonomy. Every throw site uses one of these named cases; the CLI
// maps any attnlab::Error to exit code 1 and prints the prefixed message.

#include <stdexcept>
#include <string>

namespace attnlab {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define ATTNLAB_DEFINE_ERROR(Name)                                            \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {}    \
    }

ATTNLAB_DEFINE_ERROR(DimensionMismatch);
ATTNLAB_DEFINE_ERROR(RankDeficient);
ATTNLAB_DEFINE_ERROR(NotStochastic);
ATTNLAB_DEFINE_ERROR(DimensionTooSmall);
ATTNLAB_DEFINE_ERROR(InvalidTarget);
ATTNLAB_DEFINE_ERROR(ConstructionFailed);
ATTNLAB_DEFINE_ERROR(MisclassifiedInput);
ATTNLAB_DEFINE_ERROR(DegenerateDirection);
ATTNLAB_DEFINE_ERROR(WitnessNotFound);
ATTNLAB_DEFINE_ERROR(Diverged);
ATTNLAB_DEFINE_ERROR(ParseError);
ATTNLAB_DEFINE_ERROR(InvalidConfig);

#undef ATTNLAB_DEFINE_ERROR

} // namespace attnlab
