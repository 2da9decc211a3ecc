#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace recserve {

// Error identities surfaced over the wire and asserted in tests.
enum class Errc {
    DimensionMismatch,
    NonFiniteComponent,
    MalformedLine,
    NonMonotoneTimeFrame,
    RegressingVersion,
    UnknownVersion,
    EmptyAttributeSet,
    DuplicateItemId,
    UnknownItem,
    EOUnavailable,
    EngineUnavailable,
    ReplayDivergence,
    InvariantViolation,
};

std::string_view to_string(Errc code);

class RecError : public std::runtime_error {
public:
    RecError(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace recserve
