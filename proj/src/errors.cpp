#include "recserve/errors.hpp"

namespace recserve {

std::string_view to_string(Errc code) {
    switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonFiniteComponent: return "NonFiniteComponent";
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::NonMonotoneTimeFrame: return "NonMonotoneTimeFrame";
    case Errc::RegressingVersion: return "RegressingVersion";
    case Errc::UnknownVersion: return "UnknownVersion";
    case Errc::EmptyAttributeSet: return "EmptyAttributeSet";
    case Errc::DuplicateItemId: return "DuplicateItemId";
    case Errc::UnknownItem: return "UnknownItem";
    case Errc::EOUnavailable: return "EOUnavailable";
    case Errc::EngineUnavailable: return "EngineUnavailable";
    case Errc::ReplayDivergence: return "ReplayDivergence";
    case Errc::InvariantViolation: return "InvariantViolation";
    }
    return "UnknownError";
}

} // namespace recserve
