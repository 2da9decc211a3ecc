#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace recserve {

using Json = nlohmann::json;

// Shortest round-trip decimal form, with a '.' or exponent always present so
// the value re-parses as a float (never as an integer). "-0" would otherwise
// lose its sign bit through a JSON round trip.
std::string format_double(double value);

// Deterministic serialization: object keys in sorted order (nlohmann objects
// already iterate sorted), doubles via format_double, integers as decimal.
// This is the one serializer used for snapshots, traces, reports, and wire
// responses, so byte-identical output is a global property.
std::string canonical_dump(const Json& value);

// 16-hex-digit FNV-1a digest of the canonical dump.
std::string payload_digest(const Json& value);

std::string hex64(std::uint64_t value);

} // namespace recserve
