#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recserve/jsonio.hpp"
#include "recserve/scenario.hpp"

namespace recserve {

struct TraceEvent {
    std::uint64_t step = 0;
    std::string actor;   // trainer | eo | indexer | serving
    std::string action;
    std::string digest;  // canonical-JSON digest of the action payload
};

// Deterministic fault plan: the injector throws at the start of sub-step
// `step_in_cycle` of indexer cycle `cycle_ordinal`, aborting that cycle.
struct FaultSpec {
    std::size_t cycle_ordinal = 0;
    std::size_t step_in_cycle = 0;
};

struct RunOptions {
    std::optional<FaultSpec> fault;
    bool keep_trace = true;
};

struct SimulationResult {
    Json report;                     // canonical-serializable summary
    std::vector<TraceEvent> trace;   // empty when keep_trace is false
    bool passed = false;             // true iff every invariant held
};

SimulationResult run_scenario(const Scenario& scenario, std::uint64_t seed,
                              const RunOptions& options = {});

// Runs [seed_from, seed_to] and aggregates counters and invariant tallies.
Json sweep_scenario(const Scenario& scenario, std::uint64_t seed_from, std::uint64_t seed_to,
                    const RunOptions& options = {});

// NDJSON trace: header line, one line per event, report line.
void write_trace(std::ostream& out, const Scenario& scenario, std::uint64_t seed,
                 const SimulationResult& result);

// Re-runs the trace's scenario at its seed and compares every event and the
// final report; throws RecError(Errc::ReplayDivergence) on any difference.
Json replay_trace(std::istream& in);

// Randomized ranking instances checked bit-for-bit against the brute-force
// scorer. Returns a report with pass/fail and the first mismatch, if any.
Json oracle_check(std::uint64_t seed, std::size_t instances, std::size_t max_docs = 200);

} // namespace recserve
