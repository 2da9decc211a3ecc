#pragma once

#include <vector>

#include "recserve/engine.hpp"

namespace recserve {

// Reference top-k: a naive linear scan applying the filter, scoring, and
// tie-break definitions directly, with no postings and no shared code with
// SearchEngine's query path. Equivalence against this is the engine's
// correctness oracle.
std::vector<ScoredResult> brute_force_oracle(const RecommendationQuery& query,
                                             const std::vector<IndexedDocument>& all_docs,
                                             double fallback_weight);

} // namespace recserve
