#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "recserve/engine.hpp"
#include "recserve/orchestrator.hpp"
#include "recserve/trainer.hpp"

namespace recserve {

struct UserRequest {
    std::string user_id;
    // Weighted entity references: attribute entities form the semantic
    // profile (fallback scoring); item entities are consumed content and
    // drive aggregation for identifier-based indirect models.
    WeightedAttributes user_attributes;
    std::string user_geo;
    std::string publisher_id;
    int k = 1;
};

struct PublisherRules {
    std::string publisher_id;
    std::set<std::string> blocked_providers;
};

struct RecommendResponse {
    std::vector<ScoredResult> results;
    std::optional<EmbeddingVersion> version_used; // the in-use version the EO resolved
    std::uint64_t generation = 0;
};

// Pure query assembly: version and vector come verbatim from the EO response
// (this layer never selects a version); fallback attributes are always
// included so mixed-mode ranking is possible.
RecommendationQuery build_query(const UserRequest& request, const EmbeddingTypeId& type_id,
                                const std::optional<UserEmbedding>& eo_response,
                                const std::set<std::string>& blocked_providers);

// The serving layer: stateless per request. Obtains the user embedding (and
// its in-use version) from the EO, builds the query, executes it.
class ServingLayer {
public:
    ServingLayer(EmbeddingsOrchestrator& eo, SearchEngine& engine, ModelKind model_kind,
                 std::map<std::string, PublisherRules> publisher_rules);

    // Absence of a user embedding (cold start, unset in-use version,
    // unresolvable user) degrades the request to pure fallback scoring.
    RecommendResponse recommend(const UserRequest& request, const EmbeddingTypeId& type_id);

private:
    std::optional<UserEmbedding> resolve_user(const UserRequest& request,
                                              const EmbeddingTypeId& type_id);

    EmbeddingsOrchestrator& eo_;
    SearchEngine& engine_;
    ModelKind model_kind_;
    std::map<std::string, PublisherRules> publisher_rules_;
};

} // namespace recserve
