#include "recserve/serving.hpp"

namespace recserve {

namespace {

WeightedAttributes subset_of_kind(const WeightedAttributes& attrs, EntityKind kind) {
    WeightedAttributes out;
    for (const auto& [entity, weight] : attrs)
        if (entity.kind == kind) out.emplace(entity, weight);
    return out;
}

} // namespace

RecommendationQuery build_query(const UserRequest& request, const EmbeddingTypeId& type_id,
                                const std::optional<UserEmbedding>& eo_response,
                                const std::set<std::string>& blocked_providers) {
    RecommendationQuery query;
    query.type_id = type_id;
    if (eo_response) {
        query.user_version = eo_response->version;
        query.user_vector = eo_response->vector;
    }
    // Item attributes are attribute entities; only that part of the profile
    // participates in fallback overlap.
    query.user_attributes = subset_of_kind(request.user_attributes, EntityKind::attribute);
    query.user_geo = request.user_geo;
    query.publisher_blocked_providers = blocked_providers;
    query.k = request.k;
    return query;
}

ServingLayer::ServingLayer(EmbeddingsOrchestrator& eo, SearchEngine& engine, ModelKind model_kind,
                           std::map<std::string, PublisherRules> publisher_rules)
    : eo_(eo), engine_(engine), model_kind_(model_kind),
      publisher_rules_(std::move(publisher_rules)) {}

std::optional<UserEmbedding> ServingLayer::resolve_user(const UserRequest& request,
                                                        const EmbeddingTypeId& type_id) {
    switch (model_kind_) {
    case ModelKind::direct_direct:
        return eo_.get_user_embedding(type_id, user_entity(request.user_id));
    case ModelKind::indirect_direct: {
        // Users are the weighted sum of the items they consumed.
        WeightedAttributes consumed = subset_of_kind(request.user_attributes, EntityKind::item);
        if (consumed.empty()) return std::nullopt;
        return eo_.get_user_embedding(type_id, consumed);
    }
    case ModelKind::indirect_indirect: {
        WeightedAttributes profile =
            subset_of_kind(request.user_attributes, EntityKind::attribute);
        if (profile.empty()) return std::nullopt;
        return eo_.get_user_embedding(type_id, profile);
    }
    }
    return std::nullopt;
}

RecommendResponse ServingLayer::recommend(const UserRequest& request,
                                          const EmbeddingTypeId& type_id) {
    std::set<std::string> blocked;
    if (auto it = publisher_rules_.find(request.publisher_id); it != publisher_rules_.end())
        blocked = it->second.blocked_providers;

    std::optional<UserEmbedding> user = resolve_user(request, type_id);
    RecommendationQuery query = build_query(request, type_id, user, blocked);
    QueryResult executed = engine_.execute_query(query);

    RecommendResponse response;
    response.results = std::move(executed.results);
    response.generation = executed.generation;
    if (user) response.version_used = user->version;
    return response;
}

} // namespace recserve
