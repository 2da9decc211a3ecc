#include "recserve/oracle.hpp"

#include <algorithm>

namespace recserve {

namespace {

bool passes_filters(const RecommendationQuery& query, const IndexedDocument& doc) {
    if (query.publisher_blocked_providers.count(doc.provider_id)) return false;
    if (!doc.geo_targets.empty() && !doc.geo_targets.count(query.user_geo)) return false;
    return true;
}

ScoredResult score_one(const RecommendationQuery& query, const IndexedDocument& doc,
                       double fallback_weight) {
    ScoredResult result;
    result.item_id = doc.item_id;
    if (query.user_vector) {
        auto it = doc.vectors.find(*query.user_version);
        if (it != doc.vectors.end()) {
            double dot = 0.0;
            for (std::size_t j = 0; j < it->second.size(); ++j)
                dot += (*query.user_vector)[j] * it->second[j];
            result.score = dot;
            result.mode = ScoreMode::embedding;
            result.version_used = *query.user_version;
            return result;
        }
    }
    double overlap = 0.0;
    for (const auto& [entity, user_weight] : query.user_attributes) {
        auto it = doc.attributes.find(entity);
        if (it != doc.attributes.end())
            overlap += std::min(user_weight, it->second);
    }
    result.score = fallback_weight * overlap;
    result.mode = ScoreMode::fallback;
    return result;
}

} // namespace

std::vector<ScoredResult> brute_force_oracle(const RecommendationQuery& query,
                                             const std::vector<IndexedDocument>& all_docs,
                                             double fallback_weight) {
    validate_query(query);
    std::vector<ScoredResult> scored;
    for (const IndexedDocument& doc : all_docs) {
        if (!passes_filters(query, doc)) continue;
        scored.push_back(score_one(query, doc, fallback_weight));
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredResult& a, const ScoredResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (scored.size() > static_cast<std::size_t>(query.k))
        scored.resize(static_cast<std::size_t>(query.k));
    return scored;
}

} // namespace recserve
