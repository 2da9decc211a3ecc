#include "recserve/engine.hpp"

#include <mutex>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "recserve/errors.hpp"
#include "recserve/jsonio.hpp"

namespace recserve {

std::string_view to_string(ScoreMode mode) {
    return mode == ScoreMode::embedding ? "embedding" : "fallback";
}

bool IndexedDocument::has_vector_of_type(const EmbeddingTypeId& type_id) const {
    for (const auto& [version, vec] : vectors)
        if (version.type_id == type_id) return true;
    return false;
}

void IndexCore::insert(IndexedDocument doc) {
    erase(doc.item_id);
    const std::string& id = doc.item_id;
    provider_postings[doc.provider_id].insert(id);
    if (doc.geo_targets.empty()) {
        untargeted.insert(id);
    } else {
        for (const auto& geo : doc.geo_targets) geo_postings[geo].insert(id);
    }
    documents.emplace(id, std::move(doc));
}

void IndexCore::erase(const std::string& item_id) {
    auto it = documents.find(item_id);
    if (it == documents.end()) return;
    const IndexedDocument& doc = it->second;
    provider_postings[doc.provider_id].erase(item_id);
    if (provider_postings[doc.provider_id].empty()) provider_postings.erase(doc.provider_id);
    if (doc.geo_targets.empty()) {
        untargeted.erase(item_id);
    } else {
        for (const auto& geo : doc.geo_targets) {
            geo_postings[geo].erase(item_id);
            if (geo_postings[geo].empty()) geo_postings.erase(geo);
        }
    }
    documents.erase(it);
}

SearchEngine::SearchEngine(Mode mode, EngineConfig config) : mode_(mode), config_(config) {
    current_ = GenerationPtr(new Generation(0, {}));
}

GenerationPtr SearchEngine::build_generation(std::vector<IndexedDocument> docs) {
    if (mode_ != Mode::shadowing)
        throw std::logic_error("build_generation requires shadowing mode");
    IndexCore core;
    for (auto& doc : docs) {
        if (core.documents.count(doc.item_id))
            throw RecError(Errc::DuplicateItemId, doc.item_id);
        core.insert(std::move(doc));
    }
    std::unique_lock lock(mutex_);
    return GenerationPtr(new Generation(next_ordinal_++, std::move(core)));
}

GenerationPtr SearchEngine::swap_generation(GenerationPtr next) {
    if (mode_ != Mode::shadowing)
        throw std::logic_error("swap_generation requires shadowing mode");
    if (!next) throw std::invalid_argument("swap_generation: null generation");
    std::unique_lock lock(mutex_);
    GenerationPtr previous = std::move(current_);
    current_ = std::move(next);
    return previous;
}

GenerationPtr SearchEngine::current_generation() const {
    std::shared_lock lock(mutex_);
    return current_;
}

void SearchEngine::upsert_document(IndexedDocument doc) {
    if (mode_ != Mode::incremental)
        throw std::logic_error("upsert_document requires incremental mode");
    std::unique_lock lock(mutex_);
    live_.insert(std::move(doc)); // delete-then-index under one lock
}

bool SearchEngine::delete_document(const std::string& item_id) {
    if (mode_ != Mode::incremental)
        throw std::logic_error("delete_document requires incremental mode");
    std::unique_lock lock(mutex_);
    bool existed = live_.documents.count(item_id) > 0;
    live_.erase(item_id);
    return existed;
}

void validate_query(const RecommendationQuery& query) {
    if (query.k < 1) throw std::invalid_argument("query k must be >= 1");
    if (query.user_version.has_value() != query.user_vector.has_value())
        throw std::invalid_argument("user_version and user_vector must be present together");
    if (query.user_version && !(query.user_version->type_id == query.type_id))
        throw std::invalid_argument("query version type differs from query type");
    // A non-positive dimension means the caller declared none (wire requests
    // carry only algo and config); the per-document length check still
    // guards every inner product.
    if (query.user_vector && query.type_id.dimension > 0 &&
        static_cast<int>(query.user_vector->size()) != query.type_id.dimension)
        throw RecError(Errc::DimensionMismatch,
                       "query vector length " + std::to_string(query.user_vector->size()) +
                           " != type dimension " + std::to_string(query.type_id.dimension));
    for (const auto& [entity, weight] : query.user_attributes)
        if (!std::isfinite(weight))
            throw std::invalid_argument("non-finite user attribute weight");
}

QueryResult SearchEngine::execute_on(const IndexCore& core, std::uint64_t ordinal,
                                     const RecommendationQuery& query) const {
    validate_query(query);

    // Candidate ids from the geo postings: untargeted docs plus docs
    // targeting the user's region.
    std::vector<const IndexedDocument*> candidates;
    auto consider = [&](const std::string& id) {
        const IndexedDocument& doc = core.documents.at(id);
        if (query.publisher_blocked_providers.count(doc.provider_id)) return;
        candidates.push_back(&doc);
    };
    for (const auto& id : core.untargeted) consider(id);
    if (auto it = core.geo_postings.find(query.user_geo); it != core.geo_postings.end())
        for (const auto& id : it->second) consider(id);

    std::vector<ScoredResult> scored;
    scored.reserve(candidates.size());
    for (const IndexedDocument* doc : candidates) {
        ScoredResult result;
        result.item_id = doc->item_id;
        std::map<EmbeddingVersion, Vector>::const_iterator vec_it;
        if (query.user_vector &&
            (vec_it = doc->vectors.find(*query.user_version)) != doc->vectors.end()) {
            if (!(vec_it->first == *query.user_version))
                cross_version_products_.fetch_add(1); // must never happen
            const Vector& item_vec = vec_it->second;
            if (item_vec.size() != query.user_vector->size())
                throw RecError(Errc::DimensionMismatch,
                               "document " + doc->item_id + " vector length mismatch");
            double dot = 0.0;
            for (std::size_t j = 0; j < item_vec.size(); ++j)
                dot += (*query.user_vector)[j] * item_vec[j];
            result.score = dot;
            result.mode = ScoreMode::embedding;
            result.version_used = *query.user_version;
        } else {
            double overlap = 0.0;
            // Both maps are ordered; walk the intersection in ascending
            // entity order.
            auto user_it = query.user_attributes.begin();
            auto item_it = doc->attributes.begin();
            while (user_it != query.user_attributes.end() && item_it != doc->attributes.end()) {
                if (user_it->first < item_it->first) {
                    ++user_it;
                } else if (item_it->first < user_it->first) {
                    ++item_it;
                } else {
                    overlap += std::min(user_it->second, item_it->second);
                    ++user_it;
                    ++item_it;
                }
            }
            result.score = config_.fallback_weight * overlap;
            result.mode = ScoreMode::fallback;
        }
        scored.push_back(std::move(result));
    }

    std::sort(scored.begin(), scored.end(), [](const ScoredResult& a, const ScoredResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (scored.size() > static_cast<std::size_t>(query.k))
        scored.resize(static_cast<std::size_t>(query.k));
    return {std::move(scored), ordinal};
}

QueryResult SearchEngine::execute_query(const RecommendationQuery& query) const {
    if (mode_ == Mode::shadowing) {
        GenerationPtr generation = current_generation();
        return execute_on(generation->core(), generation->ordinal(), query);
    }
    std::shared_lock lock(mutex_);
    return execute_on(live_, 0, query);
}

std::vector<IndexedDocument> SearchEngine::dump_documents() const {
    std::vector<IndexedDocument> out;
    if (mode_ == Mode::shadowing) {
        GenerationPtr generation = current_generation();
        for (const auto& [id, doc] : generation->core().documents) out.push_back(doc);
        return out;
    }
    std::shared_lock lock(mutex_);
    for (const auto& [id, doc] : live_.documents) out.push_back(doc);
    return out;
}

std::string SearchEngine::dump_ndjson() const {
    std::string out;
    for (const IndexedDocument& doc : dump_documents()) {
        Json line;
        line["item"] = doc.item_id;
        line["provider"] = doc.provider_id;
        line["geos"] = Json::array();
        for (const auto& geo : doc.geo_targets) line["geos"].push_back(geo);
        line["attrs"] = Json::object();
        for (const auto& [entity, weight] : doc.attributes) line["attrs"][entity.key()] = weight;
        line["vectors"] = Json::object();
        for (const auto& [version, vec] : doc.vectors) line["vectors"][version.key()] = vec;
        out += canonical_dump(line);
        out += '\n';
    }
    return out;
}

std::uint64_t SearchEngine::generation_ordinal() const {
    if (mode_ == Mode::shadowing) return current_generation()->ordinal();
    return 0;
}

} // namespace recserve
