#include "recserve/orchestrator.hpp"

#include "recserve/errors.hpp"

namespace recserve {

EmbeddingsOrchestrator::EmbeddingsOrchestrator(EmbeddingStore& store, std::size_t cache_capacity)
    : store_(store), cache_capacity_(cache_capacity) {}

EmbeddingsOrchestrator::TypeState& EmbeddingsOrchestrator::state_for(
    const EmbeddingTypeId& type_id) {
    return states_[type_id.key()];
}

std::optional<EmbeddingVersion> EmbeddingsOrchestrator::poll(const EmbeddingTypeId& type_id) {
    auto max_tf = store_.max_time_frame(type_id);
    std::lock_guard lock(mutex_);
    TypeState& state = state_for(type_id);
    if (max_tf && (!state.latest || *max_tf > state.latest->time_frame))
        state.latest = EmbeddingVersion{type_id, *max_tf};
    return state.latest;
}

std::optional<EmbeddingVersion> EmbeddingsOrchestrator::get_latest_version(
    const EmbeddingTypeId& type_id) const {
    std::lock_guard lock(mutex_);
    auto it = states_.find(type_id.key());
    return it == states_.end() ? std::nullopt : it->second.latest;
}

std::optional<EmbeddingVersion> EmbeddingsOrchestrator::get_version_in_use(
    const EmbeddingTypeId& type_id) const {
    std::lock_guard lock(mutex_);
    auto it = states_.find(type_id.key());
    return it == states_.end() ? std::nullopt : it->second.in_use;
}

VersionStates EmbeddingsOrchestrator::get_states(const EmbeddingTypeId& type_id) const {
    std::lock_guard lock(mutex_);
    auto it = states_.find(type_id.key());
    if (it == states_.end()) return {};
    return {it->second.latest, it->second.in_use};
}

VersionStates EmbeddingsOrchestrator::set_version_in_use(const EmbeddingVersion& version) {
    if (!store_.has_version(version))
        throw RecError(Errc::UnknownVersion, "no records exist for " + version.key());
    std::lock_guard lock(mutex_);
    TypeState& state = state_for(version.type_id);
    if (state.in_use && version.time_frame < state.in_use->time_frame)
        throw RecError(Errc::RegressingVersion,
                       "in-use is at time frame " + std::to_string(state.in_use->time_frame) +
                           ", refusing " + std::to_string(version.time_frame));
    state.in_use = version;
    // Keep the pair invariant if a caller sets a version the poller has not
    // observed yet; the version exists, so latest may only move forward.
    if (!state.latest || state.latest->time_frame < version.time_frame)
        state.latest = version;
    return {state.latest, state.in_use};
}

std::optional<Vector> EmbeddingsOrchestrator::lookup_locked(const EmbeddingVersion& version,
                                                            const EntityId& entity) {
    if (cache_capacity_ == 0) return store_.get(version, entity);

    std::string key = canonical_record_key(version, entity);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
        cache_order_.splice(cache_order_.begin(), cache_order_, it->second.order_it);
        return it->second.vector;
    }
    auto vec = store_.get(version, entity);
    if (vec) {
        cache_order_.push_front(key);
        cache_.emplace(key, CacheEntry{*vec, cache_order_.begin()});
        if (cache_.size() > cache_capacity_) {
            cache_.erase(cache_order_.back());
            cache_order_.pop_back();
        }
    }
    return vec;
}

std::optional<Vector> EmbeddingsOrchestrator::get_entity_embedding(const EmbeddingVersion& version,
                                                                   const EntityId& entity) {
    std::lock_guard lock(mutex_);
    return lookup_locked(version, entity);
}

AggregateResult EmbeddingsOrchestrator::aggregate_locked(const EmbeddingVersion& version,
                                                         const WeightedAttributes& attrs) {
    AggregateResult result;
    std::optional<Vector> acc;
    // WeightedAttributes iterates in ascending canonical entity order; the
    // summation order is part of the contract (bit-determinism).
    for (const auto& [entity, weight] : attrs) {
        auto vec = lookup_locked(version, entity);
        if (!vec) {
            result.missing.push_back(entity);
            continue;
        }
        if (!acc) acc = Vector(vec->size(), 0.0);
        for (std::size_t j = 0; j < vec->size(); ++j)
            (*acc)[j] += weight * (*vec)[j];
    }
    result.vector = std::move(acc);
    return result;
}

AggregateResult EmbeddingsOrchestrator::aggregate_embedding(const EmbeddingVersion& version,
                                                            const WeightedAttributes& attrs) {
    if (attrs.empty())
        throw RecError(Errc::EmptyAttributeSet, "aggregation requires a non-empty attribute set");
    std::lock_guard lock(mutex_);
    return aggregate_locked(version, attrs);
}

std::optional<UserEmbedding> EmbeddingsOrchestrator::get_user_embedding(
    const EmbeddingTypeId& type_id, const EntityId& user) {
    std::lock_guard lock(mutex_);
    auto it = states_.find(type_id.key());
    if (it == states_.end() || !it->second.in_use) return std::nullopt;
    EmbeddingVersion in_use = *it->second.in_use;
    auto vec = lookup_locked(in_use, user);
    if (!vec) return std::nullopt;
    return UserEmbedding{in_use, std::move(*vec)};
}

std::optional<UserEmbedding> EmbeddingsOrchestrator::get_user_embedding(
    const EmbeddingTypeId& type_id, const WeightedAttributes& attrs) {
    std::lock_guard lock(mutex_);
    auto it = states_.find(type_id.key());
    if (it == states_.end() || !it->second.in_use) return std::nullopt;
    if (attrs.empty()) return std::nullopt; // unresolvable, serving falls back
    EmbeddingVersion in_use = *it->second.in_use;
    AggregateResult agg = aggregate_locked(in_use, attrs);
    if (!agg.vector) return std::nullopt;
    return UserEmbedding{in_use, std::move(*agg.vector)};
}

std::size_t EmbeddingsOrchestrator::cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

} // namespace recserve
