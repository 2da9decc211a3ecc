#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "recserve/store.hpp"
#include "recserve/types.hpp"

namespace recserve {

// Atomic snapshot of a type's version pair.
struct VersionStates {
    std::optional<EmbeddingVersion> latest_version;
    std::optional<EmbeddingVersion> version_in_use;
};

struct AggregateResult {
    std::optional<Vector> vector;          // absent when every attribute missed
    std::vector<EntityId> missing;         // attributes with no stored vector
};

struct UserEmbedding {
    EmbeddingVersion version; // the version in-use at the moment of resolution
    Vector vector;
};

// The Embeddings Orchestrator: exposes embeddings to indexing and serving,
// owns the per-type `latest-version` and `version in-use` states, and
// implements weighted aggregation for indirect models.
//
// State rules, enforced here:
//   - latest_version advances only forward, discovered by poll().
//   - version_in_use changes only through set_version_in_use(), i.e. only
//     when an indexing cycle triggers it; polling never touches it.
//   - in_use.time_frame <= latest.time_frame whenever both are set.
//
// All state reads and writes are linearizable (single mutex); resolution in
// get_user_embedding reads the in-use version and the vector inside one
// critical section, so the returned pair is consistent under concurrency.
class EmbeddingsOrchestrator {
public:
    explicit EmbeddingsOrchestrator(EmbeddingStore& store, std::size_t cache_capacity = 1024);

    // Refresh latest_version from the store's max time frame. Never lowers
    // it and never touches version_in_use. Returns the updated latest.
    std::optional<EmbeddingVersion> poll(const EmbeddingTypeId& type_id);

    std::optional<EmbeddingVersion> get_latest_version(const EmbeddingTypeId& type_id) const;
    std::optional<EmbeddingVersion> get_version_in_use(const EmbeddingTypeId& type_id) const;
    VersionStates get_states(const EmbeddingTypeId& type_id) const; // atomic pair read

    // Indexer trigger. Monotone: rejects time frames below the current
    // in-use (RegressingVersion); requires records to exist (UnknownVersion).
    // Setting the current in-use again is an accepted no-op.
    VersionStates set_version_in_use(const EmbeddingVersion& version);

    // Indexer-facing lookup at an explicit version, through the cache.
    std::optional<Vector> get_entity_embedding(const EmbeddingVersion& version,
                                               const EntityId& entity);

    // Weighted sum over attributes having a vector at (type, version), in
    // ascending canonical attribute order. Misses are skipped and reported;
    // all-miss yields an absent vector. Empty input is EmptyAttributeSet.
    AggregateResult aggregate_embedding(const EmbeddingVersion& version,
                                        const WeightedAttributes& attrs);

    // Serving-facing calls: no version supplied, the in-use version is
    // resolved internally and returned with the vector.
    std::optional<UserEmbedding> get_user_embedding(const EmbeddingTypeId& type_id,
                                                    const EntityId& user);
    std::optional<UserEmbedding> get_user_embedding(const EmbeddingTypeId& type_id,
                                                    const WeightedAttributes& attrs);

    std::size_t cache_size() const;

private:
    struct TypeState {
        std::optional<EmbeddingVersion> latest;
        std::optional<EmbeddingVersion> in_use;
    };

    // (version, entity) -> vector, least-recently-used eviction. Presence of
    // a cached "absent" is not stored; absence always re-consults the store.
    struct CacheEntry {
        Vector vector;
        std::list<std::string>::iterator order_it;
    };

    std::optional<Vector> lookup_locked(const EmbeddingVersion& version, const EntityId& entity);
    AggregateResult aggregate_locked(const EmbeddingVersion& version,
                                     const WeightedAttributes& attrs);
    TypeState& state_for(const EmbeddingTypeId& type_id);

    EmbeddingStore& store_;
    std::size_t cache_capacity_;

    mutable std::mutex mutex_;
    std::map<std::string, TypeState> states_; // keyed by type key
    std::unordered_map<std::string, CacheEntry> cache_;
    std::list<std::string> cache_order_; // front = most recently used
};

} // namespace recserve
