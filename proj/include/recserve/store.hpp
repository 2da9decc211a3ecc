#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "recserve/types.hpp"

namespace recserve {

// The key-value store holding one record per embedding vector. Single
// process, but the contract is the distributed one: keyed reads, atomic
// batch writes, version isolation. Safe for concurrent readers with one
// writer at a time per batch.
class EmbeddingStore {
public:
    EmbeddingStore() = default;

    // Atomic: a concurrent reader observes none or all of the batch.
    // Within the batch, last writer wins per key. Returns records written.
    // Throws DimensionMismatch / NonFiniteComponent.
    std::size_t put_batch(std::span<const EmbeddingRecord> records);

    // Absence is a value, not an error: coverage is expected to be sparse.
    std::optional<Vector> get(const EmbeddingVersion& version, const EntityId& entity) const;

    // Largest time frame having at least one record of the type.
    std::optional<std::int64_t> max_time_frame(const EmbeddingTypeId& type_id) const;

    bool has_version(const EmbeddingVersion& version) const;

    // Declared dimension of the type, learned from the first record written
    // (or the first snapshot line loaded).
    std::optional<int> dimension_of(const EmbeddingTypeId& type_id) const;

    std::size_t record_count() const;

    // Entities holding a record under the given version, in canonical order.
    std::vector<EntityId> entities_of_version(const EmbeddingVersion& version) const;

    // Newline-delimited JSON, one record per line, fixed key order
    // {"algo","config","tf","kind","id","vec"}, lines sorted by canonical
    // key. save∘load∘save is byte-identical. Both return the record count.
    std::size_t save_snapshot(const std::string& path) const;
    std::size_t load_snapshot(const std::string& path); // replaces current contents

private:
    struct StoredRecord {
        EmbeddingVersion version;
        EntityId entity;
        Vector vector;
    };

    void validate_and_register(const EmbeddingRecord& record,
                               std::map<std::string, int>& dims) const;

    mutable std::shared_mutex mutex_;
    // Keyed by canonical record key so iteration order is snapshot order.
    std::map<std::string, StoredRecord> records_;
    // type key -> (time frame -> record count), for max_time_frame.
    std::map<std::string, std::map<std::int64_t, std::size_t>> frames_;
    // type key -> declared dimension.
    std::map<std::string, int> dimensions_;
};

} // namespace recserve
