#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace recserve {

using Vector = std::vector<double>;

// Entity kinds, declared in canonical (alphabetical) order so that enum
// comparison matches the order of the "kind|id" string encoding.
enum class EntityKind { attribute, item, user };

std::string_view to_string(EntityKind kind);
EntityKind entity_kind_from_string(std::string_view s);

// (kind, id) is the unique entity key; id is non-empty and '|'-free.
struct EntityId {
    EntityKind kind = EntityKind::item;
    std::string id;

    std::string key() const; // "kind|id"
    auto operator<=>(const EntityId&) const = default;
};

EntityId attribute_entity(std::string id);
EntityId item_entity(std::string id);
EntityId user_entity(std::string id);

// An embedding algorithm with a specific configuration. (algorithm_name,
// config_tag) is the identity; dimension is a declared property and must be
// constant across all records of the type.
struct EmbeddingTypeId {
    std::string algorithm_name;
    std::string config_tag;
    int dimension = 0;

    std::string key() const; // "algo|config"

    friend bool operator==(const EmbeddingTypeId& a, const EmbeddingTypeId& b) {
        return a.algorithm_name == b.algorithm_name && a.config_tag == b.config_tag;
    }
    friend std::strong_ordering operator<=>(const EmbeddingTypeId& a, const EmbeddingTypeId& b) {
        if (auto c = a.algorithm_name <=> b.algorithm_name; c != 0) return c;
        return a.config_tag <=> b.config_tag;
    }
};

// Identity of one trained embedding batch. Larger time_frame = fresher.
struct EmbeddingVersion {
    EmbeddingTypeId type_id;
    std::int64_t time_frame = 0;

    std::string key() const; // "algo|config|tf"

    friend bool operator==(const EmbeddingVersion& a, const EmbeddingVersion& b) {
        return a.type_id == b.type_id && a.time_frame == b.time_frame;
    }
    friend std::strong_ordering operator<=>(const EmbeddingVersion& a, const EmbeddingVersion& b) {
        if (auto c = a.type_id <=> b.type_id; c != 0) return c;
        return a.time_frame <=> b.time_frame;
    }
};

// One (version, entity) -> vector entry.
struct EmbeddingRecord {
    EmbeddingVersion version;
    EntityId entity;
    Vector vector;

    // "algo|config|tf|kind|id" — the flat key used for the store, the
    // snapshot file order, and the hashed generator input.
    std::string canonical_key() const;
};

std::string canonical_record_key(const EmbeddingVersion& version, const EntityId& entity);

// Weighted entity references. Keys usually name attribute entities; for
// identifier-based user aggregation they name item entities. std::map fixes
// the ascending-key summation order.
using WeightedAttributes = std::map<EntityId, double>;

// Throws std::invalid_argument when an identifier contains '|' or is empty.
void validate_identifier(std::string_view field_name, std::string_view value);

} // namespace recserve
