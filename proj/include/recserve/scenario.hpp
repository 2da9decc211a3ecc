#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recserve/engine.hpp"
#include "recserve/indexer.hpp"
#include "recserve/jsonio.hpp"
#include "recserve/serving.hpp"
#include "recserve/trainer.hpp"

namespace recserve {

struct ScenarioUser {
    std::string id;
    std::string geo;
    WeightedAttributes attributes;
};

struct Tombstone {
    std::string item_id;
    std::size_t cycle; // indexer cycle ordinal (0-based) the deletion lands in
};

struct RequestSpec {
    std::size_t count = 100;
    int k = 3;
    std::size_t cadence = 1;
    std::vector<std::string> user_ids;    // defaults to every universe user
    std::vector<std::string> publishers;  // defaults to rule publishers or "default"
};

// Everything one simulated deployment needs, parsed from a JSON file. The
// schema is documented in the README; weighted-attribute keys are either
// bare (attribute entities) or "kind|id" (explicit entity kind).
struct Scenario {
    ModelKind model_kind = ModelKind::direct_direct;
    std::vector<EmbeddingTypeId> types;

    std::vector<ScenarioUser> users;
    std::vector<CatalogItem> items;
    std::vector<std::string> attribute_vocabulary;
    std::map<EntityId, Vector> fixtures;

    EmbeddingSource trainer_source = EmbeddingSource::hashed;
    double coverage_fraction = 1.0;
    std::uint64_t trainer_seed = 1;
    std::size_t trainer_cadence = 1;
    std::size_t trainer_cycles = 3;

    SearchEngine::Mode index_mode = SearchEngine::Mode::shadowing;
    std::size_t indexer_cadence = 1;
    std::size_t indexer_cycles = 3;
    bool shadow_index_both_versions = false;

    std::size_t eo_cache_capacity = 1024;
    std::size_t eo_poll_cadence = 1;

    RequestSpec requests;
    std::map<std::string, PublisherRules> publisher_rules;
    std::vector<Tombstone> tombstones;

    double fallback_weight = 1.0;
    std::uint64_t interleaving_seed = 0;

    static Scenario from_json(const Json& config);
    static Scenario load_file(const std::string& path);
    Json to_json() const;

    // Cross-reference and invariant checks; throws std::invalid_argument.
    void validate() const;

    TrainingCatalog training_catalog() const;
    const ScenarioUser& user_by_id(const std::string& id) const;
};

// Weighted-attribute map from a JSON object. Bare keys are attribute
// entities; "item|x" / "user|x" / "attribute|x" select the kind.
WeightedAttributes parse_weighted_attributes(const Json& object);
Json weighted_attributes_to_json(const WeightedAttributes& attrs);

} // namespace recserve
