#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "recserve/store.hpp"
#include "recserve/types.hpp"

namespace recserve {

// Which entities a model kind embeds directly.
//   DirectDirect     -> user and item records
//   IndirectDirect   -> item records only; users aggregate item embeddings
//   IndirectIndirect -> attribute records only; both sides aggregate
enum class ModelKind { direct_direct, indirect_direct, indirect_indirect };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

enum class EmbeddingSource { fixture, hashed };

struct TrainerConfig {
    ModelKind model_kind = ModelKind::direct_direct;
    EmbeddingTypeId type_id;
    EmbeddingSource embedding_source = EmbeddingSource::hashed;
    double coverage_fraction = 1.0; // fraction of eligible entities embedded per cycle
    std::uint64_t seed = 0;
};

// The entity universe a cycle draws from.
struct TrainingCatalog {
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;
    std::vector<std::string> attribute_ids;
    // Fixture vectors keyed by entity; used verbatim when the source is
    // fixture, in which case only fixture-bearing entities are eligible.
    std::map<EntityId, Vector> fixtures;
};

// Fully deterministic vector generator: component j of an entity at a time
// frame is splitmix64(seed ^ fnv1a64(canonical_key ++ "|" ++ j)) mapped to
// [-1, 1). Pure in (seed, type, time_frame, entity, j).
double hashed_component(std::uint64_t seed, const EmbeddingVersion& version,
                        const EntityId& entity, int component_index);
Vector hashed_vector(std::uint64_t seed, const EmbeddingVersion& version, const EntityId& entity);

// Coverage rule: splitmix64(seed ^ fnv1a64(canonical_key) ^ 0x9E37) / 2^64
// < fraction, with fraction >= 1 always covered.
bool coverage_selects(std::uint64_t seed, const EmbeddingVersion& version, const EntityId& entity,
                      double fraction);

// Offline training component, simulated. Writes to the store on its own
// cadence and never talks to the orchestrator.
class Trainer {
public:
    Trainer(EmbeddingStore& store, TrainerConfig config);

    const TrainerConfig& config() const { return config_; }

    // One training cycle: one atomic put_batch of every covered eligible
    // entity under (type_id, time_frame). time_frame must exceed every
    // previous cycle's (NonMonotoneTimeFrame otherwise). Re-running a cycle
    // with the same inputs would produce byte-identical records.
    std::size_t run_cycle(const TrainingCatalog& catalog, std::int64_t time_frame);

    // Entities that received a record in any time frame in (since, now]:
    // the incremental indexer's change feed.
    std::set<EntityId> changed_entities(std::int64_t since_time_frame,
                                        std::int64_t now_time_frame) const;

    std::optional<std::int64_t> last_time_frame() const { return last_time_frame_; }

private:
    std::vector<EntityId> eligible_entities(const TrainingCatalog& catalog) const;

    EmbeddingStore& store_;
    TrainerConfig config_;
    std::optional<std::int64_t> last_time_frame_;
    std::map<std::int64_t, std::vector<EntityId>> written_; // per-cycle change log
};

} // namespace recserve
