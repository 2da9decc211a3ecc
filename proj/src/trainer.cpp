#include "recserve/trainer.hpp"

#include <algorithm>
#include <stdexcept>

#include "recserve/errors.hpp"
#include "recserve/hash.hpp"

namespace recserve {

std::string_view to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::direct_direct: return "direct_direct";
    case ModelKind::indirect_direct: return "indirect_direct";
    case ModelKind::indirect_indirect: return "indirect_indirect";
    }
    throw std::logic_error("unreachable model kind");
}

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "direct_direct") return ModelKind::direct_direct;
    if (s == "indirect_direct") return ModelKind::indirect_direct;
    if (s == "indirect_indirect") return ModelKind::indirect_indirect;
    throw std::invalid_argument("unknown model kind: " + std::string(s));
}

double hashed_component(std::uint64_t seed, const EmbeddingVersion& version,
                        const EntityId& entity, int component_index) {
    std::string key = canonical_record_key(version, entity);
    key += '|';
    key += std::to_string(component_index);
    std::uint64_t u = splitmix64(seed ^ fnv1a64(key));
    return static_cast<double>(u) / 9223372036854775808.0 - 1.0; // u / 2^63 - 1
}

Vector hashed_vector(std::uint64_t seed, const EmbeddingVersion& version,
                     const EntityId& entity) {
    Vector out(static_cast<std::size_t>(version.type_id.dimension));
    for (int j = 0; j < version.type_id.dimension; ++j)
        out[static_cast<std::size_t>(j)] = hashed_component(seed, version, entity, j);
    return out;
}

bool coverage_selects(std::uint64_t seed, const EmbeddingVersion& version, const EntityId& entity,
                      double fraction) {
    if (fraction >= 1.0) return true;
    std::uint64_t u = splitmix64(seed ^ fnv1a64(canonical_record_key(version, entity)) ^ 0x9E37);
    return static_cast<double>(u) / 18446744073709551616.0 < fraction; // u / 2^64
}

Trainer::Trainer(EmbeddingStore& store, TrainerConfig config)
    : store_(store), config_(std::move(config)) {
    if (config_.coverage_fraction < 0.0 || config_.coverage_fraction > 1.0)
        throw std::invalid_argument("coverage_fraction must be in [0,1]");
    if (config_.type_id.dimension < 1)
        throw std::invalid_argument("type dimension must be >= 1");
}

std::vector<EntityId> Trainer::eligible_entities(const TrainingCatalog& catalog) const {
    std::vector<EntityId> out;
    auto add_kind = [&](EntityKind kind, const std::vector<std::string>& ids) {
        for (const auto& id : ids) out.push_back({kind, id});
    };
    switch (config_.model_kind) {
    case ModelKind::direct_direct:
        add_kind(EntityKind::user, catalog.user_ids);
        add_kind(EntityKind::item, catalog.item_ids);
        break;
    case ModelKind::indirect_direct:
        add_kind(EntityKind::item, catalog.item_ids);
        break;
    case ModelKind::indirect_indirect:
        add_kind(EntityKind::attribute, catalog.attribute_ids);
        break;
    }
    if (config_.embedding_source == EmbeddingSource::fixture) {
        std::erase_if(out, [&](const EntityId& e) { return !catalog.fixtures.count(e); });
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t Trainer::run_cycle(const TrainingCatalog& catalog, std::int64_t time_frame) {
    if (last_time_frame_ && time_frame <= *last_time_frame_)
        throw RecError(Errc::NonMonotoneTimeFrame,
                       "cycle time frame " + std::to_string(time_frame) +
                           " does not exceed previous " + std::to_string(*last_time_frame_));
    if (time_frame < 0)
        throw RecError(Errc::NonMonotoneTimeFrame, "time frame must be non-negative");

    EmbeddingVersion version{config_.type_id, time_frame};
    std::vector<EmbeddingRecord> batch;
    std::vector<EntityId> covered;
    for (const EntityId& entity : eligible_entities(catalog)) {
        if (!coverage_selects(config_.seed, version, entity, config_.coverage_fraction)) continue;
        Vector vec;
        if (config_.embedding_source == EmbeddingSource::fixture) {
            vec = catalog.fixtures.at(entity);
        } else {
            vec = hashed_vector(config_.seed, version, entity);
        }
        batch.push_back({version, entity, std::move(vec)});
        covered.push_back(entity);
    }

    std::size_t written = store_.put_batch(batch);
    last_time_frame_ = time_frame;
    written_[time_frame] = std::move(covered);
    return written;
}

std::set<EntityId> Trainer::changed_entities(std::int64_t since_time_frame,
                                             std::int64_t now_time_frame) const {
    if (since_time_frame > now_time_frame)
        throw std::invalid_argument("changed_entities: since > now");
    std::set<EntityId> out;
    auto begin = written_.upper_bound(since_time_frame);
    for (auto it = begin; it != written_.end() && it->first <= now_time_frame; ++it)
        out.insert(it->second.begin(), it->second.end());
    return out;
}

} // namespace recserve
