#include "recserve/indexer.hpp"

#include <algorithm>

#include "recserve/errors.hpp"

namespace recserve {

Json IndexCycleReport::to_json() const {
    Json out;
    out["mode"] = mode;
    out["triggered_in_use"] = triggered_in_use;
    out["aborted"] = aborted;
    out["deletions_applied"] = static_cast<std::int64_t>(deletions_applied);
    out["types"] = Json::array();
    for (const auto& counts : per_type) {
        Json entry;
        entry["type"] = counts.type_id.key();
        entry["versions"] = Json::array();
        for (const auto& version : counts.versions_indexed)
            entry["versions"].push_back(version.key());
        entry["items_total"] = static_cast<std::int64_t>(counts.items_total);
        entry["items_with_embedding"] = static_cast<std::int64_t>(counts.items_with_embedding);
        entry["items_fallback_only"] = static_cast<std::int64_t>(counts.items_fallback_only);
        out["types"].push_back(std::move(entry));
    }
    return out;
}

IndexCycle::StepRecord IndexCycle::advance() {
    if (done()) throw std::logic_error("advance() on a finished cycle");
    if (fault_injector_) fault_injector_(position_);
    StepRecord record = execute_step(position_);
    ++position_;
    return record;
}

void IndexCycle::abort() {
    aborted_ = true;
    report_.aborted = true;
}

namespace {

// Per-type versions a cycle resolved at its read step.
struct ReadVersions {
    EmbeddingTypeId type_id;
    std::optional<EmbeddingVersion> latest;
    std::optional<EmbeddingVersion> in_use;
};

// Fetches an item's vector for one version through the orchestrator: by id
// for direct item models, by weighted attribute aggregation for
// indirect-indirect. Absence is sparse coverage, not an error.
std::optional<Vector> fetch_item_vector(EmbeddingsOrchestrator& eo, ModelKind model_kind,
                                        const EmbeddingVersion& version,
                                        const CatalogItem& item) {
    if (model_kind == ModelKind::indirect_indirect) {
        if (item.attributes.empty()) return std::nullopt;
        return eo.aggregate_embedding(version, item.attributes).vector;
    }
    return eo.get_entity_embedding(version, item_entity(item.item_id));
}

IndexedDocument build_document(EmbeddingsOrchestrator& eo, ModelKind model_kind,
                               const std::vector<ReadVersions>& reads, const CatalogItem& item,
                               bool include_in_use) {
    IndexedDocument doc;
    doc.item_id = item.item_id;
    doc.provider_id = item.provider_id;
    doc.geo_targets = item.geo_targets;
    doc.attributes = item.attributes;
    for (const auto& read : reads) {
        if (read.latest) {
            if (auto vec = fetch_item_vector(eo, model_kind, *read.latest, item))
                doc.vectors.emplace(*read.latest, std::move(*vec));
        }
        if (include_in_use && read.in_use && (!read.latest || !(*read.in_use == *read.latest))) {
            if (auto vec = fetch_item_vector(eo, model_kind, *read.in_use, item))
                doc.vectors.emplace(*read.in_use, std::move(*vec));
        }
    }
    return doc;
}

void count_document(const std::vector<ReadVersions>& reads, const IndexedDocument& doc,
                    std::vector<TypeCycleCounts>& per_type) {
    for (std::size_t t = 0; t < reads.size(); ++t) {
        per_type[t].items_total += 1;
        if (doc.has_vector_of_type(reads[t].type_id))
            per_type[t].items_with_embedding += 1;
        else
            per_type[t].items_fallback_only += 1;
    }
}

Json versions_payload(const std::vector<ReadVersions>& reads) {
    Json out = Json::array();
    for (const auto& read : reads) {
        Json entry;
        entry["type"] = read.type_id.key();
        entry["latest_tf"] = read.latest ? Json(read.latest->time_frame) : Json(nullptr);
        entry["in_use_tf"] = read.in_use ? Json(read.in_use->time_frame) : Json(nullptr);
        out.push_back(std::move(entry));
    }
    return out;
}

class ShadowCycle final : public IndexCycle {
public:
    ShadowCycle(EmbeddingsOrchestrator& eo, SearchEngine& engine, const IndexerOptions& options,
                Catalog catalog) : eo_(eo), engine_(engine), options_(options),
                                   catalog_(std::move(catalog)) {
        report_.mode = "shadow";
        for (const auto& type : options_.types)
            report_.per_type.push_back({type, {}, 0, 0, 0});
    }

    std::size_t total_steps() const override {
        // read, one per item, build, swap, trigger
        return 1 + catalog_.items.size() + 3;
    }

protected:
    StepRecord execute_step(std::size_t position) override {
        if (position == 0) {
            for (std::size_t t = 0; t < options_.types.size(); ++t) {
                VersionStates states = eo_.get_states(options_.types[t]);
                reads_.push_back({options_.types[t], states.latest_version,
                                  states.version_in_use});
                if (states.latest_version)
                    report_.per_type[t].versions_indexed.push_back(*states.latest_version);
                if (options_.shadow_index_both_versions && states.version_in_use &&
                    (!states.latest_version ||
                     !(*states.version_in_use == *states.latest_version)))
                    report_.per_type[t].versions_indexed.push_back(*states.version_in_use);
            }
            return {"read_versions", Json{{"versions", versions_payload(reads_)}}};
        }
        std::size_t item_index = position - 1;
        if (item_index < catalog_.items.size()) {
            const CatalogItem& item = catalog_.items[item_index];
            IndexedDocument doc = build_document(eo_, options_.model_kind, reads_, item,
                                                 options_.shadow_index_both_versions);
            count_document(reads_, doc, report_.per_type);
            Json payload{{"item", doc.item_id}};
            payload["versions"] = Json::array();
            for (const auto& [version, vec] : doc.vectors)
                payload["versions"].push_back(version.key());
            pending_docs_.push_back(std::move(doc));
            return {"index_item", std::move(payload)};
        }
        std::size_t tail = item_index - catalog_.items.size();
        if (tail == 0) {
            built_ = engine_.build_generation(std::move(pending_docs_));
            pending_docs_.clear();
            return {"build_generation",
                    Json{{"docs", static_cast<std::int64_t>(built_->size())},
                         {"generation", static_cast<std::int64_t>(built_->ordinal())}}};
        }
        if (tail == 1) {
            GenerationPtr previous = engine_.swap_generation(built_);
            return {"swap_generation",
                    Json{{"generation", static_cast<std::int64_t>(built_->ordinal())},
                         {"previous", static_cast<std::int64_t>(previous->ordinal())}}};
        }
        // trigger: set in-use to the latest read at cycle start.
        Json triggered = Json::array();
        for (const auto& read : reads_) {
            if (!read.latest) continue;
            eo_.set_version_in_use(*read.latest);
            report_.triggered_in_use = true;
            triggered.push_back(read.latest->key());
        }
        return {"trigger_in_use", Json{{"versions", triggered}}};
    }

private:
    EmbeddingsOrchestrator& eo_;
    SearchEngine& engine_;
    const IndexerOptions& options_;
    Catalog catalog_;
    std::vector<ReadVersions> reads_;
    std::vector<IndexedDocument> pending_docs_;
    GenerationPtr built_;
};

class IncrementalBatch final : public IndexCycle {
public:
    IncrementalBatch(EmbeddingsOrchestrator& eo, SearchEngine& engine,
                     const IndexerOptions& options, ChangeSet changes)
        : eo_(eo), engine_(engine), options_(options), changes_(std::move(changes)) {
        report_.mode = "incremental";
        for (const auto& type : options_.types)
            report_.per_type.push_back({type, {}, 0, 0, 0});
    }

    std::size_t total_steps() const override {
        return 1 + changes_.upserts.size() + changes_.deletions.size() + 1;
    }

protected:
    StepRecord execute_step(std::size_t position) override {
        if (position == 0) {
            for (std::size_t t = 0; t < options_.types.size(); ++t) {
                // latest and in-use are read together, atomically.
                VersionStates states = eo_.get_states(options_.types[t]);
                reads_.push_back({options_.types[t], states.latest_version,
                                  states.version_in_use});
                auto& versions = report_.per_type[t].versions_indexed;
                if (states.version_in_use) versions.push_back(*states.version_in_use);
                if (states.latest_version &&
                    (!states.version_in_use ||
                     !(*states.latest_version == *states.version_in_use)))
                    versions.push_back(*states.latest_version);
            }
            return {"read_versions", Json{{"versions", versions_payload(reads_)}}};
        }
        std::size_t upsert_index = position - 1;
        if (upsert_index < changes_.upserts.size()) {
            const CatalogItem& item = changes_.upserts[upsert_index];
            // Both versions are indexed, each under its own version key, so
            // queries at the still-current in-use version keep matching.
            IndexedDocument doc = build_document(eo_, options_.model_kind, reads_, item,
                                                 /*include_in_use=*/true);
            count_document(reads_, doc, report_.per_type);
            Json payload{{"item", doc.item_id}};
            payload["versions"] = Json::array();
            for (const auto& [version, vec] : doc.vectors)
                payload["versions"].push_back(version.key());
            engine_.upsert_document(std::move(doc));
            return {"upsert_item", std::move(payload)};
        }
        std::size_t delete_index = upsert_index - changes_.upserts.size();
        if (delete_index < changes_.deletions.size()) {
            const std::string& id = changes_.deletions[delete_index];
            bool existed = engine_.delete_document(id);
            if (existed) report_.deletions_applied += 1;
            return {"delete_item", Json{{"item", id}, {"existed", existed}}};
        }
        Json triggered = Json::array();
        for (const auto& read : reads_) {
            if (!read.latest) continue;
            eo_.set_version_in_use(*read.latest);
            report_.triggered_in_use = true;
            triggered.push_back(read.latest->key());
        }
        return {"trigger_in_use", Json{{"versions", triggered}}};
    }

private:
    EmbeddingsOrchestrator& eo_;
    SearchEngine& engine_;
    const IndexerOptions& options_;
    ChangeSet changes_;
    std::vector<ReadVersions> reads_;
};

} // namespace

Indexer::Indexer(EmbeddingsOrchestrator& eo, SearchEngine& engine, IndexerOptions options)
    : eo_(eo), engine_(engine), options_(std::move(options)) {
    if (options_.types.empty()) throw std::invalid_argument("indexer needs at least one type");
}

std::unique_ptr<IndexCycle> Indexer::begin_shadow_cycle(const Catalog& catalog,
                                                        FaultInjector injector) {
    auto cycle = std::make_unique<ShadowCycle>(eo_, engine_, options_, catalog);
    cycle->fault_injector_ = std::move(injector);
    cycle->cycle_lock_ = std::unique_lock(cycle_mutex_);
    return cycle;
}

std::unique_ptr<IndexCycle> Indexer::begin_incremental_batch(const ChangeSet& changes,
                                                             FaultInjector injector) {
    auto cycle = std::make_unique<IncrementalBatch>(eo_, engine_, options_, changes);
    cycle->fault_injector_ = std::move(injector);
    cycle->cycle_lock_ = std::unique_lock(cycle_mutex_);
    return cycle;
}

IndexCycleReport Indexer::drive_to_completion(IndexCycle& cycle) {
    while (!cycle.done()) {
        try {
            cycle.advance();
        } catch (const RecError& e) {
            if (e.code() == Errc::EOUnavailable || e.code() == Errc::EngineUnavailable) {
                cycle.abort();
                break;
            }
            throw;
        }
    }
    return cycle.report();
}

IndexCycleReport Indexer::run_shadow_cycle(const Catalog& catalog) {
    auto cycle = begin_shadow_cycle(catalog);
    return drive_to_completion(*cycle);
}

IndexCycleReport Indexer::run_incremental_batch(const ChangeSet& changes) {
    auto cycle = begin_incremental_batch(changes, {});
    return drive_to_completion(*cycle);
}

} // namespace recserve
