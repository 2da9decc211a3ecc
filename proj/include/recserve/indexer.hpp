#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "recserve/engine.hpp"
#include "recserve/jsonio.hpp"
#include "recserve/orchestrator.hpp"
#include "recserve/trainer.hpp"

namespace recserve {

// Non-embedding item data: what the catalog knows about an item.
struct CatalogItem {
    std::string item_id;
    std::string provider_id;
    std::set<std::string> geo_targets;
    WeightedAttributes attributes;
};

struct Catalog {
    std::vector<CatalogItem> items; // unique item_ids
};

// One incremental mini-batch: items to (re)index plus tombstones.
struct ChangeSet {
    std::vector<CatalogItem> upserts;
    std::vector<std::string> deletions;
};

struct TypeCycleCounts {
    EmbeddingTypeId type_id;
    std::vector<EmbeddingVersion> versions_indexed;
    std::size_t items_total = 0;
    std::size_t items_with_embedding = 0;
    std::size_t items_fallback_only = 0;
};

struct IndexCycleReport {
    std::string mode; // "shadow" | "incremental"
    bool triggered_in_use = false;
    bool aborted = false;
    std::size_t deletions_applied = 0;
    std::vector<TypeCycleCounts> per_type;

    Json to_json() const;
};

struct IndexerOptions {
    ModelKind model_kind = ModelKind::direct_direct;
    std::vector<EmbeddingTypeId> types;
    // When set, shadow builds also index the outgoing in-use version, which
    // closes the swap-to-trigger fallback window entirely.
    bool shadow_index_both_versions = false;
};

// Raised-by-injection hook: called at the start of every cycle step with the
// step ordinal within the cycle; throws to simulate a dependency failure.
using FaultInjector = std::function<void(std::size_t step_in_cycle)>;

// One indexing cycle, advanced one schedulable step at a time. Step layout:
//   shadow:      read_versions, index_item*, build_generation,
//                swap_generation, trigger_in_use
//   incremental: read_versions, upsert_item*, delete_item*, trigger_in_use
// A step either completes atomically or throws without side effects; after
// abort() the cycle is inert and the in-use version is guaranteed untouched
// by anything it would still have done.
class IndexCycle {
public:
    struct StepRecord {
        std::string action;
        Json payload;
    };

    virtual ~IndexCycle() = default;

    bool done() const { return aborted_ || position_ >= total_steps(); }
    bool aborted() const { return aborted_; }
    std::size_t position() const { return position_; }
    virtual std::size_t total_steps() const = 0;

    StepRecord advance();
    void abort();

    const IndexCycleReport& report() const { return report_; }

protected:
    virtual StepRecord execute_step(std::size_t position) = 0;

    IndexCycleReport report_;
    FaultInjector fault_injector_;
    std::size_t position_ = 0;
    bool aborted_ = false;
    std::unique_lock<std::mutex> cycle_lock_;

    friend class Indexer;
};

// The indexing layer. Pulls embeddings from the orchestrator, feeds the
// engine, and triggers the in-use advancement with the version it read at
// cycle start (never a fresher one).
class Indexer {
public:
    Indexer(EmbeddingsOrchestrator& eo, SearchEngine& engine, IndexerOptions options);

    const IndexerOptions& options() const { return options_; }

    // Whole-cycle entry points. A dependency failure (EOUnavailable,
    // EngineUnavailable) aborts the cycle: the previous generation and the
    // previous in-use version remain in effect.
    IndexCycleReport run_shadow_cycle(const Catalog& catalog);
    IndexCycleReport run_incremental_batch(const ChangeSet& changes);

    // Step-granular cycles for the simulation harness. The returned cycle
    // holds the one-cycle-at-a-time lock until destroyed.
    std::unique_ptr<IndexCycle> begin_shadow_cycle(const Catalog& catalog,
                                                   FaultInjector injector = {});
    std::unique_ptr<IndexCycle> begin_incremental_batch(const ChangeSet& changes,
                                                        FaultInjector injector = {});

private:
    IndexCycleReport drive_to_completion(IndexCycle& cycle);

    EmbeddingsOrchestrator& eo_;
    SearchEngine& engine_;
    IndexerOptions options_;
    std::mutex cycle_mutex_;
};

} // namespace recserve
