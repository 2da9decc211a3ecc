#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "recserve/types.hpp"

namespace recserve {

// One indexed item: filter fields plus per-version embedding vectors. In
// incremental mode at most the in-use and latest versions of a type are
// present at once.
struct IndexedDocument {
    std::string item_id;
    std::string provider_id;
    std::set<std::string> geo_targets; // empty = untargeted, eligible everywhere
    WeightedAttributes attributes;     // semantic features, attribute entities
    std::map<EmbeddingVersion, Vector> vectors;

    bool has_vector_of_type(const EmbeddingTypeId& type_id) const;
};

struct RecommendationQuery {
    EmbeddingTypeId type_id;
    std::optional<EmbeddingVersion> user_version;
    std::optional<Vector> user_vector; // present iff user_version is present
    WeightedAttributes user_attributes; // fallback scoring input
    std::string user_geo;
    std::set<std::string> publisher_blocked_providers;
    int k = 1;
};

enum class ScoreMode { embedding, fallback };

std::string_view to_string(ScoreMode mode);

struct ScoredResult {
    std::string item_id;
    double score = 0.0;
    ScoreMode mode = ScoreMode::fallback;
    std::optional<EmbeddingVersion> version_used; // set iff mode == embedding
};

struct QueryResult {
    std::vector<ScoredResult> results;
    std::uint64_t generation = 0; // ordinal of the index state that answered
};

struct EngineConfig {
    double fallback_weight = 1.0;
};

// Inverted postings plus forward store for one index state.
struct IndexCore {
    std::map<std::string, IndexedDocument> documents; // by item_id
    std::map<std::string, std::set<std::string>> provider_postings;
    std::map<std::string, std::set<std::string>> geo_postings;
    std::set<std::string> untargeted; // item ids with empty geo_targets

    void insert(IndexedDocument doc);
    void erase(const std::string& item_id);
};

// A sealed, read-only index build. Queries against it are lock-free.
class Generation {
public:
    std::uint64_t ordinal() const { return ordinal_; }
    const IndexCore& core() const { return core_; }
    std::size_t size() const { return core_.documents.size(); }

private:
    friend class SearchEngine;
    Generation(std::uint64_t ordinal, IndexCore core)
        : ordinal_(ordinal), core_(std::move(core)) {}

    std::uint64_t ordinal_;
    IndexCore core_;
};

using GenerationPtr = std::shared_ptr<const Generation>;

// The runtime core: filtered, version-scoped maximum-inner-product top-k
// with fallback scoring. Shadowing mode serves immutable generations behind
// an atomic swap; incremental mode applies per-document upserts that are
// atomic with respect to queries.
class SearchEngine {
public:
    enum class Mode { shadowing, incremental };

    SearchEngine(Mode mode, EngineConfig config);

    Mode mode() const { return mode_; }
    const EngineConfig& config() const { return config_; }

    // Shadowing. build_generation seals a new immutable generation (throws
    // DuplicateItemId); swap_generation atomically replaces the serving one
    // and returns the previous. Queries already started keep the generation
    // they resolved.
    GenerationPtr build_generation(std::vector<IndexedDocument> docs);
    GenerationPtr swap_generation(GenerationPtr next);
    GenerationPtr current_generation() const;

    // Incremental. Upsert is delete-then-index, atomic per document.
    // delete_document returns false for an absent id (reported, non-fatal).
    void upsert_document(IndexedDocument doc);
    bool delete_document(const std::string& item_id);

    // Filter, score, rank. Embedding mode requires the document to hold a
    // vector under exactly the query's version; anything else falls back to
    // weighted attribute overlap. Candidates are ranked in one pool by
    // (score desc, item_id asc).
    QueryResult execute_query(const RecommendationQuery& query) const;

    // Observable index state, sorted by item_id.
    std::vector<IndexedDocument> dump_documents() const;
    std::string dump_ndjson() const;
    std::uint64_t generation_ordinal() const;

    // Instrumentation: inner products computed against a document vector
    // whose version differed from the query version. The scorer re-checks
    // every product; this stays zero.
    std::uint64_t cross_version_products() const { return cross_version_products_.load(); }

private:
    QueryResult execute_on(const IndexCore& core, std::uint64_t ordinal,
                           const RecommendationQuery& query) const;

    Mode mode_;
    EngineConfig config_;

    mutable std::shared_mutex mutex_; // guards current_ / live_
    GenerationPtr current_;           // shadowing
    IndexCore live_;                  // incremental
    std::uint64_t next_ordinal_ = 1;
    mutable std::atomic<std::uint64_t> cross_version_products_{0};
};

// Shared validation for engine and oracle paths.
void validate_query(const RecommendationQuery& query);

} // namespace recserve
