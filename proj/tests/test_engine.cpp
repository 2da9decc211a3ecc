#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "recserve/engine.hpp"
#include "recserve/errors.hpp"
#include "recserve/hash.hpp"
#include "recserve/oracle.hpp"

using namespace recserve;

namespace {

const EmbeddingTypeId kType{"mf", "c1", 2};
const EmbeddingVersion kV1{kType, 1};
const EmbeddingVersion kV2{kType, 2};

IndexedDocument doc(std::string id, std::string provider, std::set<std::string> geos,
                    WeightedAttributes attrs, std::map<EmbeddingVersion, Vector> vectors) {
    IndexedDocument out;
    out.item_id = std::move(id);
    out.provider_id = std::move(provider);
    out.geo_targets = std::move(geos);
    out.attributes = std::move(attrs);
    out.vectors = std::move(vectors);
    return out;
}

RecommendationQuery embedding_query(Vector user_vec, int k = 10) {
    RecommendationQuery query;
    query.type_id = kType;
    query.user_version = kV1;
    query.user_vector = std::move(user_vec);
    query.k = k;
    return query;
}

// SearchEngine owns a mutex and cannot move; hand back a pointer.
std::unique_ptr<SearchEngine> shadow_engine_with(std::vector<IndexedDocument> docs,
                                                 double fallback_weight = 1.0) {
    auto engine = std::make_unique<SearchEngine>(SearchEngine::Mode::shadowing,
                                                 EngineConfig{fallback_weight});
    engine->swap_generation(engine->build_generation(std::move(docs)));
    return engine;
}

bool same_bits(double a, double b) {
    return std::memcmp(&a, &b, sizeof a) == 0;
}

} // namespace

TEST_CASE("embedding scoring is the plain inner product at the query version") {
    auto engine = shadow_engine_with({
        doc("i1", "p1", {}, {}, {{kV1, {3.0, 4.0}}}),
        doc("i2", "p1", {}, {}, {{kV1, {1.0, 1.0}}}),
    });
    QueryResult result = engine->execute_query(embedding_query({1.0, 2.0}));
    REQUIRE(result.results.size() == 2);
    CHECK(result.results[0].item_id == "i1");
    CHECK(result.results[0].score == 11.0); // 1*3 + 2*4
    CHECK(result.results[0].mode == ScoreMode::embedding);
    CHECK(result.results[0].version_used == kV1);
    CHECK(result.results[1].score == 3.0);
    CHECK(engine->cross_version_products() == 0);
}

TEST_CASE("fallback scoring sums the min weight over shared attributes") {
    WeightedAttributes item_attrs{{attribute_entity("a"), 0.5},
                                  {attribute_entity("b"), 1.0},
                                  {attribute_entity("d"), 2.0}};
    auto engine = shadow_engine_with({doc("i1", "p1", {}, item_attrs, {})}, 0.5);

    RecommendationQuery query;
    query.type_id = kType;
    query.user_attributes = {{attribute_entity("a"), 1.0},
                             {attribute_entity("b"), 0.25},
                             {attribute_entity("c"), 9.0}};
    query.k = 1;
    QueryResult result = engine->execute_query(query);
    REQUIRE(result.results.size() == 1);
    // Shared attrs a and b: min(0.5,1.0) + min(1.0,0.25) = 0.75, weighted 0.5.
    CHECK(result.results[0].score == 0.375);
    CHECK(result.results[0].mode == ScoreMode::fallback);
    CHECK_FALSE(result.results[0].version_used.has_value());
}

TEST_CASE("documents without the query version fall back instead of cross-matching") {
    auto engine = shadow_engine_with({
        doc("old", "p1", {}, {{attribute_entity("a"), 1.0}}, {{kV2, {100.0, 100.0}}}),
        doc("new", "p1", {}, {}, {{kV1, {1.0, 1.0}}}),
    });
    QueryResult result = engine->execute_query(embedding_query({1.0, 1.0}));
    REQUIRE(result.results.size() == 2);
    CHECK(result.results[0].item_id == "new"); // 2.0 embedding beats 0.0 fallback
    CHECK(result.results[0].mode == ScoreMode::embedding);
    CHECK(result.results[1].item_id == "old");
    CHECK(result.results[1].mode == ScoreMode::fallback);
    CHECK(engine->cross_version_products() == 0); // the tf-2 vector was never multiplied
}

TEST_CASE("ranking is one pool ordered by score then item id, truncated to k") {
    auto engine = shadow_engine_with({
        doc("b", "p1", {}, {}, {{kV1, {2.0, 0.0}}}),
        doc("a", "p1", {}, {}, {{kV1, {2.0, 0.0}}}),
        doc("c", "p1", {}, {}, {{kV1, {5.0, 0.0}}}),
        doc("d", "p1", {}, {{attribute_entity("x"), 4.0}}, {}),
    });
    RecommendationQuery query = embedding_query({1.0, 0.0}, 3);
    query.user_attributes = {{attribute_entity("x"), 9.0}};
    QueryResult result = engine->execute_query(query);
    REQUIRE(result.results.size() == 3);
    CHECK(result.results[0].item_id == "c"); // 5.0 embedding
    CHECK(result.results[1].item_id == "d"); // 4.0 fallback outranks the 2.0 embeddings
    CHECK(result.results[2].item_id == "a"); // 2.0 tie broken by id: a before b
    CHECK(result.results[1].mode == ScoreMode::fallback);
    CHECK(result.results[2].mode == ScoreMode::embedding);
}

TEST_CASE("geo targeting admits untargeted documents and exact matches only") {
    auto engine = shadow_engine_with({
        doc("everywhere", "p1", {}, {}, {{kV1, {1.0, 0.0}}}),
        doc("us-only", "p1", {"US"}, {}, {{kV1, {1.0, 0.0}}}),
        doc("de-only", "p1", {"DE"}, {}, {{kV1, {1.0, 0.0}}}),
        doc("us-de", "p1", {"US", "DE"}, {}, {{kV1, {1.0, 0.0}}}),
    });
    RecommendationQuery query = embedding_query({1.0, 0.0});
    query.user_geo = "US";
    QueryResult result = engine->execute_query(query);
    std::set<std::string> ids;
    for (const auto& r : result.results) ids.insert(r.item_id);
    CHECK(ids == std::set<std::string>{"everywhere", "us-only", "us-de"});

    query.user_geo = "FR";
    result = engine->execute_query(query);
    REQUIRE(result.results.size() == 1);
    CHECK(result.results[0].item_id == "everywhere");
}

TEST_CASE("blocked providers are filtered before scoring") {
    auto engine = shadow_engine_with({
        doc("keep", "p1", {}, {}, {{kV1, {1.0, 0.0}}}),
        doc("drop", "p2", {}, {}, {{kV1, {100.0, 0.0}}}),
    });
    RecommendationQuery query = embedding_query({1.0, 0.0});
    query.publisher_blocked_providers = {"p2"};
    QueryResult result = engine->execute_query(query);
    REQUIRE(result.results.size() == 1);
    CHECK(result.results[0].item_id == "keep");
}

TEST_CASE("query validation rejects inconsistent requests") {
    auto engine = shadow_engine_with({doc("i1", "p1", {}, {}, {{kV1, {1.0, 0.0}}})});

    RecommendationQuery bad_k = embedding_query({1.0, 0.0}, 0);
    CHECK_THROWS_AS(engine->execute_query(bad_k), std::invalid_argument);

    RecommendationQuery orphan_vector;
    orphan_vector.type_id = kType;
    orphan_vector.user_vector = Vector{1.0, 0.0};
    orphan_vector.k = 1;
    CHECK_THROWS_AS(engine->execute_query(orphan_vector), std::invalid_argument);

    RecommendationQuery orphan_version;
    orphan_version.type_id = kType;
    orphan_version.user_version = kV1;
    orphan_version.k = 1;
    CHECK_THROWS_AS(engine->execute_query(orphan_version), std::invalid_argument);

    RecommendationQuery alien_version = embedding_query({1.0, 0.0});
    alien_version.user_version = EmbeddingVersion{{"other", "cfg", 2}, 1};
    CHECK_THROWS_AS(engine->execute_query(alien_version), std::invalid_argument);

    RecommendationQuery wrong_dim = embedding_query({1.0, 0.0, 3.0});
    try {
        engine->execute_query(wrong_dim);
        FAIL("expected DimensionMismatch");
    } catch (const RecError& e) {
        CHECK(e.code() == Errc::DimensionMismatch);
    }

    // A non-positive declared dimension means "undeclared": the per-document
    // length check still protects every inner product.
    RecommendationQuery undeclared = embedding_query({1.0, 0.0});
    undeclared.type_id.dimension = 0;
    undeclared.user_version->type_id.dimension = 0;
    CHECK_NOTHROW(engine->execute_query(undeclared));

    RecommendationQuery bad_weight;
    bad_weight.type_id = kType;
    bad_weight.user_attributes = {{attribute_entity("a"),
                                   std::numeric_limits<double>::infinity()}};
    bad_weight.k = 1;
    CHECK_THROWS_AS(engine->execute_query(bad_weight), std::invalid_argument);
}

TEST_CASE("build_generation rejects duplicate item ids") {
    SearchEngine engine(SearchEngine::Mode::shadowing, EngineConfig{});
    std::vector<IndexedDocument> docs{doc("i1", "p1", {}, {}, {}),
                                      doc("i1", "p2", {}, {}, {})};
    try {
        engine.build_generation(std::move(docs));
        FAIL("expected DuplicateItemId");
    } catch (const RecError& e) {
        CHECK(e.code() == Errc::DuplicateItemId);
    }
}

TEST_CASE("mode misuse is a logic error") {
    SearchEngine shadow(SearchEngine::Mode::shadowing, EngineConfig{});
    CHECK_THROWS_AS(shadow.upsert_document(doc("i1", "p1", {}, {}, {})), std::logic_error);
    CHECK_THROWS_AS(shadow.delete_document("i1"), std::logic_error);

    SearchEngine incremental(SearchEngine::Mode::incremental, EngineConfig{});
    CHECK_THROWS_AS(incremental.build_generation({}), std::logic_error);
    CHECK_THROWS_AS(incremental.swap_generation(nullptr), std::logic_error);
}

TEST_CASE("swap_generation returns the previous generation and bumps the ordinal") {
    SearchEngine engine(SearchEngine::Mode::shadowing, EngineConfig{});
    CHECK(engine.generation_ordinal() == 0); // the empty initial generation
    CHECK(engine.execute_query(embedding_query({1.0, 0.0})).results.empty());

    GenerationPtr first = engine.build_generation({doc("i1", "p1", {}, {}, {})});
    GenerationPtr second = engine.build_generation({doc("i2", "p1", {}, {}, {})});
    CHECK(first->ordinal() == 1);
    CHECK(second->ordinal() == 2);

    GenerationPtr previous = engine.swap_generation(first);
    CHECK(previous->ordinal() == 0);
    CHECK(engine.generation_ordinal() == 1);
    previous = engine.swap_generation(second);
    CHECK(previous == first);
    CHECK(engine.current_generation() == second);

    // The swapped-out generation is untouched and still queryable state.
    CHECK(first->size() == 1);
    CHECK(first->core().documents.count("i1") == 1);
}

TEST_CASE("queries see exactly one generation even while swaps race") {
    SearchEngine engine(SearchEngine::Mode::shadowing, EngineConfig{});
    // Generation n holds three documents whose shared marker weight is n; a
    // query observing two different markers would prove a torn snapshot.
    auto build = [&](double marker) {
        std::vector<IndexedDocument> docs;
        for (const char* id : {"x", "y", "z"})
            docs.push_back(doc(id, "p1", {}, {{attribute_entity("m"), marker}}, {}));
        return engine.build_generation(std::move(docs));
    };
    engine.swap_generation(build(1.0));

    std::atomic<bool> stop{false};
    std::atomic<int> torn{0};
    std::thread swapper([&] {
        for (int n = 2; n <= 200; ++n) engine.swap_generation(build(static_cast<double>(n)));
        stop.store(true);
    });

    RecommendationQuery query;
    query.type_id = kType;
    query.user_attributes = {{attribute_entity("m"), 1e9}};
    query.k = 3;
    std::vector<std::thread> readers;
    for (int r = 0; r < 3; ++r) {
        readers.emplace_back([&] {
            while (!stop.load()) {
                QueryResult result = engine.execute_query(query);
                if (result.results.size() != 3) {
                    torn.fetch_add(1);
                    continue;
                }
                double marker = result.results[0].score;
                for (const auto& scored : result.results)
                    if (scored.score != marker) torn.fetch_add(1);
            }
        });
    }
    swapper.join();
    for (auto& reader : readers) reader.join();
    CHECK(torn.load() == 0);
    CHECK(engine.generation_ordinal() == 200);
}

TEST_CASE("incremental upserts and deletes are atomic per document") {
    SearchEngine engine(SearchEngine::Mode::incremental, EngineConfig{});
    CHECK_FALSE(engine.delete_document("absent"));

    engine.upsert_document(doc("i1", "p1", {}, {}, {{kV1, {1.0, 1.0}}}));
    engine.upsert_document(doc("i1", "p2", {"US"}, {}, {{kV1, {2.0, 2.0}}}));
    auto docs = engine.dump_documents();
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].provider_id == "p2"); // replaced, not merged
    CHECK(docs[0].vectors.at(kV1) == Vector{2.0, 2.0});

    CHECK(engine.delete_document("i1"));
    CHECK(engine.dump_documents().empty());

    SUBCASE("readers never see a half-applied upsert") {
        // Upsert n writes vector {n, n} for document "hot"; the embedding
        // score against {1, 0} is then a whole number in range.
        std::atomic<bool> stop{false};
        std::atomic<int> torn{0};
        engine.upsert_document(
            doc("hot", "p1", {}, {{attribute_entity("m"), 1.0}}, {{kV1, {1.0, 1.0}}}));

        std::thread writer([&] {
            for (int n = 2; n <= 300; ++n) {
                double v = static_cast<double>(n);
                engine.upsert_document(
                    doc("hot", "p1", {}, {{attribute_entity("m"), v}}, {{kV1, {v, v}}}));
            }
            stop.store(true);
        });

        std::thread reader([&] {
            RecommendationQuery query = embedding_query({1.0, 0.0}, 1);
            while (!stop.load()) {
                QueryResult result = engine.execute_query(query);
                if (result.results.size() != 1) {
                    torn.fetch_add(1);
                    continue;
                }
                double score = result.results[0].score;
                if (result.results[0].mode != ScoreMode::embedding ||
                    score != std::floor(score) || score < 1.0 || score > 300.0)
                    torn.fetch_add(1);
            }
        });

        writer.join();
        reader.join();
        CHECK(torn.load() == 0);
    }
}

TEST_CASE("engine results are bit-identical to the brute-force oracle") {
    // Randomized instances; any mismatch would be a real ranking defect.
    for (std::uint64_t seed : {11ull, 22ull, 33ull, 44ull}) {
        SplitMix64 rng(seed);
        std::vector<IndexedDocument> docs;
        std::size_t count = 5 + rng.below(40);
        for (std::size_t n = 0; n < count; ++n) {
            IndexedDocument d;
            d.item_id = "i" + std::to_string(n);
            d.provider_id = "p" + std::to_string(rng.below(4));
            if (rng.below(3) == 0) d.geo_targets.insert(rng.below(2) ? "US" : "DE");
            for (int a = 0; a < 3; ++a) {
                if (rng.below(2))
                    d.attributes[attribute_entity("t" + std::to_string(a))] =
                        rng.unit() * 4.0 - 2.0;
            }
            if (rng.below(4) != 0)
                d.vectors[kV1] = {rng.unit() * 2.0 - 1.0, rng.unit() * 2.0 - 1.0};
            if (rng.below(3) == 0)
                d.vectors[kV2] = {rng.unit() * 2.0 - 1.0, rng.unit() * 2.0 - 1.0};
            docs.push_back(std::move(d));
        }

        RecommendationQuery query;
        query.type_id = kType;
        if (rng.below(5) != 0) {
            query.user_version = kV1;
            query.user_vector = Vector{rng.unit() * 2.0 - 1.0, rng.unit() * 2.0 - 1.0};
        }
        query.user_attributes = {{attribute_entity("t0"), 1.5}, {attribute_entity("t2"), 0.5}};
        query.user_geo = rng.below(2) ? "US" : "";
        if (rng.below(3) == 0) query.publisher_blocked_providers = {"p0"};
        query.k = 1 + static_cast<int>(rng.below(count + 3));

        double fallback_weight = rng.below(2) ? 1.0 : 0.001;
        auto engine = shadow_engine_with(docs, fallback_weight);
        QueryResult actual = engine->execute_query(query);
        std::vector<ScoredResult> expected = brute_force_oracle(query, docs, fallback_weight);

        REQUIRE(actual.results.size() == expected.size());
        for (std::size_t n = 0; n < expected.size(); ++n) {
            CHECK(actual.results[n].item_id == expected[n].item_id);
            CHECK(same_bits(actual.results[n].score, expected[n].score));
            CHECK(actual.results[n].mode == expected[n].mode);
            CHECK(actual.results[n].version_used == expected[n].version_used);
        }

        // Document insertion order must not matter: rebuild reversed.
        std::vector<IndexedDocument> reversed(docs.rbegin(), docs.rend());
        auto engine_reversed = shadow_engine_with(std::move(reversed), fallback_weight);
        QueryResult again = engine_reversed->execute_query(query);
        REQUIRE(again.results.size() == actual.results.size());
        for (std::size_t n = 0; n < again.results.size(); ++n) {
            CHECK(again.results[n].item_id == actual.results[n].item_id);
            CHECK(same_bits(again.results[n].score, actual.results[n].score));
        }
        CHECK(engine->cross_version_products() == 0);
    }
}

TEST_CASE("document dumps are sorted and deterministic") {
    auto engine = shadow_engine_with({
        doc("z", "p2", {"US"}, {{attribute_entity("a"), 1.0}}, {{kV1, {1.0, -0.0}}}),
        doc("a", "p1", {}, {}, {}),
    });
    auto docs = engine->dump_documents();
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].item_id == "a");
    CHECK(docs[1].item_id == "z");

    std::string ndjson = engine->dump_ndjson();
    CHECK(ndjson ==
          "{\"attrs\":{},\"geos\":[],\"item\":\"a\",\"provider\":\"p1\",\"vectors\":{}}\n"
          "{\"attrs\":{\"attribute|a\":1.0},\"geos\":[\"US\"],\"item\":\"z\","
          "\"provider\":\"p2\",\"vectors\":{\"mf|c1|1\":[1.0,-0.0]}}\n");
    CHECK(engine->dump_ndjson() == ndjson);
}

TEST_CASE("has_vector_of_type matches any time frame of the type") {
    IndexedDocument d = doc("i1", "p1", {}, {}, {{kV2, {1.0, 1.0}}});
    CHECK(d.has_vector_of_type(kType));
    CHECK_FALSE(d.has_vector_of_type({"other", "cfg", 2}));
    CHECK_FALSE(doc("i2", "p1", {}, {}, {}).has_vector_of_type(kType));
}
