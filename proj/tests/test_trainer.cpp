#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "recserve/errors.hpp"
#include "recserve/store.hpp"
#include "recserve/trainer.hpp"

using namespace recserve;

namespace {

const EmbeddingTypeId kMf{"mf", "c1", 4};

TrainingCatalog small_catalog() {
    TrainingCatalog catalog;
    catalog.user_ids = {"u1", "u2"};
    catalog.item_ids = {"i1", "i2", "i3"};
    catalog.attribute_ids = {"sports", "news"};
    return catalog;
}

std::string snapshot_bytes(const EmbeddingStore& store, const std::string& name) {
    std::string path = "/tmp/recserve_trainer_" + name;
    store.save_snapshot(path);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::remove(path.c_str());
    return buffer.str();
}

} // namespace

TEST_CASE("hashed components match frozen reference values") {
    // Computed independently from the generator definition and frozen.
    EmbeddingVersion version{kMf, 1};
    Vector vec = hashed_vector(7, version, item_entity("i1"));
    REQUIRE(vec.size() == 4);
    CHECK(vec[0] == 0.30189280710508304);
    CHECK(vec[1] == 0.22046895647031128);
    CHECK(vec[2] == 0.061986246552517166);
    CHECK(vec[3] == 0.9230466644888087);

    EmbeddingVersion fm{{"fm", "base", 3}, 2};
    Vector attr = hashed_vector(11, fm, attribute_entity("sports"));
    REQUIRE(attr.size() == 3);
    CHECK(attr[0] == -0.9655339454298024);
    CHECK(attr[1] == 0.4144277114505779);
    CHECK(attr[2] == -0.4728211074755869);
}

TEST_CASE("hashed components are pure in every input and bounded") {
    EmbeddingVersion version{kMf, 1};
    EntityId entity = item_entity("i1");
    CHECK(hashed_component(7, version, entity, 0) == hashed_component(7, version, entity, 0));
    CHECK(hashed_component(7, version, entity, 0) != hashed_component(8, version, entity, 0));
    CHECK(hashed_component(7, version, entity, 0) !=
          hashed_component(7, EmbeddingVersion{kMf, 2}, entity, 0));
    CHECK(hashed_component(7, version, entity, 0) !=
          hashed_component(7, version, item_entity("i2"), 0));
    for (int j = 0; j < 64; ++j) {
        double c = hashed_component(7, version, entity, j);
        CHECK(c >= -1.0);
        CHECK(c < 1.0);
    }
}

TEST_CASE("coverage selection matches the frozen subset and honors the endpoints") {
    EmbeddingVersion version{kMf, 1};
    // Frozen from an independent evaluation of the coverage rule at seed 7,
    // fraction 0.5, over items i1..i10.
    std::set<std::string> expected{"i1", "i2", "i5", "i6", "i8", "i10"};
    for (int n = 1; n <= 10; ++n) {
        std::string id = "i" + std::to_string(n);
        CHECK(coverage_selects(7, version, item_entity(id), 0.5) == (expected.count(id) > 0));
    }
    for (int n = 1; n <= 10; ++n) {
        CHECK(coverage_selects(7, version, item_entity("i" + std::to_string(n)), 1.0));
        CHECK_FALSE(coverage_selects(7, version, item_entity("i" + std::to_string(n)), 0.0));
    }
}

TEST_CASE("a training cycle writes every covered eligible entity at the new version") {
    EmbeddingStore store;
    Trainer trainer(store, {ModelKind::direct_direct, kMf, EmbeddingSource::hashed, 1.0, 7});
    CHECK(trainer.run_cycle(small_catalog(), 1) == 5); // 2 users + 3 items

    auto entities = store.entities_of_version({kMf, 1});
    CHECK(entities.size() == 5);
    auto vec = store.get({kMf, 1}, item_entity("i1"));
    REQUIRE(vec.has_value());
    CHECK(*vec == hashed_vector(7, {kMf, 1}, item_entity("i1")));
    CHECK(trainer.last_time_frame() == 1);
}

TEST_CASE("two trainers with identical configuration produce byte-identical stores") {
    EmbeddingStore a, b;
    TrainerConfig config{ModelKind::direct_direct, kMf, EmbeddingSource::hashed, 0.7, 99};
    Trainer ta(a, config), tb(b, config);
    ta.run_cycle(small_catalog(), 1);
    ta.run_cycle(small_catalog(), 2);
    tb.run_cycle(small_catalog(), 1);
    tb.run_cycle(small_catalog(), 2);
    CHECK(snapshot_bytes(a, "a.ndjson") == snapshot_bytes(b, "b.ndjson"));
}

TEST_CASE("model kind controls which entity kinds are embedded") {
    auto kinds_written = [&](ModelKind kind) {
        EmbeddingStore store;
        Trainer trainer(store, {kind, kMf, EmbeddingSource::hashed, 1.0, 7});
        trainer.run_cycle(small_catalog(), 1);
        std::set<EntityKind> kinds;
        for (const auto& entity : store.entities_of_version({kMf, 1})) kinds.insert(entity.kind);
        return kinds;
    };
    CHECK(kinds_written(ModelKind::direct_direct) ==
          std::set<EntityKind>{EntityKind::user, EntityKind::item});
    CHECK(kinds_written(ModelKind::indirect_direct) == std::set<EntityKind>{EntityKind::item});
    CHECK(kinds_written(ModelKind::indirect_indirect) ==
          std::set<EntityKind>{EntityKind::attribute});
}

TEST_CASE("fixture source embeds fixture-bearing entities verbatim") {
    EmbeddingStore store;
    TrainingCatalog catalog = small_catalog();
    catalog.fixtures[item_entity("i1")] = {1.0, 2.0, 3.0, 4.0};
    catalog.fixtures[user_entity("u2")] = {0.0, 0.0, -1.0, 5.5};

    Trainer trainer(store, {ModelKind::direct_direct, kMf, EmbeddingSource::fixture, 1.0, 7});
    CHECK(trainer.run_cycle(catalog, 1) == 2); // only fixture-bearing entities are eligible

    CHECK(*store.get({kMf, 1}, item_entity("i1")) == Vector{1.0, 2.0, 3.0, 4.0});
    CHECK(*store.get({kMf, 1}, user_entity("u2")) == Vector{0.0, 0.0, -1.0, 5.5});
    CHECK_FALSE(store.get({kMf, 1}, item_entity("i2")).has_value());
}

TEST_CASE("cycle time frames must strictly increase") {
    EmbeddingStore store;
    Trainer trainer(store, {ModelKind::direct_direct, kMf, EmbeddingSource::hashed, 1.0, 7});
    trainer.run_cycle(small_catalog(), 2);

    auto expect_non_monotone = [&](std::int64_t tf) {
        try {
            trainer.run_cycle(small_catalog(), tf);
            FAIL("expected NonMonotoneTimeFrame");
        } catch (const RecError& e) {
            CHECK(e.code() == Errc::NonMonotoneTimeFrame);
        }
    };
    expect_non_monotone(2); // equal
    expect_non_monotone(1); // lower
    CHECK(trainer.run_cycle(small_catalog(), 3) == 5);

    Trainer fresh(store, {ModelKind::direct_direct, kMf, EmbeddingSource::hashed, 1.0, 7});
    CHECK_THROWS_AS(fresh.run_cycle(small_catalog(), -1), RecError);
}

TEST_CASE("changed_entities reports exactly the half-open window of cycles") {
    EmbeddingStore store;
    Trainer trainer(store, {ModelKind::indirect_direct, kMf, EmbeddingSource::hashed, 1.0, 7});

    TrainingCatalog first;
    first.item_ids = {"i1", "i2"};
    trainer.run_cycle(first, 1);

    TrainingCatalog second;
    second.item_ids = {"i2", "i3"};
    trainer.run_cycle(second, 3);

    CHECK(trainer.changed_entities(0, 1) ==
          std::set<EntityId>{item_entity("i1"), item_entity("i2")});
    CHECK(trainer.changed_entities(1, 3) ==
          std::set<EntityId>{item_entity("i2"), item_entity("i3")});
    CHECK(trainer.changed_entities(0, 3) ==
          std::set<EntityId>{item_entity("i1"), item_entity("i2"), item_entity("i3")});
    CHECK(trainer.changed_entities(3, 3).empty());
    CHECK(trainer.changed_entities(1, 2).empty()); // no cycle landed in (1,2]
    CHECK_THROWS_AS(trainer.changed_entities(3, 1), std::invalid_argument);
}

TEST_CASE("partial coverage writes exactly the selected subset") {
    EmbeddingStore store;
    TrainingCatalog catalog;
    for (int n = 1; n <= 10; ++n) catalog.item_ids.push_back("i" + std::to_string(n));
    Trainer trainer(store, {ModelKind::indirect_direct, kMf, EmbeddingSource::hashed, 0.5, 7});
    CHECK(trainer.run_cycle(catalog, 1) == 6); // the frozen subset below

    std::set<std::string> expected{"i1", "i2", "i5", "i6", "i8", "i10"};
    for (int n = 1; n <= 10; ++n) {
        std::string id = "i" + std::to_string(n);
        CHECK(store.get({kMf, 1}, item_entity(id)).has_value() == (expected.count(id) > 0));
    }
}

TEST_CASE("trainer configuration bounds are enforced at construction") {
    EmbeddingStore store;
    CHECK_THROWS_AS(
        Trainer(store, {ModelKind::direct_direct, kMf, EmbeddingSource::hashed, 1.5, 7}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        Trainer(store, {ModelKind::direct_direct, kMf, EmbeddingSource::hashed, -0.1, 7}),
        std::invalid_argument);
    EmbeddingTypeId flat{"mf", "c1", 0};
    CHECK_THROWS_AS(
        Trainer(store, {ModelKind::direct_direct, flat, EmbeddingSource::hashed, 1.0, 7}),
        std::invalid_argument);
}

TEST_CASE("model kind names round-trip") {
    CHECK(model_kind_from_string("direct_direct") == ModelKind::direct_direct);
    CHECK(model_kind_from_string("indirect_direct") == ModelKind::indirect_direct);
    CHECK(model_kind_from_string("indirect_indirect") == ModelKind::indirect_indirect);
    CHECK(to_string(ModelKind::indirect_direct) == "indirect_direct");
    CHECK_THROWS_AS(model_kind_from_string("hybrid"), std::invalid_argument);
}
