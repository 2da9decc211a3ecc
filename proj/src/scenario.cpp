#include "recserve/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace recserve {

namespace {

[[noreturn]] void bad(const std::string& what) {
    throw std::invalid_argument("scenario: " + what);
}

EntityId parse_entity_key(const std::string& key) {
    auto bar = key.find('|');
    if (bar == std::string::npos) return attribute_entity(key);
    EntityKind kind = entity_kind_from_string(key.substr(0, bar));
    std::string id = key.substr(bar + 1);
    if (id.empty() || id.find('|') != std::string::npos) bad("bad entity key '" + key + "'");
    return EntityId{kind, id};
}

double require_finite(const Json& v, const std::string& where) {
    if (!v.is_number()) bad(where + " must be a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) bad(where + " must be finite");
    return d;
}

Vector parse_vector(const Json& arr, const std::string& where) {
    if (!arr.is_array()) bad(where + " must be an array");
    Vector out;
    out.reserve(arr.size());
    for (const auto& v : arr) out.push_back(require_finite(v, where + " component"));
    return out;
}

} // namespace

WeightedAttributes parse_weighted_attributes(const Json& object) {
    if (!object.is_object()) bad("weighted attributes must be an object");
    WeightedAttributes out;
    for (const auto& [key, value] : object.items()) {
        out[parse_entity_key(key)] = require_finite(value, "weight of '" + key + "'");
    }
    return out;
}

Json weighted_attributes_to_json(const WeightedAttributes& attrs) {
    std::map<std::string, Json> object;
    for (const auto& [entity, weight] : attrs) {
        std::string key =
            entity.kind == EntityKind::attribute ? entity.id : entity.key();
        object.emplace(key, weight);
    }
    return Json(object);
}

Scenario Scenario::from_json(const Json& config) {
    if (!config.is_object()) bad("top level must be an object");
    Scenario s;

    s.model_kind = model_kind_from_string(config.at("model_kind").get<std::string>());

    for (const auto& t : config.at("embedding_types")) {
        EmbeddingTypeId type;
        type.algorithm_name = t.at("algo").get<std::string>();
        type.config_tag = t.at("config").get<std::string>();
        type.dimension = t.at("dimension").get<std::size_t>();
        s.types.push_back(std::move(type));
    }

    const Json& universe = config.at("universe");
    for (const auto& u : universe.at("users")) {
        ScenarioUser user;
        user.id = u.at("id").get<std::string>();
        user.geo = u.value("geo", std::string{});
        if (u.contains("attributes")) user.attributes = parse_weighted_attributes(u.at("attributes"));
        s.users.push_back(std::move(user));
    }
    for (const auto& i : universe.at("items")) {
        CatalogItem item;
        item.item_id = i.at("id").get<std::string>();
        item.provider_id = i.at("provider").get<std::string>();
        if (i.contains("geos")) {
            for (const auto& g : i.at("geos")) item.geo_targets.insert(g.get<std::string>());
        }
        if (i.contains("attributes")) item.attributes = parse_weighted_attributes(i.at("attributes"));
        s.items.push_back(std::move(item));
    }
    if (universe.contains("attributes")) {
        for (const auto& a : universe.at("attributes")) s.attribute_vocabulary.push_back(a.get<std::string>());
    }

    if (config.contains("fixtures")) {
        for (const auto& [key, vec] : config.at("fixtures").items()) {
            s.fixtures[parse_entity_key(key)] = parse_vector(vec, "fixture '" + key + "'");
        }
    }

    if (config.contains("trainer")) {
        const Json& t = config.at("trainer");
        if (t.contains("source")) {
            std::string src = t.at("source").get<std::string>();
            if (src == "hashed") s.trainer_source = EmbeddingSource::hashed;
            else if (src == "fixture") s.trainer_source = EmbeddingSource::fixture;
            else bad("trainer.source must be 'hashed' or 'fixture'");
        }
        s.coverage_fraction = t.value("coverage", 1.0);
        s.trainer_seed = t.value("seed", std::uint64_t{1});
        s.trainer_cadence = t.value("cadence", std::size_t{1});
        s.trainer_cycles = t.value("cycles", std::size_t{3});
    }

    if (config.contains("indexer")) {
        const Json& ix = config.at("indexer");
        if (ix.contains("mode")) {
            std::string mode = ix.at("mode").get<std::string>();
            if (mode == "shadow") s.index_mode = SearchEngine::Mode::shadowing;
            else if (mode == "incremental") s.index_mode = SearchEngine::Mode::incremental;
            else bad("indexer.mode must be 'shadow' or 'incremental'");
        }
        s.indexer_cadence = ix.value("cadence", std::size_t{1});
        s.indexer_cycles = ix.value("cycles", std::size_t{3});
        s.shadow_index_both_versions = ix.value("shadow_index_both_versions", false);
    }

    if (config.contains("eo")) {
        const Json& eo = config.at("eo");
        s.eo_cache_capacity = eo.value("cache_capacity", std::size_t{1024});
        s.eo_poll_cadence = eo.value("poll_cadence", std::size_t{1});
    }

    if (config.contains("requests")) {
        const Json& r = config.at("requests");
        s.requests.count = r.value("count", std::size_t{100});
        s.requests.k = r.value("k", 3);
        s.requests.cadence = r.value("cadence", std::size_t{1});
        if (r.contains("users")) {
            for (const auto& u : r.at("users")) s.requests.user_ids.push_back(u.get<std::string>());
        }
        if (r.contains("publishers")) {
            for (const auto& p : r.at("publishers")) s.requests.publishers.push_back(p.get<std::string>());
        }
    }

    if (config.contains("publisher_rules")) {
        for (const auto& rule : config.at("publisher_rules")) {
            PublisherRules parsed;
            parsed.publisher_id = rule.at("publisher").get<std::string>();
            if (rule.contains("blocked_providers")) {
                for (const auto& p : rule.at("blocked_providers")) parsed.blocked_providers.insert(p.get<std::string>());
            }
            s.publisher_rules[parsed.publisher_id] = std::move(parsed);
        }
    }

    if (config.contains("tombstones")) {
        for (const auto& t : config.at("tombstones")) {
            s.tombstones.push_back(Tombstone{t.at("item").get<std::string>(), t.at("cycle").get<std::size_t>()});
        }
    }

    s.fallback_weight = config.value("fallback_weight", 1.0);
    s.interleaving_seed = config.value("interleaving_seed", std::uint64_t{0});

    // Fill request defaults from the universe.
    if (s.requests.user_ids.empty()) {
        for (const auto& u : s.users) s.requests.user_ids.push_back(u.id);
    }
    if (s.requests.publishers.empty()) {
        for (const auto& [id, rule] : s.publisher_rules) s.requests.publishers.push_back(id);
        if (s.requests.publishers.empty()) s.requests.publishers.push_back("default");
    }

    s.validate();
    return s;
}

Scenario Scenario::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) bad("cannot open '" + path + "'");
    Json config = Json::parse(in, nullptr, true, true); // allow // comments in files
    return from_json(config);
}

Json Scenario::to_json() const {
    std::map<std::string, Json> root;

    root.emplace("model_kind", to_string(model_kind));

    std::vector<Json> types_json;
    for (const auto& t : types) {
        std::map<std::string, Json> entry;
        entry.emplace("algo", t.algorithm_name);
        entry.emplace("config", t.config_tag);
        entry.emplace("dimension", t.dimension);
        types_json.push_back(Json(entry));
    }
    root.emplace("embedding_types", Json(types_json));

    std::map<std::string, Json> universe;
    std::vector<Json> users_json;
    for (const auto& u : users) {
        std::map<std::string, Json> entry;
        entry.emplace("id", u.id);
        entry.emplace("geo", u.geo);
        entry.emplace("attributes", weighted_attributes_to_json(u.attributes));
        users_json.push_back(Json(entry));
    }
    universe.emplace("users", Json(users_json));
    std::vector<Json> items_json;
    for (const auto& i : items) {
        std::map<std::string, Json> entry;
        entry.emplace("id", i.item_id);
        entry.emplace("provider", i.provider_id);
        entry.emplace("geos", Json(std::vector<std::string>(i.geo_targets.begin(), i.geo_targets.end())));
        entry.emplace("attributes", weighted_attributes_to_json(i.attributes));
        items_json.push_back(Json(entry));
    }
    universe.emplace("items", Json(items_json));
    universe.emplace("attributes", Json(attribute_vocabulary));
    root.emplace("universe", Json(universe));

    if (!fixtures.empty()) {
        std::map<std::string, Json> fx;
        for (const auto& [entity, vec] : fixtures) {
            std::string key =
                entity.kind == EntityKind::attribute ? entity.id : entity.key();
            fx.emplace(key, Json(vec));
        }
        root.emplace("fixtures", Json(fx));
    }

    std::map<std::string, Json> trainer;
    trainer.emplace("source", trainer_source == EmbeddingSource::hashed ? "hashed" : "fixture");
    trainer.emplace("coverage", coverage_fraction);
    trainer.emplace("seed", trainer_seed);
    trainer.emplace("cadence", trainer_cadence);
    trainer.emplace("cycles", trainer_cycles);
    root.emplace("trainer", Json(trainer));

    std::map<std::string, Json> indexer;
    indexer.emplace("mode", index_mode == SearchEngine::Mode::shadowing ? "shadow" : "incremental");
    indexer.emplace("cadence", indexer_cadence);
    indexer.emplace("cycles", indexer_cycles);
    indexer.emplace("shadow_index_both_versions", shadow_index_both_versions);
    root.emplace("indexer", Json(indexer));

    std::map<std::string, Json> eo;
    eo.emplace("cache_capacity", eo_cache_capacity);
    eo.emplace("poll_cadence", eo_poll_cadence);
    root.emplace("eo", Json(eo));

    std::map<std::string, Json> req;
    req.emplace("count", requests.count);
    req.emplace("k", requests.k);
    req.emplace("cadence", requests.cadence);
    req.emplace("users", Json(requests.user_ids));
    req.emplace("publishers", Json(requests.publishers));
    root.emplace("requests", Json(req));

    std::vector<Json> rules_json;
    for (const auto& [id, rule] : publisher_rules) {
        std::map<std::string, Json> entry;
        entry.emplace("publisher", id);
        entry.emplace("blocked_providers",
                      Json(std::vector<std::string>(rule.blocked_providers.begin(), rule.blocked_providers.end())));
        rules_json.push_back(Json(entry));
    }
    root.emplace("publisher_rules", Json(rules_json));

    std::vector<Json> tombs_json;
    for (const auto& t : tombstones) {
        std::map<std::string, Json> entry;
        entry.emplace("item", t.item_id);
        entry.emplace("cycle", t.cycle);
        tombs_json.push_back(Json(entry));
    }
    root.emplace("tombstones", Json(tombs_json));

    root.emplace("fallback_weight", fallback_weight);
    root.emplace("interleaving_seed", interleaving_seed);
    return Json(root);
}

void Scenario::validate() const {
    if (types.empty()) bad("at least one embedding type is required");
    std::set<std::string> type_keys;
    for (const auto& t : types) {
        validate_identifier("algorithm name", t.algorithm_name);
        validate_identifier("config tag", t.config_tag);
        if (t.dimension == 0) bad("embedding dimension must be positive");
        if (!type_keys.insert(t.key()).second) bad("duplicate embedding type " + t.key());
    }

    if (items.empty()) bad("universe.items must not be empty");
    std::set<std::string> item_ids;
    for (const auto& i : items) {
        validate_identifier("item id", i.item_id);
        validate_identifier("provider id", i.provider_id);
        if (!item_ids.insert(i.item_id).second) bad("duplicate item " + i.item_id);
        for (const auto& [entity, weight] : i.attributes) {
            if (entity.kind != EntityKind::attribute) bad("item " + i.item_id + " attribute keys must be attribute entities");
            (void)weight;
        }
    }

    std::set<std::string> user_ids;
    for (const auto& u : users) {
        validate_identifier("user id", u.id);
        if (!user_ids.insert(u.id).second) bad("duplicate user " + u.id);
        for (const auto& [entity, weight] : u.attributes) {
            (void)weight;
            if (entity.kind == EntityKind::item && !item_ids.count(entity.id)) {
                bad("user " + u.id + " references unknown item " + entity.id);
            }
        }
    }

    for (const auto& [entity, vec] : fixtures) {
        validate_identifier("fixture entity id", entity.id);
        if (vec.empty()) bad("fixture for " + entity.key() + " is empty");
    }
    if (trainer_source == EmbeddingSource::fixture) {
        for (const auto& [entity, vec] : fixtures) {
            if (vec.size() != static_cast<std::size_t>(types.front().dimension)) {
                bad("fixture for " + entity.key() + " has dimension " + std::to_string(vec.size()) +
                    ", expected " + std::to_string(types.front().dimension));
            }
        }
    }

    if (coverage_fraction < 0.0 || !std::isfinite(coverage_fraction)) bad("trainer.coverage must be finite and >= 0");
    if (trainer_cadence == 0 || indexer_cadence == 0 || eo_poll_cadence == 0 || requests.cadence == 0) {
        bad("all cadences must be >= 1");
    }
    if (requests.k < 1) bad("requests.k must be >= 1");
    if (requests.count > 0 && users.empty()) bad("requests need at least one universe user");

    for (const auto& id : requests.user_ids) {
        if (!user_ids.count(id)) bad("requests reference unknown user " + id);
    }
    for (const auto& t : tombstones) {
        if (!item_ids.count(t.item_id)) bad("tombstone references unknown item " + t.item_id);
    }
    if (!std::isfinite(fallback_weight)) bad("fallback_weight must be finite");
}

TrainingCatalog Scenario::training_catalog() const {
    TrainingCatalog catalog;
    for (const auto& u : users) catalog.user_ids.push_back(u.id);
    for (const auto& i : items) catalog.item_ids.push_back(i.item_id);
    catalog.attribute_ids = attribute_vocabulary;
    if (catalog.attribute_ids.empty()) {
        // Derive the vocabulary from item attributes so attribute-sided
        // models work without an explicit list.
        std::set<std::string> seen;
        for (const auto& i : items) {
            for (const auto& [entity, weight] : i.attributes) {
                (void)weight;
                seen.insert(entity.id);
            }
        }
        catalog.attribute_ids.assign(seen.begin(), seen.end());
    }
    catalog.fixtures = fixtures;
    return catalog;
}

const ScenarioUser& Scenario::user_by_id(const std::string& id) const {
    for (const auto& u : users) {
        if (u.id == id) return u;
    }
    bad("unknown user " + id);
}

} // namespace recserve
