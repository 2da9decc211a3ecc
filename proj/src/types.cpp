#include "recserve/types.hpp"

#include <stdexcept>

namespace recserve {

std::string_view to_string(EntityKind kind) {
    switch (kind) {
    case EntityKind::attribute: return "attribute";
    case EntityKind::item: return "item";
    case EntityKind::user: return "user";
    }
    throw std::logic_error("unreachable entity kind");
}

EntityKind entity_kind_from_string(std::string_view s) {
    if (s == "attribute") return EntityKind::attribute;
    if (s == "item") return EntityKind::item;
    if (s == "user") return EntityKind::user;
    throw std::invalid_argument("unknown entity kind: " + std::string(s));
}

std::string EntityId::key() const {
    return std::string(to_string(kind)) + "|" + id;
}

EntityId attribute_entity(std::string id) { return {EntityKind::attribute, std::move(id)}; }
EntityId item_entity(std::string id) { return {EntityKind::item, std::move(id)}; }
EntityId user_entity(std::string id) { return {EntityKind::user, std::move(id)}; }

std::string EmbeddingTypeId::key() const {
    return algorithm_name + "|" + config_tag;
}

std::string EmbeddingVersion::key() const {
    return type_id.key() + "|" + std::to_string(time_frame);
}

std::string canonical_record_key(const EmbeddingVersion& version, const EntityId& entity) {
    return version.key() + "|" + entity.key();
}

std::string EmbeddingRecord::canonical_key() const {
    return canonical_record_key(version, entity);
}

void validate_identifier(std::string_view field_name, std::string_view value) {
    if (value.empty())
        throw std::invalid_argument(std::string(field_name) + " must be non-empty");
    if (value.find('|') != std::string_view::npos)
        throw std::invalid_argument(std::string(field_name) + " must not contain '|': " +
                                    std::string(value));
}

} // namespace recserve
