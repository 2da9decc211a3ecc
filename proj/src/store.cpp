#include "recserve/store.hpp"

#include <mutex>

#include <cmath>
#include <fstream>

#include "recserve/errors.hpp"
#include "recserve/jsonio.hpp"

namespace recserve {

void EmbeddingStore::validate_and_register(const EmbeddingRecord& record,
                                           std::map<std::string, int>& dims) const {
    const auto& type = record.version.type_id;
    validate_identifier("algorithm_name", type.algorithm_name);
    validate_identifier("config_tag", type.config_tag);
    validate_identifier("entity id", record.entity.id);
    if (record.version.time_frame < 0)
        throw std::invalid_argument("time_frame must be non-negative");

    int declared = type.dimension;
    auto it = dims.find(type.key());
    if (it != dims.end()) {
        declared = it->second;
        if (type.dimension > 0 && type.dimension != declared)
            throw RecError(Errc::DimensionMismatch,
                           "type " + type.key() + " declared with dimension " +
                               std::to_string(type.dimension) + " but registered as " +
                               std::to_string(declared));
    } else {
        if (declared < 1)
            throw std::invalid_argument("type dimension must be >= 1");
        dims.emplace(type.key(), declared);
    }

    if (static_cast<int>(record.vector.size()) != declared)
        throw RecError(Errc::DimensionMismatch,
                       "record " + record.canonical_key() + " has vector length " +
                           std::to_string(record.vector.size()) + ", type dimension is " +
                           std::to_string(declared));
    for (double component : record.vector)
        if (!std::isfinite(component))
            throw RecError(Errc::NonFiniteComponent,
                           "record " + record.canonical_key() + " has a non-finite component");
}

std::size_t EmbeddingStore::put_batch(std::span<const EmbeddingRecord> records) {
    // Validate the whole batch against a scratch registry before taking the
    // write lock, so a failed batch leaves no trace.
    std::map<std::string, int> dims;
    {
        std::shared_lock read(mutex_);
        dims = dimensions_;
    }
    for (const auto& record : records)
        validate_and_register(record, dims);

    std::unique_lock write(mutex_);
    dimensions_ = std::move(dims);
    for (const auto& record : records) {
        std::string key = record.canonical_key();
        auto [it, inserted] = records_.insert_or_assign(
            key, StoredRecord{record.version, record.entity, record.vector});
        if (inserted)
            frames_[record.version.type_id.key()][record.version.time_frame] += 1;
    }
    return records.size();
}

std::optional<Vector> EmbeddingStore::get(const EmbeddingVersion& version,
                                          const EntityId& entity) const {
    std::shared_lock read(mutex_);
    auto it = records_.find(canonical_record_key(version, entity));
    if (it == records_.end()) return std::nullopt;
    return it->second.vector;
}

std::optional<std::int64_t> EmbeddingStore::max_time_frame(const EmbeddingTypeId& type_id) const {
    std::shared_lock read(mutex_);
    auto it = frames_.find(type_id.key());
    if (it == frames_.end() || it->second.empty()) return std::nullopt;
    return it->second.rbegin()->first;
}

bool EmbeddingStore::has_version(const EmbeddingVersion& version) const {
    std::shared_lock read(mutex_);
    auto it = frames_.find(version.type_id.key());
    if (it == frames_.end()) return false;
    return it->second.count(version.time_frame) > 0;
}

std::optional<int> EmbeddingStore::dimension_of(const EmbeddingTypeId& type_id) const {
    std::shared_lock read(mutex_);
    auto it = dimensions_.find(type_id.key());
    if (it == dimensions_.end()) return std::nullopt;
    return it->second;
}

std::size_t EmbeddingStore::record_count() const {
    std::shared_lock read(mutex_);
    return records_.size();
}

std::vector<EntityId> EmbeddingStore::entities_of_version(const EmbeddingVersion& version) const {
    std::shared_lock read(mutex_);
    std::vector<EntityId> out;
    // Canonical keys share the "algo|config|tf|" prefix for one version, and
    // map order within that prefix is canonical entity order.
    std::string prefix = version.key() + "|";
    for (auto it = records_.lower_bound(prefix); it != records_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.push_back(it->second.entity);
    }
    return out;
}

std::size_t EmbeddingStore::save_snapshot(const std::string& path) const {
    std::shared_lock read(mutex_);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open snapshot for writing: " + path);
    for (const auto& [key, record] : records_) {
        out << "{\"algo\":" << Json(record.version.type_id.algorithm_name).dump()
            << ",\"config\":" << Json(record.version.type_id.config_tag).dump()
            << ",\"tf\":" << record.version.time_frame
            << ",\"kind\":" << Json(std::string(to_string(record.entity.kind))).dump()
            << ",\"id\":" << Json(record.entity.id).dump() << ",\"vec\":[";
        for (std::size_t i = 0; i < record.vector.size(); ++i) {
            if (i) out << ',';
            out << format_double(record.vector[i]);
        }
        out << "]}\n";
    }
    if (!out) throw std::runtime_error("snapshot write failed: " + path);
    return records_.size();
}

std::size_t EmbeddingStore::load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open snapshot for reading: " + path);

    std::map<std::string, StoredRecord> records;
    std::map<std::string, std::map<std::int64_t, std::size_t>> frames;
    std::map<std::string, int> dims;

    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        Json parsed;
        try {
            parsed = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw RecError(Errc::MalformedLine,
                           "line " + std::to_string(line_number) + ": " + e.what());
        }
        if (!parsed.is_object() || !parsed.contains("algo") || !parsed.contains("config") ||
            !parsed.contains("tf") || !parsed.contains("kind") || !parsed.contains("id") ||
            !parsed.contains("vec") || !parsed["vec"].is_array())
            throw RecError(Errc::MalformedLine,
                           "line " + std::to_string(line_number) + ": missing snapshot fields");

        EmbeddingRecord record;
        try {
            record.version.type_id.algorithm_name = parsed["algo"].get<std::string>();
            record.version.type_id.config_tag = parsed["config"].get<std::string>();
            record.version.time_frame = parsed["tf"].get<std::int64_t>();
            record.entity.kind = entity_kind_from_string(parsed["kind"].get<std::string>());
            record.entity.id = parsed["id"].get<std::string>();
            for (const auto& component : parsed["vec"])
                record.vector.push_back(component.get<double>());
        } catch (const std::exception& e) {
            throw RecError(Errc::MalformedLine,
                           "line " + std::to_string(line_number) + ": " + e.what());
        }

        auto it = dims.find(record.version.type_id.key());
        if (it == dims.end()) {
            if (record.vector.empty())
                throw RecError(Errc::DimensionMismatch,
                               "line " + std::to_string(line_number) + ": empty vector");
            dims.emplace(record.version.type_id.key(), static_cast<int>(record.vector.size()));
        } else if (static_cast<int>(record.vector.size()) != it->second) {
            throw RecError(Errc::DimensionMismatch,
                           "line " + std::to_string(line_number) + ": vector length " +
                               std::to_string(record.vector.size()) + " != declared dimension " +
                               std::to_string(it->second));
        }
        record.version.type_id.dimension = dims[record.version.type_id.key()];
        for (double component : record.vector)
            if (!std::isfinite(component))
                throw RecError(Errc::NonFiniteComponent,
                               "line " + std::to_string(line_number) + ": non-finite component");

        std::string key = record.canonical_key();
        auto [pos, inserted] = records.insert_or_assign(
            key, StoredRecord{record.version, record.entity, record.vector});
        if (inserted)
            frames[record.version.type_id.key()][record.version.time_frame] += 1;
    }

    std::unique_lock write(mutex_);
    records_ = std::move(records);
    frames_ = std::move(frames);
    dimensions_ = std::move(dims);
    return records_.size();
}

} // namespace recserve
