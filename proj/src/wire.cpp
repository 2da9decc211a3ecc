#include "recserve/wire.hpp"

#include <cerrno>
#include <cstring>
#include <set>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include "recserve/errors.hpp"
#include "recserve/indexer.hpp"

namespace recserve {

namespace {

EmbeddingTypeId parse_type(const Json& type) {
    // Wire requests carry no dimension; type identity is (algo, config) and
    // all state lookups key on exactly that.
    return EmbeddingTypeId{type.at("algo").get<std::string>(),
                           type.at("config").get<std::string>(), 0};
}

Json error_response(std::string_view code) {
    return Json{{"ok", false}, {"error", std::string(code)}};
}

std::string entity_key_string(const EntityId& entity) {
    return entity.kind == EntityKind::attribute ? entity.id : entity.key();
}

Json misses_json(const std::vector<EntityId>& missing) {
    Json out = Json::array();
    for (const auto& entity : missing) out.push_back(entity_key_string(entity));
    return out;
}

Json vector_response(std::int64_t time_frame, const Vector& vec) {
    return Json{{"ok", true}, {"tf", time_frame}, {"vec", vec}};
}

Json states_response(const VersionStates& states) {
    Json out{{"ok", true}};
    out["latest_tf"] =
        states.latest_version ? Json(states.latest_version->time_frame) : Json(nullptr);
    out["in_use_tf"] =
        states.version_in_use ? Json(states.version_in_use->time_frame) : Json(nullptr);
    return out;
}

} // namespace

Json handle_eo_request(EmbeddingsOrchestrator& eo, const Json& request) {
    try {
        std::string op = request.at("op").get<std::string>();
        EmbeddingTypeId type = parse_type(request.at("type"));

        if (op == "get_user_embedding") {
            std::optional<UserEmbedding> resolved;
            if (request.contains("user_id")) {
                resolved =
                    eo.get_user_embedding(type, user_entity(request.at("user_id").get<std::string>()));
            } else {
                resolved = eo.get_user_embedding(type, parse_weighted_attributes(request.at("attrs")));
            }
            if (!resolved) return Json{{"ok", true}, {"absent", true}};
            return vector_response(resolved->version.time_frame, resolved->vector);
        }
        if (op == "get_entity_embedding") {
            EmbeddingVersion version{type, request.at("tf").get<std::int64_t>()};
            EntityId entity{entity_kind_from_string(request.at("kind").get<std::string>()),
                            request.at("id").get<std::string>()};
            auto vec = eo.get_entity_embedding(version, entity);
            if (!vec) return Json{{"ok", true}, {"absent", true}};
            return vector_response(version.time_frame, *vec);
        }
        if (op == "aggregate") {
            EmbeddingVersion version{type, request.at("tf").get<std::int64_t>()};
            AggregateResult aggregate =
                eo.aggregate_embedding(version, parse_weighted_attributes(request.at("attrs")));
            if (!aggregate.vector) {
                return Json{{"ok", true}, {"absent", true}, {"misses", misses_json(aggregate.missing)}};
            }
            Json out = vector_response(version.time_frame, *aggregate.vector);
            out["misses"] = misses_json(aggregate.missing);
            return out;
        }
        if (op == "get_states") return states_response(eo.get_states(type));
        if (op == "set_in_use") {
            EmbeddingVersion version{type, request.at("tf").get<std::int64_t>()};
            return states_response(eo.set_version_in_use(version));
        }
        if (op == "poll") {
            auto latest = eo.poll(type);
            Json out{{"ok", true}};
            out["latest_tf"] = latest ? Json(latest->time_frame) : Json(nullptr);
            return out;
        }
        return error_response("MalformedLine");
    } catch (const RecError& e) {
        return error_response(to_string(e.code()));
    } catch (const std::exception&) {
        return error_response("MalformedLine");
    }
}

Json handle_recs_request(ServingLayer& serving, const Json& request) {
    try {
        if (request.at("op").get<std::string>() != "recommend") return error_response("MalformedLine");
        EmbeddingTypeId type = parse_type(request.at("type"));

        UserRequest user_request;
        user_request.user_id = request.value("user_id", std::string{});
        if (request.contains("attrs")) {
            user_request.user_attributes = parse_weighted_attributes(request.at("attrs"));
        }
        user_request.user_geo = request.value("geo", std::string{});
        user_request.publisher_id = request.value("publisher", std::string{});
        user_request.k = request.value("k", 1);

        RecommendResponse response = serving.recommend(user_request, type);
        Json results = Json::array();
        for (const ScoredResult& r : response.results) {
            Json entry{{"item", r.item_id},
                       {"score", r.score},
                       {"mode", std::string(to_string(r.mode))}};
            entry["tf"] = r.version_used ? Json(r.version_used->time_frame) : Json(nullptr);
            results.push_back(std::move(entry));
        }
        return Json{{"ok", true}, {"results", results}};
    } catch (const RecError& e) {
        return error_response(to_string(e.code()));
    } catch (const std::exception&) {
        return error_response("MalformedLine");
    }
}

std::string handle_eo_line(EmbeddingsOrchestrator& eo, const std::string& line) {
    Json request = Json::parse(line, nullptr, false);
    if (request.is_discarded()) return canonical_dump(error_response("MalformedLine"));
    return canonical_dump(handle_eo_request(eo, request));
}

std::string handle_recs_line(ServingLayer& serving, const std::string& line) {
    Json request = Json::parse(line, nullptr, false);
    if (request.is_discarded()) return canonical_dump(error_response("MalformedLine"));
    return canonical_dump(handle_recs_request(serving, request));
}

LineServer::LineServer(int port, Handler handler) : handler_(std::move(handler)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));

    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        int err = errno;
        ::close(listen_fd_);
        throw std::runtime_error(std::string("bind: ") + std::strerror(err));
    }
    if (::listen(listen_fd_, 16) < 0) {
        int err = errno;
        ::close(listen_fd_);
        throw std::runtime_error(std::string("listen: ") + std::strerror(err));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

LineServer::~LineServer() {
    stop();
    join_workers();
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

void LineServer::serve_forever() {
    while (!stopping_.load()) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_.load() || errno == EBADF || errno == EINVAL) break;
            continue;
        }
        // Bounded reads so connection threads notice stop() promptly.
        timeval timeout{0, 200 * 1000};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &timeout, sizeof timeout);
        std::lock_guard<std::mutex> lock(workers_mutex_);
        workers_.emplace_back([this, fd] { handle_connection(fd); });
    }
    join_workers();
}

void LineServer::stop() {
    stopping_.store(true);
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
}

void LineServer::join_workers() {
    std::vector<std::thread> taken;
    {
        std::lock_guard<std::mutex> lock(workers_mutex_);
        taken.swap(workers_);
    }
    for (auto& worker : taken) {
        if (worker.joinable()) worker.join();
    }
}

void LineServer::handle_connection(int fd) {
    std::string buffer;
    char chunk[4096];
    while (true) {
        ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n == 0) break;
        if (n < 0) {
            if ((errno == EAGAIN || errno == EWOULDBLOCK) && !stopping_.load()) continue;
            break;
        }
        buffer.append(chunk, static_cast<std::size_t>(n));

        std::size_t pos;
        while ((pos = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, pos);
            buffer.erase(0, pos + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;

            std::string response = handler_(line);
            response.push_back('\n');
            std::size_t sent = 0;
            while (sent < response.size()) {
                ssize_t wrote = ::send(fd, response.data() + sent, response.size() - sent, 0);
                if (wrote <= 0) break;
                sent += static_cast<std::size_t>(wrote);
            }
            if (sent < response.size()) break;
        }
    }
    ::close(fd);
}

ServingStack build_serving_stack(const Scenario& scenario) {
    scenario.validate();

    ServingStack stack;
    stack.store = std::make_unique<EmbeddingStore>();

    TrainingCatalog catalog = scenario.training_catalog();
    for (const auto& type : scenario.types) {
        TrainerConfig config;
        config.model_kind = scenario.model_kind;
        config.type_id = type;
        config.embedding_source = scenario.trainer_source;
        config.coverage_fraction = scenario.coverage_fraction;
        config.seed = scenario.trainer_seed;
        stack.trainers.push_back(std::make_unique<Trainer>(*stack.store, config));
    }
    for (std::int64_t tf = 1; tf <= static_cast<std::int64_t>(scenario.trainer_cycles); ++tf) {
        for (auto& trainer : stack.trainers) trainer->run_cycle(catalog, tf);
    }

    stack.eo = std::make_unique<EmbeddingsOrchestrator>(*stack.store, scenario.eo_cache_capacity);
    for (const auto& type : scenario.types) stack.eo->poll(type);

    stack.engine =
        std::make_unique<SearchEngine>(scenario.index_mode, EngineConfig{scenario.fallback_weight});
    stack.indexer = std::make_unique<Indexer>(
        *stack.eo, *stack.engine,
        IndexerOptions{scenario.model_kind, scenario.types, scenario.shadow_index_both_versions});

    std::set<std::string> dropped;
    for (const auto& tomb : scenario.tombstones) dropped.insert(tomb.item_id);
    Catalog current;
    for (const auto& item : scenario.items) {
        if (!dropped.count(item.item_id)) current.items.push_back(item);
    }
    if (scenario.index_mode == SearchEngine::Mode::shadowing) {
        stack.indexer->run_shadow_cycle(current);
    } else {
        ChangeSet changes;
        changes.upserts = current.items;
        stack.indexer->run_incremental_batch(changes);
    }

    stack.serving = std::make_unique<ServingLayer>(*stack.eo, *stack.engine, scenario.model_kind,
                                                   scenario.publisher_rules);
    return stack;
}

} // namespace recserve
