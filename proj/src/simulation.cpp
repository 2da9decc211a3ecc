#include "recserve/simulation.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "recserve/errors.hpp"
#include "recserve/hash.hpp"
#include "recserve/indexer.hpp"
#include "recserve/oracle.hpp"
#include "recserve/orchestrator.hpp"
#include "recserve/store.hpp"

namespace recserve {

namespace {

constexpr std::uint64_t kSchedulerStream = 0xA11CE5EDC0DE5EEDull;
constexpr std::uint64_t kRequestStream = 0x5E1EC7EDFEED5EEDull;

struct InvariantTally {
    std::int64_t checked = 0;
    std::int64_t violations = 0;
};

// What the monitor needs to know about a serving action, beyond the engine
// and orchestrator state it can read directly.
struct ServingObservation {
    const EmbeddingTypeId* type_id = nullptr;
    std::string user_geo;
    const std::set<std::string>* blocked_providers = nullptr;
    int k = 1;
    const RecommendResponse* response = nullptr;
};

struct StepContext {
    std::uint64_t step = 0;
    std::string actor;
    std::string action;
    std::int64_t trainer_tf = -1;                 // >= 0 on trainer steps
    const ServingObservation* serving = nullptr;  // set on serving steps
};

// Evaluates the invariant suite against observable component state after
// every scheduler step. It holds no privileged handles: everything it reads
// is available through public accessors.
class InvariantMonitor {
public:
    InvariantMonitor(const Scenario& scenario, const EmbeddingStore& store,
                     EmbeddingsOrchestrator& eo, const SearchEngine& engine)
        : scenario_(scenario), store_(store), eo_(eo), engine_(engine) {
        for (const auto& type : scenario_.types) {
            VersionStates states = eo_.get_states(type);
            prev_[type.key()] = snapshot(states);
        }
        refresh_documents();
    }

    void note_cycle_start() {
        cycle_start_in_use_.clear();
        for (const auto& type : scenario_.types) {
            cycle_start_in_use_[type.key()] = time_frame_of(eo_.get_version_in_use(type));
        }
    }

    void note_cycle_end(std::uint64_t step, const IndexCycleReport& report,
                        const std::vector<std::string>& upserted_ids,
                        const std::vector<std::string>& deleted_ids, std::size_t expected_total) {
        if (report.aborted) {
            // Abort safety: nothing the cycle still had to do may have
            // landed; in particular the in-use version is exactly what it
            // was when the cycle began.
            for (const auto& type : scenario_.types) {
                auto now = time_frame_of(eo_.get_version_in_use(type));
                auto then = cycle_start_in_use_[type.key()];
                check(step, "abort_safety", now == then,
                      [&] { return detail("in-use moved across an aborted cycle", type.key()); });
            }
            return;
        }
        check_report(step, report, upserted_ids, deleted_ids, expected_total);
    }

    void after_step(const StepContext& ctx) {
        if (ctx.actor == "indexer" &&
            (ctx.action == "swap_generation" || ctx.action == "upsert_item" ||
             ctx.action == "delete_item")) {
            refresh_documents();
        }

        check_version_states(ctx);
        check(ctx.step, "version_match", engine_.cross_version_products() == 0,
              [&] { return detail("engine computed a cross-version inner product", ""); });

        if (ctx.trainer_tf >= 0) check_model_kind(ctx);
        if (ctx.serving) check_serving(ctx);
        if (scenario_.index_mode == SearchEngine::Mode::incremental && ctx.actor == "indexer") {
            check_two_version_safety(ctx.step);
        }
        if (scenario_.index_mode == SearchEngine::Mode::shadowing) {
            track_window(ctx);
        }
    }

    Json invariants_json() const {
        Json out = Json::object();
        for (const auto& [name, tally] : tallies_) {
            out[name] = Json{{"checked", tally.checked}, {"violations", tally.violations}};
        }
        return out;
    }

    Json window_json() const {
        return Json{{"opened", windows_opened_},
                    {"steps_in_window", in_window_steps_},
                    {"attributed_in_window", attributed_in_window_},
                    {"attributed_outside_window", attributed_outside_}};
    }

    bool all_held() const {
        for (const auto& [name, tally] : tallies_) {
            (void)name;
            if (tally.violations > 0) return false;
        }
        return true;
    }

    const Json& first_violation() const { return first_violation_; }

private:
    static std::optional<std::int64_t> time_frame_of(const std::optional<EmbeddingVersion>& v) {
        if (!v) return std::nullopt;
        return v->time_frame;
    }

    struct Track {
        std::optional<std::int64_t> latest;
        std::optional<std::int64_t> in_use;
    };

    static Track snapshot(const VersionStates& states) {
        return {time_frame_of(states.latest_version), time_frame_of(states.version_in_use)};
    }

    static Json detail(const std::string& what, const std::string& context) {
        Json out{{"what", what}};
        if (!context.empty()) out["context"] = context;
        return out;
    }

    template <typename DetailFn>
    void check(std::uint64_t step, const std::string& name, bool ok, DetailFn&& fn) {
        InvariantTally& tally = tallies_[name];
        tally.checked += 1;
        if (ok) return;
        tally.violations += 1;
        if (first_violation_.is_null()) {
            first_violation_ = Json{{"step", static_cast<std::int64_t>(step)},
                                    {"invariant", name},
                                    {"detail", fn()}};
        }
    }

    void refresh_documents() {
        documents_.clear();
        for (auto& doc : engine_.dump_documents()) {
            std::string id = doc.item_id;
            documents_.emplace(std::move(id), std::move(doc));
        }
    }

    void check_version_states(const StepContext& ctx) {
        for (const auto& type : scenario_.types) {
            VersionStates states = eo_.get_states(type);
            Track now = snapshot(states);
            Track& prev = prev_[type.key()];

            bool latest_forward = !prev.latest || (now.latest && *now.latest >= *prev.latest);
            bool in_use_forward = !prev.in_use || (now.in_use && *now.in_use >= *prev.in_use);
            bool pair_ordered = !now.in_use || (now.latest && *now.in_use <= *now.latest);
            check(ctx.step, "monotonicity", latest_forward && in_use_forward && pair_ordered,
                  [&] { return detail("version state moved backwards or pair inverted", type.key()); });

            bool in_use_changed = now.in_use != prev.in_use;
            bool by_trigger = ctx.actor == "indexer" && ctx.action == "trigger_in_use";
            check(ctx.step, "trigger_exclusivity", !in_use_changed || by_trigger,
                  [&] { return detail("in-use changed outside an indexer trigger, during " +
                                          ctx.actor + "/" + ctx.action,
                                      type.key()); });
            prev = now;
        }
    }

    void check_model_kind(const StepContext& ctx) {
        for (const auto& type : scenario_.types) {
            EmbeddingVersion version{type, ctx.trainer_tf};
            bool ok = true;
            for (const auto& entity : store_.entities_of_version(version)) {
                switch (scenario_.model_kind) {
                case ModelKind::direct_direct:
                    ok = ok && entity.kind != EntityKind::attribute;
                    break;
                case ModelKind::indirect_direct:
                    ok = ok && entity.kind == EntityKind::item;
                    break;
                case ModelKind::indirect_indirect:
                    ok = ok && entity.kind == EntityKind::attribute;
                    break;
                }
            }
            check(ctx.step, "model_kind_discipline", ok,
                  [&] { return detail("trained entity kind not allowed for model kind", type.key()); });
        }
    }

    void check_serving(const StepContext& ctx) {
        const ServingObservation& obs = *ctx.serving;
        const RecommendResponse& response = *obs.response;
        const EmbeddingTypeId& type = *obs.type_id;

        // The version the response reports must be the in-use version; the
        // scheduler runs actions one at a time, so it cannot have moved.
        if (response.version_used) {
            auto in_use = eo_.get_version_in_use(type);
            check(ctx.step, "pass_through",
                  in_use && *in_use == *response.version_used &&
                      response.version_used->type_id == type,
                  [&] { return detail("response version is not the in-use version", type.key()); });
        }

        std::size_t eligible = 0;
        for (const auto& [id, doc] : documents_) {
            (void)id;
            bool geo_ok = doc.geo_targets.empty() ||
                          doc.geo_targets.count(obs.user_geo) > 0;
            bool provider_ok = obs.blocked_providers->count(doc.provider_id) == 0;
            if (geo_ok && provider_ok) eligible += 1;
        }
        std::size_t expected = std::min<std::size_t>(eligible, static_cast<std::size_t>(obs.k));

        bool contract = response.results.size() == expected;
        for (std::size_t i = 0; i < response.results.size(); ++i) {
            const ScoredResult& r = response.results[i];
            auto it = documents_.find(r.item_id);
            if (it == documents_.end()) {
                contract = false;
                break;
            }
            const IndexedDocument& doc = it->second;
            if (obs.blocked_providers->count(doc.provider_id)) contract = false;
            if (!doc.geo_targets.empty() && !doc.geo_targets.count(obs.user_geo)) contract = false;
            if (i > 0) {
                const ScoredResult& p = response.results[i - 1];
                bool ordered = p.score > r.score || (p.score == r.score && p.item_id < r.item_id);
                if (!ordered) contract = false;
            }
        }
        check(ctx.step, "serving_contract", contract,
              [&] { return detail("results violate filter, ordering, or count rules", type.key()); });

        for (const ScoredResult& r : response.results) {
            auto it = documents_.find(r.item_id);
            if (it == documents_.end()) continue;
            const IndexedDocument& doc = it->second;

            if (r.mode == ScoreMode::embedding) {
                bool ok = r.version_used && response.version_used &&
                          *r.version_used == *response.version_used &&
                          doc.vectors.count(*r.version_used) > 0;
                check(ctx.step, "version_match", ok,
                      [&] { return detail("embedding-mode result not scored under the request version",
                                          r.item_id); });
            } else if (response.version_used && doc.has_vector_of_type(type) &&
                       doc.vectors.count(*response.version_used) == 0) {
                // A fallback forced purely by a version mismatch: the item
                // is embedded, just not under the version in use.
                if (scenario_.index_mode == SearchEngine::Mode::shadowing) {
                    check(ctx.step, "window_containment", window_open_,
                          [&] { return detail("version-mismatch fallback outside a swap-to-trigger window",
                                              r.item_id); });
                    if (window_open_) attributed_in_window_ += 1;
                    else attributed_outside_ += 1;
                } else {
                    attributed_outside_ += 1;
                }
            }
        }
    }

    void check_two_version_safety(std::uint64_t step) {
        for (const auto& type : scenario_.types) {
            auto& embedded = ever_embedded_[type.key()];
            for (const auto& [id, doc] : documents_) {
                if (doc.has_vector_of_type(type)) embedded.insert(id);
            }
            auto in_use = eo_.get_version_in_use(type);
            if (!in_use) continue;
            for (const auto& id : embedded) {
                auto it = documents_.find(id);
                if (it == documents_.end()) continue; // deleted since
                check(step, "two_version_safety", it->second.vectors.count(*in_use) > 0, [&] {
                    Json versions = Json::array();
                    for (const auto& [version, vec] : it->second.vectors) {
                        versions.push_back(version.key());
                    }
                    Json out = detail("indexed item lost its in-use-version vector", id);
                    out["in_use"] = in_use->key();
                    out["doc_versions"] = versions;
                    return out;
                });
            }
        }
    }

    void track_window(const StepContext& ctx) {
        if (ctx.actor == "indexer" && ctx.action == "swap_generation") {
            window_open_ = true;
            windows_opened_ += 1;
        } else if (ctx.actor == "indexer" && ctx.action == "trigger_in_use") {
            window_open_ = false;
        }
        if (window_open_) in_window_steps_ += 1;
    }

    void check_report(std::uint64_t step, const IndexCycleReport& report,
                      const std::vector<std::string>& upserted_ids,
                      const std::vector<std::string>& deleted_ids, std::size_t expected_total) {
        for (const auto& counts : report.per_type) {
            std::size_t with_embedding = 0;
            if (report.mode == "shadow") {
                for (const auto& [id, doc] : documents_) {
                    (void)id;
                    if (doc.has_vector_of_type(counts.type_id)) with_embedding += 1;
                }
                check(step, "report_consistency",
                      counts.items_total == expected_total &&
                          counts.items_total == documents_.size() &&
                          counts.items_with_embedding == with_embedding &&
                          counts.items_fallback_only == counts.items_total - with_embedding,
                      [&] { return detail("shadow cycle counts disagree with the built index",
                                          counts.type_id.key()); });
            } else {
                for (const auto& id : upserted_ids) {
                    auto it = documents_.find(id);
                    if (it != documents_.end() && it->second.has_vector_of_type(counts.type_id)) {
                        with_embedding += 1;
                    }
                }
                check(step, "report_consistency",
                      counts.items_total == upserted_ids.size() &&
                          counts.items_with_embedding == with_embedding &&
                          counts.items_fallback_only == counts.items_total - with_embedding,
                      [&] { return detail("batch counts disagree with the live index",
                                          counts.type_id.key()); });
            }
        }
        for (const auto& id : deleted_ids) {
            check(step, "report_consistency", documents_.count(id) == 0,
                  [&] { return detail("deleted item still present", id); });
        }
    }

    const Scenario& scenario_;
    const EmbeddingStore& store_;
    EmbeddingsOrchestrator& eo_;
    const SearchEngine& engine_;

    std::map<std::string, InvariantTally> tallies_;
    Json first_violation_ = nullptr;

    std::map<std::string, Track> prev_;
    std::map<std::string, std::optional<std::int64_t>> cycle_start_in_use_;
    std::map<std::string, std::set<std::string>> ever_embedded_;
    std::map<std::string, IndexedDocument> documents_; // serving-visible index state

    bool window_open_ = false;
    std::int64_t windows_opened_ = 0;
    std::int64_t in_window_steps_ = 0;
    std::int64_t attributed_in_window_ = 0;
    std::int64_t attributed_outside_ = 0;
};

class Simulation {
public:
    Simulation(const Scenario& scenario, std::uint64_t seed, const RunOptions& options)
        : scenario_(scenario), options_(options), seed_(seed),
          catalog_(scenario.training_catalog()),
          eo_(store_, scenario.eo_cache_capacity),
          engine_(scenario.index_mode, EngineConfig{scenario.fallback_weight}),
          indexer_(eo_, engine_,
                   IndexerOptions{scenario.model_kind, scenario.types,
                                  scenario.shadow_index_both_versions}),
          serving_(eo_, engine_, scenario.model_kind, scenario.publisher_rules),
          monitor_(scenario, store_, eo_, engine_),
          scheduler_rng_(splitmix64(seed ^ scenario.interleaving_seed) ^ kSchedulerStream),
          request_rng_(splitmix64(seed ^ kRequestStream)) {
        for (const auto& type : scenario_.types) {
            TrainerConfig config;
            config.model_kind = scenario_.model_kind;
            config.type_id = type;
            config.embedding_source = scenario_.trainer_source;
            config.coverage_fraction = scenario_.coverage_fraction;
            config.seed = scenario_.trainer_seed;
            trainers_.push_back(std::make_unique<Trainer>(store_, config));
        }
    }

    SimulationResult run() {
        while (true) {
            bool trainer_work = trainer_cycles_done_ < scenario_.trainer_cycles;
            bool indexer_work = active_cycle_ != nullptr ||
                                index_cycles_done_ < scenario_.indexer_cycles;
            bool serving_work = requests_done_ < scenario_.requests.count;
            if (!trainer_work && !indexer_work && !serving_work) break;

            // The orchestrator polls only while the system is otherwise
            // active; it has no work of its own.
            bool work[kActors] = {trainer_work, trainer_work || indexer_work || serving_work,
                                  indexer_work, serving_work};

            std::vector<int> ready;
            std::uint64_t soonest = UINT64_MAX;
            for (int a = 0; a < kActors; ++a) {
                if (!work[a]) continue;
                soonest = std::min(soonest, next_ready_[a]);
                if (next_ready_[a] <= step_) ready.push_back(a);
            }
            if (ready.empty()) {
                step_ = soonest; // idle gap: jump to the next eligible step
                continue;
            }
            int actor = ready[static_cast<std::size_t>(
                scheduler_rng_.below(static_cast<std::uint64_t>(ready.size())))];
            switch (actor) {
            case 0: act_trainer(); break;
            case 1: act_eo(); break;
            case 2: act_indexer(); break;
            case 3: act_serving(); break;
            }
            step_ += 1;
        }
        return finish();
    }

private:
    static constexpr int kActors = 4; // trainer, eo, indexer, serving

    void record(const std::string& actor, const std::string& action, const Json& payload,
                std::int64_t trainer_tf = -1, const ServingObservation* serving = nullptr) {
        if (options_.keep_trace) {
            trace_.push_back(TraceEvent{step_, actor, action, payload_digest(payload)});
        }
        actions_ += 1;
        StepContext ctx;
        ctx.step = step_;
        ctx.actor = actor;
        ctx.action = action;
        ctx.trainer_tf = trainer_tf;
        ctx.serving = serving;
        monitor_.after_step(ctx);
    }

    void act_trainer() {
        std::int64_t tf = ++time_frame_;
        Json per_type = Json::array();
        std::set<EntityId> changed;
        for (auto& trainer : trainers_) {
            std::size_t written = trainer->run_cycle(catalog_, tf);
            per_type.push_back(Json{{"type", trainer->config().type_id.key()},
                                    {"records", static_cast<std::int64_t>(written)}});
            for (const auto& entity : trainer->changed_entities(tf - 1, tf)) changed.insert(entity);
        }
        feed_changed(changed, tf);
        trainer_cycles_done_ += 1;
        next_ready_[0] = step_ + scenario_.trainer_cadence;
        record("trainer", "train_cycle", Json{{"tf", tf}, {"types", per_type}}, tf);
    }

    void act_eo() {
        Json per_type = Json::array();
        for (const auto& type : scenario_.types) {
            auto latest = eo_.poll(type);
            per_type.push_back(Json{{"type", type.key()},
                                    {"latest_tf", latest ? Json(latest->time_frame) : Json(nullptr)}});
        }
        polls_ += 1;
        next_ready_[1] = step_ + scenario_.eo_poll_cadence;
        record("eo", "poll", Json{{"types", per_type}});
    }

    void act_indexer() {
        if (!active_cycle_) begin_cycle();

        std::size_t position = active_cycle_->position();
        try {
            IndexCycle::StepRecord step_record = active_cycle_->advance();
            bool finished = active_cycle_->done();
            Json payload = step_record.payload;
            if (finished) payload["report"] = active_cycle_->report().to_json();

            if (step_record.action == "upsert_item") {
                std::string id = step_record.payload.at("item").get<std::string>();
                indexed_once_.insert(id);
                applied_upserts_.insert(id);
            } else if (step_record.action == "delete_item") {
                applied_deletes_.insert(step_record.payload.at("item").get<std::string>());
            }

            record("indexer", step_record.action, payload);
            if (finished) finish_cycle(/*aborted=*/false);
            else next_ready_[2] = step_ + 1;
        } catch (const RecError& e) {
            if (e.code() != Errc::EOUnavailable && e.code() != Errc::EngineUnavailable) throw;
            active_cycle_->abort();
            Json payload{{"error", std::string(to_string(e.code()))},
                         {"position", static_cast<std::int64_t>(position)},
                         {"report", active_cycle_->report().to_json()}};
            record("indexer", "cycle_abort", payload);
            finish_cycle(/*aborted=*/true);
        }
    }

    void begin_cycle() {
        FaultInjector injector;
        if (options_.fault && options_.fault->cycle_ordinal == index_cycles_started_) {
            std::size_t target = options_.fault->step_in_cycle;
            // Alternate the failing dependency by position so both abort
            // paths get exercised.
            Errc code = target % 2 == 0 ? Errc::EOUnavailable : Errc::EngineUnavailable;
            injector = [target, code](std::size_t step_in_cycle) {
                if (step_in_cycle == target) throw RecError(code, "injected fault");
            };
        }

        applied_upserts_.clear();
        applied_deletes_.clear();
        planned_ = ChangeSet{};
        consumed_feed_.clear();

        if (scenario_.index_mode == SearchEngine::Mode::shadowing) {
            Catalog catalog = shadow_catalog(index_cycles_started_);
            expected_total_ = catalog.items.size();
            for (const auto& item : catalog.items) planned_.upserts.push_back(item);
            active_cycle_ = indexer_.begin_shadow_cycle(catalog, std::move(injector));
        } else {
            planned_ = next_changeset(feed_horizon());
            expected_total_ = planned_.upserts.size();
            active_cycle_ = indexer_.begin_incremental_batch(planned_, std::move(injector));
        }
        index_cycles_started_ += 1;
        monitor_.note_cycle_start();
    }

    // The newest time frame a batch planned now may safely consume from the
    // feed: entries changed past any type's discovered latest must wait for a
    // later batch, or they would be consumed without being reindexed under
    // their version. The batch's own version read happens in the same
    // scheduler action as the planning, so this peek sees the same states.
    std::optional<std::int64_t> feed_horizon() {
        std::optional<std::int64_t> horizon;
        for (const auto& type : scenario_.types) {
            auto latest = eo_.get_states(type).latest_version;
            if (!latest) return std::nullopt;
            if (!horizon || latest->time_frame < *horizon) horizon = latest->time_frame;
        }
        return horizon;
    }

    void finish_cycle(bool aborted) {
        const IndexCycleReport& report = active_cycle_->report();
        std::vector<std::string> upserted(applied_upserts_.begin(), applied_upserts_.end());
        std::vector<std::string> deleted(applied_deletes_.begin(), applied_deletes_.end());
        monitor_.note_cycle_end(step_, report, upserted, deleted, expected_total_);

        if (aborted) {
            index_aborts_ += 1;
            if (scenario_.index_mode == SearchEngine::Mode::incremental) {
                // Unapplied change events go back on the queue at their
                // original time frames; unapplied tombstones are retried
                // because they were never consumed.
                for (const auto& item : planned_.upserts) {
                    if (applied_upserts_.count(item.item_id)) continue;
                    auto entry = consumed_feed_.find(item.item_id);
                    if (entry == consumed_feed_.end()) continue; // a first-index pickup
                    pending_feed_[item.item_id].insert(entry->second.begin(),
                                                       entry->second.end());
                }
            }
        } else {
            index_cycles_completed_ += 1;
        }
        for (const auto& id : applied_deletes_) consumed_tombstones_.insert(id);

        active_cycle_.reset();
        index_cycles_done_ += 1;
        next_ready_[2] = step_ + scenario_.indexer_cadence;
    }

    void act_serving() {
        const auto& ids = scenario_.requests.user_ids;
        const auto& pubs = scenario_.requests.publishers;
        const ScenarioUser& user = scenario_.user_by_id(
            ids[static_cast<std::size_t>(request_rng_.below(ids.size()))]);
        const std::string& publisher =
            pubs[static_cast<std::size_t>(request_rng_.below(pubs.size()))];
        const EmbeddingTypeId& type = scenario_.types[static_cast<std::size_t>(
            request_rng_.below(scenario_.types.size()))];

        UserRequest request;
        request.user_id = user.id;
        request.user_attributes = user.attributes;
        request.user_geo = user.geo;
        request.publisher_id = publisher;
        request.k = scenario_.requests.k;

        RecommendResponse response = serving_.recommend(request, type);

        static const std::set<std::string> kNoBlocked;
        const std::set<std::string>* blocked = &kNoBlocked;
        auto rule = scenario_.publisher_rules.find(publisher);
        if (rule != scenario_.publisher_rules.end()) blocked = &rule->second.blocked_providers;

        Json results = Json::array();
        for (const ScoredResult& r : response.results) {
            Json entry{{"item", r.item_id},
                       {"score", r.score},
                       {"mode", std::string(to_string(r.mode))}};
            entry["tf"] = r.version_used ? Json(r.version_used->time_frame) : Json(nullptr);
            results.push_back(std::move(entry));
            if (r.mode == ScoreMode::embedding) results_embedding_ += 1;
            else results_fallback_ += 1;
        }
        Json payload{{"user", user.id},
                     {"publisher", publisher},
                     {"type", type.key()},
                     {"k", scenario_.requests.k},
                     {"version_tf", response.version_used
                                        ? Json(response.version_used->time_frame)
                                        : Json(nullptr)},
                     {"generation", static_cast<std::int64_t>(response.generation)},
                     {"results", results}};

        requests_done_ += 1;
        next_ready_[3] = step_ + scenario_.requests.cadence;

        ServingObservation obs;
        obs.type_id = &type;
        obs.user_geo = user.geo;
        obs.blocked_providers = blocked;
        obs.k = scenario_.requests.k;
        obs.response = &response;
        record("serving", "recommend", payload, -1, &obs);
    }

    // Shadow cycles index the whole catalog minus tombstones due by now.
    Catalog shadow_catalog(std::size_t cycle_ordinal) const {
        std::set<std::string> dropped;
        for (const auto& tomb : scenario_.tombstones) {
            if (tomb.cycle <= cycle_ordinal) dropped.insert(tomb.item_id);
        }
        Catalog catalog;
        for (const auto& item : scenario_.items) {
            if (!dropped.count(item.item_id)) catalog.items.push_back(item);
        }
        return catalog;
    }

    void feed_changed(const std::set<EntityId>& changed, std::int64_t tf) {
        if (scenario_.index_mode != SearchEngine::Mode::incremental) return;
        for (const auto& entity : changed) {
            if (entity.kind == EntityKind::item) {
                pending_feed_[entity.id].insert(tf);
            } else if (entity.kind == EntityKind::attribute &&
                       scenario_.model_kind == ModelKind::indirect_indirect) {
                for (const auto& item : scenario_.items) {
                    if (item.attributes.count(attribute_entity(entity.id))) {
                        pending_feed_[item.item_id].insert(tf);
                    }
                }
            }
        }
    }

    ChangeSet next_changeset(std::optional<std::int64_t> latest_tf) {
        std::set<std::string> deletions;
        for (const auto& tomb : scenario_.tombstones) {
            if (tomb.cycle <= index_cycles_started_ && !consumed_tombstones_.count(tomb.item_id)) {
                deletions.insert(tomb.item_id);
            }
        }

        // Change events past the batch's discovered latest stay queued:
        // consuming them now would advance the in-use version without the
        // documents those events describe. An item changed both before and
        // after the horizon is reindexed now and again by a later batch.
        std::set<std::string> ids;
        for (auto it = pending_feed_.begin(); it != pending_feed_.end();) {
            std::set<std::int64_t>& events = it->second;
            if (latest_tf) {
                auto past_horizon = events.upper_bound(*latest_tf);
                if (past_horizon != events.begin()) {
                    ids.insert(it->first);
                    consumed_feed_[it->first].insert(events.begin(), past_horizon);
                    events.erase(events.begin(), past_horizon);
                }
            }
            it = events.empty() ? pending_feed_.erase(it) : std::next(it);
        }
        for (const auto& item : scenario_.items) {
            if (!indexed_once_.count(item.item_id)) ids.insert(item.item_id);
        }
        for (const auto& id : deletions) {
            ids.erase(id);
            pending_feed_.erase(id);
        }
        for (const auto& id : consumed_tombstones_) {
            ids.erase(id);
            pending_feed_.erase(id);
        }

        ChangeSet changes;
        for (const auto& item : scenario_.items) {
            if (ids.count(item.item_id)) changes.upserts.push_back(item);
        }
        changes.deletions.assign(deletions.begin(), deletions.end());
        return changes;
    }

    SimulationResult finish() {
        Json counters{{"steps", static_cast<std::int64_t>(actions_)},
                      {"trainer_cycles", static_cast<std::int64_t>(trainer_cycles_done_)},
                      {"polls", static_cast<std::int64_t>(polls_)},
                      {"index_cycles_completed", static_cast<std::int64_t>(index_cycles_completed_)},
                      {"index_aborts", static_cast<std::int64_t>(index_aborts_)},
                      {"requests", static_cast<std::int64_t>(requests_done_)},
                      {"results_embedding", results_embedding_},
                      {"results_fallback", results_fallback_},
                      {"cross_version_products",
                       static_cast<std::int64_t>(engine_.cross_version_products())},
                      {"store_records", static_cast<std::int64_t>(store_.record_count())}};

        SimulationResult result;
        result.passed = monitor_.all_held();
        result.report = Json{{"seed", seed_},
                             {"scenario_digest", payload_digest(scenario_.to_json())},
                             {"mode", scenario_.index_mode == SearchEngine::Mode::shadowing
                                          ? "shadow"
                                          : "incremental"},
                             {"counters", counters},
                             {"invariants", monitor_.invariants_json()},
                             {"window", monitor_.window_json()},
                             {"first_violation", monitor_.first_violation()},
                             {"verdict", result.passed ? "pass" : "fail"}};
        result.trace = std::move(trace_);
        return result;
    }

    const Scenario& scenario_;
    const RunOptions& options_;
    std::uint64_t seed_;

    TrainingCatalog catalog_;
    EmbeddingStore store_;
    std::vector<std::unique_ptr<Trainer>> trainers_;
    EmbeddingsOrchestrator eo_;
    SearchEngine engine_;
    Indexer indexer_;
    ServingLayer serving_;
    InvariantMonitor monitor_;

    SplitMix64 scheduler_rng_;
    SplitMix64 request_rng_;

    std::uint64_t step_ = 0;
    std::uint64_t next_ready_[kActors] = {0, 0, 0, 0};
    std::uint64_t actions_ = 0;

    std::int64_t time_frame_ = 0;
    std::size_t trainer_cycles_done_ = 0;
    std::size_t polls_ = 0;

    std::unique_ptr<IndexCycle> active_cycle_;
    std::size_t index_cycles_started_ = 0;
    std::size_t index_cycles_done_ = 0;
    std::size_t index_cycles_completed_ = 0;
    std::size_t index_aborts_ = 0;
    std::size_t expected_total_ = 0;
    ChangeSet planned_;
    std::set<std::string> applied_upserts_;
    std::set<std::string> applied_deletes_;
    std::set<std::string> indexed_once_;
    std::map<std::string, std::set<std::int64_t>> pending_feed_;   // item -> queued change time frames
    std::map<std::string, std::set<std::int64_t>> consumed_feed_;  // events taken by the active batch
    std::set<std::string> consumed_tombstones_;

    std::size_t requests_done_ = 0;
    std::int64_t results_embedding_ = 0;
    std::int64_t results_fallback_ = 0;

    std::vector<TraceEvent> trace_;
};

} // namespace

SimulationResult run_scenario(const Scenario& scenario, std::uint64_t seed,
                              const RunOptions& options) {
    scenario.validate();
    Simulation simulation(scenario, seed, options);
    return simulation.run();
}

Json sweep_scenario(const Scenario& scenario, std::uint64_t seed_from, std::uint64_t seed_to,
                    const RunOptions& options) {
    std::map<std::string, InvariantTally> invariants;
    std::map<std::string, std::int64_t> counters;
    std::map<std::string, std::int64_t> window;
    std::vector<std::uint64_t> failing_seeds;
    Json first_violation = nullptr;
    std::uint64_t runs = 0;

    RunOptions per_run = options;
    per_run.keep_trace = false;

    // An inverted range is the empty sweep: zero runs, a passing aggregate.
    for (std::uint64_t seed = seed_from; seed_from <= seed_to; ++seed) {
        SimulationResult result = run_scenario(scenario, seed, per_run);
        runs += 1;
        for (const auto& [name, tally] : result.report.at("invariants").items()) {
            invariants[name].checked += tally.at("checked").get<std::int64_t>();
            invariants[name].violations += tally.at("violations").get<std::int64_t>();
        }
        for (const auto& [name, value] : result.report.at("counters").items()) {
            counters[name] += value.get<std::int64_t>();
        }
        for (const auto& [name, value] : result.report.at("window").items()) {
            window[name] += value.get<std::int64_t>();
        }
        if (!result.passed) {
            if (failing_seeds.size() < 20) failing_seeds.push_back(seed);
            if (first_violation.is_null()) {
                first_violation = Json{{"seed", seed},
                                       {"violation", result.report.at("first_violation")}};
            }
        }
        if (seed == seed_to) break; // avoids overflow when seed_to == UINT64_MAX
    }

    Json invariants_json = Json::object();
    bool all_held = true;
    for (const auto& [name, tally] : invariants) {
        invariants_json[name] = Json{{"checked", tally.checked}, {"violations", tally.violations}};
        all_held = all_held && tally.violations == 0;
    }
    Json counters_json = Json::object();
    for (const auto& [name, value] : counters) counters_json[name] = value;
    Json window_json = Json::object();
    for (const auto& [name, value] : window) window_json[name] = value;

    return Json{{"scenario_digest", payload_digest(scenario.to_json())},
                {"seeds", Json{{"from", seed_from}, {"to", seed_to}, {"runs", runs}}},
                {"counters", counters_json},
                {"invariants", invariants_json},
                {"window", window_json},
                {"failing_seeds", failing_seeds},
                {"first_violation", first_violation},
                {"verdict", all_held ? "pass" : "fail"}};
}

void write_trace(std::ostream& out, const Scenario& scenario, std::uint64_t seed,
                 const SimulationResult& result) {
    out << canonical_dump(Json{{"kind", "trace"}, {"scenario", scenario.to_json()}, {"seed", seed}})
        << '\n';
    for (const TraceEvent& event : result.trace) {
        out << canonical_dump(Json{{"step", event.step},
                                   {"actor", event.actor},
                                   {"action", event.action},
                                   {"digest", event.digest}})
            << '\n';
    }
    out << canonical_dump(Json{{"kind", "report"}, {"report", result.report}}) << '\n';
}

namespace {

[[noreturn]] void diverged(const std::string& what) {
    throw RecError(Errc::ReplayDivergence, what);
}

} // namespace

Json replay_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) diverged("empty trace");
    Json header = Json::parse(line);
    if (header.value("kind", "") != "trace") diverged("first line is not a trace header");
    Scenario scenario = Scenario::from_json(header.at("scenario"));
    std::uint64_t seed = header.at("seed").get<std::uint64_t>();

    std::vector<Json> events;
    Json recorded_report = nullptr;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Json parsed = Json::parse(line);
        if (parsed.contains("kind")) {
            if (parsed.at("kind") != "report") diverged("unexpected line kind");
            recorded_report = parsed.at("report");
            break;
        }
        events.push_back(std::move(parsed));
    }
    if (recorded_report.is_null()) diverged("trace has no report line");

    SimulationResult rerun = run_scenario(scenario, seed, RunOptions{});
    if (rerun.trace.size() != events.size()) {
        diverged("event count " + std::to_string(rerun.trace.size()) + " vs recorded " +
                 std::to_string(events.size()));
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Json& want = events[i];
        const TraceEvent& got = rerun.trace[i];
        if (want.at("step").get<std::uint64_t>() != got.step ||
            want.at("actor").get<std::string>() != got.actor ||
            want.at("action").get<std::string>() != got.action ||
            want.at("digest").get<std::string>() != got.digest) {
            diverged("event " + std::to_string(i) + ": recorded " + canonical_dump(want) +
                     " vs replayed " +
                     canonical_dump(Json{{"step", got.step},
                                         {"actor", got.actor},
                                         {"action", got.action},
                                         {"digest", got.digest}}));
        }
    }
    if (canonical_dump(recorded_report) != canonical_dump(rerun.report)) {
        diverged("final report differs");
    }
    return Json{{"events", static_cast<std::int64_t>(events.size())},
                {"report", rerun.report},
                {"verdict", "match"}};
}

namespace {

Vector random_vector(SplitMix64& rng, std::size_t dimension) {
    Vector out(dimension);
    for (std::size_t j = 0; j < dimension; ++j) out[j] = rng.unit() * 2.0 - 1.0;
    return out;
}

bool bitwise_equal(double a, double b) {
    std::uint64_t ba = 0;
    std::uint64_t bb = 0;
    std::memcpy(&ba, &a, sizeof ba);
    std::memcpy(&bb, &b, sizeof bb);
    return ba == bb;
}

Json result_json(const ScoredResult& r) {
    Json out{{"item", r.item_id}, {"score", r.score}, {"mode", std::string(to_string(r.mode))}};
    out["tf"] = r.version_used ? Json(r.version_used->time_frame) : Json(nullptr);
    return out;
}

} // namespace

Json oracle_check(std::uint64_t seed, std::size_t instances, std::size_t max_docs) {
    static const char* kGeos[] = {"US", "DE", "FR", "JP"};
    static const double kWeights[] = {1.0, 0.5, 0.001};

    std::size_t failed = 0;
    Json first_mismatch = nullptr;

    for (std::size_t instance = 0; instance < instances; ++instance) {
        SplitMix64 rng(splitmix64(seed + 0x9E3779B97F4A7C15ull * (instance + 1)));

        std::size_t dimension = 2 + rng.below(7);
        EmbeddingTypeId type{"mips", "oracle", static_cast<int>(dimension)};
        std::size_t providers = 1 + rng.below(5);
        std::size_t attrs = 3 + rng.below(8);
        std::size_t doc_count = 1 + rng.below(max_docs);
        double fallback_weight = kWeights[rng.below(3)];

        std::vector<IndexedDocument> docs;
        docs.reserve(doc_count);
        for (std::size_t d = 0; d < doc_count; ++d) {
            IndexedDocument doc;
            doc.item_id = "d" + std::to_string(1000 + d);
            doc.provider_id = "p" + std::to_string(rng.below(providers));
            if (rng.below(2) == 1) {
                std::size_t geo_count = 1 + rng.below(2);
                for (std::size_t g = 0; g < geo_count; ++g) doc.geo_targets.insert(kGeos[rng.below(4)]);
            }
            std::size_t attr_count = rng.below(4);
            for (std::size_t a = 0; a < attr_count; ++a) {
                doc.attributes[attribute_entity("t" + std::to_string(rng.below(attrs)))] =
                    rng.unit() * 2.0 - 1.0;
            }
            if (rng.below(4) != 0) {
                std::int64_t tf = 1 + static_cast<std::int64_t>(rng.below(3));
                doc.vectors[EmbeddingVersion{type, tf}] = random_vector(rng, dimension);
                if (rng.below(3) == 0) {
                    std::int64_t other = 1 + (tf % 3);
                    doc.vectors[EmbeddingVersion{type, other}] = random_vector(rng, dimension);
                }
            }
            docs.push_back(std::move(doc));
        }

        RecommendationQuery query;
        query.type_id = type;
        if (rng.below(5) != 0) {
            std::int64_t tf = 1 + static_cast<std::int64_t>(rng.below(3));
            query.user_version = EmbeddingVersion{type, tf};
            query.user_vector = random_vector(rng, dimension);
        }
        query.user_geo = rng.below(8) == 0 ? "" : kGeos[rng.below(4)];
        for (std::size_t p = 0; p < providers; ++p) {
            if (rng.below(4) == 0) query.publisher_blocked_providers.insert("p" + std::to_string(p));
        }
        std::size_t attr_count = rng.below(5);
        for (std::size_t a = 0; a < attr_count; ++a) {
            query.user_attributes[attribute_entity("t" + std::to_string(rng.below(attrs)))] =
                rng.unit() * 2.0 - 1.0;
        }
        query.k = 1 + static_cast<int>(rng.below(doc_count + 2));

        SearchEngine engine(SearchEngine::Mode::shadowing, EngineConfig{fallback_weight});
        engine.swap_generation(engine.build_generation(docs));
        QueryResult engine_result = engine.execute_query(query);

        // The oracle sees the documents in a shuffled order; ranking must
        // not depend on input order.
        std::vector<IndexedDocument> shuffled = docs;
        for (std::size_t i = shuffled.size(); i > 1; --i) {
            std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        }
        std::vector<ScoredResult> expected = brute_force_oracle(query, shuffled, fallback_weight);

        bool match = engine_result.results.size() == expected.size();
        std::size_t at = 0;
        for (std::size_t i = 0; match && i < expected.size(); ++i) {
            const ScoredResult& a = expected[i];
            const ScoredResult& b = engine_result.results[i];
            bool same = a.item_id == b.item_id && a.mode == b.mode &&
                        bitwise_equal(a.score, b.score) &&
                        a.version_used.has_value() == b.version_used.has_value() &&
                        (!a.version_used || *a.version_used == *b.version_used);
            if (!same) {
                match = false;
                at = i;
            }
        }
        if (!match) {
            failed += 1;
            if (first_mismatch.is_null()) {
                Json expected_json = Json::array();
                for (const auto& r : expected) expected_json.push_back(result_json(r));
                Json got_json = Json::array();
                for (const auto& r : engine_result.results) got_json.push_back(result_json(r));
                first_mismatch = Json{{"instance", static_cast<std::int64_t>(instance)},
                                      {"index", static_cast<std::int64_t>(at)},
                                      {"expected", expected_json},
                                      {"got", got_json}};
            }
        }
    }

    return Json{{"instances", static_cast<std::int64_t>(instances)},
                {"seed", seed},
                {"max_docs", static_cast<std::int64_t>(max_docs)},
                {"failed", static_cast<std::int64_t>(failed)},
                {"first_mismatch", first_mismatch},
                {"verdict", failed == 0 ? "pass" : "fail"}};
}

} // namespace recserve
