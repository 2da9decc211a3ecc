#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "recserve/errors.hpp"
#include "recserve/simulation.hpp"
#include "recserve/wire.hpp"

namespace {

using recserve::Json;

// Reports go to stdout (and optionally a file) in canonical form so that
// identical runs produce identical bytes.
void emit_report(const Json& report, const std::string& path) {
    std::string text = recserve::canonical_dump(report);
    if (!path.empty()) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << text << '\n';
    }
    std::cout << text << '\n';
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
    auto separator = text.find("..");
    if (separator == std::string::npos) {
        throw std::runtime_error("--seeds expects the form <from>..<to>, got '" + text + "'");
    }
    return {std::stoull(text.substr(0, separator)), std::stoull(text.substr(separator + 2))};
}

recserve::ServingStack stack_for_serving(const std::string& scenario_path) {
    if (!scenario_path.empty()) {
        return recserve::build_serving_stack(recserve::Scenario::load_file(scenario_path));
    }
    // No scenario: an empty deployment. Every lookup is absent and every
    // query returns zero results, but the protocol is fully live.
    recserve::ServingStack stack;
    stack.store = std::make_unique<recserve::EmbeddingStore>();
    stack.eo = std::make_unique<recserve::EmbeddingsOrchestrator>(*stack.store);
    stack.engine = std::make_unique<recserve::SearchEngine>(
        recserve::SearchEngine::Mode::shadowing, recserve::EngineConfig{1.0});
    stack.serving = std::make_unique<recserve::ServingLayer>(
        *stack.eo, *stack.engine, recserve::ModelKind::direct_direct,
        std::map<std::string, recserve::PublisherRules>{});
    return stack;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic serving simulation for versioned embedding recommendations"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string report_path;
    std::string trace_out;
    std::string trace_in;
    std::string seeds_text;
    std::uint64_t seed = 0;
    std::int64_t fault_cycle = -1;
    std::int64_t fault_step = -1;
    std::size_t instances = 1000;
    std::size_t max_docs = 200;
    int port = 0;

    CLI::App* run = app.add_subcommand("run", "run one seeded interleaving and check invariants");
    run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    run->add_option("--seed", seed, "interleaving seed")->required();
    run->add_option("--trace", trace_out, "write the event trace (NDJSON)");
    run->add_option("--report", report_path, "write the report JSON");
    run->add_option("--fault-cycle", fault_cycle, "inject a fault into this indexer cycle (0-based)");
    run->add_option("--fault-step", fault_step, "fault position within the cycle");

    CLI::App* sweep = app.add_subcommand("sweep", "run a seed range and aggregate verdicts");
    sweep->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    sweep->add_option("--seeds", seeds_text, "seed range <from>..<to>, inclusive")->required();
    sweep->add_option("--report", report_path, "write the aggregate report JSON");

    CLI::App* replay = app.add_subcommand("replay", "re-execute a trace; divergence is an error");
    replay->add_option("--trace", trace_in, "trace file from run --trace")->required();

    CLI::App* oracle = app.add_subcommand("oracle-check",
                                          "compare engine ranking against the brute-force scorer");
    oracle->add_option("--scenario", scenario_path, "scenario JSON file (supplies the seed)")
        ->required();
    oracle->add_option("--instances", instances, "number of random instances");
    oracle->add_option("--max-docs", max_docs, "maximum documents per instance");

    CLI::App* serve_eo = app.add_subcommand("serve-eo", "orchestrator line protocol over a socket");
    serve_eo->add_option("--port", port, "listen port (0 = ephemeral)")->required();
    serve_eo->add_option("--scenario", scenario_path, "bring up a deployment from this scenario");

    CLI::App* serve_recs = app.add_subcommand("serve-recs", "recommendation line protocol over a socket");
    serve_recs->add_option("--port", port, "listen port (0 = ephemeral)")->required();
    serve_recs->add_option("--scenario", scenario_path, "bring up a deployment from this scenario");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            if ((fault_cycle >= 0) != (fault_step >= 0)) {
                throw std::runtime_error("--fault-cycle and --fault-step must be given together");
            }
            recserve::Scenario scenario = recserve::Scenario::load_file(scenario_path);
            recserve::RunOptions options;
            if (fault_cycle >= 0) {
                options.fault = recserve::FaultSpec{static_cast<std::size_t>(fault_cycle),
                                                    static_cast<std::size_t>(fault_step)};
            }
            recserve::SimulationResult result = recserve::run_scenario(scenario, seed, options);
            if (!trace_out.empty()) {
                std::ofstream out(trace_out);
                if (!out) throw std::runtime_error("cannot write " + trace_out);
                recserve::write_trace(out, scenario, seed, result);
            }
            emit_report(result.report, report_path);
            return result.passed ? 0 : 1;
        }

        if (sweep->parsed()) {
            recserve::Scenario scenario = recserve::Scenario::load_file(scenario_path);
            auto [seed_from, seed_to] = parse_seed_range(seeds_text);
            Json aggregate = recserve::sweep_scenario(scenario, seed_from, seed_to);
            emit_report(aggregate, report_path);
            return aggregate.at("verdict") == "pass" ? 0 : 1;
        }

        if (replay->parsed()) {
            std::ifstream in(trace_in);
            if (!in) throw std::runtime_error("cannot open " + trace_in);
            Json verdict = recserve::replay_trace(in);
            emit_report(verdict, "");
            return 0;
        }

        if (oracle->parsed()) {
            recserve::Scenario scenario = recserve::Scenario::load_file(scenario_path);
            Json verdict = recserve::oracle_check(scenario.interleaving_seed, instances, max_docs);
            emit_report(verdict, "");
            return verdict.at("verdict") == "pass" ? 0 : 1;
        }

        if (serve_eo->parsed() || serve_recs->parsed()) {
            recserve::ServingStack stack = stack_for_serving(scenario_path);
            recserve::LineServer::Handler handler;
            if (serve_eo->parsed()) {
                handler = [&stack](const std::string& line) {
                    return recserve::handle_eo_line(*stack.eo, line);
                };
            } else {
                handler = [&stack](const std::string& line) {
                    return recserve::handle_recs_line(*stack.serving, line);
                };
            }
            recserve::LineServer server(port, std::move(handler));
            std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
            server.serve_forever();
            return 0;
        }
    } catch (const recserve::RecError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == recserve::Errc::ReplayDivergence ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
