#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "recserve/jsonio.hpp"
#include "recserve/orchestrator.hpp"
#include "recserve/scenario.hpp"
#include "recserve/serving.hpp"

namespace recserve {

// In-process request dispatchers with the same semantics as the socket
// servers. Protocol-level failures come back as {"ok":false,"error":...}
// responses, never as exceptions.
Json handle_eo_request(EmbeddingsOrchestrator& eo, const Json& request);
Json handle_recs_request(ServingLayer& serving, const Json& request);

// Line bindings: parse one request line, return one canonical response line
// (without the trailing newline). Unparseable input yields a MalformedLine
// error response.
std::string handle_eo_line(EmbeddingsOrchestrator& eo, const std::string& line);
std::string handle_recs_line(ServingLayer& serving, const std::string& line);

// Newline-delimited JSON over a loopback stream socket: one response line
// per request line, in request order. One thread per connection.
class LineServer {
public:
    using Handler = std::function<std::string(const std::string&)>;

    // port 0 binds an ephemeral port; the chosen one is in port().
    LineServer(int port, Handler handler);
    ~LineServer();

    LineServer(const LineServer&) = delete;
    LineServer& operator=(const LineServer&) = delete;

    int port() const { return port_; }

    void serve_forever(); // blocking accept loop; returns after stop()
    void stop();

private:
    void handle_connection(int fd);
    void join_workers();

    Handler handler_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
};

// A complete in-process deployment brought up from a scenario: all trainer
// cycles run, the orchestrator polled, one full indexing pass applied. The
// store outlives every component holding a reference to it because all
// members live behind stable pointers.
struct ServingStack {
    std::unique_ptr<EmbeddingStore> store;
    std::vector<std::unique_ptr<Trainer>> trainers;
    std::unique_ptr<EmbeddingsOrchestrator> eo;
    std::unique_ptr<SearchEngine> engine;
    std::unique_ptr<Indexer> indexer;
    std::unique_ptr<ServingLayer> serving;
};

ServingStack build_serving_stack(const Scenario& scenario);

} // namespace recserve
