#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "rac/app.hpp"
#include "rac/pipeline.hpp"

namespace httplib {
class Server;
}

namespace rac::app {

/// HTTP status for a library error code.
int http_status(ErrorCode code) noexcept;

/// Thread-safe trace registry, optionally mirrored to <dir>/traces.jsonl.
class TraceStore {
public:
    explicit TraceStore(std::filesystem::path dir = {});

    /// Assigns a fresh trace_id when the trace has none; returns the id.
    std::string put(pipeline::PredictionTrace trace);
    /// Falls back to the persisted file for traces from earlier processes.
    std::optional<pipeline::PredictionTrace> get(const std::string& id) const;
    std::string next_id();

private:
    std::filesystem::path file_;
    std::string prefix_;
    std::atomic<std::uint64_t> counter_{0};
    mutable std::mutex mutex_;
    std::map<std::string, pipeline::PredictionTrace> traces_;
};

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// Classification service over a swappable index. Endpoint handlers are plain
/// functions of the request body so they can be exercised without sockets.
class Service {
public:
    /// `bundle` may be null: classification in rac modes then answers 503 until
    /// a document is added. With cfg.index_path set, inserts and reindexes persist.
    Service(AppConfig cfg, Providers providers, std::shared_ptr<IndexBundle> bundle);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    ServiceResponse classify(const std::string& body);
    ServiceResponse add_document(const std::string& body);
    ServiceResponse reindex();
    ServiceResponse health() const;
    ServiceResponse get_trace(const std::string& id) const;

    /// Runs between building the new index and swapping it in (tests use it to
    /// observe the swap window).
    void set_before_swap(std::function<void()> hook) { before_swap_ = std::move(hook); }

    /// Binds (port 0 picks a free port) and serves on a background thread.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread.
    void wait();
    void stop();

    std::shared_ptr<IndexBundle> bundle() const;

private:
    void install_routes();
    ServiceResponse record_failure(const std::string& op, const std::exception& e, std::string doc_id = {});

    AppConfig cfg_;
    Providers providers_;
    TraceStore traces_;

    mutable std::mutex bundle_mutex_;
    std::shared_ptr<IndexBundle> bundle_;

    std::mutex write_mutex_;
    std::atomic<bool> reindexing_{false};
    std::function<void()> before_swap_;

    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace rac::app
