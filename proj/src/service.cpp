#include "rac/service.hpp"

#include <chrono>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>

#include "rac/text.hpp"

namespace rac::app {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::MalformedRecord:
        case ErrorCode::UnknownLabel:
        case ErrorCode::EmptyText:
        case ErrorCode::UsageError:
        case ErrorCode::ConfigError:
            return 400;
        case ErrorCode::DuplicateId:
        case ErrorCode::DuplicateDocId:
            return 409;
        case ErrorCode::EmptyIndex:
        case ErrorCode::ComponentMissing:
        case ErrorCode::ReindexInProgress:
            return 503;
        case ErrorCode::ProviderUnavailable:
            return 502;
        default:
            return 500;
    }
}

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

json parse_body(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("request body is not JSON: {}", e.what()));
    }
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
    return j;
}

std::optional<std::string> optional_field(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw Error(ErrorCode::InvalidArgument, fmt::format("'{}' must be a string", key));
    return j.at(key).get<std::string>();
}

pipeline::Mode mode_from_request(const json& j, int default_shots) {
    const auto name = optional_field(j, "mode").value_or("rac");
    std::optional<int> shots;
    if (j.contains("shots") && !j.at("shots").is_null()) {
        if (!j.at("shots").is_number_integer()) throw Error(ErrorCode::InvalidArgument, "'shots' must be an integer");
        shots = j.at("shots").get<int>();
    }
    if (name == "rac") return pipeline::Mode::rac(shots.value_or(default_shots));
    auto mode = pipeline::Mode::parse(name);
    if (shots && (!mode.uses_retrieval() || *shots != mode.shots())) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("'shots' conflicts with mode '{}'", name));
    }
    return mode;
}

json exemplars_json(const pipeline::PredictionTrace& t) {
    json out = json::array();
    for (const auto& e : t.exemplars) {
        out.push_back({{"doc_id", e.doc_id},
                       {"label", std::string(to_string(e.label))},
                       {"similarity", e.similarity},
                       {"rerank_score", e.rerank_score},
                       {"origin", std::string(retrieval::to_string(e.origin))}});
    }
    return out;
}

// Clears the flag on every exit path.
struct FlagGuard {
    std::atomic<bool>& flag;
    ~FlagGuard() { flag = false; }
};

}  // namespace

TraceStore::TraceStore(fs::path dir) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    prefix_ = fmt::format("tr-{:x}", now);
    if (!dir.empty()) {
        fs::create_directories(dir);
        file_ = dir / "traces.jsonl";
    }
}

std::string TraceStore::next_id() { return fmt::format("{}-{:06d}", prefix_, ++counter_); }

std::string TraceStore::put(pipeline::PredictionTrace trace) {
    if (trace.trace_id.empty()) trace.trace_id = next_id();
    auto id = trace.trace_id;
    std::lock_guard lock(mutex_);
    if (!file_.empty()) {
        std::ofstream out(file_, std::ios::app);
        out << pipeline::to_json(trace, true).dump() << '\n';
    }
    traces_.insert_or_assign(id, std::move(trace));
    return id;
}

std::optional<pipeline::PredictionTrace> TraceStore::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    if (auto it = traces_.find(id); it != traces_.end()) return it->second;
    if (file_.empty() || !fs::exists(file_)) return std::nullopt;
    std::ifstream in(file_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find(id) == std::string::npos) continue;
        const auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("trace_id", "") == id) return pipeline::trace_from_json(j);
    }
    return std::nullopt;
}

Service::Service(AppConfig cfg, Providers providers, std::shared_ptr<IndexBundle> bundle)
    : cfg_(std::move(cfg)),
      providers_(std::move(providers)),
      traces_(cfg_.service.trace_dir),
      bundle_(std::move(bundle)) {}

Service::~Service() { stop(); }

std::shared_ptr<IndexBundle> Service::bundle() const {
    std::lock_guard lock(bundle_mutex_);
    return bundle_;
}

ServiceResponse Service::record_failure(const std::string& op, const std::exception& e, std::string doc_id) {
    auto body = error_json(e);
    pipeline::PredictionTrace t;
    t.doc_id = std::move(doc_id);
    t.mode = op;
    t.error = pipeline::TraceError{body["error"]["code"], body["error"]["message"]};
    body["trace_id"] = traces_.put(std::move(t));
    const auto* err = dynamic_cast<const Error*>(&e);
    return {err ? http_status(err->code()) : 500, std::move(body)};
}

ServiceResponse Service::classify(const std::string& body) {
    try {
        const auto j = parse_body(body);
        const auto text = optional_field(j, "text");
        if (!text) throw Error(ErrorCode::InvalidArgument, "'text' is required");
        if (text::trim(*text).empty()) throw Error(ErrorCode::EmptyText, "'text' is empty");
        const auto mode = mode_from_request(j, cfg_.retrieval.shots);

        const auto trace_id = traces_.next_id();
        corpus::Document doc;
        doc.id = optional_field(j, "id").value_or("query-" + trace_id);
        doc.title = optional_field(j, "title").value_or("");
        doc.date = optional_field(j, "date");
        doc.sender = optional_field(j, "from");
        doc.recipient = optional_field(j, "to");
        doc.body = *text;
        if (auto gold = optional_field(j, "gold")) doc.label = corpus::normalize_label(*gold);

        const auto current = bundle();
        if (mode.uses_retrieval() && (!current || current->index->empty())) {
            throw Error(ErrorCode::EmptyIndex,
                        "no index is loaded; start the service with an index or POST /v1/documents first");
        }
        pipeline::Components components{providers_.embedder, providers_.reranker, providers_.llm,
                                        current ? current->index : nullptr, current ? current->store : nullptr};
        auto trace = pipeline::classify(doc, mode, components, cfg_.pipeline());
        trace.trace_id = trace_id;

        json out = {{"label", trace.predicted ? json(std::string(to_string(*trace.predicted))) : json(nullptr)},
                    {"trace_id", trace_id},
                    {"mode", trace.mode},
                    {"exemplars", exemplars_json(trace)}};
        // Prompt order is round-robin by class, so the best match is reported separately.
        json top = nullptr;
        for (const auto& e : out["exemplars"]) {
            if (top.is_null() || e["similarity"].get<double>() > top["similarity"].get<double>()) top = e;
        }
        out["top_exemplar"] = std::move(top);
        json missing = json::array();
        for (auto l : trace.missing_classes) missing.push_back(std::string(to_string(l)));
        out["missing_classes"] = std::move(missing);
        if (trace.error) out["error"] = {{"code", trace.error->code}, {"message", trace.error->message}};
        traces_.put(std::move(trace));
        return {200, std::move(out)};
    } catch (const std::exception& e) {
        return record_failure("classify", e);
    }
}

ServiceResponse Service::add_document(const std::string& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string doc_id;
    try {
        const auto j = parse_body(body);
        auto parsed = corpus::parse_corpus_text(j.dump(), corpus::Format::Jsonl);
        if (!parsed.issues.empty()) throw CorpusError(std::move(parsed.issues));
        auto doc = std::move(parsed.documents.at(0));
        doc_id = doc.id;
        if (!doc.label) throw Error(ErrorCode::UnknownLabel, fmt::format("document '{}' has no label", doc.id));
        if (doc.partition == Partition::Test) {
            throw Error(ErrorCode::InvalidArgument, "test-partition documents cannot be indexed");
        }

        std::lock_guard write(write_mutex_);
        if (reindexing_) throw Error(ErrorCode::ReindexInProgress, "reindex in progress; retry the write after the swap");
        auto current = bundle();
        if (!current) {
            current = std::make_shared<IndexBundle>(IndexBundle{std::make_shared<index::HnswIndex>(cfg_.hnsw),
                                                                std::make_shared<corpus::DocumentStore>()});
            std::lock_guard lock(bundle_mutex_);
            bundle_ = current;
        }
        if (current->store->contains(doc.id) || current->index->contains(doc.id)) {
            throw Error(ErrorCode::DuplicateDocId, fmt::format("document '{}' is already indexed", doc.id));
        }
        // Embed before touching either structure so a provider failure leaves both unchanged.
        auto vec = providers::embed_batch(std::vector<std::string>{doc.body}, providers::EmbedRole::Passage,
                                          *providers_.embedder, 1);
        std::string source;
        for (const auto& s : doc.source_ids) source += (source.empty() ? "" : " ") + s;
        current->store->add(doc);
        current->index->insert({doc.id, std::move(vec.at(0)),
                                {*doc.label, doc.provenance,
                                 static_cast<std::uint32_t>(text::count_tokens(doc.body)), source}});
        if (!cfg_.index_path.empty()) corpus::append_jsonl(documents_path(cfg_.index_path), {doc});

        pipeline::PredictionTrace t;
        t.doc_id = doc.id;
        t.mode = "documents";
        t.gold = doc.label;
        t.timings_ms["total"] = ms_since(start);
        const auto size = current->index->size();
        return {201, {{"id", doc.id}, {"index_size", size}, {"trace_id", traces_.put(std::move(t))}}};
    } catch (const std::exception& e) {
        return record_failure("documents", e, doc_id);
    }
}

ServiceResponse Service::reindex() {
    const auto start = std::chrono::steady_clock::now();
    try {
        std::vector<corpus::Document> docs;
        {
            std::lock_guard write(write_mutex_);
            if (reindexing_.exchange(true)) throw Error(ErrorCode::ReindexInProgress, "a reindex is already running");
            if (auto current = bundle()) docs = current->store->snapshot();
        }
        FlagGuard guard{reindexing_};
        // Readers keep using the old bundle until the handle swap below.
        auto fresh = std::make_shared<IndexBundle>(build_bundle(docs, *providers_.embedder, cfg_.hnsw));
        if (before_swap_) before_swap_();
        {
            std::lock_guard lock(bundle_mutex_);
            bundle_ = fresh;
        }
        if (!cfg_.index_path.empty()) save_bundle(*fresh, cfg_.index_path);

        pipeline::PredictionTrace t;
        t.mode = "reindex";
        t.timings_ms["total"] = ms_since(start);
        return {200, {{"status", "ok"}, {"index_size", fresh->index->size()}, {"trace_id", traces_.put(std::move(t))}}};
    } catch (const std::exception& e) {
        return record_failure("reindex", e);
    }
}

ServiceResponse Service::health() const {
    const auto current = bundle();
    return {200,
            {{"status", "ok"},
             {"index_size", current ? current->index->size() : 0},
             {"index_loaded", current != nullptr},
             {"reindexing", reindexing_.load()}}};
}

ServiceResponse Service::get_trace(const std::string& id) const {
    if (auto t = traces_.get(id)) return {200, pipeline::to_json(*t, true)};
    return {404, {{"error", {{"code", "NotFound"}, {"message", fmt::format("no trace '{}'", id)}}}}};
}

void Service::install_routes() {
    auto reply = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server_->Post("/v1/classify", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, classify(req.body));
    });
    server_->Post("/v1/documents", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, add_document(req.body));
    });
    server_->Post("/v1/reindex", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, reindex());
    });
    server_->Get("/v1/health", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, health());
    });
    server_->Get(R"(/v1/traces/([A-Za-z0-9._-]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, get_trace(req.matches[1]));
    });
}

int Service::start(const std::string& host, int port) {
    if (server_) throw Error(ErrorCode::UsageError, "service already started");
    server_ = std::make_unique<httplib::Server>();
    install_routes();
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        server_.reset();
        throw Error(ErrorCode::ConfigError, fmt::format("cannot bind {}:{}", host, port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Service::wait() {
    if (thread_.joinable()) thread_.join();
}

void Service::stop() {
    if (server_) server_->stop();
    if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

}  // namespace rac::app
