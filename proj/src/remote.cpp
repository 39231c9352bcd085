#include "rac/remote.hpp"

#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace rac::providers {

using nlohmann::json;

void ProviderConfig::validate() const {
    if (batch_size < 1) throw Error(ErrorCode::ConfigError, "provider batch_size must be >= 1");
    if (timeout_ms <= 0) throw Error(ErrorCode::ConfigError, "provider timeout_ms must be > 0");
    if (max_retries < 0) throw Error(ErrorCode::ConfigError, "provider max_retries must be >= 0");
    if (dim < 2) throw Error(ErrorCode::ConfigError, "provider dim must be >= 2");
    if (kind == Kind::Remote) {
        if (endpoint.empty()) throw Error(ErrorCode::ConfigError, "remote provider needs an endpoint");
        if (model.empty()) throw Error(ErrorCode::ConfigError, "remote provider needs a model identifier");
        if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
            throw Error(ErrorCode::ConfigError, fmt::format("endpoint '{}' must start with http:// or https://", endpoint));
        }
    }
}

ProviderConfig provider_config_from_json(const json& j) {
    ProviderConfig cfg;
    try {
        const auto kind = j.value("kind", std::string("local-test"));
        if (kind == "remote") {
            cfg.kind = ProviderConfig::Kind::Remote;
        } else if (kind == "local-test") {
            cfg.kind = ProviderConfig::Kind::LocalTest;
        } else {
            throw Error(ErrorCode::ConfigError, fmt::format("unknown provider kind '{}'", kind));
        }
        cfg.endpoint = j.value("endpoint", cfg.endpoint);
        cfg.model = j.value("model", cfg.model);
        cfg.auth_env = j.value("auth_env", cfg.auth_env);
        cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
        cfg.max_retries = j.value("max_retries", cfg.max_retries);
        cfg.backoff_ms = j.value("backoff_ms", cfg.backoff_ms);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.dim = j.value("dim", cfg.dim);
        if (j.contains("prior")) {
            auto prior = label_from_name(j.at("prior").get<std::string>());
            if (!prior) throw Error(ErrorCode::ConfigError, "provider prior must be a canonical label name");
            cfg.prior = *prior;
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("provider config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

json to_json(const ProviderConfig& cfg) {
    json j = {{"kind", cfg.kind == ProviderConfig::Kind::Remote ? "remote" : "local-test"},
              {"timeout_ms", cfg.timeout_ms},
              {"max_retries", cfg.max_retries},
              {"backoff_ms", cfg.backoff_ms},
              {"batch_size", cfg.batch_size},
              {"dim", cfg.dim},
              {"prior", std::string(to_string(cfg.prior))}};
    if (!cfg.endpoint.empty()) j["endpoint"] = cfg.endpoint;
    if (!cfg.model.empty()) j["model"] = cfg.model;
    if (!cfg.auth_env.empty()) j["auth_env"] = cfg.auth_env;
    return j;
}

namespace {

// Splits "https://host:port/base" into the client origin and a path prefix.
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    const auto path_start = endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, ""};
    std::string base = endpoint.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();
    return {endpoint.substr(0, path_start), base};
}

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(const ProviderConfig& cfg) : timeout_ms_(cfg.timeout_ms) {
        std::tie(origin_, base_path_) = split_endpoint(cfg.endpoint);
        if (!cfg.auth_env.empty()) {
            if (const char* token = std::getenv(cfg.auth_env.c_str())) token_ = token;
        }
    }

    json post(const std::string& path, const json& body) const override {
        // One client per call keeps concurrent requests independent.
        httplib::Client client(origin_);
        const auto timeout = std::chrono::milliseconds(timeout_ms_);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
        auto res = client.Post(base_path_ + path, headers, body.dump(), "application/json");
        if (!res) {
            throw TransportError(fmt::format("POST {}{}: {}", origin_, path, httplib::to_string(res.error())));
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error(ErrorCode::ProviderUnavailable, fmt::format("POST {}{}: HTTP {}", origin_, path, res->status));
        }
        try {
            return json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw Error(ErrorCode::ProviderUnavailable, fmt::format("POST {}{}: invalid JSON reply", origin_, path));
        }
    }

private:
    std::string origin_;
    std::string base_path_;
    std::string token_;
    int timeout_ms_;
};

RetryPolicy policy_of(const ProviderConfig& cfg) {
    return RetryPolicy{cfg.max_retries, std::chrono::milliseconds(cfg.backoff_ms)};
}

template <typename F>
auto read_reply(const char* what, F&& extract) {
    try {
        return extract();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ProviderUnavailable, fmt::format("malformed {} reply: {}", what, e.what()));
    }
}

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(const ProviderConfig& cfg) {
    return std::make_shared<HttplibTransport>(cfg);
}

json call_with_retries(const RetryPolicy& policy, const std::function<json()>& call) {
    auto delay = policy.base_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return call();
        } catch (const TransportError&) {
            if (attempt >= policy.max_retries) throw;
        }
        if (delay.count() > 0) std::this_thread::sleep_for(delay);
        delay *= 2;
    }
}

RemoteEmbedder::RemoteEmbedder(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

std::vector<std::vector<double>> RemoteEmbedder::embed(std::span<const std::string> texts) const {
    const json request = {{"model", cfg_.model}, {"inputs", std::vector<std::string>(texts.begin(), texts.end())}};
    const json reply = call_with_retries(policy_of(cfg_), [&] { return transport_->post("/embed", request); });
    return read_reply("embed", [&] { return reply.at("vectors").get<std::vector<std::vector<double>>>(); });
}

RemoteReranker::RemoteReranker(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

std::vector<double> RemoteReranker::score(std::string_view query, std::span<const std::string> passages) const {
    const json request = {{"model", cfg_.model},
                          {"query", std::string(query)},
                          {"passages", std::vector<std::string>(passages.begin(), passages.end())}};
    const json reply = call_with_retries(policy_of(cfg_), [&] { return transport_->post("/rerank", request); });
    auto scores = read_reply("rerank", [&] { return reply.at("scores").get<std::vector<double>>(); });
    if (scores.size() != passages.size()) {
        throw Error(ErrorCode::ProviderUnavailable,
                    fmt::format("reranker returned {} scores for {} passages", scores.size(), passages.size()));
    }
    return scores;
}

RemoteCompletionModel::RemoteCompletionModel(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

std::string RemoteCompletionModel::complete(const std::string& prompt) const {
    const json request = {{"model", cfg_.model}, {"prompt", prompt}, {"temperature", 0}};
    const json reply = call_with_retries(policy_of(cfg_), [&] { return transport_->post("/complete", request); });
    return read_reply("complete", [&] { return reply.at("text").get<std::string>(); });
}

std::shared_ptr<const Embedder> make_embedder(const ProviderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == ProviderConfig::Kind::LocalTest) return std::make_shared<HashEmbedder>(cfg.dim);
    return std::make_shared<RemoteEmbedder>(cfg, make_http_transport(cfg));
}

std::shared_ptr<const Reranker> make_reranker(const ProviderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == ProviderConfig::Kind::LocalTest) return std::make_shared<LexicalReranker>();
    return std::make_shared<RemoteReranker>(cfg, make_http_transport(cfg));
}

std::shared_ptr<const CompletionModel> make_completion_model(const ProviderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == ProviderConfig::Kind::LocalTest) return std::make_shared<MockCompletionModel>(cfg.prior);
    return std::make_shared<RemoteCompletionModel>(cfg, make_http_transport(cfg));
}

}  // namespace rac::providers
