#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "rac/error.hpp"
#include "rac/providers.hpp"

namespace rac::providers {

struct ProviderConfig {
    enum class Kind { Remote, LocalTest };

    Kind kind = Kind::LocalTest;
    std::string endpoint;  // e.g. "https://models.internal:8443/v1"
    std::string model;
    std::string auth_env;  // name of the env var holding the bearer token
    int timeout_ms = 30000;
    int max_retries = 3;
    int backoff_ms = 200;  // first retry delay; doubles per attempt
    std::size_t batch_size = kDefaultBatchSize;
    std::size_t dim = kDefaultEmbeddingDim;
    Label prior = Label::Unclassified;  // mock LLM fallback for 0-shot prompts

    /// Throws ConfigError.
    void validate() const;
};

ProviderConfig provider_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProviderConfig& cfg);

/// Connection-level failure (refused, timed out, reset). The only retryable kind.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(ErrorCode::ProviderUnavailable, what) {}
};

/// POSTs a JSON body to `endpoint + path`. Throws TransportError for connection
/// problems and Error(ProviderUnavailable) for non-2xx replies or bad JSON.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual nlohmann::json post(const std::string& path, const nlohmann::json& body) const = 0;
};

std::shared_ptr<HttpTransport> make_http_transport(const ProviderConfig& cfg);

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{200};
};

/// Runs `call`, retrying TransportError with exponential backoff. Other errors propagate at once.
nlohmann::json call_with_retries(const RetryPolicy& policy, const std::function<nlohmann::json()>& call);

class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport);
    std::size_t dimension() const override { return cfg_.dim; }
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

private:
    ProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
};

class RemoteReranker final : public Reranker {
public:
    RemoteReranker(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport);
    std::vector<double> score(std::string_view query, std::span<const std::string> passages) const override;

private:
    ProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
};

/// Sampling temperature is always 0.
class RemoteCompletionModel final : public CompletionModel {
public:
    RemoteCompletionModel(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport);
    std::string complete(const std::string& prompt) const override;

private:
    ProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
};

std::shared_ptr<const Embedder> make_embedder(const ProviderConfig& cfg);
std::shared_ptr<const Reranker> make_reranker(const ProviderConfig& cfg);
std::shared_ptr<const CompletionModel> make_completion_model(const ProviderConfig& cfg);

}  // namespace rac::providers
