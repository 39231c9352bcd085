#include <doctest.h>

#include <cmath>
#include <mutex>

#include "rac/error.hpp"
#include "rac/prompt_tags.hpp"
#include "rac/providers.hpp"
#include "rac/remote.hpp"

using namespace rac;
using namespace rac::providers;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an rac::Error");
    return ErrorCode::InvalidArgument;
}

// Records the size of every provider call.
class CountingEmbedder final : public Embedder {
public:
    explicit CountingEmbedder(std::size_t dim, std::size_t reported_dim = 0)
        : dim_(dim), reported_(reported_dim ? reported_dim : dim) {}
    std::size_t dimension() const override { return reported_; }
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override {
        std::lock_guard lock(mutex_);
        calls.push_back(texts.size());
        seen.insert(seen.end(), texts.begin(), texts.end());
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            std::vector<double> v(dim_, 0.0);
            v[i % dim_] = 3.0;  // deliberately not unit length
            v[(i + 1) % dim_] = 4.0;
            out.push_back(std::move(v));
        }
        return out;
    }
    mutable std::vector<std::size_t> calls;
    mutable std::vector<std::string> seen;

private:
    std::size_t dim_;
    std::size_t reported_;
    mutable std::mutex mutex_;
};

std::string classification_prompt(const std::vector<std::pair<Label, double>>& exemplars) {
    std::string p = "### TASK\nClassify.\n";
    if (!exemplars.empty()) {
        p += tags::examples_section_header(exemplars.size()) + "\n";
        for (std::size_t i = 0; i < exemplars.size(); ++i) {
            p += tags::exemplar_header(i + 1, exemplars[i].first, exemplars[i].second) + "\nsome body\n\n";
        }
    }
    p += "### OUTPUT FORMAT\n" + std::string(tags::kOutputFormatLine) + "\n";
    return p;
}

class FakeTransport final : public HttpTransport {
public:
    json post(const std::string& path, const json& body) const override {
        std::lock_guard lock(mutex_);
        paths.push_back(path);
        bodies.push_back(body);
        if (transport_failures > 0) {
            --transport_failures;
            throw TransportError("connection refused");
        }
        if (content_failure) throw Error(ErrorCode::ProviderUnavailable, "HTTP 400");
        return reply;
    }
    mutable std::vector<std::string> paths;
    mutable std::vector<json> bodies;
    mutable int transport_failures = 0;
    bool content_failure = false;
    json reply;

private:
    mutable std::mutex mutex_;
};

ProviderConfig remote_cfg() {
    ProviderConfig cfg;
    cfg.kind = ProviderConfig::Kind::Remote;
    cfg.endpoint = "http://127.0.0.1:1";
    cfg.model = "m";
    cfg.dim = 2;
    cfg.backoff_ms = 0;
    return cfg;
}

}  // namespace

TEST_CASE("prefix_text") {
    CHECK(prefix_text("abc", EmbedRole::Passage) == "passage: abc");
    CHECK(prefix_text("abc", EmbedRole::Query) == "query: abc");
    CHECK(code_of([] { prefix_text("", EmbedRole::Passage); }) == ErrorCode::EmptyText);
    CHECK(strip_role_prefix("query: abc") == "abc");
    CHECK(strip_role_prefix("abc") == "abc");
}

TEST_CASE("unit_normalize") {
    const auto v = unit_normalize(std::vector<double>{3.0, 4.0});
    CHECK(v.values()[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(v.values()[1] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(std::abs(v.norm() - 1.0) <= 1e-6);
    CHECK(code_of([] { unit_normalize(std::vector<double>{0.0, 0.0}); }) == ErrorCode::ZeroVector);

    const auto e1 = unit_normalize(std::vector<double>{1.0, 0.0, 0.0});
    CHECK(unit_normalize(std::vector<double>{1.0, 0.0, 0.0}) == e1);
    CHECK(e1.values()[0] == 1.0f);
    CHECK(EmbeddingVector::normalize(e1.values()) == e1);
}

TEST_CASE("embed_batch") {
    SUBCASE("chunks provider calls") {
        CountingEmbedder emb(4);
        std::vector<std::string> texts;
        for (int i = 0; i < 130; ++i) texts.push_back("t" + std::to_string(i));
        const auto out = embed_batch(texts, EmbedRole::Passage, emb, 64);
        CHECK(emb.calls == std::vector<std::size_t>{64, 64, 2});
        REQUIRE(out.size() == 130);
        for (const auto& v : out) CHECK(std::abs(v.norm() - 1.0) <= 1e-6);
        // Order preserved, every text prefixed.
        CHECK(emb.seen.front() == "passage: t0");
        CHECK(emb.seen.back() == "passage: t129");
        CHECK(out[1].values()[1] == doctest::Approx(0.6));
    }
    SUBCASE("dimension contract") {
        CountingEmbedder emb(512, 1024);
        std::vector<std::string> texts{"a"};
        CHECK(code_of([&] { embed_batch(texts, EmbedRole::Query, emb); }) == ErrorCode::DimensionMismatch);
    }
    SUBCASE("hash embedder is deterministic and role-aligned") {
        HashEmbedder emb(64);
        std::vector<std::string> texts{"alpha beta", "alpha beta", "gamma"};
        const auto a = embed_batch(texts, EmbedRole::Passage, emb, 2);
        CHECK(a[0] == a[1]);
        const auto q = embed_one("alpha beta", EmbedRole::Query, emb);
        CHECK(q == a[0]);
    }
}

TEST_CASE("hash_embed") {
    CHECK(hash_embed("some text here", 1024) == hash_embed("some text here", 1024));
    CHECK(hash_embed("Some TEXT", 1024) == hash_embed("some text", 1024));
    CHECK(code_of([] { hash_embed("   ", 16); }) == ErrorCode::ZeroVector);
    CHECK(code_of([] { hash_embed("a", 1); }) == ErrorCode::InvalidArgument);

    // "a a" accumulates 2 in one bucket, "a" 1 in the same bucket: both normalize to the same one-hot.
    const auto aa = hash_embed("a a", 1024);
    const auto a = hash_embed("a", 1024);
    CHECK(aa.dot(a) == doctest::Approx(1.0).epsilon(1e-9));

    // Disjoint vocabularies: the cosine is computed directly from the two vectors.
    const std::vector<std::pair<std::string, std::string>> pairs{
        {"embassy cable regarding trade", "weather report sunny skies"},
        {"one two three four five six seven eight", "nine ten eleven twelve thirteen fourteen fifteen sixteen"},
        {"minister visit", "harbor fishing quota dispute"},
    };
    for (const auto& [x, y] : pairs) {
        const auto vx = hash_embed(x, 1024);
        const auto vy = hash_embed(y, 1024);
        double dot = 0.0;
        for (std::size_t i = 0; i < 1024; ++i) dot += static_cast<double>(vx.values()[i]) * vy.values()[i];
        CHECK(std::abs(dot) < 0.2);
    }
}

TEST_CASE("lexical_rerank_score") {
    CHECK(lexical_rerank_score("a b", "a b") == 1.0);
    CHECK(lexical_rerank_score("a b", "c d") == 0.0);
    // |{b}| / |{a, b, c}|
    CHECK(lexical_rerank_score("a b", "b c") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(lexical_rerank_score("", "") == 0.0);
    CHECK(lexical_rerank_score("A B", "a b b") == 1.0);
    LexicalReranker r;
    std::vector<std::string> passages{"a b", "c"};
    CHECK(r.score("a b", passages) == std::vector<double>{1.0, 0.0});
}

TEST_CASE("mock_complete") {
    CHECK(mock_complete(classification_prompt({{Label::Secret, 0.9}, {Label::Confidential, 0.5}, {Label::Unclassified, 0.4}})) ==
          "LABEL: Secret");
    CHECK(mock_complete(classification_prompt({})) == "LABEL: Unclassified");
    CHECK(mock_complete(classification_prompt({}), Label::Secret) == "LABEL: Secret");
    CHECK(mock_complete(classification_prompt({{Label::Confidential, 0.5}, {Label::Secret, 0.5}})) ==
          "LABEL: Confidential");
    CHECK(mock_complete(classification_prompt({{Label::Secret, 0.5}, {Label::Confidential, 0.5}})) == "LABEL: Secret");

    const std::string broken = tags::examples_section_header(3) + "\nEXAMPLE 1 Secret\n";
    CHECK(code_of([&] { mock_complete(broken); }) == ErrorCode::UnparseablePrompt);

    SUBCASE("generation prompts are answered deterministically") {
        const std::string gen = std::string(tags::kReferenceMarker) + "\n" + tags::reference_header(1) +
                                "\nalpha beta gamma delta\n" + tags::reference_header(2) + "\nepsilon zeta eta theta\n" +
                                std::string(tags::kGenerationMarker) + " (attempt 1)\nWrite.\n";
        MockCompletionModel llm;
        const auto a = llm.complete(gen);
        CHECK(a == llm.complete(gen));
        CHECK_FALSE(a.empty());
        CHECK(a.find("LABEL:") == std::string::npos);
    }
}

TEST_CASE("exemplar tags round-trip") {
    for (Label l : kAllLabels) {
        const auto line = tags::exemplar_header(7, l, 0.123456);
        const auto tag = tags::parse_exemplar_header(line);
        REQUIRE(tag);
        CHECK(tag->index == 7);
        CHECK(tag->label == l);
        CHECK(tag->similarity == doctest::Approx(0.1235));
    }
    CHECK(tags::exemplar_header(1, Label::Secret, -0.5) == "EXAMPLE [1] | LABEL: Secret | SIM: -0.5000");
    CHECK_FALSE(tags::parse_exemplar_header("EXAMPLE [x] | LABEL: Secret | SIM: 1").has_value());
    CHECK(tags::parse_examples_section_header(tags::examples_section_header(9)) == 9u);
}

TEST_CASE("remote providers speak the JSON contract") {
    auto transport = std::make_shared<FakeTransport>();

    SUBCASE("embed") {
        transport->reply = {{"vectors", {{3.0, 4.0}, {1.0, 0.0}}}};
        RemoteEmbedder emb(remote_cfg(), transport);
        std::vector<std::string> texts{"x", "y"};
        const auto out = embed_batch(texts, EmbedRole::Passage, emb);
        CHECK(transport->paths == std::vector<std::string>{"/embed"});
        CHECK(transport->bodies[0] == json{{"model", "m"}, {"inputs", {"passage: x", "passage: y"}}});
        CHECK(out[0].values()[0] == doctest::Approx(0.6));
    }
    SUBCASE("rerank") {
        transport->reply = {{"scores", {0.25, 0.75}}};
        RemoteReranker rr(remote_cfg(), transport);
        std::vector<std::string> passages{"p1", "p2"};
        CHECK(rr.score("q", passages) == std::vector<double>{0.25, 0.75});
        CHECK(transport->bodies[0] == json{{"model", "m"}, {"query", "q"}, {"passages", {"p1", "p2"}}});
        transport->reply = {{"scores", {0.25}}};
        CHECK(code_of([&] { rr.score("q", passages); }) == ErrorCode::ProviderUnavailable);
    }
    SUBCASE("complete pins temperature to zero") {
        transport->reply = {{"text", "LABEL: Secret"}};
        RemoteCompletionModel llm(remote_cfg(), transport);
        CHECK(llm.complete("prompt") == "LABEL: Secret");
        CHECK(transport->paths[0] == "/complete");
        CHECK(transport->bodies[0].at("temperature") == 0);
        CHECK(transport->bodies[0].at("prompt") == "prompt");
    }
    SUBCASE("transport errors are retried at most max_retries times") {
        transport->reply = {{"text", "ok"}};
        transport->transport_failures = 3;
        RemoteCompletionModel llm(remote_cfg(), transport);
        CHECK(llm.complete("p") == "ok");
        CHECK(transport->paths.size() == 4);

        transport->paths.clear();
        transport->transport_failures = 4;
        CHECK(code_of([&] { llm.complete("p"); }) == ErrorCode::ProviderUnavailable);
        CHECK(transport->paths.size() == 4);
    }
    SUBCASE("content errors are never retried") {
        transport->content_failure = true;
        RemoteCompletionModel llm(remote_cfg(), transport);
        CHECK(code_of([&] { llm.complete("p"); }) == ErrorCode::ProviderUnavailable);
        CHECK(transport->paths.size() == 1);
    }
    SUBCASE("malformed replies") {
        transport->reply = {{"unexpected", 1}};
        RemoteCompletionModel llm(remote_cfg(), transport);
        CHECK(code_of([&] { llm.complete("p"); }) == ErrorCode::ProviderUnavailable);
    }
}

TEST_CASE("provider config validation") {
    auto cfg = provider_config_from_json(json{{"kind", "local-test"}, {"dim", 256}});
    CHECK(cfg.dim == 256);
    CHECK(cfg.batch_size == 64);
    CHECK(code_of([] { provider_config_from_json(json{{"batch_size", 0}}); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { provider_config_from_json(json{{"timeout_ms", 0}}); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { provider_config_from_json(json{{"kind", "remote"}}); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { provider_config_from_json(json{{"kind", "quantum"}}); }) == ErrorCode::ConfigError);
    const auto round = provider_config_from_json(to_json(remote_cfg()));
    CHECK(round.endpoint == "http://127.0.0.1:1");
    CHECK(round.kind == ProviderConfig::Kind::Remote);
    CHECK(dynamic_cast<const HashEmbedder*>(make_embedder(cfg).get()) != nullptr);
}
