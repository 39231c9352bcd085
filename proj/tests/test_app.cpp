#include <doctest.h>

#include <chrono>
#include <future>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "rac/app.hpp"
#include "rac/cli.hpp"
#include "rac/service.hpp"
#include "test_support.hpp"

using namespace rac;
using namespace rac::app;
using nlohmann::json;

namespace {

std::vector<corpus::Document> train_docs(std::size_t per_class = 4) {
    auto docs = corpus::make_separable_corpus({.train_per_class = per_class, .test_per_class = 0});
    return docs;
}

corpus::Document labeled(std::string id, std::string body, Label label) {
    corpus::Document d;
    d.id = std::move(id);
    d.title = d.id;
    d.body = std::move(body);
    d.label = label;
    d.partition = Partition::Train;
    return d;
}

json doc_json(const corpus::Document& d) { return json::parse(corpus::to_json_line(d)); }

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("shipped default config loads and keeps the augmentation target of 1596") {
    const auto cfg = load_app_config(std::filesystem::path(RAC_SOURCE_DIR) / "config" / "default.json");
    CHECK(cfg.augment.target_count == 1596);
    CHECK(cfg.retrieval.shots == 3);
    CHECK(to_json(cfg) == to_json(AppConfig{}));
    // Remote providers validate without any network traffic.
    const auto remote = load_app_config(std::filesystem::path(RAC_SOURCE_DIR) / "config" / "remote.example.json");
    CHECK(remote.llm.kind == providers::ProviderConfig::Kind::Remote);
    CHECK(remote.llm.auth_env == "RAC_API_TOKEN");
}

TEST_CASE("config validation") {
    auto expect_config_error = [](const json& j) {
        try {
            app_config_from_json(j);
            FAIL("expected ConfigError for " << j.dump());
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ConfigError);
        }
    };
    expect_config_error({{"bogus", 1}});
    expect_config_error({{"retrieval", {{"shots", 4}}}});
    expect_config_error({{"service", {{"port", 70000}}}});
    expect_config_error({{"evaluation", {{"ci_level", 1.5}}}});
    expect_config_error({{"providers", {{"llm", {{"kind", "remote"}}}}}});
    expect_config_error({{"index_path", "/definitely/not/here/index.bin"}});
    expect_config_error(json::array());

    testing::TempDir dir;
    std::filesystem::create_directories(dir / "data");
    testing::write_file(dir / "cfg.json", R"({"index_path": "data/index.bin", "service": {"trace_dir": "traces"}})");
    const auto cfg = load_app_config(dir / "cfg.json");
    CHECK(std::filesystem::path(cfg.index_path) == (dir / "data" / "index.bin").lexically_normal());
    CHECK(std::filesystem::path(cfg.service.trace_dir) == (dir / "traces").lexically_normal());
    CHECK(to_json(app_config_from_json(to_json(cfg))) == to_json(cfg));

    testing::write_file(dir / "broken.json", "{ not json");
    CHECK_THROWS_AS(load_app_config(dir / "broken.json"), Error);
    try {
        load_app_config(dir / "missing.json");
        FAIL("expected FileNotFound");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FileNotFound);
    }
}

TEST_CASE("bundle save and load, including documents appended after the save") {
    providers::HashEmbedder embedder(128);
    testing::TempDir dir;
    const auto path = dir / "idx.bin";
    const auto docs = train_docs();
    auto bundle = build_bundle(docs, embedder, {});
    save_bundle(bundle, path);
    CHECK(std::filesystem::exists(documents_path(path)));

    const auto extra = labeled("late-1", "entirely new words for a late document", Label::Confidential);
    corpus::append_jsonl(documents_path(path), {extra});
    const auto loaded = load_bundle(path, embedder);
    CHECK(loaded.index->size() == docs.size() + 1);
    CHECK(loaded.store->size() == docs.size() + 1);
    CHECK(loaded.index->contains("late-1"));

    providers::HashEmbedder wrong(64);
    try {
        load_bundle(path, wrong);
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
    }

    auto mixed = docs;
    mixed.push_back(labeled("held-out", "test body", Label::Secret));
    mixed.back().partition = Partition::Test;
    mixed.push_back(labeled("no-label", "body", Label::Secret));
    mixed.back().label.reset();
    CHECK(indexable(mixed).size() == docs.size());
}

TEST_CASE("evaluation matrix writes every artifact and finishes quickly") {
    const auto all = corpus::make_separable_corpus({});
    EvaluationRequest req;
    for (const auto& d : all) (d.partition == Partition::Test ? req.test : req.train).push_back(d);
    testing::TempDir dir;
    req.run_dir = dir / "run";
    AppConfig cfg;
    const auto t0 = std::chrono::steady_clock::now();
    const auto outcome = run_evaluation(req, cfg, make_providers(cfg));
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(elapsed < 60.0);

    REQUIRE(outcome.runs.size() == 6);
    std::vector<std::string> ids;
    for (const auto& r : outcome.runs) ids.push_back(r.run_id);
    CHECK(ids == std::vector<std::string>{"llm_only", "llm_with_definitions", "rac(0)", "rac(3)", "rac(6)", "rac(9)"});
    CHECK(eval::accuracy(outcome.runs[3]) >= 0.9);
    CHECK(eval::accuracy(outcome.runs[0]) <= 0.4);
    CHECK(outcome.table_text.rfind("Model\tMacro F1\t95% CI\tp (vs llm_only)", 0) == 0);

    for (const char* f : {"config.json", "comparison.tsv", "comparison.json", "runs/rac-3.jsonl", "traces/rac-3.jsonl",
                          "metrics/rac-3.json", "prompts/classification_template.txt"}) {
        CHECK_MESSAGE(std::filesystem::exists(req.run_dir / f), f);
    }
    const auto run = eval::read_run(req.run_dir / "runs" / "rac-3.jsonl", "rac(3)");
    CHECK(run.items == outcome.runs[3].items);
    const auto traces = pipeline::read_traces(req.run_dir / "traces" / "rac-3.jsonl");
    REQUIRE(traces.size() == req.test.size());
    CHECK_FALSE(traces[0].prompt.empty());
    CHECK(pipeline::sha256_hex(traces[0].prompt) == traces[0].prompt_sha256);
    CHECK(testing::read_file(req.run_dir / "comparison.tsv") == outcome.table_text);
}

TEST_CASE("service handlers: freshness, conflicts and schema errors") {
    AppConfig cfg;
    cfg.embed.dim = 256;
    Service service(cfg, make_providers(cfg), nullptr);

    auto r = service.classify(R"({"text": "anything at all"})");
    CHECK(r.status == 503);
    CHECK(r.body["error"]["code"] == "EmptyIndex");
    CHECK(r.body["error"]["message"].get<std::string>().find("no index") != std::string::npos);
    CHECK(service.get_trace(r.body["trace_id"]).status == 200);

    // Without retrieval no index is needed.
    r = service.classify(R"({"text": "anything at all", "mode": "llm_only"})");
    CHECK(r.status == 200);
    CHECK(r.body["exemplars"].empty());

    for (const auto& d : train_docs(1)) CHECK(service.add_document(doc_json(d).dump()).status == 201);
    r = service.health();
    CHECK(r.body["status"] == "ok");
    CHECK(r.body["index_size"] == 3);

    const auto fresh = labeled("fresh-1", "zulu yankee xray whiskey victor uniform tango sierra", Label::Secret);
    r = service.add_document(doc_json(fresh).dump());
    CHECK(r.status == 201);
    CHECK(r.body.contains("trace_id"));
    CHECK(service.add_document(doc_json(fresh).dump()).status == 409);

    r = service.classify(json{{"text", fresh.body}, {"mode", "rac"}, {"shots", 3}}.dump());
    REQUIRE(r.status == 200);
    CHECK(r.body["label"] == "Secret");
    CHECK(r.body["exemplars"].size() == 3);
    CHECK(r.body["top_exemplar"]["doc_id"] == "fresh-1");
    CHECK(r.body["top_exemplar"]["similarity"].get<double>() >= 0.999);
    const auto trace = service.get_trace(r.body["trace_id"]);
    REQUIRE(trace.status == 200);
    CHECK(trace.body["doc_id"].get<std::string>().rfind("query-", 0) == 0);
    CHECK_FALSE(trace.body["prompt"].get<std::string>().empty());

    CHECK(service.classify("not json").status == 400);
    CHECK(service.classify(R"({"text": "   "})").status == 400);
    CHECK(service.classify(R"({"text": "x", "shots": 4})").status == 400);
    CHECK(service.classify(R"({"text": "x", "mode": "llm_only", "shots": 3})").status == 400);
    CHECK(service.classify(R"({"text": 5})").status == 400);
    CHECK(service.add_document(R"({"id": "u1", "body": "no label"})").status == 400);
    CHECK(service.add_document(R"({"id": "u2", "body": "bad", "label": "TopSecret"})").status == 400);
    CHECK(service.add_document(R"({"body": "no id", "label": "Secret"})").status == 400);
    CHECK(service.get_trace("tr-missing").status == 404);
}

TEST_CASE("reindex swaps atomically and rejects writes during the swap") {
    AppConfig cfg;
    cfg.embed.dim = 256;
    const auto providers = make_providers(cfg);
    auto bundle = std::make_shared<IndexBundle>(build_bundle(train_docs(), *providers.embedder, cfg.hnsw));
    Service service(cfg, providers, bundle);

    std::promise<void> entered, release;
    auto release_future = release.get_future().share();
    service.set_before_swap([&] {
        entered.set_value();
        release_future.wait();
    });
    auto pending = std::async(std::launch::async, [&] { return service.reindex(); });
    entered.get_future().wait();

    const auto during = service.add_document(
        doc_json(labeled("during-swap", "written while the swap is pending", Label::Confidential)).dump());
    CHECK(during.status == 503);
    CHECK(during.body["error"]["code"] == "ReindexInProgress");
    CHECK(service.reindex().status == 503);
    // Readers still see the old index.
    CHECK(service.bundle() == bundle);
    CHECK(service.classify(json{{"text", train_docs().front().body}}.dump()).status == 200);

    release.set_value();
    const auto done = pending.get();
    CHECK(done.status == 200);
    CHECK(done.body["index_size"] == bundle->index->size());
    CHECK(service.bundle() != bundle);
    service.set_before_swap({});
    CHECK(service.add_document(doc_json(labeled("after-swap", "written after the swap", Label::Secret)).dump()).status ==
          201);
}

TEST_CASE("traces persist across service instances and inserts persist with the index") {
    testing::TempDir dir;
    AppConfig cfg;
    cfg.embed.dim = 256;
    cfg.service.trace_dir = (dir / "traces").string();
    cfg.index_path = (dir / "idx.bin").string();
    const auto providers = make_providers(cfg);
    std::string trace_id;
    {
        Service service(cfg, providers, nullptr);
        for (const auto& d : train_docs(1)) REQUIRE(service.add_document(doc_json(d).dump()).status == 201);
        REQUIRE(service.reindex().status == 200);
        REQUIRE(service.add_document(doc_json(labeled("late", "late body words", Label::Secret)).dump()).status == 201);
        const auto r = service.classify(R"({"text": "late body words"})");
        REQUIRE(r.status == 200);
        trace_id = r.body["trace_id"];
    }
    const auto reloaded = std::make_shared<IndexBundle>(load_bundle(cfg.index_path, *providers.embedder));
    CHECK(reloaded->index->size() == 4);
    Service again(cfg, providers, reloaded);
    const auto t = again.get_trace(trace_id);
    REQUIRE(t.status == 200);
    CHECK(t.body["trace_id"] == trace_id);
    CHECK(t.body["exemplars"].size() == 3);
}

TEST_CASE("loopback HTTP service") {
    AppConfig cfg;
    cfg.embed.dim = 256;
    Service service(cfg, make_providers(cfg), nullptr);
    const int port = service.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);

    auto res = client.Post("/v1/classify", R"({"text": "hello"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 503);

    for (const auto& d : train_docs(1)) {
        res = client.Post("/v1/documents", doc_json(d).dump(), "application/json");
        REQUIRE(res);
        CHECK(res->status == 201);
    }
    res = client.Get("/v1/health");
    REQUIRE(res);
    CHECK(json::parse(res->body)["index_size"] == 3);

    const auto body = train_docs(1).front().body;
    res = client.Post("/v1/classify", json{{"text", body}, {"mode", "rac(3)"}}.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto reply = json::parse(res->body);
    CHECK(reply["exemplars"].size() == 3);
    res = client.Get(fmt::format("/v1/traces/{}", reply["trace_id"].get<std::string>()));
    REQUIRE(res);
    CHECK(res->status == 200);

    res = client.Post("/v1/reindex", "", "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    res = client.Get("/v1/nowhere");
    REQUIRE(res);
    CHECK(res->status == 404);
    service.stop();
}

TEST_CASE("cli: usage errors are machine-readable") {
    auto r = run_cli({"frobnicate"});
    CHECK(r.code == 2);
    const auto err = json::parse(r.err);
    CHECK(err["error"]["code"] == "UsageError");
    CHECK(err["error"]["message"].get<std::string>().find("frobnicate") != std::string::npos);

    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"classify", "--mode", "rac", "--shots", "3"}).code == 2);  // neither --text nor --file
    CHECK(run_cli({"--help"}).code == 0);

    r = run_cli({"-c", "/no/such/config.json", "config"});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["error"]["code"] == "FileNotFound");
}

TEST_CASE("cli: fixture, ingest, index, classify, evaluate, augment") {
    testing::TempDir dir;
    const auto corpus_path = (dir / "corpus.jsonl").string();
    const auto index_path = (dir / "idx.bin").string();
    REQUIRE(run_cli({"fixture", "--out", corpus_path}).code == 0);

    auto r = run_cli({"ingest", corpus_path});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("documents: 90") != std::string::npos);

    testing::write_file(dir / "bad.jsonl", "{\"id\": \"a\", \"body\": \"x\", \"label\": \"Secret\"}\nnot json\n");
    r = run_cli({"ingest", (dir / "bad.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["error"]["issues"].size() == 1);
    CHECK(run_cli({"ingest", "--lenient", (dir / "bad.jsonl").string()}).code == 0);

    r = run_cli({"index", corpus_path, "--out", index_path});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["indexed"] == 60);

    r = run_cli({"classify", "--index", index_path, "--mode", "rac", "--shots", "3", "--text", "sek1 sek2 sek3 sek4"});
    REQUIRE(r.code == 0);
    const auto trace = json::parse(r.out);
    CHECK(trace["exemplars"].size() == 3);
    CHECK(trace["predicted"] == "Secret");

    r = run_cli({"classify", "--mode", "rac", "--text", "x"});
    CHECK(r.code == 2);  // no index path anywhere

    const auto run_dir = dir / "run";
    r = run_cli({"evaluate", corpus_path, "--shots", "0,3,6,9", "--run-dir", run_dir.string()});
    REQUIRE(r.code == 0);
    std::size_t lines = 0;
    for (char c : r.out) lines += c == '\n';
    CHECK(lines == 1 + 6);  // header plus 4 rac and 2 llm rows
    CHECK(std::filesystem::exists(run_dir / "comparison.tsv"));
    CHECK(run_cli({"evaluate", corpus_path, "--shots", "0,4"}).code == 2);

    const auto syn = dir / "syn.jsonl";
    r = run_cli({"augment", corpus_path, "--out", syn.string(), "--target", "5"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["generated"] == 5);
    CHECK(corpus::parse_corpus(syn, corpus::Format::Jsonl).size() == 5);
}
