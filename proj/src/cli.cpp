#include "rac/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rac/app.hpp"
#include "rac/service.hpp"
#include "rac/text.hpp"

namespace rac::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config_path;

    std::string corpus;
    std::string format;
    bool lenient = false;
    std::string out;

    std::string index;
    std::string mode = "rac";
    std::optional<int> shots;
    std::string text;
    std::string file;
    bool with_prompt = false;
    std::size_t parallelism = 0;

    std::string shots_list = "0,3,6,9";
    bool no_llm = false;
    std::string baselines = "llm_only,llm_with_definitions,rac(0)";
    std::string run_dir;

    std::optional<std::size_t> target;

    std::string host;
    std::optional<int> port;

    corpus::SeparableCorpusOptions fixture;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find(',', start);
        if (end == std::string::npos) end = s.size();
        auto t = std::string(text::trim(std::string_view(s).substr(start, end - start)));
        if (!t.empty()) out.push_back(std::move(t));
        start = end + 1;
    }
    return out;
}

std::vector<int> parse_shots(const std::string& s) {
    std::vector<int> out;
    for (const auto& part : split_list(s)) {
        int v = 0;
        const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || ptr != part.data() + part.size() || !retrieval::valid_shot_count(v)) {
            throw Error(ErrorCode::UsageError, fmt::format("--shots: '{}' is not one of 0, 3, 6, 9", part));
        }
        out.push_back(v);
    }
    return out;
}

corpus::Format format_for(const Options& o, const fs::path& path) {
    if (o.format.empty()) return corpus::format_from_path(path);
    auto f = corpus::format_from_string(o.format);
    if (!f) throw Error(ErrorCode::UsageError, fmt::format("unknown format '{}'", o.format));
    return *f;
}

AppConfig load_config(const Options& o) {
    return o.config_path.empty() ? AppConfig{} : load_app_config(o.config_path);
}

std::string require_index_path(const Options& o, const AppConfig& cfg) {
    const auto path = o.index.empty() ? cfg.index_path : o.index;
    if (path.empty()) throw Error(ErrorCode::UsageError, "no index path: pass --index or set index_path in the config");
    return path;
}

pipeline::Mode mode_from(const Options& o, const AppConfig& cfg) {
    if (o.mode == "rac") return pipeline::Mode::rac(o.shots.value_or(cfg.retrieval.shots));
    auto mode = pipeline::Mode::parse(o.mode);
    if (o.shots && (!mode.uses_retrieval() || *o.shots != mode.shots())) {
        throw Error(ErrorCode::UsageError, fmt::format("--shots conflicts with --mode {}", o.mode));
    }
    return mode;
}

int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
    const auto fmt_ = format_for(o, o.corpus);
    std::vector<corpus::Document> docs;
    if (o.lenient) {
        auto parsed = corpus::parse_corpus_lenient(o.corpus, fmt_);
        for (const auto& i : parsed.issues) {
            err << json{{"skipped", {{"line", i.line}, {"code", std::string(to_string(i.code))}, {"cause", i.cause}}}}
                       .dump()
                << '\n';
        }
        docs = std::move(parsed.documents);
    } else {
        docs = corpus::parse_corpus(o.corpus, fmt_);
    }
    out << corpus::format_summary(corpus::summarize(docs));
    if (!o.out.empty()) corpus::write_corpus(o.out, docs, corpus::Format::Jsonl);
    return 0;
}

int cmd_index(const Options& o, std::ostream& out) {
    const auto cfg = load_config(o);
    const auto path = o.out.empty() ? require_index_path(o, cfg) : o.out;
    const auto docs = corpus::parse_corpus(o.corpus, format_for(o, o.corpus));
    const auto usable = indexable(docs);
    const auto embedder = providers::make_embedder(cfg.embed);
    const auto bundle = build_bundle(usable, *embedder, cfg.hnsw);
    save_bundle(bundle, path);
    out << json{{"indexed", usable.size()},
                {"skipped", docs.size() - usable.size()},
                {"index_path", path},
                {"documents_path", documents_path(path).string()}}
               .dump()
        << '\n';
    return 0;
}

int cmd_classify(const Options& o, std::ostream& out) {
    const auto cfg = load_config(o);
    const auto mode = mode_from(o, cfg);
    if (o.text.empty() == o.file.empty()) throw Error(ErrorCode::UsageError, "pass exactly one of --text or --file");

    std::vector<corpus::Document> docs;
    if (!o.text.empty()) {
        corpus::Document d;
        d.id = "cli-query";
        d.body = o.text;
        docs.push_back(std::move(d));
    } else {
        docs = corpus::parse_corpus(o.file, format_for(o, o.file));
    }
    const auto providers = make_providers(cfg);
    IndexBundle bundle;
    if (mode.uses_retrieval()) bundle = load_bundle(require_index_path(o, cfg), *providers.embedder);
    const auto components = make_components(providers, bundle);

    if (docs.size() == 1) {
        // A single document surfaces its failure as an error rather than a trace.
        auto t = pipeline::classify(docs.front(), mode, components, cfg.pipeline());
        t.trace_id = "cli-000001";
        out << pipeline::to_json(t, o.with_prompt).dump() << '\n';
        return t.ok() ? 0 : 1;
    }
    const auto par = o.parallelism ? o.parallelism : cfg.evaluation.parallelism;
    auto traces = pipeline::classify_batch(docs, mode, components, cfg.pipeline(), par);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        traces[i].trace_id = fmt::format("cli-{:06d}", i + 1);
        out << pipeline::to_json(traces[i], o.with_prompt).dump() << '\n';
    }
    return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    auto cfg = load_config(o);
    if (o.parallelism) cfg.evaluation.parallelism = o.parallelism;
    const auto docs = corpus::parse_corpus(o.corpus, format_for(o, o.corpus));
    EvaluationRequest req;
    for (const auto& d : docs) {
        if (d.partition == Partition::Test) {
            req.test.push_back(d);
        } else {
            req.train.push_back(d);
        }
    }
    if (req.test.empty()) throw Error(ErrorCode::UsageError, "the corpus has no documents with partition 'test'");
    req.shots = parse_shots(o.shots_list);
    req.include_llm_modes = !o.no_llm;
    req.baselines = split_list(o.baselines);
    req.run_dir = o.run_dir;
    const auto providers = make_providers(cfg);
    const auto outcome = run_evaluation(req, cfg, providers);
    out << outcome.table_text;
    return 0;
}

int cmd_augment(const Options& o, std::ostream& out) {
    auto cfg = load_config(o);
    if (o.target) cfg.augment.target_count = *o.target;
    if (o.out.empty()) throw Error(ErrorCode::UsageError, "--out is required");
    const auto docs = corpus::parse_corpus(o.corpus, format_for(o, o.corpus));
    std::vector<corpus::Document> pool;
    for (const auto& d : docs) {
        if (d.label == Label::Secret && d.provenance == Provenance::Original && d.partition != Partition::Test) {
            pool.push_back(d);
        }
    }
    const auto providers = make_providers(cfg);
    try {
        const auto result = augment::generate_synthetic(pool, cfg.augment.target_count, *providers.llm,
                                                        *providers.embedder, cfg.augment);
        corpus::write_corpus(o.out, result.documents, corpus::Format::Jsonl);
        const auto violations = augment::audit_synthetic(result.documents, pool, *providers.embedder, cfg.augment);
        out << json{{"generated", result.documents.size()},
                    {"pool", pool.size()},
                    {"audit_violations", violations.size()},
                    {"stats", augment::to_json(result.stats)},
                    {"out", o.out}}
                   .dump()
            << '\n';
        return violations.empty() ? 0 : 1;
    } catch (const augment::GenerationStalledError& e) {
        // Keep what was accepted so a rerun can start from it.
        corpus::write_corpus(o.out, e.accepted(), corpus::Format::Jsonl);
        throw;
    }
}

int cmd_serve(const Options& o, std::ostream& out) {
    const auto cfg = load_config(o);
    const auto providers = make_providers(cfg);
    std::shared_ptr<IndexBundle> bundle;
    const auto path = o.index.empty() ? cfg.index_path : o.index;
    if (!path.empty() && fs::exists(path)) {
        bundle = std::make_shared<IndexBundle>(load_bundle(path, *providers.embedder));
    }
    auto service_cfg = cfg;
    if (!o.index.empty()) service_cfg.index_path = o.index;
    Service service(service_cfg, providers, bundle);
    const auto host = o.host.empty() ? cfg.service.host : o.host;
    const int port = service.start(host, o.port.value_or(cfg.service.port));
    out << json{{"listening", fmt::format("{}:{}", host, port)}, {"index_size", bundle ? bundle->index->size() : 0}}
               .dump()
        << std::endl;
    service.wait();
    return 0;
}

int cmd_fixture(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw Error(ErrorCode::UsageError, "--out is required");
    const auto docs = corpus::make_separable_corpus(o.fixture);
    corpus::write_corpus(o.out, docs, format_for(o, o.out));
    out << json{{"documents", docs.size()}, {"out", o.out}}.dump() << '\n';
    return 0;
}

int cmd_config(const Options& o, std::ostream& out) {
    out << to_json(load_config(o)).dump(2) << '\n';
    return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Retrieval-augmented classification of sensitive documents", "rac"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("-c,--config", o.config_path, "JSON config file");

    auto* ingest = app.add_subcommand("ingest", "Parse, validate and summarize a corpus");
    ingest->add_option("corpus", o.corpus, "Corpus file (.jsonl or .csv)")->required();
    ingest->add_option("--format", o.format, "jsonl or csv (default: from extension)");
    ingest->add_flag("--lenient", o.lenient, "Skip bad records instead of failing");
    ingest->add_option("--out", o.out, "Write the normalized corpus as JSONL");

    auto* index = app.add_subcommand("index", "Embed labeled documents and save an index");
    index->add_option("corpus", o.corpus, "Corpus file")->required();
    index->add_option("--format", o.format, "jsonl or csv");
    index->add_option("-o,--out", o.out, "Index file (default: index_path from the config)");

    auto* classify = app.add_subcommand("classify", "Classify one text or every document in a file");
    classify->add_option("--mode", o.mode, "llm_only, llm_with_definitions, rac or rac(N)");
    classify->add_option("--shots", o.shots, "Exemplars for rac mode: 0, 3, 6 or 9");
    classify->add_option("--text", o.text, "Document body");
    classify->add_option("--file", o.file, "Corpus file to classify");
    classify->add_option("--format", o.format, "jsonl or csv");
    classify->add_option("--index", o.index, "Index file (default: index_path from the config)");
    classify->add_flag("--with-prompt", o.with_prompt, "Include the rendered prompt in each trace");
    classify->add_option("--parallelism", o.parallelism, "Concurrent classifications for --file");

    auto* evaluate = app.add_subcommand("evaluate", "Run the mode matrix and compare runs");
    evaluate->add_option("corpus", o.corpus, "Corpus with train and test partitions")->required();
    evaluate->add_option("--format", o.format, "jsonl or csv");
    evaluate->add_option("--shots", o.shots_list, "Comma-separated shot counts for rac runs");
    evaluate->add_flag("--no-llm", o.no_llm, "Skip the llm_only and llm_with_definitions runs");
    evaluate->add_option("--baselines", o.baselines, "Comma-separated run ids to test against");
    evaluate->add_option("--run-dir", o.run_dir, "Directory for configs, traces, runs and reports");
    evaluate->add_option("--parallelism", o.parallelism, "Concurrent classifications per run");

    auto* augment = app.add_subcommand("augment", "Generate synthetic Secret documents");
    augment->add_option("corpus", o.corpus, "Corpus whose Secret training documents form the pool")->required();
    augment->add_option("--format", o.format, "jsonl or csv");
    augment->add_option("-o,--out", o.out, "Output JSONL")->required();
    augment->add_option("--target", o.target, "Documents to generate (default: augment.target_count)");

    auto* serve = app.add_subcommand("serve", "Serve classification over HTTP");
    serve->add_option("--index", o.index, "Index file to load and persist to");
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "Bind port (0 picks a free one)");

    auto* fixture = app.add_subcommand("fixture", "Write the seeded separable three-class corpus");
    fixture->add_option("-o,--out", o.out, "Output file (.jsonl or .csv)")->required();
    fixture->add_option("--train-per-class", o.fixture.train_per_class);
    fixture->add_option("--test-per-class", o.fixture.test_per_class);
    fixture->add_option("--seed", o.fixture.seed);

    auto* config = app.add_subcommand("config", "Print the effective configuration");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::string message = e.what();
        for (const auto& a : args) {
            if (a.empty() || a[0] == '-') continue;
            if (app.get_subcommands([&](const CLI::App* sub) { return sub->get_name() == a; }).empty()) {
                message = fmt::format("unknown subcommand '{}'", a);
            }
            break;
        }
        err << error_json(Error(ErrorCode::UsageError, message)).dump() << '\n';
        return 2;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(o, out, err);
        if (index->parsed()) return cmd_index(o, out);
        if (classify->parsed()) return cmd_classify(o, out);
        if (evaluate->parsed()) return cmd_evaluate(o, out);
        if (augment->parsed()) return cmd_augment(o, out);
        if (serve->parsed()) return cmd_serve(o, out);
        if (fixture->parsed()) return cmd_fixture(o, out);
        if (config->parsed()) return cmd_config(o, out);
        throw Error(ErrorCode::UsageError, "no subcommand");
    } catch (const std::exception& e) {
        err << error_json(e).dump() << '\n';
        const auto* rac_err = dynamic_cast<const Error*>(&e);
        return rac_err && rac_err->code() == ErrorCode::UsageError ? 2 : 1;
    }
}

}  // namespace rac::app
