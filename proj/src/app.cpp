#include "rac/app.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "rac/error.hpp"

namespace rac::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopLevelKeys{"providers", "index_path", "hnsw",       "retrieval", "prompt",
                                          "augment",   "evaluation", "service"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, std::string_view where) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) {
            throw Error(ErrorCode::ConfigError, fmt::format("{}: unknown field '{}'", where, key));
        }
    }
}

std::string resolve(const std::string& path, const fs::path& base_dir) {
    if (path.empty() || base_dir.empty()) return path;
    const fs::path p(path);
    return p.is_absolute() ? path : (base_dir / p).lexically_normal().string();
}

std::string file_stem_for(std::string_view run_id) {
    std::string out;
    for (char c : run_id) {
        if (c == '(') {
            out += '-';
        } else if (c != ')') {
            out += c;
        }
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot write '{}'", path.string()));
    out << text;
}

}  // namespace

void AppConfig::validate() const {
    embed.validate();
    rerank.validate();
    llm.validate();
    hnsw.validate();
    retrieval.validate();
    prompt.validate();
    augment.validate();
    if (evaluation.bootstrap_resamples == 0) throw Error(ErrorCode::ConfigError, "bootstrap_resamples must be positive");
    if (!(evaluation.ci_level > 0.0 && evaluation.ci_level < 1.0)) {
        throw Error(ErrorCode::ConfigError, "ci_level must lie in (0, 1)");
    }
    if (evaluation.permutations == 0) throw Error(ErrorCode::ConfigError, "permutations must be positive");
    if (evaluation.parallelism == 0) throw Error(ErrorCode::ConfigError, "parallelism must be positive");
    if (service.port < 0 || service.port > 65535) throw Error(ErrorCode::ConfigError, "service.port out of range");
    if (service.host.empty()) throw Error(ErrorCode::ConfigError, "service.host is empty");
    if (!index_path.empty()) {
        const auto parent = fs::path(index_path).parent_path();
        if (!parent.empty() && !fs::is_directory(parent)) {
            throw Error(ErrorCode::ConfigError, fmt::format("index directory '{}' does not exist", parent.string()));
        }
    }
}

AppConfig app_config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    reject_unknown(j, kTopLevelKeys, "config");
    AppConfig cfg;
    try {
        if (j.contains("providers")) {
            const auto& p = j.at("providers");
            reject_unknown(p, {"embed", "rerank", "llm"}, "providers");
            if (p.contains("embed")) cfg.embed = providers::provider_config_from_json(p.at("embed"));
            if (p.contains("rerank")) cfg.rerank = providers::provider_config_from_json(p.at("rerank"));
            if (p.contains("llm")) cfg.llm = providers::provider_config_from_json(p.at("llm"));
        }
        cfg.index_path = resolve(j.value("index_path", std::string{}), base_dir);
        if (j.contains("hnsw")) cfg.hnsw = index::hnsw_params_from_json(j.at("hnsw"));
        if (j.contains("retrieval")) cfg.retrieval = retrieval::retrieval_config_from_json(j.at("retrieval"));
        if (j.contains("prompt")) cfg.prompt = prompting::prompt_config_from_json(j.at("prompt"), base_dir);
        if (j.contains("augment")) cfg.augment = augment::augment_config_from_json(j.at("augment"), base_dir);
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            reject_unknown(e,
                           {"bootstrap_resamples", "ci_level", "bootstrap_seed", "permutations", "permutation_seed",
                            "parallelism"},
                           "evaluation");
            auto& ev = cfg.evaluation;
            ev.bootstrap_resamples = e.value("bootstrap_resamples", ev.bootstrap_resamples);
            ev.ci_level = e.value("ci_level", ev.ci_level);
            ev.bootstrap_seed = e.value("bootstrap_seed", ev.bootstrap_seed);
            ev.permutations = e.value("permutations", ev.permutations);
            ev.permutation_seed = e.value("permutation_seed", ev.permutation_seed);
            ev.parallelism = e.value("parallelism", ev.parallelism);
        }
        if (j.contains("service")) {
            const auto& s = j.at("service");
            reject_unknown(s, {"host", "port", "trace_dir"}, "service");
            cfg.service.host = s.value("host", cfg.service.host);
            cfg.service.port = s.value("port", cfg.service.port);
            cfg.service.trace_dir = resolve(s.value("trace_dir", cfg.service.trace_dir), base_dir);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("config: {}", e.what()));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::FileNotFound) throw;
        throw Error(ErrorCode::ConfigError, e.what());
    }
    cfg.validate();
    return cfg;
}

json to_json(const AppConfig& cfg) {
    const auto& ev = cfg.evaluation;
    return {{"providers", {{"embed", to_json(cfg.embed)}, {"rerank", to_json(cfg.rerank)}, {"llm", to_json(cfg.llm)}}},
            {"index_path", cfg.index_path},
            {"hnsw", index::to_json(cfg.hnsw)},
            {"retrieval", retrieval::to_json(cfg.retrieval)},
            {"prompt", prompting::to_json(cfg.prompt)},
            {"augment", augment::to_json(cfg.augment)},
            {"evaluation",
             {{"bootstrap_resamples", ev.bootstrap_resamples},
              {"ci_level", ev.ci_level},
              {"bootstrap_seed", ev.bootstrap_seed},
              {"permutations", ev.permutations},
              {"permutation_seed", ev.permutation_seed},
              {"parallelism", ev.parallelism}}},
            {"service", {{"host", cfg.service.host}, {"port", cfg.service.port}, {"trace_dir", cfg.service.trace_dir}}}};
}

AppConfig load_app_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FileNotFound, fmt::format("config '{}' not found", path.string()));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("{}: {}", path.string(), e.what()));
    }
    return app_config_from_json(j, fs::absolute(path).parent_path());
}

fs::path documents_path(const fs::path& index_path) {
    auto p = index_path;
    p += ".docs.jsonl";
    return p;
}

std::vector<corpus::Document> indexable(const std::vector<corpus::Document>& docs) {
    std::vector<corpus::Document> out;
    for (const auto& d : docs) {
        if (d.label && d.partition != Partition::Test) out.push_back(d);
    }
    return out;
}

IndexBundle build_bundle(const std::vector<corpus::Document>& docs, const providers::Embedder& embedder,
                         const index::HnswParams& params) {
    IndexBundle bundle{std::make_shared<index::HnswIndex>(params), std::make_shared<corpus::DocumentStore>()};
    for (const auto& d : docs) bundle.store->add(d);
    retrieval::index_documents(docs, embedder, *bundle.index);
    return bundle;
}

void save_bundle(const IndexBundle& bundle, const fs::path& index_path) {
    // Write-then-rename so a crash never leaves a torn file behind.
    auto tmp_index = index_path;
    tmp_index += ".tmp";
    auto tmp_docs = documents_path(index_path);
    tmp_docs += ".tmp";
    bundle.index->save(tmp_index);
    corpus::write_corpus(tmp_docs, bundle.store->snapshot(), corpus::Format::Jsonl);
    fs::rename(tmp_index, index_path);
    fs::rename(tmp_docs, documents_path(index_path));
}

IndexBundle load_bundle(const fs::path& index_path, const providers::Embedder& embedder) {
    auto idx = std::make_shared<index::HnswIndex>(index::HnswIndex::load(index_path));
    if (!idx->empty() && idx->dimension() != embedder.dimension()) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("index '{}' has dimension {} but the embedder produces {}", index_path.string(),
                                idx->dimension(), embedder.dimension()));
    }
    auto store = std::make_shared<corpus::DocumentStore>();
    const auto sidecar = documents_path(index_path);
    std::vector<corpus::Document> pending;
    if (fs::exists(sidecar)) {
        for (auto& d : corpus::parse_corpus(sidecar, corpus::Format::Jsonl)) {
            if (!idx->contains(d.id)) pending.push_back(d);
            store->add(std::move(d));
        }
    }
    if (!pending.empty()) retrieval::index_documents(pending, embedder, *idx);
    return {std::move(idx), std::move(store)};
}

Providers make_providers(const AppConfig& cfg) {
    return {providers::make_embedder(cfg.embed), providers::make_reranker(cfg.rerank),
            providers::make_completion_model(cfg.llm)};
}

pipeline::Components make_components(const Providers& p, const IndexBundle& bundle) {
    return {p.embedder, p.reranker, p.llm, bundle.index, bundle.store};
}

EvaluationOutcome run_evaluation(const EvaluationRequest& request, const AppConfig& cfg, const Providers& providers) {
    if (request.test.empty()) throw Error(ErrorCode::InvalidArgument, "evaluation needs at least one test document");
    std::vector<pipeline::Mode> modes;
    if (request.include_llm_modes) {
        modes.push_back(pipeline::Mode::llm_only());
        modes.push_back(pipeline::Mode::llm_with_definitions());
    }
    for (int s : request.shots) modes.push_back(pipeline::Mode::rac(s));
    if (modes.empty()) throw Error(ErrorCode::UsageError, "no modes to evaluate");

    const bool any_rac = !request.shots.empty();
    IndexBundle bundle;
    if (any_rac) {
        const auto train = indexable(request.train);
        if (train.empty()) throw Error(ErrorCode::EmptyIndex, "no labeled training documents to index");
        bundle = build_bundle(train, *providers.embedder, cfg.hnsw);
    }
    const auto components = make_components(providers, bundle);

    const bool write = !request.run_dir.empty();
    if (write) {
        for (const char* sub : {"runs", "traces", "metrics", "prompts"}) fs::create_directories(request.run_dir / sub);
        json snapshot = to_json(cfg);
        std::vector<std::string> names;
        for (const auto& m : modes) names.push_back(m.name());
        snapshot["request"] = {{"modes", names},
                               {"baselines", request.baselines},
                               {"train_documents", request.train.size()},
                               {"test_documents", request.test.size()}};
        write_text(request.run_dir / "config.json", snapshot.dump(2) + "\n");
        write_text(request.run_dir / "prompts" / "classification_template.txt", cfg.prompt.template_text);
    }

    EvaluationOutcome outcome;
    for (const auto& mode : modes) {
        const auto traces =
            pipeline::classify_batch(request.test, mode, components, cfg.pipeline(), cfg.evaluation.parallelism);
        auto run = eval::run_from_traces(mode.name(), traces, {{"mode", mode.name()}, {"shots", mode.shots()}});
        if (write) {
            const auto stem = file_stem_for(run.run_id);
            pipeline::write_traces(request.run_dir / "traces" / (stem + ".jsonl"), traces, true);
            eval::write_run(request.run_dir / "runs" / (stem + ".jsonl"), run);
        }
        outcome.runs.push_back(std::move(run));
    }

    std::vector<std::string> baselines;
    for (const auto& b : request.baselines) {
        for (const auto& r : outcome.runs) {
            if (r.run_id == b) {
                baselines.push_back(b);
                break;
            }
        }
    }
    eval::ComparisonOptions opts;
    opts.bootstrap.resamples = cfg.evaluation.bootstrap_resamples;
    opts.bootstrap.level = cfg.evaluation.ci_level;
    opts.bootstrap.seed = cfg.evaluation.bootstrap_seed;
    opts.permutation.permutations = cfg.evaluation.permutations;
    opts.permutation.seed = cfg.evaluation.permutation_seed;
    outcome.table = eval::compare_runs(outcome.runs, baselines, opts);
    outcome.table_text = eval::format_table(outcome.table);

    if (write) {
        for (const auto& row : outcome.table.rows) {
            json m = eval::to_json(row.metrics);
            m["macro_f1_ci"] = eval::to_json(row.ci);
            write_text(request.run_dir / "metrics" / (file_stem_for(row.model) + ".json"), m.dump(2) + "\n");
        }
        write_text(request.run_dir / "comparison.tsv", outcome.table_text);
        write_text(request.run_dir / "comparison.json", eval::to_json(outcome.table).dump(2) + "\n");
    }
    return outcome;
}

json error_json(const std::exception& e) {
    std::string code = "Internal";
    std::string message = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        code = std::string(to_string(err->code()));
        const auto prefix = code + ": ";
        if (message.rfind(prefix, 0) == 0) message.erase(0, prefix.size());
    }
    json j = {{"error", {{"code", code}, {"message", message}}}};
    if (const auto* ce = dynamic_cast<const CorpusError*>(&e)) {
        json issues = json::array();
        for (const auto& i : ce->issues()) {
            issues.push_back({{"line", i.line}, {"code", std::string(to_string(i.code))}, {"cause", i.cause}});
        }
        j["error"]["issues"] = std::move(issues);
    }
    return j;
}

}  // namespace rac::app
