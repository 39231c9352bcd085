#include "rac/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "rac/error.hpp"
#include "rac/text.hpp"

namespace rac::pipeline {

using nlohmann::json;

Mode Mode::rac(int shots) {
    if (!retrieval::valid_shot_count(shots)) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("rac mode needs shots in {{0, 3, 6, 9}}, got {}", shots));
    }
    return Mode(Kind::Rac, shots);
}

Mode Mode::parse(std::string_view name) {
    const auto n = text::to_lower(text::trim(name));
    if (n == "llm_only") return llm_only();
    if (n == "llm_with_definitions") return llm_with_definitions();
    static const std::regex rac_re(R"(rac\((\d)\))");
    std::smatch m;
    if (std::regex_match(n, m, rac_re)) return rac(std::stoi(m[1].str()));
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown mode '{}'", name));
}

std::string Mode::name() const {
    switch (kind_) {
        case Kind::LlmOnly: return "llm_only";
        case Kind::LlmWithDefinitions: return "llm_with_definitions";
        case Kind::Rac: return fmt::format("rac({})", shots_);
    }
    return {};
}

void Components::require(const Mode& mode) const {
    if (!llm) throw Error(ErrorCode::ComponentMissing, "completion model");
    if (!mode.uses_retrieval()) return;
    if (!embedder) throw Error(ErrorCode::ComponentMissing, "embedder");
    if (!reranker) throw Error(ErrorCode::ComponentMissing, "reranker");
    if (!index) throw Error(ErrorCode::ComponentMissing, fmt::format("{} requires a vector index", mode.name()));
    if (!store) throw Error(ErrorCode::ComponentMissing, "document store");
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::InvalidArgument, "SHA-256 failed");
    }
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

json label_or_null(const std::optional<Label>& l) { return l ? json(std::string(to_string(*l))) : json(nullptr); }

Label label_at(const json& j, const char* key) {
    const auto name = j.at(key).get<std::string>();
    auto l = label_from_name(name);
    if (!l) throw Error(ErrorCode::UnknownLabel, name);
    return *l;
}

std::optional<Label> optional_label_at(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return label_at(j, key);
}

}  // namespace

json to_json(const PredictionTrace& t, bool include_prompt) {
    json hits = json::array();
    for (const auto& h : t.hits) {
        hits.push_back({{"doc_id", h.doc_id}, {"similarity", h.similarity}, {"label", to_string(h.label)}});
    }
    json reranked = json::array();
    for (const auto& r : t.reranked) reranked.push_back({{"doc_id", r.doc_id}, {"score", r.score}});
    json exemplars = json::array();
    for (const auto& e : t.exemplars) {
        exemplars.push_back({{"doc_id", e.doc_id},
                             {"label", to_string(e.label)},
                             {"similarity", e.similarity},
                             {"rerank_score", e.rerank_score},
                             {"origin", retrieval::to_string(e.origin)}});
    }
    json missing = json::array();
    for (Label l : t.missing_classes) missing.push_back(to_string(l));

    json j{{"trace_id", t.trace_id},
           {"doc_id", t.doc_id},
           {"mode", t.mode},
           {"gold", label_or_null(t.gold)},
           {"hits", hits},
           {"reranked", reranked},
           {"exemplars", exemplars},
           {"missing_classes", missing},
           {"prompt_sha256", t.prompt_sha256},
           {"reply", t.reply},
           {"predicted", label_or_null(t.predicted)},
           {"error", t.error ? json{{"code", t.error->code}, {"message", t.error->message}} : json(nullptr)},
           {"timings_ms", t.timings_ms}};
    if (include_prompt) j["prompt"] = t.prompt;
    return j;
}

PredictionTrace trace_from_json(const json& j) {
    PredictionTrace t;
    try {
        t.trace_id = j.value("trace_id", "");
        t.doc_id = j.at("doc_id").get<std::string>();
        t.mode = j.at("mode").get<std::string>();
        t.gold = optional_label_at(j, "gold");
        for (const auto& h : j.value("hits", json::array())) {
            t.hits.push_back({h.at("doc_id").get<std::string>(), h.at("similarity").get<double>(), label_at(h, "label")});
        }
        for (const auto& r : j.value("reranked", json::array())) {
            t.reranked.push_back({r.at("doc_id").get<std::string>(), r.at("score").get<double>()});
        }
        for (const auto& e : j.value("exemplars", json::array())) {
            const auto origin = e.at("origin").get<std::string>();
            t.exemplars.push_back({e.at("doc_id").get<std::string>(), label_at(e, "label"),
                                   e.at("similarity").get<double>(), e.at("rerank_score").get<double>(),
                                   origin == "compensation" ? retrieval::ExemplarOrigin::Compensation
                                                            : retrieval::ExemplarOrigin::PrimaryRetrieval});
        }
        for (const auto& m : j.value("missing_classes", json::array())) {
            auto l = label_from_name(m.get<std::string>());
            if (!l) throw Error(ErrorCode::UnknownLabel, m.get<std::string>());
            t.missing_classes.push_back(*l);
        }
        t.prompt_sha256 = j.value("prompt_sha256", "");
        t.prompt = j.value("prompt", "");
        t.reply = j.value("reply", "");
        t.predicted = optional_label_at(j, "predicted");
        if (j.contains("error") && !j.at("error").is_null()) {
            t.error = TraceError{j.at("error").at("code").get<std::string>(), j.at("error").value("message", "")};
        }
        t.timings_ms = j.value("timings_ms", std::map<std::string, double>{});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRecord, fmt::format("trace: {}", e.what()));
    }
    return t;
}

void write_traces(const std::filesystem::path& path, const std::vector<PredictionTrace>& traces, bool include_prompt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot write {}", path.string()));
    for (const auto& t : traces) out << to_json(t, include_prompt).dump() << '\n';
}

std::vector<PredictionTrace> read_traces(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    std::vector<PredictionTrace> traces;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            traces.push_back(trace_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedRecord, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
    return traces;
}

PredictionTrace classify(const corpus::Document& doc, const Mode& mode, const Components& components,
                         const PipelineConfig& cfg) {
    components.require(mode);
    if (text::trim(doc.body).empty()) {
        throw Error(ErrorCode::EmptyText, fmt::format("document '{}' has an empty body", doc.id));
    }
    const auto started = Clock::now();
    PredictionTrace trace;
    trace.doc_id = doc.id;
    trace.mode = mode.name();
    trace.gold = doc.label;

    auto prompt_cfg = cfg.prompt;
    prompt_cfg.include_label_definitions = mode.uses_definitions();
    std::vector<retrieval::Exemplar> exemplars;
    std::optional<prompting::RetrievalCue> cue;

    if (mode.uses_retrieval()) {
        auto t0 = Clock::now();
        const auto qv = retrieval::embed_query(doc, *components.embedder);
        const auto hits = retrieval::retrieve_candidates(qv, doc.id, *components.index, cfg.retrieval);
        trace.timings_ms["retrieve"] = ms_since(t0);
        for (const auto& h : hits) trace.hits.push_back({h.doc_id, h.similarity, h.metadata.label});

        t0 = Clock::now();
        const auto ranked = retrieval::rerank_and_filter(doc, hits, *components.store, *components.reranker,
                                                         cfg.retrieval.rerank_threshold);
        trace.timings_ms["rerank"] = ms_since(t0);
        for (const auto& r : ranked) trace.reranked.push_back({r.hit.doc_id, r.score});

        t0 = Clock::now();
        auto selection = retrieval::select_balanced_exemplars(ranked, mode.shots(), *components.index,
                                                              *components.store, qv, *components.reranker, doc,
                                                              cfg.retrieval);
        trace.timings_ms["select"] = ms_since(t0);
        exemplars = std::move(selection.exemplars);
        trace.missing_classes = std::move(selection.missing_classes);
        for (const auto& e : exemplars) {
            trace.exemplars.push_back({e.doc_id, e.label, e.similarity, e.rerank_score, e.origin});
        }
        if (mode.shots() == 0) cue = prompting::make_retrieval_cue(ranked);
    }

    auto t0 = Clock::now();
    auto prompt = prompting::build_prompt(doc, exemplars, prompt_cfg, trace.mode, cue);
    trace.prompt_sha256 = sha256_hex(prompt.text);
    trace.prompt = std::move(prompt.text);
    trace.timings_ms["prompt"] = ms_since(t0);

    t0 = Clock::now();
    trace.reply = components.llm->complete(trace.prompt);
    trace.timings_ms["complete"] = ms_since(t0);

    t0 = Clock::now();
    try {
        trace.predicted = prompting::parse_response(trace.reply);
    } catch (const Error& e) {
        trace.error = TraceError{std::string(to_string(e.code())), e.what()};
    }
    trace.timings_ms["parse"] = ms_since(t0);
    trace.timings_ms["total"] = ms_since(started);
    return trace;
}

std::vector<PredictionTrace> classify_batch(const std::vector<corpus::Document>& docs, const Mode& mode,
                                            const Components& components, const PipelineConfig& cfg,
                                            std::size_t parallelism) {
    if (docs.empty()) throw Error(ErrorCode::InvalidArgument, "classify_batch needs at least one document");
    if (parallelism == 0) throw Error(ErrorCode::InvalidArgument, "parallelism must be >= 1");
    components.require(mode);

    std::vector<PredictionTrace> traces(docs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next.fetch_add(1); i < docs.size(); i = next.fetch_add(1)) {
            try {
                traces[i] = classify(docs[i], mode, components, cfg);
            } catch (const std::exception& e) {
                auto& t = traces[i];
                t = PredictionTrace{};
                t.doc_id = docs[i].id;
                t.mode = mode.name();
                t.gold = docs[i].label;
                const auto* err = dynamic_cast<const Error*>(&e);
                t.error = TraceError{err ? std::string(to_string(err->code())) : "Internal", e.what()};
            }
        }
    };
    const auto n_threads = std::min(parallelism, docs.size());
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(n_threads);
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }
    return traces;
}

}  // namespace rac::pipeline
