#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/corpus.hpp"
#include "rac/prompting.hpp"
#include "rac/providers.hpp"
#include "rac/retrieval.hpp"
#include "rac/vector_index.hpp"

namespace rac::pipeline {

class Mode {
public:
    enum class Kind { LlmOnly, LlmWithDefinitions, Rac };

    static Mode llm_only() { return Mode(Kind::LlmOnly, 0); }
    static Mode llm_with_definitions() { return Mode(Kind::LlmWithDefinitions, 0); }
    /// Throws InvalidArgument unless shots is 0, 3, 6 or 9.
    static Mode rac(int shots);
    /// "llm_only", "llm_with_definitions" or "rac(N)".
    static Mode parse(std::string_view name);

    Kind kind() const noexcept { return kind_; }
    int shots() const noexcept { return shots_; }
    bool uses_retrieval() const noexcept { return kind_ == Kind::Rac; }
    bool uses_definitions() const noexcept { return kind_ != Kind::LlmOnly; }
    std::string name() const;

    friend bool operator==(const Mode&, const Mode&) = default;

private:
    Mode(Kind kind, int shots) : kind_(kind), shots_(shots) {}
    Kind kind_;
    int shots_;
};

/// Everything a classification may touch. The index and store are only
/// required by rac modes.
struct Components {
    std::shared_ptr<const providers::Embedder> embedder;
    std::shared_ptr<const providers::Reranker> reranker;
    std::shared_ptr<const providers::CompletionModel> llm;
    std::shared_ptr<const index::HnswIndex> index;
    std::shared_ptr<const corpus::DocumentStore> store;

    /// Throws ComponentMissing naming the first absent collaborator.
    void require(const Mode& mode) const;
};

struct PipelineConfig {
    retrieval::RetrievalConfig retrieval;
    prompting::PromptConfig prompt;
};

struct TraceHit {
    std::string doc_id;
    double similarity = 0.0;
    Label label = Label::Unclassified;
    friend bool operator==(const TraceHit&, const TraceHit&) = default;
};

struct TraceRerank {
    std::string doc_id;
    double score = 0.0;
    friend bool operator==(const TraceRerank&, const TraceRerank&) = default;
};

struct TraceExemplar {
    std::string doc_id;
    Label label = Label::Unclassified;
    double similarity = 0.0;
    double rerank_score = 0.0;
    retrieval::ExemplarOrigin origin = retrieval::ExemplarOrigin::PrimaryRetrieval;
    friend bool operator==(const TraceExemplar&, const TraceExemplar&) = default;
};

struct TraceError {
    std::string code;
    std::string message;
    friend bool operator==(const TraceError&, const TraceError&) = default;
};

struct PredictionTrace {
    std::string trace_id;
    std::string doc_id;
    std::string mode;
    std::optional<Label> gold;
    std::vector<TraceHit> hits;
    std::vector<TraceRerank> reranked;
    std::vector<TraceExemplar> exemplars;
    std::vector<Label> missing_classes;
    std::string prompt_sha256;
    std::string prompt;  // serialized only on request
    std::string reply;
    std::optional<Label> predicted;
    std::optional<TraceError> error;
    std::map<std::string, double> timings_ms;

    bool ok() const noexcept { return predicted.has_value(); }
};

nlohmann::json to_json(const PredictionTrace& trace, bool include_prompt = false);
PredictionTrace trace_from_json(const nlohmann::json& j);

void write_traces(const std::filesystem::path& path, const std::vector<PredictionTrace>& traces,
                  bool include_prompt = false);
std::vector<PredictionTrace> read_traces(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// One document end to end. Parse failures land in the trace; missing
/// components, empty bodies and provider failures throw.
PredictionTrace classify(const corpus::Document& doc, const Mode& mode, const Components& components,
                         const PipelineConfig& cfg);

/// Order-preserving fan-out over `parallelism` workers. Every per-document
/// failure is captured in that document's trace.
std::vector<PredictionTrace> classify_batch(const std::vector<corpus::Document>& docs, const Mode& mode,
                                            const Components& components, const PipelineConfig& cfg,
                                            std::size_t parallelism = 1);

}  // namespace rac::pipeline
