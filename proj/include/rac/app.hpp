#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/augmentation.hpp"
#include "rac/corpus.hpp"
#include "rac/evaluation.hpp"
#include "rac/pipeline.hpp"
#include "rac/prompting.hpp"
#include "rac/remote.hpp"
#include "rac/retrieval.hpp"
#include "rac/vector_index.hpp"

namespace rac::app {

struct EvaluationSettings {
    std::size_t bootstrap_resamples = 2000;
    double ci_level = 0.95;
    std::uint64_t bootstrap_seed = 20240601;
    std::size_t permutations = 10000;
    std::uint64_t permutation_seed = 20240602;
    std::size_t parallelism = 1;
};

struct ServiceSettings {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string trace_dir;  // empty: traces are kept in memory only
};

struct AppConfig {
    providers::ProviderConfig embed;
    providers::ProviderConfig rerank;
    providers::ProviderConfig llm;
    std::string index_path;
    index::HnswParams hnsw;
    retrieval::RetrievalConfig retrieval;
    prompting::PromptConfig prompt;
    augment::AugmentConfig augment;
    EvaluationSettings evaluation;
    ServiceSettings service;

    /// Throws ConfigError; makes no network calls.
    void validate() const;
    pipeline::PipelineConfig pipeline() const { return {retrieval, prompt}; }
};

/// Relative paths inside the document resolve against `base_dir`.
AppConfig app_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const AppConfig& cfg);
/// Throws FileNotFound or ConfigError.
AppConfig load_app_config(const std::filesystem::path& path);

/// An index together with the bodies of every indexed document.
struct IndexBundle {
    std::shared_ptr<index::HnswIndex> index;
    std::shared_ptr<corpus::DocumentStore> store;
};

/// Sidecar JSONL holding the indexed documents next to the index file.
std::filesystem::path documents_path(const std::filesystem::path& index_path);

/// Labeled, non-Test documents only; others are skipped.
std::vector<corpus::Document> indexable(const std::vector<corpus::Document>& docs);

IndexBundle build_bundle(const std::vector<corpus::Document>& docs, const providers::Embedder& embedder,
                         const index::HnswParams& params);
void save_bundle(const IndexBundle& bundle, const std::filesystem::path& index_path);
/// Loads the index and its sidecar. Documents present in the sidecar but missing
/// from the index (appended after the last save) are embedded and inserted.
/// Throws DimensionMismatch when the index and embedder disagree.
IndexBundle load_bundle(const std::filesystem::path& index_path, const providers::Embedder& embedder);

struct Providers {
    std::shared_ptr<const providers::Embedder> embedder;
    std::shared_ptr<const providers::Reranker> reranker;
    std::shared_ptr<const providers::CompletionModel> llm;
};

Providers make_providers(const AppConfig& cfg);
pipeline::Components make_components(const Providers& p, const IndexBundle& bundle);

struct EvaluationRequest {
    std::vector<corpus::Document> train;
    std::vector<corpus::Document> test;
    std::vector<int> shots{0, 3, 6, 9};
    bool include_llm_modes = true;
    /// Run ids to test against; ones not produced by this request are ignored.
    std::vector<std::string> baselines{"llm_only", "llm_with_definitions", "rac(0)"};
    std::filesystem::path run_dir;  // empty: nothing is written
};

struct EvaluationOutcome {
    std::vector<eval::PredictionRun> runs;
    eval::ComparisonTable table;
    std::string table_text;
};

/// Builds an index over `train`, classifies `test` in every requested mode and
/// compares the runs. Writes config, traces, runs, metrics and the table under run_dir.
EvaluationOutcome run_evaluation(const EvaluationRequest& request, const AppConfig& cfg, const Providers& providers);

/// Exit-code helper shared by the CLI and service.
nlohmann::json error_json(const std::exception& e);

}  // namespace rac::app
