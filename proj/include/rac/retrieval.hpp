#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/corpus.hpp"
#include "rac/providers.hpp"
#include "rac/vector_index.hpp"

namespace rac::retrieval {

struct RetrievalConfig {
    std::size_t k_retrieve = 30;
    double rerank_threshold = 0.0;
    int shots = 3;
    std::array<Label, kNumLabels> classes = kAllLabels;
    std::size_t compensation_k = 10;

    /// Throws ConfigError: shots must be one of 0, 3, 6, 9.
    void validate() const;
};

nlohmann::json to_json(const RetrievalConfig& cfg);
RetrievalConfig retrieval_config_from_json(const nlohmann::json& j);

bool valid_shot_count(int shots) noexcept;

enum class ExemplarOrigin { PrimaryRetrieval, Compensation };
std::string_view to_string(ExemplarOrigin origin) noexcept;

struct Exemplar {
    std::string doc_id;
    std::string body;
    Label label = Label::Unclassified;
    double similarity = 0.0;
    double rerank_score = 0.0;
    ExemplarOrigin origin = ExemplarOrigin::PrimaryRetrieval;

    friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

struct ScoredHit {
    index::SearchHit hit;
    double score = 0.0;

    friend bool operator==(const ScoredHit&, const ScoredHit&) = default;
};

struct Selection {
    std::vector<Exemplar> exemplars;
    /// Classes that could not be filled to shots/3 even after compensation.
    std::vector<Label> missing_classes;
};

/// Embeds labeled documents with the Passage role (batched) and inserts them.
/// Throws UnknownLabel for an unlabeled document before anything is inserted.
std::size_t index_documents(std::span<const corpus::Document> docs, const providers::Embedder& embedder,
                            index::HnswIndex& index, std::size_t batch_size = providers::kDefaultBatchSize);

/// Query-role embedding of the document body.
providers::EmbeddingVector embed_query(const corpus::Document& query_doc, const providers::Embedder& embedder);

/// Top-k_retrieve neighbours of the query (Query role), excluding the query's own id.
/// Throws EmptyIndex when the index holds no records.
std::vector<index::SearchHit> retrieve_candidates(const corpus::Document& query_doc, const index::HnswIndex& index,
                                                  const providers::Embedder& embedder, const RetrievalConfig& cfg);
std::vector<index::SearchHit> retrieve_candidates(const providers::EmbeddingVector& query, std::string_view query_id,
                                                  const index::HnswIndex& index, const RetrievalConfig& cfg);

/// Scores every (query body, hit body) pair, re-sorts by (-score, -similarity, doc_id)
/// and drops scores below tau. If that would drop everything the top entry is kept.
std::vector<ScoredHit> rerank_and_filter(const corpus::Document& query_doc, const std::vector<index::SearchHit>& hits,
                                         const corpus::DocumentStore& store, const providers::Reranker& reranker,
                                         double tau);

/// shots/3 exemplars per class from `ranked`, topped up by label-filtered
/// compensation searches; output is interleaved round by round in class order.
Selection select_balanced_exemplars(const std::vector<ScoredHit>& ranked, int shots, const index::HnswIndex& index,
                                    const corpus::DocumentStore& store, const providers::Embedder& embedder,
                                    const providers::Reranker& reranker, const corpus::Document& query_doc,
                                    const RetrievalConfig& cfg);
/// Same, reusing an already computed query vector.
Selection select_balanced_exemplars(const std::vector<ScoredHit>& ranked, int shots, const index::HnswIndex& index,
                                    const corpus::DocumentStore& store, const providers::EmbeddingVector& query_vec,
                                    const providers::Reranker& reranker, const corpus::Document& query_doc,
                                    const RetrievalConfig& cfg);

}  // namespace rac::retrieval
