#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rac/label.hpp"

namespace rac::providers {

enum class EmbedRole { Passage, Query };

std::string_view role_prefix(EmbedRole role) noexcept;
/// "passage: " / "query: " + text. Throws EmptyText.
std::string prefix_text(std::string_view text, EmbedRole role);
/// Removes a leading role prefix if present.
std::string_view strip_role_prefix(std::string_view text) noexcept;

/// Dense vector with |norm - 1| <= 1e-6 and finite components. Stored as f32.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// Throws ZeroVector for all-zero input, InvalidArgument for non-finite values.
    static EmbeddingVector normalize(std::span<const double> values);
    static EmbeddingVector normalize(std::span<const float> values);
    /// Adopts values that are already unit length (e.g. read back from disk); validates them.
    static EmbeddingVector from_unit(std::vector<float> values);

    std::size_t dim() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    std::span<const float> values() const noexcept { return values_; }
    double norm() const noexcept;
    /// Inner product with double accumulation; equals cosine for unit vectors.
    double dot(const EmbeddingVector& other) const noexcept;

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

private:
    explicit EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {}
    std::vector<float> values_;
};

EmbeddingVector unit_normalize(std::span<const double> values);

/// Feature-hashing embedder: lowercase whitespace tokens, seeded 64-bit hash,
/// bucket = hash mod dim, sign from the top bit. Throws ZeroVector when `text`
/// has no tokens (or every bucket cancels).
EmbeddingVector hash_embed(std::string_view text, std::size_t dim);

/// Jaccard similarity of lowercase token sets; two empty texts score 0.
double lexical_rerank_score(std::string_view query, std::string_view passage);

// ---------------------------------------------------------------------------
// Backend contracts. Implementations must be callable concurrently.

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    /// One provider call: raw (not necessarily normalized) vectors, one per text.
    virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) const = 0;
};

class Reranker {
public:
    virtual ~Reranker() = default;
    /// One score per passage, in order.
    virtual std::vector<double> score(std::string_view query, std::span<const std::string> passages) const = 0;
};

class CompletionModel {
public:
    virtual ~CompletionModel() = default;
    virtual std::string complete(const std::string& prompt) const = 0;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 1024;
inline constexpr std::size_t kDefaultBatchSize = 64;

/// Prefixes every text with the role, chunks provider calls to `batch_size`,
/// checks dimensions (DimensionMismatch) and unit-normalizes the results.
std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, EmbedRole role, const Embedder& embedder,
                                         std::size_t batch_size = kDefaultBatchSize);
EmbeddingVector embed_one(std::string_view text, EmbedRole role, const Embedder& embedder);

// ---------------------------------------------------------------------------
// Local deterministic implementations (offline test oracles).

/// hash_embed behind the Embedder contract. A leading role prefix is removed
/// before hashing so that query and passage views of one text coincide.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = kDefaultEmbeddingDim);
    std::size_t dimension() const override { return dim_; }
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

private:
    std::size_t dim_;
};

class LexicalReranker final : public Reranker {
public:
    std::vector<double> score(std::string_view query, std::span<const std::string> passages) const override;
};

/// Nearest-exemplar "LLM". For classification prompts it answers with the label
/// of the exemplar carrying the highest SIM tag (first appearance wins ties),
/// or the prior when the prompt shows no exemplars. For augmentation prompts it
/// writes a deterministic recombination of the reference bodies.
class MockCompletionModel final : public CompletionModel {
public:
    explicit MockCompletionModel(Label prior = Label::Unclassified) : prior_(prior) {}
    std::string complete(const std::string& prompt) const override;

private:
    Label prior_;
};

/// Throws UnparseablePrompt if the prompt announces exemplars but their tags are missing.
std::string mock_complete(std::string_view prompt, Label prior = Label::Unclassified);

}  // namespace rac::providers
