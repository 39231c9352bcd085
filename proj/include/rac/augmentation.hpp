#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/corpus.hpp"
#include "rac/error.hpp"
#include "rac/providers.hpp"

namespace rac::augment {

std::string default_generation_template();

struct AugmentConfig {
    std::size_t window = 8;
    std::size_t stride = 1;
    std::size_t target_count = 1596;
    double lexical_threshold = 0.8;
    double semantic_threshold = 0.95;
    std::size_t max_attempts = 4;
    bool shuffle = false;
    std::uint64_t shuffle_seed = 0;
    std::size_t max_reference_chars = 4000;
    std::string id_prefix = "syn-";
    std::string template_text = default_generation_template();

    /// Throws ConfigError.
    void validate() const;
};

nlohmann::json to_json(const AugmentConfig& cfg);
/// "template_path" (relative to `base_dir`) overrides "template".
AugmentConfig augment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Contiguous slices [i, i+w) for i = 0, stride, ... while i + w <= pool size.
/// Throws PoolTooSmall.
std::vector<std::vector<corpus::Document>> sliding_windows(std::span<const corpus::Document> pool, std::size_t w,
                                                           std::size_t stride);

/// Lowercase word 3-grams; a text with fewer than three words is one gram.
std::set<std::string> word_trigrams(std::string_view text);
/// |A ∩ B| / |A ∪ B|; two empty sets give 0.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

enum class DedupReason { Exact, Lexical, Semantic, Empty };
std::string_view to_string(DedupReason reason) noexcept;

struct DedupDecision {
    bool accepted = false;
    std::optional<DedupReason> reason;
    double value = 0.0;  // the offending Jaccard or cosine (1 for Exact)
};

/// Reference texts (pool plus everything accepted so far) for the three checks.
class DedupIndex {
public:
    DedupIndex(const providers::Embedder& embedder, double lexical_threshold, double semantic_threshold);

    /// Pool texts, embedded in batches.
    void add_all(std::span<const std::string> texts);
    void add(std::string_view text);

    /// Exact, then Lexical, then Semantic; reports the first failing check.
    DedupDecision check(std::string_view candidate) const;
    std::size_t size() const noexcept { return grams_.size(); }

private:
    const providers::Embedder* embedder_;
    double lexical_;
    double semantic_;
    std::set<std::string> normalized_;
    std::vector<std::set<std::string>> grams_;
    std::vector<providers::EmbeddingVector> vectors_;
};

DedupDecision dedup_filter(std::string_view candidate, std::span<const std::string> accepted,
                           std::span<const std::string> pool, const providers::Embedder& embedder,
                           const AugmentConfig& cfg);

/// Generation prompt for one window and attempt.
std::string render_generation_prompt(std::span<const corpus::Document> window, std::size_t pass, std::size_t attempt,
                                     const AugmentConfig& cfg);

struct GenerationStats {
    std::size_t passes = 0;
    std::size_t windows = 0;
    std::size_t attempts = 0;
    std::size_t rejected_exact = 0;
    std::size_t rejected_lexical = 0;
    std::size_t rejected_semantic = 0;
    std::size_t rejected_empty = 0;
};

nlohmann::json to_json(const GenerationStats& stats);

struct GenerationResult {
    std::vector<corpus::Document> documents;
    GenerationStats stats;
};

/// A full pass over the windows accepted nothing. Carries what was accepted before.
class GenerationStalledError : public Error {
public:
    GenerationStalledError(std::vector<corpus::Document> accepted, GenerationStats stats);
    const std::vector<corpus::Document>& accepted() const noexcept { return accepted_; }
    const GenerationStats& stats() const noexcept { return stats_; }

private:
    std::vector<corpus::Document> accepted_;
    GenerationStats stats_;
};

/// Sequential by design: each acceptance changes what later candidates are compared with.
GenerationResult generate_synthetic(std::span<const corpus::Document> pool, std::size_t target_count,
                                    const providers::CompletionModel& llm, const providers::Embedder& embedder,
                                    const AugmentConfig& cfg);

struct AuditViolation {
    std::size_t synthetic_index = 0;
    std::string other_id;  // a pool id or another synthetic id
    DedupReason reason = DedupReason::Exact;
    double value = 0.0;
};

/// Re-checks every synthetic document against the pool and every earlier synthetic document.
std::vector<AuditViolation> audit_synthetic(std::span<const corpus::Document> synthetic,
                                            std::span<const corpus::Document> pool,
                                            const providers::Embedder& embedder, const AugmentConfig& cfg);

}  // namespace rac::augment
