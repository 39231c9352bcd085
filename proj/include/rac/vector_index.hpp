#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/label.hpp"
#include "rac/providers.hpp"

namespace rac::index {

using providers::EmbeddingVector;

struct RecordMetadata {
    Label label = Label::Unclassified;
    Provenance provenance = Provenance::Original;
    std::uint32_t body_tokens = 0;
    std::string source;

    friend bool operator==(const RecordMetadata&, const RecordMetadata&) = default;
};

nlohmann::json to_json(const RecordMetadata& meta);
RecordMetadata metadata_from_json(const nlohmann::json& j);

struct IndexRecord {
    std::string doc_id;
    EmbeddingVector vector;
    RecordMetadata metadata;
};

struct HnswParams {
    std::size_t M = 16;
    std::size_t ef_construction = 200;
    std::size_t ef_search = 100;
    std::uint64_t seed = 0x5EED5EEDULL;

    /// mL = 1 / ln(M)
    double level_multiplier() const noexcept;
    /// Throws InvalidArgument.
    void validate() const;

    friend bool operator==(const HnswParams&, const HnswParams&) = default;
};

nlohmann::json to_json(const HnswParams& params);
HnswParams hnsw_params_from_json(const nlohmann::json& j);

struct SearchHit {
    std::string doc_id;
    double similarity = 0.0;  // dot product = cosine = 1 - cosine distance
    RecordMetadata metadata;
    std::size_t rank = 0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Empty function = accept everything.
using MetadataFilter = std::function<bool(const RecordMetadata&)>;
MetadataFilter label_filter(Label label);

inline constexpr std::string_view kFileMagic = "RACIDX1";
inline constexpr std::uint32_t kFormatVersion = 1;

/// Hierarchical navigable small world graph over unit vectors, cosine similarity.
///
/// Thread safety: any number of concurrent readers (search, brute_force_search,
/// save, accessors) or exactly one writer (insert). An internal shared_mutex
/// enforces this, so a search never observes a half-linked node.
class HnswIndex {
public:
    explicit HnswIndex(HnswParams params = {});
    HnswIndex(HnswIndex&&) noexcept;
    HnswIndex& operator=(HnswIndex&&) noexcept;
    HnswIndex(const HnswIndex&) = delete;
    HnswIndex& operator=(const HnswIndex&) = delete;
    ~HnswIndex();

    /// Throws DuplicateDocId, DimensionMismatch.
    void insert(IndexRecord record);

    /// Approximate top-k, sorted by (-similarity, doc_id). With a filter, only
    /// matching records are returned while traversal still walks through the
    /// non-matching ones. An empty index yields no hits.
    std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k, const MetadataFilter& filter = {}) const;
    /// Same with an explicit ef (clamped to at least k).
    std::vector<SearchHit> search_ef(const EmbeddingVector& query, std::size_t k, std::size_t ef,
                                     const MetadataFilter& filter = {}) const;

    /// Exact scan with identical ordering rules; the oracle for recall tests.
    std::vector<SearchHit> brute_force_search(const EmbeddingVector& query, std::size_t k,
                                              const MetadataFilter& filter = {}) const;

    /// Little-endian binary image (see README for the layout).
    std::string serialize() const;
    static HnswIndex deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    /// Throws FileNotFound, FormatVersionMismatch, CorruptFile.
    static HnswIndex load(const std::filesystem::path& path);

    /// Fresh index containing exactly `records`, inserted in order.
    static HnswIndex rebuild(std::vector<IndexRecord> records, HnswParams params);

    std::size_t size() const;
    bool empty() const { return size() == 0; }
    std::size_t dimension() const;
    const HnswParams& params() const noexcept { return params_; }
    bool contains(std::string_view doc_id) const;

    // Structural access, mainly for invariant checks.
    const IndexRecord& record(std::size_t node) const;
    std::size_t level(std::size_t node) const;
    std::vector<std::uint32_t> neighbors(std::size_t node, std::size_t layer) const;
    std::size_t max_level() const;
    std::int64_t entry_point() const;  // -1 when empty
    std::uint64_t rng_state() const;

private:
    struct Node {
        IndexRecord record;
        std::uint32_t level = 0;
        std::vector<std::vector<std::uint32_t>> links;  // links[layer]
    };
    struct Candidate {
        double dist;
        std::uint32_t node;
    };

    double distance(std::span<const float> query, std::uint32_t node) const noexcept;
    bool closer(const Candidate& a, const Candidate& b) const noexcept;
    std::uint32_t greedy_descend(std::span<const float> query, std::uint32_t entry, std::size_t from_level,
                                 std::size_t to_level) const;
    std::vector<Candidate> search_layer(std::span<const float> query, const std::vector<Candidate>& entries,
                                        std::size_t ef, std::size_t layer, const MetadataFilter* filter) const;
    std::vector<std::uint32_t> select_neighbors(std::vector<Candidate> candidates, std::size_t max_count) const;
    std::size_t max_links(std::size_t layer) const noexcept { return layer == 0 ? 2 * params_.M : params_.M; }
    std::vector<SearchHit> to_hits(std::vector<Candidate> found, std::size_t k) const;
    std::uint32_t draw_level();

    HnswParams params_;
    std::uint64_t rng_state_ = 0;
    std::size_t dim_ = 0;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, std::uint32_t> by_id_;
    std::int64_t entry_ = -1;
    std::size_t max_level_ = 0;
    std::unique_ptr<std::shared_mutex> mutex_;
};

}  // namespace rac::index
