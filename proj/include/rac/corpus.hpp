#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rac/error.hpp"
#include "rac/label.hpp"

namespace rac::corpus {

struct Document {
    std::string id;
    std::string title;
    std::optional<std::string> date;  // ISO-8601 (YYYY-MM-DD, optional time part)
    std::optional<std::string> sender;
    std::optional<std::string> recipient;
    std::string body;
    std::optional<Label> label;
    Provenance provenance = Provenance::Original;
    Partition partition = Partition::Unassigned;
    /// Only set on synthetic documents: ids of the exemplars that seeded generation.
    std::vector<std::string> source_ids;

    friend bool operator==(const Document&, const Document&) = default;
};

enum class Format { Jsonl, Csv };

std::optional<Format> format_from_string(std::string_view name) noexcept;
/// Guess from the file extension (".csv" -> Csv, everything else -> Jsonl).
Format format_from_path(const std::filesystem::path& path) noexcept;

/// Case-insensitive alias table for raw classification markings.
class LabelAliases {
public:
    /// Ships with UNCLASSIFIED, CONFIDENTIAL, SECRET and UNCLAS.
    LabelAliases();

    void add(std::string_view alias, Label label);
    std::size_t size() const noexcept { return table_.size(); }

    /// Trim, drop any "//" marking suffix, uppercase, look up. Throws UnknownLabel.
    Label normalize(std::string_view raw) const;
    std::optional<Label> try_normalize(std::string_view raw) const;

    static const LabelAliases& defaults();

private:
    std::map<std::string, Label, std::less<>> table_;
};

Label normalize_label(std::string_view raw);

struct ParseResult {
    std::vector<Document> documents;
    std::vector<RecordIssue> issues;
};

/// Validates one document in isolation; returns a description of the first violation.
std::optional<std::string> validate(const Document& doc);

/// Reads every record, collecting all issues; never throws on content.
ParseResult parse_corpus_lenient(const std::filesystem::path& path, Format format,
                                 const LabelAliases& aliases = LabelAliases::defaults());
/// Strict variant: throws FileNotFound, or CorpusError listing every malformed/duplicate record.
std::vector<Document> parse_corpus(const std::filesystem::path& path, Format format,
                                   const LabelAliases& aliases = LabelAliases::defaults());

ParseResult parse_corpus_text(std::string_view content, Format format,
                              const LabelAliases& aliases = LabelAliases::defaults());

std::string serialize_corpus(const std::vector<Document>& docs, Format format);
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs, Format format);
/// Appends JSONL records (used by augmentation output).
void append_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs);

std::string to_json_line(const Document& doc);

struct LengthStats {
    std::size_t min = 0;
    double mean = 0.0;
    std::size_t max = 0;

    friend bool operator==(const LengthStats&, const LengthStats&) = default;
};

/// Counts per label plus documents that carry no label.
struct LabelCounts {
    std::array<std::size_t, kNumLabels> by_label{};
    std::size_t unlabeled = 0;

    std::size_t total() const noexcept;
    std::size_t operator[](Label label) const noexcept { return by_label[index_of(label)]; }

    friend bool operator==(const LabelCounts&, const LabelCounts&) = default;
};

struct CorpusSummary {
    std::size_t total = 0;
    std::map<Partition, LabelCounts> by_partition;
    std::map<Provenance, LabelCounts> by_provenance;
    LengthStats body_chars;
    LengthStats body_tokens;

    friend bool operator==(const CorpusSummary&, const CorpusSummary&) = default;
};

CorpusSummary summarize(const std::vector<Document>& docs);
std::string format_summary(const CorpusSummary& summary);

/// Thread-safe id -> Document map; the body source for retrieval.
/// Lookups return copies so concurrent inserts never invalidate them.
class DocumentStore {
public:
    DocumentStore() = default;
    explicit DocumentStore(const std::vector<Document>& docs);

    /// Throws DuplicateId.
    void add(Document doc);
    bool contains(std::string_view id) const;
    std::optional<Document> find(std::string_view id) const;
    std::optional<std::string> body(std::string_view id) const;
    std::size_t size() const;
    /// Insertion-ordered copy.
    std::vector<Document> snapshot() const;

private:
    mutable std::shared_mutex mutex_;
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Seeded corpus whose three classes use disjoint vocabularies.
struct SeparableCorpusOptions {
    std::size_t train_per_class = 20;
    std::size_t test_per_class = 10;
    std::size_t vocabulary_per_class = 40;
    std::size_t tokens_per_doc = 24;
    std::uint64_t seed = 7;
};

std::vector<Document> make_separable_corpus(const SeparableCorpusOptions& options = {});

}  // namespace rac::corpus
