#include "rac/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rac/rng.hpp"
#include "rac/text.hpp"

namespace rac::corpus {

using nlohmann::json;

std::optional<Format> format_from_string(std::string_view name) noexcept {
    if (name == "jsonl") return Format::Jsonl;
    if (name == "csv") return Format::Csv;
    return std::nullopt;
}

Format format_from_path(const std::filesystem::path& path) noexcept {
    return text::to_lower(path.extension().string()) == ".csv" ? Format::Csv : Format::Jsonl;
}

// ---------------------------------------------------------------------------
// Labels

LabelAliases::LabelAliases() {
    add("UNCLASSIFIED", Label::Unclassified);
    add("UNCLAS", Label::Unclassified);
    add("CONFIDENTIAL", Label::Confidential);
    add("SECRET", Label::Secret);
}

void LabelAliases::add(std::string_view alias, Label label) {
    const auto key = text::to_upper(text::trim(alias));
    if (key.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty label alias");
    }
    table_[key] = label;
}

std::optional<Label> LabelAliases::try_normalize(std::string_view raw) const {
    auto view = text::trim(raw);
    if (const auto cut = view.find("//"); cut != std::string_view::npos) {
        view = text::trim(view.substr(0, cut));
    }
    if (view.empty()) return std::nullopt;
    const auto it = table_.find(text::to_upper(view));
    if (it == table_.end()) return std::nullopt;
    return it->second;
}

Label LabelAliases::normalize(std::string_view raw) const {
    if (text::trim(raw).empty()) {
        throw Error(ErrorCode::UnknownLabel, "empty label");
    }
    if (auto label = try_normalize(raw)) return *label;
    throw Error(ErrorCode::UnknownLabel, fmt::format("'{}'", raw));
}

const LabelAliases& LabelAliases::defaults() {
    static const LabelAliases instance;
    return instance;
}

Label normalize_label(std::string_view raw) { return LabelAliases::defaults().normalize(raw); }

// ---------------------------------------------------------------------------
// Validation

std::optional<std::string> validate(const Document& doc) {
    static const std::regex iso_date(R"(^\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?)?$)");
    if (doc.id.empty()) return "id is empty";
    if (text::trim(doc.body).empty()) return "body is empty after trimming";
    if (doc.partition == Partition::Test && doc.provenance != Provenance::Original) {
        return "synthetic documents are not allowed in the test partition";
    }
    if (doc.date && !std::regex_match(*doc.date, iso_date)) {
        return fmt::format("date '{}' is not ISO-8601", *doc.date);
    }
    return std::nullopt;
}

namespace {

struct FieldError {
    std::string cause;
};

std::optional<std::string> optional_string(const json& obj, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw FieldError{fmt::format("field '{}' must be a string", key)};
    return it->get<std::string>();
}

// Applies raw string fields to a document; shared by the JSONL and CSV readers.
struct RawFields {
    std::optional<std::string> id, title, date, sender, recipient, body, label, provenance, partition;
    std::vector<std::string> source_ids;
};

Document build_document(const RawFields& raw, const LabelAliases& aliases) {
    if (!raw.id) throw FieldError{"missing required field 'id'"};
    if (!raw.body) throw FieldError{"missing required field 'body'"};
    Document doc;
    doc.id = *raw.id;
    doc.title = raw.title.value_or("");
    doc.date = raw.date;
    doc.sender = raw.sender;
    doc.recipient = raw.recipient;
    doc.body = *raw.body;
    if (raw.label) {
        auto label = aliases.try_normalize(*raw.label);
        if (!label) throw FieldError{fmt::format("unknown label '{}'", *raw.label)};
        doc.label = label;
    }
    if (raw.provenance) {
        auto p = provenance_from_string(text::to_lower(text::trim(*raw.provenance)));
        if (!p) throw FieldError{fmt::format("invalid provenance '{}'", *raw.provenance)};
        doc.provenance = *p;
    }
    if (raw.partition) {
        auto p = partition_from_string(text::to_lower(text::trim(*raw.partition)));
        if (!p) throw FieldError{fmt::format("invalid partition '{}'", *raw.partition)};
        doc.partition = *p;
    }
    doc.source_ids = raw.source_ids;
    if (auto problem = validate(doc)) throw FieldError{*problem};
    return doc;
}

RawFields raw_from_json(const json& obj) {
    if (!obj.is_object()) throw FieldError{"record is not a JSON object"};
    RawFields raw;
    raw.id = optional_string(obj, "id");
    raw.title = optional_string(obj, "title");
    raw.date = optional_string(obj, "date");
    raw.sender = optional_string(obj, "sender");
    raw.recipient = optional_string(obj, "recipient");
    raw.body = optional_string(obj, "body");
    raw.label = optional_string(obj, "label");
    raw.provenance = optional_string(obj, "provenance");
    raw.partition = optional_string(obj, "partition");
    if (const auto it = obj.find("source_ids"); it != obj.end() && !it->is_null()) {
        if (!it->is_array()) throw FieldError{"field 'source_ids' must be an array of strings"};
        for (const auto& v : *it) {
            if (!v.is_string()) throw FieldError{"field 'source_ids' must be an array of strings"};
            raw.source_ids.push_back(v.get<std::string>());
        }
    }
    return raw;
}

// RFC-4180 reader. Returns records with the 1-based line where each starts.
struct CsvRecord {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

std::vector<CsvRecord> read_csv(std::string_view content, std::vector<RecordIssue>& issues) {
    std::vector<CsvRecord> records;
    std::size_t line = 1;
    std::size_t i = 0;
    const std::size_t n = content.size();
    while (i < n) {
        CsvRecord rec;
        rec.line = line;
        std::string field;
        bool in_quotes = false;
        bool field_was_quoted = false;
        bool done = false;
        bool broken = false;
        while (i < n && !done) {
            const char c = content[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < n && content[i + 1] == '"') {
                        field.push_back('"');
                        i += 2;
                    } else {
                        in_quotes = false;
                        ++i;
                    }
                } else {
                    if (c == '\n') ++line;
                    field.push_back(c);
                    ++i;
                }
                continue;
            }
            switch (c) {
                case '"':
                    if (!field.empty() || field_was_quoted) broken = true;
                    in_quotes = true;
                    field_was_quoted = true;
                    ++i;
                    break;
                case ',':
                    rec.fields.push_back(std::move(field));
                    field.clear();
                    field_was_quoted = false;
                    ++i;
                    break;
                case '\r':
                    ++i;
                    break;
                case '\n':
                    ++line;
                    ++i;
                    done = true;
                    break;
                default:
                    if (field_was_quoted) broken = true;
                    field.push_back(c);
                    ++i;
            }
        }
        if (in_quotes) {
            issues.push_back({rec.line, ErrorCode::MalformedRecord, "unterminated quoted field"});
            break;
        }
        rec.fields.push_back(std::move(field));
        if (broken) {
            issues.push_back({rec.line, ErrorCode::MalformedRecord, "stray quote in unquoted field"});
            continue;
        }
        if (rec.fields.size() == 1 && rec.fields[0].empty()) continue;  // blank line
        records.push_back(std::move(rec));
    }
    return records;
}

void finish(ParseResult& result, std::size_t line, RawFields raw, const LabelAliases& aliases,
            std::unordered_set<std::string>& seen) {
    try {
        Document doc = build_document(raw, aliases);
        if (!seen.insert(doc.id).second) {
            result.issues.push_back({line, ErrorCode::DuplicateId, fmt::format("duplicate id '{}'", doc.id)});
            return;
        }
        result.documents.push_back(std::move(doc));
    } catch (const FieldError& e) {
        result.issues.push_back({line, ErrorCode::MalformedRecord, e.cause});
    }
}

const std::vector<std::string> kCsvColumns{"id",   "title", "date",       "sender",   "recipient",
                                           "body", "label", "provenance", "partition"};

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

ParseResult parse_corpus_text(std::string_view content, Format format, const LabelAliases& aliases) {
    ParseResult result;
    std::unordered_set<std::string> seen;
    if (format == Format::Jsonl) {
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= content.size()) {
            const auto eol = content.find('\n', pos);
            const auto line = content.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
            ++line_no;
            pos = (eol == std::string_view::npos) ? content.size() + 1 : eol + 1;
            if (text::trim(line).empty()) continue;
            json obj;
            try {
                obj = json::parse(line);
            } catch (const json::parse_error& e) {
                result.issues.push_back({line_no, ErrorCode::MalformedRecord, fmt::format("invalid JSON: {}", e.what())});
                continue;
            }
            try {
                finish(result, line_no, raw_from_json(obj), aliases, seen);
            } catch (const FieldError& e) {
                result.issues.push_back({line_no, ErrorCode::MalformedRecord, e.cause});
            }
        }
        return result;
    }

    auto records = read_csv(content, result.issues);
    if (records.empty()) return result;
    const auto& header = records.front().fields;
    std::map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column[std::string(text::trim(header[i]))] = i;
    for (const char* required : {"id", "body"}) {
        if (!column.contains(required)) {
            result.issues.push_back(
                {records.front().line, ErrorCode::MalformedRecord, fmt::format("CSV header lacks column '{}'", required)});
            return result;
        }
    }
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.fields.size() != header.size()) {
            result.issues.push_back({rec.line, ErrorCode::MalformedRecord,
                                     fmt::format("expected {} fields, found {}", header.size(), rec.fields.size())});
            continue;
        }
        auto get = [&](const char* name) -> std::optional<std::string> {
            const auto it = column.find(name);
            if (it == column.end() || rec.fields[it->second].empty()) return std::nullopt;
            return rec.fields[it->second];
        };
        RawFields raw{get("id"),    get("title"),      get("date"),      get("sender"), get("recipient"),
                      get("body"),  get("label"),      get("provenance"), get("partition"), {}};
        if (auto ids = get("source_ids")) {
            for (auto part : text::split_whitespace(*ids)) raw.source_ids.emplace_back(part);
        }
        finish(result, rec.line, std::move(raw), aliases, seen);
    }
    return result;
}

ParseResult parse_corpus_lenient(const std::filesystem::path& path, Format format, const LabelAliases& aliases) {
    return parse_corpus_text(read_file(path), format, aliases);
}

std::vector<Document> parse_corpus(const std::filesystem::path& path, Format format, const LabelAliases& aliases) {
    auto result = parse_corpus_lenient(path, format, aliases);
    if (!result.issues.empty()) throw CorpusError(std::move(result.issues));
    return std::move(result.documents);
}

std::string to_json_line(const Document& doc) {
    json obj = json::object();
    obj["id"] = doc.id;
    obj["title"] = doc.title;
    if (doc.date) obj["date"] = *doc.date;
    if (doc.sender) obj["sender"] = *doc.sender;
    if (doc.recipient) obj["recipient"] = *doc.recipient;
    obj["body"] = doc.body;
    if (doc.label) obj["label"] = std::string(to_string(*doc.label));
    obj["provenance"] = std::string(to_string(doc.provenance));
    if (doc.partition != Partition::Unassigned) obj["partition"] = std::string(to_string(doc.partition));
    if (!doc.source_ids.empty()) obj["source_ids"] = doc.source_ids;
    return obj.dump();
}

std::string serialize_corpus(const std::vector<Document>& docs, Format format) {
    std::string out;
    if (format == Format::Jsonl) {
        for (const auto& doc : docs) {
            out += to_json_line(doc);
            out.push_back('\n');
        }
        return out;
    }
    const bool with_sources =
        std::any_of(docs.begin(), docs.end(), [](const Document& d) { return !d.source_ids.empty(); });
    auto columns = kCsvColumns;
    if (with_sources) columns.emplace_back("source_ids");
    out += fmt::format("{}\r\n", fmt::join(columns, ","));
    for (const auto& doc : docs) {
        std::vector<std::string> row{doc.id,
                                     doc.title,
                                     doc.date.value_or(""),
                                     doc.sender.value_or(""),
                                     doc.recipient.value_or(""),
                                     doc.body,
                                     doc.label ? std::string(to_string(*doc.label)) : "",
                                     std::string(to_string(doc.provenance)),
                                     doc.partition == Partition::Unassigned ? "" : std::string(to_string(doc.partition))};
        if (with_sources) row.push_back(fmt::format("{}", fmt::join(doc.source_ids, " ")));
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out.push_back(',');
            out += csv_escape(row[i]);
        }
        out += "\r\n";
    }
    return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs, Format format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot write {}", path.string()));
    out << serialize_corpus(docs, format);
}

void append_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot append to {}", path.string()));
    for (const auto& doc : docs) out << to_json_line(doc) << '\n';
}

// ---------------------------------------------------------------------------
// Summary

std::size_t LabelCounts::total() const noexcept {
    std::size_t n = unlabeled;
    for (auto c : by_label) n += c;
    return n;
}

namespace {

void bump(LabelCounts& counts, const std::optional<Label>& label) {
    if (label) {
        ++counts.by_label[index_of(*label)];
    } else {
        ++counts.unlabeled;
    }
}

LengthStats stats_of(const std::vector<std::size_t>& values) {
    if (values.empty()) return {};
    LengthStats s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    // Integer sum first so the mean does not depend on document order.
    std::size_t sum = 0;
    for (auto v : values) sum += v;
    s.mean = static_cast<double>(sum) / static_cast<double>(values.size());
    return s;
}

}  // namespace

CorpusSummary summarize(const std::vector<Document>& docs) {
    CorpusSummary summary;
    summary.total = docs.size();
    std::vector<std::size_t> chars;
    std::vector<std::size_t> tokens;
    chars.reserve(docs.size());
    tokens.reserve(docs.size());
    for (const auto& doc : docs) {
        bump(summary.by_partition[doc.partition], doc.label);
        bump(summary.by_provenance[doc.provenance], doc.label);
        chars.push_back(text::utf8_length(doc.body));
        tokens.push_back(text::count_tokens(doc.body));
    }
    summary.body_chars = stats_of(chars);
    summary.body_tokens = stats_of(tokens);
    return summary;
}

std::string format_summary(const CorpusSummary& summary) {
    std::string out = fmt::format("documents: {}\n", summary.total);
    auto row = [](std::string_view name, const LabelCounts& c) {
        return fmt::format("  {:<12} Unclassified={} Confidential={} Secret={} unlabeled={} total={}\n", name,
                           c[Label::Unclassified], c[Label::Confidential], c[Label::Secret], c.unlabeled, c.total());
    };
    out += "by partition:\n";
    for (const auto& [p, c] : summary.by_partition) out += row(to_string(p), c);
    out += "by provenance:\n";
    for (const auto& [p, c] : summary.by_provenance) out += row(to_string(p), c);
    out += fmt::format("body chars:  min={} mean={:.2f} max={}\n", summary.body_chars.min, summary.body_chars.mean,
                       summary.body_chars.max);
    out += fmt::format("body tokens: min={} mean={:.2f} max={}\n", summary.body_tokens.min, summary.body_tokens.mean,
                       summary.body_tokens.max);
    return out;
}

// ---------------------------------------------------------------------------
// DocumentStore

DocumentStore::DocumentStore(const std::vector<Document>& docs) {
    for (const auto& doc : docs) add(doc);
}

void DocumentStore::add(Document doc) {
    std::unique_lock lock(mutex_);
    if (by_id_.contains(doc.id)) throw Error(ErrorCode::DuplicateId, fmt::format("'{}'", doc.id));
    by_id_.emplace(doc.id, docs_.size());
    docs_.push_back(std::move(doc));
}

bool DocumentStore::contains(std::string_view id) const {
    std::shared_lock lock(mutex_);
    return by_id_.contains(std::string(id));
}

std::optional<Document> DocumentStore::find(std::string_view id) const {
    std::shared_lock lock(mutex_);
    const auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return docs_[it->second];
}

std::optional<std::string> DocumentStore::body(std::string_view id) const {
    std::shared_lock lock(mutex_);
    const auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return docs_[it->second].body;
}

std::size_t DocumentStore::size() const {
    std::shared_lock lock(mutex_);
    return docs_.size();
}

std::vector<Document> DocumentStore::snapshot() const {
    std::shared_lock lock(mutex_);
    return docs_;
}

// ---------------------------------------------------------------------------
// Separable fixture corpus

std::vector<Document> make_separable_corpus(const SeparableCorpusOptions& options) {
    static constexpr std::array<std::string_view, kNumLabels> stems{"una", "cof", "sek"};
    SplitMix64 rng(options.seed);
    std::vector<Document> docs;
    auto make = [&](Label label, Partition partition, std::size_t serial) {
        const auto stem = stems[index_of(label)];
        std::string body;
        for (std::size_t t = 0; t < options.tokens_per_doc; ++t) {
            if (t) body.push_back(' ');
            body += fmt::format("{}{}", stem, rng.below(options.vocabulary_per_class));
        }
        Document doc;
        doc.id = fmt::format("{}-{}-{:03}", to_string(partition), stem, serial);
        doc.title = fmt::format("{} cable {}", to_string(label), serial);
        doc.body = std::move(body);
        doc.label = label;
        doc.partition = partition;
        docs.push_back(std::move(doc));
    };
    for (std::size_t i = 0; i < options.train_per_class; ++i) {
        for (Label label : kAllLabels) make(label, Partition::Train, i);
    }
    for (std::size_t i = 0; i < options.test_per_class; ++i) {
        for (Label label : kAllLabels) make(label, Partition::Test, i);
    }
    return docs;
}

}  // namespace rac::corpus
