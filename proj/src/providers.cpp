#include "rac/providers.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "rac/error.hpp"
#include "rac/prompt_tags.hpp"
#include "rac/rng.hpp"
#include "rac/text.hpp"

namespace rac::providers {

namespace {

constexpr std::string_view kPassagePrefix = "passage: ";
constexpr std::string_view kQueryPrefix = "query: ";
constexpr std::uint64_t kHashSeed = 0x5241434841534831ULL;

std::uint64_t fnv1a(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t token_hash(std::string_view token) noexcept {
    SplitMix64 mix(fnv1a(token) ^ kHashSeed);
    return mix.next();
}

template <typename T>
EmbeddingVector normalize_impl(std::span<const T> values) {
    if (values.empty()) throw Error(ErrorCode::ZeroVector, "empty vector");
    double sq = 0.0;
    for (T v : values) {
        if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorCode::InvalidArgument, "non-finite component");
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    if (sq == 0.0) throw Error(ErrorCode::ZeroVector, "all components are zero");
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(static_cast<double>(values[i]) * inv);
    return EmbeddingVector::from_unit(std::move(out));
}

}  // namespace

std::string_view role_prefix(EmbedRole role) noexcept {
    return role == EmbedRole::Passage ? kPassagePrefix : kQueryPrefix;
}

std::string prefix_text(std::string_view text, EmbedRole role) {
    if (text::trim(text).empty()) throw Error(ErrorCode::EmptyText, "cannot embed empty text");
    std::string out(role_prefix(role));
    out += text;
    return out;
}

std::string_view strip_role_prefix(std::string_view text) noexcept {
    for (auto prefix : {kPassagePrefix, kQueryPrefix}) {
        if (text.substr(0, prefix.size()) == prefix) return text.substr(prefix.size());
    }
    return text;
}

// ---------------------------------------------------------------------------

EmbeddingVector EmbeddingVector::normalize(std::span<const double> values) { return normalize_impl(values); }
EmbeddingVector EmbeddingVector::normalize(std::span<const float> values) { return normalize_impl(values); }

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values) {
    double sq = 0.0;
    for (float v : values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite component");
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    if (values.empty() || std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("vector is not unit length (norm {})", std::sqrt(sq)));
    }
    return EmbeddingVector(std::move(values));
}

double EmbeddingVector::norm() const noexcept { return std::sqrt(dot(*this)); }

double EmbeddingVector::dot(const EmbeddingVector& other) const noexcept {
    const std::size_t n = std::min(values_.size(), other.values_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(values_[i]) * static_cast<double>(other.values_[i]);
    return acc;
}

EmbeddingVector unit_normalize(std::span<const double> values) { return EmbeddingVector::normalize(values); }

EmbeddingVector hash_embed(std::string_view text, std::size_t dim) {
    if (dim < 2) throw Error(ErrorCode::InvalidArgument, "hash_embed dimension must be >= 2");
    std::vector<double> buckets(dim, 0.0);
    const auto tokens = text::lower_tokens(text);
    if (tokens.empty()) throw Error(ErrorCode::ZeroVector, "text has no tokens");
    for (const auto& tok : tokens) {
        const std::uint64_t h = token_hash(tok);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        buckets[h % dim] += sign;
    }
    return EmbeddingVector::normalize(std::span<const double>(buckets));
}

double lexical_rerank_score(std::string_view query, std::string_view passage) {
    const auto qa = text::lower_tokens(query);
    const auto pa = text::lower_tokens(passage);
    const std::set<std::string> q(qa.begin(), qa.end());
    const std::set<std::string> p(pa.begin(), pa.end());
    if (q.empty() && p.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : q) inter += p.count(t);
    const std::size_t uni = q.size() + p.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------

std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, EmbedRole role, const Embedder& embedder,
                                         std::size_t batch_size) {
    if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    const std::size_t expected = embedder.dimension();
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
        const std::size_t stop = std::min(texts.size(), start + batch_size);
        std::vector<std::string> chunk;
        chunk.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) chunk.push_back(prefix_text(texts[i], role));
        auto raw = embedder.embed(chunk);
        if (raw.size() != chunk.size()) {
            throw Error(ErrorCode::ProviderUnavailable,
                        fmt::format("embedder returned {} vectors for {} inputs", raw.size(), chunk.size()));
        }
        for (const auto& v : raw) {
            if (v.size() != expected) {
                throw Error(ErrorCode::DimensionMismatch, fmt::format("expected {}, got {}", expected, v.size()));
            }
            out.push_back(EmbeddingVector::normalize(std::span<const double>(v)));
        }
    }
    return out;
}

EmbeddingVector embed_one(std::string_view text, EmbedRole role, const Embedder& embedder) {
    const std::string item(text);
    auto vectors = embed_batch(std::span<const std::string>(&item, 1), role, embedder, 1);
    return std::move(vectors.front());
}

HashEmbedder::HashEmbedder(std::size_t dim) : dim_(dim) {
    if (dim < 2) throw Error(ErrorCode::InvalidArgument, "hash embedder dimension must be >= 2");
}

std::vector<std::vector<double>> HashEmbedder::embed(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        const auto v = hash_embed(strip_role_prefix(t), dim_);
        out.emplace_back(v.values().begin(), v.values().end());
    }
    return out;
}

std::vector<double> LexicalReranker::score(std::string_view query, std::span<const std::string> passages) const {
    std::vector<double> out;
    out.reserve(passages.size());
    for (const auto& p : passages) out.push_back(lexical_rerank_score(query, p));
    return out;
}

// ---------------------------------------------------------------------------
// Mock completion

namespace {

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, eol - pos));
        pos = eol + 1;
    }
    return lines;
}

// Deterministic recombination of the reference bodies, seeded by the prompt.
std::string mock_generate(std::string_view prompt, const std::vector<std::string_view>& lines) {
    std::vector<std::string> pool;
    std::size_t references = 0;
    bool in_body = false;
    for (auto line : lines) {
        if (line.substr(0, tags::kGenerationMarker.size()) == tags::kGenerationMarker) break;
        if (line.substr(0, tags::kReferenceHeaderPrefix.size()) == tags::kReferenceHeaderPrefix) {
            ++references;
            in_body = true;
            continue;
        }
        if (in_body) {
            for (auto tok : text::split_whitespace(line)) pool.emplace_back(tok);
        }
    }
    if (pool.empty()) throw Error(ErrorCode::UnparseablePrompt, "generation prompt has no reference documents");
    SplitMix64 rng(fnv1a(prompt));
    const std::size_t length = std::max<std::size_t>(8, pool.size() / std::max<std::size_t>(1, references));
    std::string out;
    for (std::size_t i = 0; i < length; ++i) {
        if (i) out.push_back(' ');
        out += pool[rng.below(pool.size())];
    }
    return out;
}

}  // namespace

std::string mock_complete(std::string_view prompt, Label prior) {
    const auto lines = lines_of(prompt);
    for (auto line : lines) {
        if (line.substr(0, tags::kReferenceMarker.size()) == tags::kReferenceMarker) {
            return mock_generate(prompt, lines);
        }
    }
    std::optional<std::size_t> announced;
    std::optional<tags::ExemplarTag> best;
    std::size_t seen = 0;
    for (auto line : lines) {
        if (auto n = tags::parse_examples_section_header(line)) {
            announced = announced.value_or(0) + *n;
            continue;
        }
        if (auto tag = tags::parse_exemplar_header(line)) {
            ++seen;
            if (!best || tag->similarity > best->similarity) best = tag;
        }
    }
    if (announced && *announced > 0 && seen < *announced) {
        throw Error(ErrorCode::UnparseablePrompt,
                    fmt::format("prompt announces {} exemplars but {} tags were found", *announced, seen));
    }
    const Label answer = best ? best->label : prior;
    return fmt::format("LABEL: {}", to_string(answer));
}

std::string MockCompletionModel::complete(const std::string& prompt) const { return mock_complete(prompt, prior_); }

}  // namespace rac::providers
