#include "rac/augmentation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rac/prompt_tags.hpp"
#include "rac/prompting.hpp"
#include "rac/rng.hpp"
#include "rac/text.hpp"

namespace rac::augment {

using nlohmann::json;

namespace {

constexpr std::string_view kReferencesPlaceholder = "{{references}}";
constexpr std::string_view kDraftPlaceholder = "{{draft}}";

std::size_t occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (auto p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
}

}  // namespace

std::string default_generation_template() {
    return fmt::format(
        "### TASK\n"
        "Write one new diplomatic cable in the style and subject matter of the reference documents below. "
        "It must read as a realistic Secret document and must not copy or closely paraphrase any reference.\n"
        "\n"
        "{}\n"
        "{}\n"
        "\n"
        "{}\n"
        "Draft {}. Return only the body text of the new document.\n",
        tags::kReferenceMarker, kReferencesPlaceholder, tags::kGenerationMarker, kDraftPlaceholder);
}

void AugmentConfig::validate() const {
    if (window < 1) throw Error(ErrorCode::ConfigError, "window must be >= 1");
    if (stride < 1) throw Error(ErrorCode::ConfigError, "stride must be >= 1");
    if (target_count < 1) throw Error(ErrorCode::ConfigError, "target_count must be >= 1");
    if (max_attempts < 1) throw Error(ErrorCode::ConfigError, "max_attempts must be >= 1");
    if (max_reference_chars < 1) throw Error(ErrorCode::ConfigError, "max_reference_chars must be >= 1");
    for (double t : {lexical_threshold, semantic_threshold}) {
        if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::ConfigError, "dedup thresholds must lie in (0, 1]");
    }
    if (occurrences(template_text, kReferencesPlaceholder) != 1) {
        throw Error(ErrorCode::ConfigError, "generation template must contain {{references}} exactly once");
    }
    if (template_text.find(tags::kReferenceMarker) == std::string::npos) {
        throw Error(ErrorCode::ConfigError, fmt::format("generation template must contain '{}'", tags::kReferenceMarker));
    }
}

json to_json(const AugmentConfig& cfg) {
    return json{{"window", cfg.window},
                {"stride", cfg.stride},
                {"target_count", cfg.target_count},
                {"lexical_threshold", cfg.lexical_threshold},
                {"semantic_threshold", cfg.semantic_threshold},
                {"max_attempts", cfg.max_attempts},
                {"shuffle", cfg.shuffle},
                {"shuffle_seed", cfg.shuffle_seed},
                {"max_reference_chars", cfg.max_reference_chars},
                {"id_prefix", cfg.id_prefix},
                {"template", cfg.template_text}};
}

AugmentConfig augment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    AugmentConfig cfg;
    try {
        cfg.window = j.value("window", cfg.window);
        cfg.stride = j.value("stride", cfg.stride);
        cfg.target_count = j.value("target_count", cfg.target_count);
        cfg.lexical_threshold = j.value("lexical_threshold", cfg.lexical_threshold);
        cfg.semantic_threshold = j.value("semantic_threshold", cfg.semantic_threshold);
        cfg.max_attempts = j.value("max_attempts", cfg.max_attempts);
        cfg.shuffle = j.value("shuffle", cfg.shuffle);
        cfg.shuffle_seed = j.value("shuffle_seed", cfg.shuffle_seed);
        cfg.max_reference_chars = j.value("max_reference_chars", cfg.max_reference_chars);
        cfg.id_prefix = j.value("id_prefix", cfg.id_prefix);
        cfg.template_text = j.value("template", cfg.template_text);
        if (j.contains("template_path")) {
            std::filesystem::path p = j.at("template_path").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            std::ifstream in(p, std::ios::binary);
            if (!in) throw Error(ErrorCode::FileNotFound, p.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            cfg.template_text = ss.str();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("augment config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

std::vector<std::vector<corpus::Document>> sliding_windows(std::span<const corpus::Document> pool, std::size_t w,
                                                           std::size_t stride) {
    if (w < 1 || stride < 1) throw Error(ErrorCode::InvalidArgument, "window and stride must be >= 1");
    if (pool.size() < w) {
        throw Error(ErrorCode::PoolTooSmall, fmt::format("pool of {} documents is smaller than window {}", pool.size(), w));
    }
    std::vector<std::vector<corpus::Document>> windows;
    for (std::size_t i = 0; i + w <= pool.size(); i += stride) windows.emplace_back(pool.begin() + i, pool.begin() + i + w);
    return windows;
}

std::set<std::string> word_trigrams(std::string_view textv) {
    const auto tokens = text::lower_tokens(textv);
    std::set<std::string> grams;
    if (tokens.empty()) return grams;
    if (tokens.size() < 3) {
        grams.insert(tokens.size() == 1 ? tokens[0] : tokens[0] + ' ' + tokens[1]);
        return grams;
    }
    for (std::size_t i = 0; i + 3 <= tokens.size(); ++i) grams.insert(tokens[i] + ' ' + tokens[i + 1] + ' ' + tokens[i + 2]);
    return grams;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    const auto& small = a.size() <= b.size() ? a : b;
    const auto& large = a.size() <= b.size() ? b : a;
    std::size_t inter = 0;
    for (const auto& g : small) inter += large.contains(g);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

std::string_view to_string(DedupReason reason) noexcept {
    switch (reason) {
        case DedupReason::Exact: return "exact";
        case DedupReason::Lexical: return "lexical";
        case DedupReason::Semantic: return "semantic";
        case DedupReason::Empty: return "empty";
    }
    return "unknown";
}

DedupIndex::DedupIndex(const providers::Embedder& embedder, double lexical_threshold, double semantic_threshold)
    : embedder_(&embedder), lexical_(lexical_threshold), semantic_(semantic_threshold) {}

void DedupIndex::add_all(std::span<const std::string> texts) {
    auto vectors = providers::embed_batch(texts, providers::EmbedRole::Passage, *embedder_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        normalized_.insert(text::normalize_whitespace_lower(texts[i]));
        grams_.push_back(word_trigrams(texts[i]));
        vectors_.push_back(std::move(vectors[i]));
    }
}

void DedupIndex::add(std::string_view textv) {
    const std::string s(textv);
    add_all(std::span<const std::string>(&s, 1));
}

DedupDecision DedupIndex::check(std::string_view candidate) const {
    const auto normalized = text::normalize_whitespace_lower(candidate);
    if (normalized.empty()) return {false, DedupReason::Empty, 0.0};
    if (normalized_.contains(normalized)) return {false, DedupReason::Exact, 1.0};

    const auto grams = word_trigrams(candidate);
    double max_jaccard = 0.0;
    for (const auto& g : grams_) max_jaccard = std::max(max_jaccard, jaccard(grams, g));
    if (max_jaccard >= lexical_) return {false, DedupReason::Lexical, max_jaccard};

    const auto vec = providers::embed_one(candidate, providers::EmbedRole::Passage, *embedder_);
    double max_cos = -1.0;
    for (const auto& v : vectors_) max_cos = std::max(max_cos, vec.dot(v));
    if (max_cos >= semantic_) return {false, DedupReason::Semantic, max_cos};
    return {true, std::nullopt, std::max(max_jaccard, max_cos)};
}

DedupDecision dedup_filter(std::string_view candidate, std::span<const std::string> accepted,
                           std::span<const std::string> pool, const providers::Embedder& embedder,
                           const AugmentConfig& cfg) {
    DedupIndex idx(embedder, cfg.lexical_threshold, cfg.semantic_threshold);
    idx.add_all(pool);
    idx.add_all(accepted);
    return idx.check(candidate);
}

std::string render_generation_prompt(std::span<const corpus::Document> window, std::size_t pass, std::size_t attempt,
                                     const AugmentConfig& cfg) {
    std::string refs;
    for (std::size_t i = 0; i < window.size(); ++i) {
        if (i) refs += "\n\n";
        refs += tags::reference_header(i + 1) + "\n" + prompting::truncate_body(window[i].body, cfg.max_reference_chars);
    }
    auto out = cfg.template_text;
    replace_all(out, kDraftPlaceholder, fmt::format("{}.{}", pass + 1, attempt + 1));
    replace_all(out, kReferencesPlaceholder, refs);
    return out;
}

json to_json(const GenerationStats& s) {
    return json{{"passes", s.passes},
                {"windows", s.windows},
                {"attempts", s.attempts},
                {"rejected", {{"exact", s.rejected_exact},
                              {"lexical", s.rejected_lexical},
                              {"semantic", s.rejected_semantic},
                              {"empty", s.rejected_empty}}}};
}

GenerationStalledError::GenerationStalledError(std::vector<corpus::Document> accepted, GenerationStats stats)
    : Error(ErrorCode::GenerationStalled,
            fmt::format("a full pass over {} windows accepted nothing ({} accepted before the stall)", stats.windows,
                        accepted.size())),
      accepted_(std::move(accepted)),
      stats_(stats) {}

GenerationResult generate_synthetic(std::span<const corpus::Document> pool, std::size_t target_count,
                                    const providers::CompletionModel& llm, const providers::Embedder& embedder,
                                    const AugmentConfig& cfg) {
    cfg.validate();
    if (pool.empty()) throw Error(ErrorCode::PoolTooSmall, "empty pool");
    if (target_count < 1) throw Error(ErrorCode::InvalidArgument, "target_count must be >= 1");

    std::vector<corpus::Document> ordered(pool.begin(), pool.end());
    if (cfg.shuffle) seeded_shuffle(std::span(ordered), cfg.shuffle_seed);
    const auto windows = sliding_windows(ordered, cfg.window, cfg.stride);

    DedupIndex dedup(embedder, cfg.lexical_threshold, cfg.semantic_threshold);
    {
        std::vector<std::string> bodies;
        bodies.reserve(ordered.size());
        for (const auto& d : ordered) bodies.push_back(d.body);
        dedup.add_all(bodies);
    }

    GenerationResult result;
    auto& stats = result.stats;
    stats.windows = windows.size();
    auto& accepted = result.documents;
    while (accepted.size() < target_count) {
        const std::size_t pass = stats.passes++;
        std::size_t accepted_this_pass = 0;
        for (const auto& window : windows) {
            if (accepted.size() >= target_count) break;
            for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
                ++stats.attempts;
                const auto reply = llm.complete(render_generation_prompt(window, pass, attempt, cfg));
                const auto body = std::string(text::trim(reply));
                const auto decision = dedup.check(body);
                if (!decision.accepted) {
                    switch (*decision.reason) {
                        case DedupReason::Exact: ++stats.rejected_exact; break;
                        case DedupReason::Lexical: ++stats.rejected_lexical; break;
                        case DedupReason::Semantic: ++stats.rejected_semantic; break;
                        case DedupReason::Empty: ++stats.rejected_empty; break;
                    }
                    continue;
                }
                corpus::Document doc;
                doc.id = fmt::format("{}{:05d}", cfg.id_prefix, accepted.size() + 1);
                doc.title = fmt::format("Synthetic Secret document {}", accepted.size() + 1);
                doc.body = body;
                doc.label = Label::Secret;
                doc.provenance = Provenance::Synthetic;
                doc.partition = Partition::Train;
                for (const auto& src : window) doc.source_ids.push_back(src.id);
                dedup.add(body);
                accepted.push_back(std::move(doc));
                ++accepted_this_pass;
                break;
            }
        }
        if (accepted.size() < target_count && accepted_this_pass == 0) {
            throw GenerationStalledError(std::move(accepted), stats);
        }
    }
    return result;
}

std::vector<AuditViolation> audit_synthetic(std::span<const corpus::Document> synthetic,
                                            std::span<const corpus::Document> pool,
                                            const providers::Embedder& embedder, const AugmentConfig& cfg) {
    std::vector<const corpus::Document*> refs;
    for (const auto& d : pool) refs.push_back(&d);
    for (const auto& d : synthetic) refs.push_back(&d);

    std::vector<std::string> bodies, normalized;
    std::vector<std::set<std::string>> grams;
    for (const auto* d : refs) {
        bodies.push_back(d->body);
        normalized.push_back(text::normalize_whitespace_lower(d->body));
        grams.push_back(word_trigrams(d->body));
    }
    const auto vectors = providers::embed_batch(bodies, providers::EmbedRole::Passage, embedder);

    std::vector<AuditViolation> violations;
    for (std::size_t s = 0; s < synthetic.size(); ++s) {
        const std::size_t i = pool.size() + s;
        for (std::size_t j = 0; j < i; ++j) {
            if (normalized[i] == normalized[j]) {
                violations.push_back({s, refs[j]->id, DedupReason::Exact, 1.0});
                continue;
            }
            if (const double jac = jaccard(grams[i], grams[j]); jac >= cfg.lexical_threshold) {
                violations.push_back({s, refs[j]->id, DedupReason::Lexical, jac});
                continue;
            }
            if (const double cos = vectors[i].dot(vectors[j]); cos >= cfg.semantic_threshold) {
                violations.push_back({s, refs[j]->id, DedupReason::Semantic, cos});
            }
        }
    }
    return violations;
}

}  // namespace rac::augment
