#include "rac/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "rac/error.hpp"
#include "rac/text.hpp"

namespace rac::retrieval {

using index::SearchHit;
using nlohmann::json;

bool valid_shot_count(int shots) noexcept { return shots == 0 || shots == 3 || shots == 6 || shots == 9; }

void RetrievalConfig::validate() const {
    if (k_retrieve < 1) throw Error(ErrorCode::ConfigError, "k_retrieve must be >= 1");
    if (compensation_k < 1) throw Error(ErrorCode::ConfigError, "compensation_k must be >= 1");
    if (!valid_shot_count(shots)) throw Error(ErrorCode::ConfigError, fmt::format("shots must be 0, 3, 6 or 9 (got {})", shots));
    if (shots % static_cast<int>(classes.size()) != 0) {
        throw Error(ErrorCode::ConfigError, "shots must be divisible by the number of classes");
    }
    if (!std::isfinite(rerank_threshold)) throw Error(ErrorCode::ConfigError, "rerank_threshold must be finite");
    std::set<Label> unique(classes.begin(), classes.end());
    if (unique.size() != classes.size()) throw Error(ErrorCode::ConfigError, "classes must be distinct");
}

json to_json(const RetrievalConfig& cfg) {
    json classes = json::array();
    for (Label l : cfg.classes) classes.push_back(std::string(rac::to_string(l)));
    return json{{"k_retrieve", cfg.k_retrieve},
                {"rerank_threshold", cfg.rerank_threshold},
                {"shots", cfg.shots},
                {"classes", classes},
                {"compensation_k", cfg.compensation_k}};
}

RetrievalConfig retrieval_config_from_json(const json& j) {
    RetrievalConfig cfg;
    try {
        cfg.k_retrieve = j.value("k_retrieve", cfg.k_retrieve);
        cfg.rerank_threshold = j.value("rerank_threshold", cfg.rerank_threshold);
        cfg.shots = j.value("shots", cfg.shots);
        cfg.compensation_k = j.value("compensation_k", cfg.compensation_k);
        if (j.contains("classes")) {
            const auto names = j.at("classes").get<std::vector<std::string>>();
            if (names.size() != kNumLabels) throw Error(ErrorCode::ConfigError, "classes must list all three labels");
            for (std::size_t i = 0; i < names.size(); ++i) {
                auto l = label_from_name(names[i]);
                if (!l) throw Error(ErrorCode::ConfigError, fmt::format("unknown class '{}'", names[i]));
                cfg.classes[i] = *l;
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("retrieval config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

std::string_view to_string(ExemplarOrigin origin) noexcept {
    return origin == ExemplarOrigin::PrimaryRetrieval ? "primary-retrieval" : "compensation";
}

std::size_t index_documents(std::span<const corpus::Document> docs, const providers::Embedder& embedder,
                            index::HnswIndex& index, std::size_t batch_size) {
    std::vector<std::string> bodies;
    bodies.reserve(docs.size());
    for (const auto& d : docs) {
        if (!d.label) throw Error(ErrorCode::UnknownLabel, fmt::format("document '{}' has no label", d.id));
        bodies.push_back(d.body);
    }
    auto vectors = providers::embed_batch(bodies, providers::EmbedRole::Passage, embedder, batch_size);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        std::string source;
        for (const auto& s : d.source_ids) source += (source.empty() ? "" : " ") + s;
        index.insert({d.id, std::move(vectors[i]),
                      {*d.label, d.provenance, static_cast<std::uint32_t>(text::count_tokens(d.body)), source}});
    }
    return docs.size();
}

providers::EmbeddingVector embed_query(const corpus::Document& query_doc, const providers::Embedder& embedder) {
    return providers::embed_one(query_doc.body, providers::EmbedRole::Query, embedder);
}

std::vector<SearchHit> retrieve_candidates(const providers::EmbeddingVector& query, std::string_view query_id,
                                           const index::HnswIndex& index, const RetrievalConfig& cfg) {
    if (index.empty()) throw Error(ErrorCode::EmptyIndex, "cannot retrieve from an empty index");
    // One extra slot so that excluding the query itself still leaves k results.
    auto hits = index.search(query, cfg.k_retrieve + 1);
    std::erase_if(hits, [&](const SearchHit& h) { return h.doc_id == query_id; });
    if (hits.size() > cfg.k_retrieve) hits.resize(cfg.k_retrieve);
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = i;
    return hits;
}

std::vector<SearchHit> retrieve_candidates(const corpus::Document& query_doc, const index::HnswIndex& index,
                                           const providers::Embedder& embedder, const RetrievalConfig& cfg) {
    if (index.empty()) throw Error(ErrorCode::EmptyIndex, "cannot retrieve from an empty index");
    return retrieve_candidates(embed_query(query_doc, embedder), query_doc.id, index, cfg);
}

namespace {

std::vector<std::string> bodies_of(const std::vector<SearchHit>& hits, const corpus::DocumentStore& store) {
    std::vector<std::string> bodies;
    bodies.reserve(hits.size());
    for (const auto& h : hits) {
        auto body = store.body(h.doc_id);
        if (!body) {
            throw Error(ErrorCode::ComponentMissing, fmt::format("indexed document '{}' is missing from the store", h.doc_id));
        }
        bodies.push_back(std::move(*body));
    }
    return bodies;
}

bool ranks_before(const ScoredHit& a, const ScoredHit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.hit.similarity != b.hit.similarity) return a.hit.similarity > b.hit.similarity;
    return a.hit.doc_id < b.hit.doc_id;
}

Exemplar to_exemplar(const ScoredHit& scored, std::string body, ExemplarOrigin origin) {
    return Exemplar{scored.hit.doc_id, std::move(body), scored.hit.metadata.label, scored.hit.similarity, scored.score,
                    origin};
}

}  // namespace

std::vector<ScoredHit> rerank_and_filter(const corpus::Document& query_doc, const std::vector<SearchHit>& hits,
                                         const corpus::DocumentStore& store, const providers::Reranker& reranker,
                                         double tau) {
    if (hits.empty()) return {};
    const auto bodies = bodies_of(hits, store);
    const auto scores = reranker.score(query_doc.body, bodies);
    if (scores.size() != hits.size()) {
        throw Error(ErrorCode::ProviderUnavailable,
                    fmt::format("reranker returned {} scores for {} passages", scores.size(), hits.size()));
    }
    std::vector<ScoredHit> scored;
    scored.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (!std::isfinite(scores[i])) throw Error(ErrorCode::ProviderUnavailable, "reranker returned a non-finite score");
        scored.push_back({hits[i], scores[i]});
    }
    std::sort(scored.begin(), scored.end(), ranks_before);
    std::vector<ScoredHit> kept;
    for (const auto& s : scored) {
        if (s.score >= tau) kept.push_back(s);
    }
    if (kept.empty()) kept.push_back(scored.front());
    return kept;
}

Selection select_balanced_exemplars(const std::vector<ScoredHit>& ranked, int shots, const index::HnswIndex& index,
                                    const corpus::DocumentStore& store, const providers::EmbeddingVector& query_vec,
                                    const providers::Reranker& reranker, const corpus::Document& query_doc,
                                    const RetrievalConfig& cfg) {
    if (!valid_shot_count(shots)) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("shots must be 0, 3, 6 or 9 (got {})", shots));
    }
    Selection selection;
    if (shots == 0) return selection;
    const auto per_class = static_cast<std::size_t>(shots) / cfg.classes.size();

    std::array<std::vector<Exemplar>, kNumLabels> chosen;
    std::set<std::string> taken;
    for (const auto& entry : ranked) {
        const auto& hit = entry.hit;
        if (hit.doc_id == query_doc.id || taken.contains(hit.doc_id)) continue;
        auto& bucket = chosen[index_of(hit.metadata.label)];
        if (bucket.size() >= per_class) continue;
        auto body = store.body(hit.doc_id);
        if (!body) {
            throw Error(ErrorCode::ComponentMissing, fmt::format("indexed document '{}' is missing from the store", hit.doc_id));
        }
        bucket.push_back(to_exemplar(entry, std::move(*body), ExemplarOrigin::PrimaryRetrieval));
        taken.insert(hit.doc_id);
    }

    for (Label label : cfg.classes) {
        auto& bucket = chosen[index_of(label)];
        if (bucket.size() >= per_class) continue;
        const std::size_t need = per_class - bucket.size();
        const std::size_t k = std::max(cfg.compensation_k, need) + taken.size() + 1;
        auto hits = index.search(query_vec, k, index::label_filter(label));
        std::erase_if(hits, [&](const SearchHit& h) { return h.doc_id == query_doc.id || taken.contains(h.doc_id); });
        if (hits.size() > need) hits.resize(need);
        if (!hits.empty()) {
            const auto bodies = bodies_of(hits, store);
            const auto scores = reranker.score(query_doc.body, bodies);
            if (scores.size() != hits.size()) {
                throw Error(ErrorCode::ProviderUnavailable, "reranker returned the wrong number of scores");
            }
            for (std::size_t i = 0; i < hits.size(); ++i) {
                bucket.push_back(to_exemplar({hits[i], scores[i]}, bodies[i], ExemplarOrigin::Compensation));
                taken.insert(hits[i].doc_id);
            }
        }
        if (bucket.size() < per_class) selection.missing_classes.push_back(label);
    }

    for (std::size_t round = 0; round < per_class; ++round) {
        for (Label label : cfg.classes) {
            const auto& bucket = chosen[index_of(label)];
            if (round < bucket.size()) selection.exemplars.push_back(bucket[round]);
        }
    }
    return selection;
}

Selection select_balanced_exemplars(const std::vector<ScoredHit>& ranked, int shots, const index::HnswIndex& index,
                                    const corpus::DocumentStore& store, const providers::Embedder& embedder,
                                    const providers::Reranker& reranker, const corpus::Document& query_doc,
                                    const RetrievalConfig& cfg) {
    if (shots == 0) return {};
    return select_balanced_exemplars(ranked, shots, index, store, embed_query(query_doc, embedder), reranker, query_doc,
                                     cfg);
}

}  // namespace rac::retrieval
