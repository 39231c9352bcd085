#include "rac/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <queue>
#include <sstream>

#include <fmt/format.h>

#include "rac/error.hpp"
#include "rac/rng.hpp"

namespace rac::index {

using nlohmann::json;

json to_json(const RecordMetadata& meta) {
    return json{{"label", std::string(to_string(meta.label))},
                {"provenance", std::string(to_string(meta.provenance))},
                {"body_tokens", meta.body_tokens},
                {"source", meta.source}};
}

RecordMetadata metadata_from_json(const json& j) {
    RecordMetadata meta;
    auto label = label_from_name(j.at("label").get<std::string>());
    auto provenance = provenance_from_string(j.at("provenance").get<std::string>());
    if (!label || !provenance) throw Error(ErrorCode::InvalidArgument, "bad record metadata");
    meta.label = *label;
    meta.provenance = *provenance;
    meta.body_tokens = j.at("body_tokens").get<std::uint32_t>();
    meta.source = j.at("source").get<std::string>();
    return meta;
}

double HnswParams::level_multiplier() const noexcept { return 1.0 / std::log(static_cast<double>(M)); }

void HnswParams::validate() const {
    if (M < 2) throw Error(ErrorCode::InvalidArgument, "HNSW M must be >= 2");
    if (ef_construction < 1) throw Error(ErrorCode::InvalidArgument, "HNSW ef_construction must be >= 1");
    if (ef_search < 1) throw Error(ErrorCode::InvalidArgument, "HNSW ef_search must be >= 1");
}

json to_json(const HnswParams& params) {
    return json{{"M", params.M},
                {"ef_construction", params.ef_construction},
                {"ef_search", params.ef_search},
                {"seed", params.seed}};
}

HnswParams hnsw_params_from_json(const json& j) {
    HnswParams p;
    p.M = j.value("M", p.M);
    p.ef_construction = j.value("ef_construction", p.ef_construction);
    p.ef_search = j.value("ef_search", p.ef_search);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
}

MetadataFilter label_filter(Label label) {
    return [label](const RecordMetadata& meta) { return meta.label == label; };
}

// ---------------------------------------------------------------------------

HnswIndex::HnswIndex(HnswParams params)
    : params_(params), rng_state_(params.seed), mutex_(std::make_unique<std::shared_mutex>()) {
    params_.validate();
}

HnswIndex::HnswIndex(HnswIndex&& other) noexcept = default;
HnswIndex& HnswIndex::operator=(HnswIndex&& other) noexcept = default;
HnswIndex::~HnswIndex() = default;

// Distances are negated dot products so that similarity = -distance exactly.
double HnswIndex::distance(std::span<const float> query, std::uint32_t node) const noexcept {
    const auto v = nodes_[node].record.vector.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) acc += static_cast<double>(query[i]) * static_cast<double>(v[i]);
    return -acc;
}

bool HnswIndex::closer(const Candidate& a, const Candidate& b) const noexcept {
    if (a.dist != b.dist) return a.dist < b.dist;
    return nodes_[a.node].record.doc_id < nodes_[b.node].record.doc_id;
}

std::uint32_t HnswIndex::draw_level() {
    SplitMix64 rng(rng_state_);
    const double u = rng.uniform_open_closed();
    rng_state_ = rng.state();
    const double level = std::floor(-std::log(u) * params_.level_multiplier());
    return static_cast<std::uint32_t>(std::min(level, 32.0));
}

std::uint32_t HnswIndex::greedy_descend(std::span<const float> query, std::uint32_t entry, std::size_t from_level,
                                        std::size_t to_level) const {
    Candidate cur{distance(query, entry), entry};
    for (std::size_t layer = from_level; layer > to_level; --layer) {
        const std::size_t lc = layer;
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::uint32_t nb : nodes_[cur.node].links[lc]) {
                Candidate cand{distance(query, nb), nb};
                if (closer(cand, cur)) {
                    cur = cand;
                    changed = true;
                }
            }
        }
    }
    return cur.node;
}

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(std::span<const float> query,
                                                          const std::vector<Candidate>& entries, std::size_t ef,
                                                          std::size_t layer, const MetadataFilter* filter) const {
    auto nearest_first = [this](const Candidate& a, const Candidate& b) { return closer(b, a); };
    auto farthest_first = [this](const Candidate& a, const Candidate& b) { return closer(a, b); };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(nearest_first)> frontier(nearest_first);
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(farthest_first)> found(farthest_first);
    std::vector<char> visited(nodes_.size(), 0);

    auto accepts = [&](std::uint32_t node) {
        return filter == nullptr || !*filter || (*filter)(nodes_[node].record.metadata);
    };

    for (const auto& e : entries) {
        if (visited[e.node]) continue;
        visited[e.node] = 1;
        frontier.push(e);
        if (accepts(e.node)) found.push(e);
    }
    while (found.size() > ef) found.pop();

    while (!frontier.empty()) {
        const Candidate current = frontier.top();
        if (found.size() >= ef && closer(found.top(), current)) break;
        frontier.pop();
        for (std::uint32_t nb : nodes_[current.node].links[layer]) {
            if (visited[nb]) continue;
            visited[nb] = 1;
            const Candidate cand{distance(query, nb), nb};
            if (found.size() < ef || closer(cand, found.top())) {
                frontier.push(cand);
                if (accepts(nb)) {
                    found.push(cand);
                    if (found.size() > ef) found.pop();
                }
            }
        }
    }

    std::vector<Candidate> out;
    out.reserve(found.size());
    while (!found.empty()) {
        out.push_back(found.top());
        found.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the base
// element than to every neighbor already kept.
std::vector<std::uint32_t> HnswIndex::select_neighbors(std::vector<Candidate> candidates,
                                                       std::size_t max_count) const {
    std::sort(candidates.begin(), candidates.end(), [this](const Candidate& a, const Candidate& b) { return closer(a, b); });
    std::vector<std::uint32_t> kept;
    kept.reserve(max_count);
    for (const auto& cand : candidates) {
        if (kept.size() >= max_count) break;
        const auto cand_vec = nodes_[cand.node].record.vector.values();
        bool diverse = true;
        for (std::uint32_t r : kept) {
            if (distance(cand_vec, r) < cand.dist) {
                diverse = false;
                break;
            }
        }
        if (diverse) kept.push_back(cand.node);
    }
    return kept;
}

void HnswIndex::insert(IndexRecord record) {
    std::unique_lock lock(*mutex_);
    if (by_id_.contains(record.doc_id)) {
        throw Error(ErrorCode::DuplicateDocId, fmt::format("'{}'", record.doc_id));
    }
    if (record.vector.empty()) throw Error(ErrorCode::InvalidArgument, "record vector is empty");
    if (nodes_.empty()) {
        dim_ = record.vector.dim();
    } else if (record.vector.dim() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("expected {}, got {}", dim_, record.vector.dim()));
    }

    const auto id = static_cast<std::uint32_t>(nodes_.size());
    const std::uint32_t node_level = draw_level();
    by_id_.emplace(record.doc_id, id);
    nodes_.push_back(Node{std::move(record), node_level, std::vector<std::vector<std::uint32_t>>(node_level + 1)});

    if (entry_ < 0) {
        entry_ = id;
        max_level_ = node_level;
        return;
    }

    const auto query = nodes_[id].record.vector.values();
    auto entry = static_cast<std::uint32_t>(entry_);
    if (max_level_ > node_level) entry = greedy_descend(query, entry, max_level_, node_level);

    std::vector<Candidate> entries{{distance(query, entry), entry}};
    for (std::size_t layer = std::min<std::size_t>(node_level, max_level_) + 1; layer-- > 0;) {
        auto found = search_layer(query, entries, params_.ef_construction, layer, nullptr);
        auto chosen = select_neighbors(found, params_.M);
        nodes_[id].links[layer] = chosen;
        for (std::uint32_t nb : chosen) {
            auto& nb_links = nodes_[nb].links[layer];
            nb_links.push_back(id);
            if (nb_links.size() > max_links(layer)) {
                const auto nb_vec = nodes_[nb].record.vector.values();
                std::vector<Candidate> pool;
                pool.reserve(nb_links.size());
                for (std::uint32_t other : nb_links) pool.push_back({distance(nb_vec, other), other});
                nb_links = select_neighbors(std::move(pool), max_links(layer));
            }
        }
        entries = std::move(found);
    }

    if (node_level > max_level_) {
        max_level_ = node_level;
        entry_ = id;
    }
}

std::vector<SearchHit> HnswIndex::to_hits(std::vector<Candidate> found, std::size_t k) const {
    std::sort(found.begin(), found.end(), [this](const Candidate& a, const Candidate& b) { return closer(a, b); });
    if (found.size() > k) found.resize(k);
    std::vector<SearchHit> hits;
    hits.reserve(found.size());
    for (std::size_t i = 0; i < found.size(); ++i) {
        const auto& rec = nodes_[found[i].node].record;
        hits.push_back(SearchHit{rec.doc_id, -found[i].dist, rec.metadata, i});
    }
    return hits;
}

std::vector<SearchHit> HnswIndex::search(const EmbeddingVector& query, std::size_t k,
                                         const MetadataFilter& filter) const {
    return search_ef(query, k, params_.ef_search, filter);
}

std::vector<SearchHit> HnswIndex::search_ef(const EmbeddingVector& query, std::size_t k, std::size_t ef,
                                            const MetadataFilter& filter) const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    std::shared_lock lock(*mutex_);
    if (entry_ < 0) return {};
    if (query.dim() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("expected {}, got {}", dim_, query.dim()));
    }
    const auto q = query.values();
    const auto entry = greedy_descend(q, static_cast<std::uint32_t>(entry_), max_level_, 0);
    auto found = search_layer(q, {{distance(q, entry), entry}}, std::max(ef, k), 0, &filter);
    return to_hits(std::move(found), k);
}

std::vector<SearchHit> HnswIndex::brute_force_search(const EmbeddingVector& query, std::size_t k,
                                                     const MetadataFilter& filter) const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    std::shared_lock lock(*mutex_);
    if (nodes_.empty()) return {};
    if (query.dim() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("expected {}, got {}", dim_, query.dim()));
    }
    std::vector<Candidate> all;
    all.reserve(nodes_.size());
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (filter && !filter(nodes_[i].record.metadata)) continue;
        all.push_back({distance(query.values(), i), i});
    }
    return to_hits(std::move(all), k);
}

HnswIndex HnswIndex::rebuild(std::vector<IndexRecord> records, HnswParams params) {
    HnswIndex index(params);
    for (auto& rec : records) index.insert(std::move(rec));
    return index;
}

std::size_t HnswIndex::size() const {
    std::shared_lock lock(*mutex_);
    return nodes_.size();
}

std::size_t HnswIndex::dimension() const {
    std::shared_lock lock(*mutex_);
    return dim_;
}

bool HnswIndex::contains(std::string_view doc_id) const {
    std::shared_lock lock(*mutex_);
    return by_id_.contains(std::string(doc_id));
}

const IndexRecord& HnswIndex::record(std::size_t node) const {
    std::shared_lock lock(*mutex_);
    return nodes_.at(node).record;
}

std::size_t HnswIndex::level(std::size_t node) const {
    std::shared_lock lock(*mutex_);
    return nodes_.at(node).level;
}

std::vector<std::uint32_t> HnswIndex::neighbors(std::size_t node, std::size_t layer) const {
    std::shared_lock lock(*mutex_);
    return nodes_.at(node).links.at(layer);
}

std::size_t HnswIndex::max_level() const {
    std::shared_lock lock(*mutex_);
    return max_level_;
}

std::int64_t HnswIndex::entry_point() const {
    std::shared_lock lock(*mutex_);
    return entry_;
}

std::uint64_t HnswIndex::rng_state() const {
    std::shared_lock lock(*mutex_);
    return rng_state_;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

class Writer {
public:
    void bytes(std::string_view b) { out_ += b; }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    std::size_t offset() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

    std::string_view bytes(std::size_t n, const char* what) {
        if (data_.size() - pos_ < n) throw CorruptFileError(pos_, fmt::format("truncated while reading {}", what));
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint32_t u32(const char* what) {
        auto b = bytes(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        auto b = bytes(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string_view str(const char* what) { return bytes(u32(what), what); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

constexpr std::uint32_t kNoEntry = 0xFFFFFFFFu;

}  // namespace

std::string HnswIndex::serialize() const {
    std::shared_lock lock(*mutex_);
    Writer w;
    w.bytes(kFileMagic);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(params_.M));
    w.u32(static_cast<std::uint32_t>(params_.ef_construction));
    w.u32(static_cast<std::uint32_t>(params_.ef_search));
    w.u64(params_.seed);
    w.u64(rng_state_);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(nodes_.size()));
    w.u32(entry_ < 0 ? kNoEntry : static_cast<std::uint32_t>(entry_));
    w.u32(static_cast<std::uint32_t>(max_level_));
    for (const auto& node : nodes_) {
        w.str(node.record.doc_id);
        w.str(to_json(node.record.metadata).dump());
        for (float v : node.record.vector.values()) w.f32(v);
        w.u32(node.level);
    }
    for (const auto& node : nodes_) {
        for (const auto& layer : node.links) {
            w.u32(static_cast<std::uint32_t>(layer.size()));
            for (std::uint32_t nb : layer) w.u32(nb);
        }
    }
    return w.take();
}

HnswIndex HnswIndex::deserialize(std::string_view bytes) {
    Reader r(bytes);
    if (r.bytes(kFileMagic.size(), "magic") != kFileMagic) throw CorruptFileError(0, "bad magic");
    const auto version_offset = r.offset();
    const std::uint32_t version = r.u32("format version");
    if (version != kFormatVersion) {
        throw Error(ErrorCode::FormatVersionMismatch,
                    fmt::format("file has version {} at offset {}, expected {}", version, version_offset, kFormatVersion));
    }
    HnswParams params;
    params.M = r.u32("M");
    params.ef_construction = r.u32("ef_construction");
    params.ef_search = r.u32("ef_search");
    params.seed = r.u64("seed");
    const auto params_offset = r.offset();
    try {
        params.validate();
    } catch (const Error& e) {
        throw CorruptFileError(params_offset, e.what());
    }
    HnswIndex index(params);
    index.rng_state_ = r.u64("rng state");
    index.dim_ = r.u32("dimension");
    const std::uint32_t count = r.u32("record count");
    const std::uint32_t entry = r.u32("entry point");
    index.max_level_ = r.u32("max level");
    if ((count == 0) != (entry == kNoEntry) || (count > 0 && entry >= count)) {
        throw CorruptFileError(r.offset(), "inconsistent entry point");
    }
    index.entry_ = entry == kNoEntry ? -1 : static_cast<std::int64_t>(entry);
    if (count > 0 && index.dim_ == 0) throw CorruptFileError(r.offset(), "zero dimension");

    index.nodes_.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto record_offset = r.offset();
        Node node;
        node.record.doc_id = std::string(r.str("doc id"));
        const auto meta_text = r.str("metadata");
        try {
            node.record.metadata = metadata_from_json(json::parse(meta_text));
        } catch (const std::exception& e) {
            throw CorruptFileError(record_offset, fmt::format("bad metadata: {}", e.what()));
        }
        std::vector<float> values(index.dim_);
        for (auto& v : values) v = r.f32("vector");
        try {
            node.record.vector = EmbeddingVector::from_unit(std::move(values));
        } catch (const Error& e) {
            throw CorruptFileError(record_offset, e.what());
        }
        node.level = r.u32("level");
        if (node.level > index.max_level_) throw CorruptFileError(r.offset(), "node level exceeds max level");
        node.links.resize(node.level + 1);
        if (!index.by_id_.emplace(node.record.doc_id, i).second) {
            throw CorruptFileError(record_offset, fmt::format("duplicate doc id '{}'", node.record.doc_id));
        }
        index.nodes_.push_back(std::move(node));
    }
    if (count > 0 && index.nodes_[entry].level != index.max_level_) {
        throw CorruptFileError(r.offset(), "entry point is not on the top layer");
    }
    for (auto& node : index.nodes_) {
        for (std::size_t layer = 0; layer < node.links.size(); ++layer) {
            const std::uint32_t n = r.u32("adjacency size");
            if (n > index.max_links(layer)) throw CorruptFileError(r.offset(), "adjacency list too long");
            node.links[layer].resize(n);
            for (auto& nb : node.links[layer]) {
                nb = r.u32("adjacency");
                if (nb >= count || index.nodes_[nb].level < layer) {
                    throw CorruptFileError(r.offset(), "adjacency refers to an invalid node");
                }
            }
        }
    }
    if (!r.at_end()) throw CorruptFileError(r.offset(), "trailing bytes");
    return index;
}

void HnswIndex::save(const std::filesystem::path& path) const {
    const auto image = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot write {}", path.string()));
    out.write(image.data(), static_cast<std::streamsize>(image.size()));
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("short write to {}", path.string()));
}

HnswIndex HnswIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace rac::index
