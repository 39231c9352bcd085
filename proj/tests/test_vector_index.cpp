#include <doctest.h>

#include <random>
#include <set>
#include <thread>

#include "rac/error.hpp"
#include "rac/vector_index.hpp"
#include "test_support.hpp"

using namespace rac;
using namespace rac::index;
using rac::providers::unit_normalize;
using rac::testing::random_unit_vector;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an rac::Error");
    return ErrorCode::InvalidArgument;
}

IndexRecord make_record(std::string id, EmbeddingVector v, Label label = Label::Unclassified) {
    return IndexRecord{std::move(id), std::move(v), RecordMetadata{label, Provenance::Original, 3, "test"}};
}

std::vector<IndexRecord> random_records(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<IndexRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "r%05zu", i);
        out.push_back(make_record(id, random_unit_vector(rng, dim), kAllLabels[i % 3]));
    }
    return out;
}

std::vector<std::string> ids_of(const std::vector<SearchHit>& hits) {
    std::vector<std::string> ids;
    for (const auto& h : hits) ids.push_back(h.doc_id);
    return ids;
}

void check_sorted(const std::vector<SearchHit>& hits) {
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].rank == i);
        CHECK(hits[i].similarity >= -1.0 - 1e-9);
        CHECK(hits[i].similarity <= 1.0 + 1e-9);
        if (i > 0) {
            const bool ordered = hits[i - 1].similarity > hits[i].similarity ||
                                 (hits[i - 1].similarity == hits[i].similarity && hits[i - 1].doc_id < hits[i].doc_id);
            CHECK(ordered);
        }
    }
}

}  // namespace

TEST_CASE("insert") {
    HnswIndex index;
    CHECK(index.entry_point() == -1);
    index.insert(make_record("first", unit_normalize(std::vector<double>{1, 2, 3})));
    CHECK(index.entry_point() == 0);
    CHECK(index.max_level() == index.level(0));
    CHECK(code_of([&] { index.insert(make_record("first", unit_normalize(std::vector<double>{1, 0, 0}))); }) ==
          ErrorCode::DuplicateDocId);
    CHECK(code_of([&] { index.insert(make_record("other", unit_normalize(std::vector<double>{1, 0}))); }) ==
          ErrorCode::DimensionMismatch);

    std::mt19937_64 rng(5);
    HnswIndex big;
    std::vector<EmbeddingVector> vs;
    for (int i = 0; i < 300; ++i) {
        vs.push_back(random_unit_vector(rng, 16));
        big.insert(make_record("v" + std::to_string(i), vs.back()));
    }
    for (int i = 0; i < 300; i += 7) {
        const auto hits = big.search(vs[i], 1);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].doc_id == "v" + std::to_string(i));
        CHECK(hits[0].similarity >= 0.999999);
    }
}

TEST_CASE("level assignment follows floor(-ln U * mL) with the seeded stream") {
    HnswParams params;
    params.seed = 99;
    HnswIndex index(params);
    rac::SplitMix64 oracle(99);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        index.insert(make_record("n" + std::to_string(i), random_unit_vector(rng, 8)));
        const double expected = std::floor(-std::log(oracle.uniform_open_closed()) / std::log(16.0));
        CHECK(index.level(i) == static_cast<std::size_t>(expected));
    }
    CHECK(index.rng_state() == oracle.state());
}

TEST_CASE("search basics") {
    HnswIndex index;
    index.insert(make_record("x", unit_normalize(std::vector<double>{1, 0, 0})));
    index.insert(make_record("y", unit_normalize(std::vector<double>{0, 1, 0})));
    index.insert(make_record("z", unit_normalize(std::vector<double>{0, 0, 1})));
    const auto hits = index.search(unit_normalize(std::vector<double>{0, 1, 0}), 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].doc_id == "y");
    CHECK(hits[0].similarity == 1.0);

    index.insert(make_record("w", unit_normalize(std::vector<double>{1, 1, 0})));
    const auto all = index.search(unit_normalize(std::vector<double>{1, 0, 0}), 10);
    CHECK(all.size() == 4);
    check_sorted(all);

    CHECK(code_of([&] { index.search(unit_normalize(std::vector<double>{1, 0, 0}), 0); }) ==
          ErrorCode::InvalidArgument);
    HnswIndex empty;
    CHECK(empty.search(unit_normalize(std::vector<double>{1, 0}), 3).empty());
}

TEST_CASE("brute_force_search") {
    HnswIndex one;
    one.insert(make_record("only", unit_normalize(std::vector<double>{0.3, 0.4})));
    const auto single = one.brute_force_search(unit_normalize(std::vector<double>{1, 0}), 5);
    REQUIRE(single.size() == 1);
    CHECK(single[0].doc_id == "only");
    CHECK(single[0].rank == 0);

    HnswIndex tie;
    tie.insert(make_record("b", unit_normalize(std::vector<double>{1, 1})));
    tie.insert(make_record("a", unit_normalize(std::vector<double>{1, -1})));
    const auto tied = tie.brute_force_search(unit_normalize(std::vector<double>{1, 0}), 2);
    CHECK(ids_of(tied) == std::vector<std::string>{"a", "b"});
    CHECK(ids_of(tie.search(unit_normalize(std::vector<double>{1, 0}), 2)) == std::vector<std::string>{"a", "b"});

    // Five fixed vectors; dot products with q = (0.6, 0, 0.8) by hand:
    // v1=(1,0,0): 0.6  v2=(0,1,0): 0  v3=(0.6,0.8,0): 0.36  v4=(0,0.6,0.8): 0.64  v5=(0.8,0,0.6): 0.96
    HnswIndex five;
    five.insert(make_record("v1", unit_normalize(std::vector<double>{1, 0, 0})));
    five.insert(make_record("v2", unit_normalize(std::vector<double>{0, 1, 0})));
    five.insert(make_record("v3", unit_normalize(std::vector<double>{0.6, 0.8, 0})));
    five.insert(make_record("v4", unit_normalize(std::vector<double>{0, 0.6, 0.8})));
    five.insert(make_record("v5", unit_normalize(std::vector<double>{0.8, 0, 0.6})));
    const auto hits = five.brute_force_search(unit_normalize(std::vector<double>{0.6, 0, 0.8}), 5);
    CHECK(ids_of(hits) == std::vector<std::string>{"v5", "v4", "v1", "v3", "v2"});
    const std::vector<double> expected{0.96, 0.64, 0.6, 0.36, 0.0};
    for (std::size_t i = 0; i < 5; ++i) CHECK(hits[i].similarity == doctest::Approx(expected[i]).epsilon(1e-6));
    CHECK(five.search(unit_normalize(std::vector<double>{0.6, 0, 0.8}), 5) == hits);
}

TEST_CASE("search agrees with the brute-force oracle") {
    auto records = random_records(200, 32, 17);
    const auto index = HnswIndex::rebuild(records, {});
    std::mt19937_64 rng(23);
    int same = 0;
    for (int q = 0; q < 100; ++q) {
        const auto query = random_unit_vector(rng, 32);
        const auto approx = index.search(query, 5);
        check_sorted(approx);
        if (ids_of(approx) == ids_of(index.brute_force_search(query, 5))) ++same;
    }
    CHECK(same >= 95);
}

TEST_CASE("filtered search equals filtered brute force on small indexes") {
    auto records = random_records(200, 16, 41);
    const auto index = HnswIndex::rebuild(records, {});
    std::mt19937_64 rng(43);
    for (int q = 0; q < 40; ++q) {
        const auto query = random_unit_vector(rng, 16);
        for (Label l : kAllLabels) {
            const auto filter = label_filter(l);
            for (std::size_t k : {1u, 5u, 30u, 100u}) {
                const auto approx = index.search(query, k, filter);
                CHECK(approx == index.brute_force_search(query, k, filter));
                for (const auto& h : approx) CHECK(h.metadata.label == l);
            }
        }
    }
    const auto none = index.search(random_unit_vector(rng, 16), 5, [](const RecordMetadata&) { return false; });
    CHECK(none.empty());
}

TEST_CASE("graph invariants") {
    HnswParams params;
    params.M = 4;
    params.ef_construction = 20;
    const auto index = HnswIndex::rebuild(random_records(400, 8, 3), params);
    for (std::size_t n = 0; n < index.size(); ++n) {
        for (std::size_t layer = 0; layer <= index.level(n); ++layer) {
            const auto links = index.neighbors(n, layer);
            CHECK(links.size() <= (layer == 0 ? 2 * params.M : params.M));
            std::set<std::uint32_t> unique(links.begin(), links.end());
            CHECK(unique.size() == links.size());
            for (auto nb : links) {
                CHECK(nb != n);
                CHECK(index.level(nb) >= layer);
            }
        }
    }
    CHECK(index.level(static_cast<std::size_t>(index.entry_point())) == index.max_level());
}

TEST_CASE("rebuild") {
    auto records = random_records(150, 12, 8);
    const auto a = HnswIndex::rebuild(records, {});
    const auto b = HnswIndex::rebuild(records, {});
    for (std::size_t n = 0; n < a.size(); ++n) {
        CHECK(a.level(n) == b.level(n));
        for (std::size_t layer = 0; layer <= a.level(n); ++layer) CHECK(a.neighbors(n, layer) == b.neighbors(n, layer));
    }
    CHECK(a.serialize() == b.serialize());

    std::mt19937_64 rng(1234);
    const auto fresh_vec = random_unit_vector(rng, 12);
    auto extended = records;
    extended.push_back(make_record("fresh", fresh_vec));
    const auto rebuilt = HnswIndex::rebuild(extended, {});
    CHECK(rebuilt.search(fresh_vec, 1).front().doc_id == "fresh");
    auto incremental = HnswIndex::rebuild(records, {});
    incremental.insert(make_record("fresh", fresh_vec));
    CHECK(incremental.search(fresh_vec, 1).front().doc_id == "fresh");

    const auto empty = HnswIndex::rebuild({}, {});
    CHECK(empty.size() == 0);
    CHECK(empty.search(fresh_vec, 3).empty());

    extended.push_back(make_record("fresh", fresh_vec));
    CHECK(code_of([&] { HnswIndex::rebuild(extended, {}); }) == ErrorCode::DuplicateDocId);
}

TEST_CASE("save and load") {
    rac::testing::TempDir dir;
    const auto index = HnswIndex::rebuild(random_records(100, 24, 77), {});
    index.save(dir / "idx.bin");
    const auto loaded = HnswIndex::load(dir / "idx.bin");
    CHECK(loaded.serialize() == index.serialize());
    CHECK(loaded.rng_state() == index.rng_state());
    std::mt19937_64 rng(78);
    for (int q = 0; q < 20; ++q) {
        const auto query = random_unit_vector(rng, 24);
        CHECK(loaded.search(query, 10) == index.search(query, 10));
        CHECK(loaded.search(query, 4, label_filter(Label::Secret)) == index.search(query, 4, label_filter(Label::Secret)));
    }

    const auto image = index.serialize();
    CHECK(image.substr(0, 7) == "RACIDX1");

    SUBCASE("truncated") {
        for (std::size_t cut : {std::size_t{3}, std::size_t{20}, image.size() / 2, image.size() - 1}) {
            try {
                HnswIndex::deserialize(std::string_view(image).substr(0, cut));
                FAIL("expected CorruptFile");
            } catch (const CorruptFileError& e) {
                CHECK(e.code() == ErrorCode::CorruptFile);
                CHECK(e.offset() <= cut);
            }
        }
        rac::testing::write_file(dir / "short.bin", image.substr(0, image.size() / 3));
        CHECK(code_of([&] { HnswIndex::load(dir / "short.bin"); }) == ErrorCode::CorruptFile);
    }
    SUBCASE("version bump") {
        auto bumped = image;
        bumped[7] = static_cast<char>(bumped[7] + 1);
        rac::testing::write_file(dir / "v2.bin", bumped);
        CHECK(code_of([&] { HnswIndex::load(dir / "v2.bin"); }) == ErrorCode::FormatVersionMismatch);
    }
    SUBCASE("bad magic and trailing bytes") {
        auto bad = image;
        bad[0] = 'X';
        CHECK(code_of([&] { HnswIndex::deserialize(bad); }) == ErrorCode::CorruptFile);
        CHECK(code_of([&] { HnswIndex::deserialize(image + "x"); }) == ErrorCode::CorruptFile);
    }
    SUBCASE("missing file") {
        CHECK(code_of([&] { HnswIndex::load(dir / "nope.bin"); }) == ErrorCode::FileNotFound);
    }
    SUBCASE("empty index round-trips") {
        HnswIndex empty;
        CHECK(HnswIndex::deserialize(empty.serialize()).size() == 0);
    }
}

TEST_CASE("concurrent readers with one writer") {
    auto records = random_records(300, 16, 19);
    HnswIndex index = HnswIndex::rebuild(std::vector<IndexRecord>(records.begin(), records.begin() + 100), {});
    std::atomic<bool> failed{false};
    std::vector<std::thread> readers;
    for (int t = 0; t < 3; ++t) {
        readers.emplace_back([&, t] {
            std::mt19937_64 rng(t);
            for (int q = 0; q < 200; ++q) {
                const auto hits = index.search(random_unit_vector(rng, 16), 5);
                if (hits.empty()) failed = true;
            }
        });
    }
    for (std::size_t i = 100; i < records.size(); ++i) index.insert(records[i]);
    for (auto& r : readers) r.join();
    CHECK_FALSE(failed.load());
    CHECK(index.size() == 300);
}
