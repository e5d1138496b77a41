#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "pmdedup/chunking.hpp"
#include "pmdedup/core.hpp"

using namespace pmdedup;

namespace {

Bytes random_bytes(std::size_t n, std::uint64_t seed) {
    Bytes b(n);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

const ChunkerConfig kCfg{.min_size = 2048, .avg_size = 8192, .max_size = 32768};

}  // namespace

TEST_CASE("config validation") {
    CHECK_THROWS_AS(Chunker(ChunkerConfig{.min_size = 8192, .avg_size = 4096, .max_size = 9000}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Chunker(ChunkerConfig{.min_size = 1024, .avg_size = 5000, .max_size = 9000}),
                    std::invalid_argument);
}

TEST_CASE("chunking is deterministic and reassembles the input") {
    Chunker ch(kCfg);
    Bytes data = random_bytes(1 << 20, 1);
    auto a = ch.chunk_stream(data);
    auto b = ch.chunk_stream(data);
    REQUIRE(a.size() == b.size());
    Bytes joined;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].data == b[i].data);
        joined.insert(joined.end(), a[i].data.begin(), a[i].data.end());
    }
    CHECK(joined == data);
    CHECK_THROWS_AS(ch.chunk_stream(Bytes{}), EmptyDataError);
}

TEST_CASE("chunk sizes respect min/max clamps") {
    Chunker ch(kCfg);
    Bytes data = random_bytes(2 << 20, 2);
    auto chunks = ch.chunk_stream(data);
    REQUIRE(chunks.size() > 10);
    double mean = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        std::size_t n = chunks[i].data.size();
        CHECK(n <= kCfg.max_size);
        if (i + 1 < chunks.size()) CHECK(n >= kCfg.min_size);
        mean += static_cast<double>(n);
    }
    mean /= static_cast<double>(chunks.size());
    // Normalized chunking concentrates sizes near the target.
    CHECK(mean > kCfg.avg_size * 0.5);
    CHECK(mean < kCfg.avg_size * 2.0);
}

TEST_CASE("cut decisions are content-local: a front edit leaves most chunks intact") {
    Chunker ch(kCfg);
    Bytes data = random_bytes(1 << 20, 3);
    auto before = ch.chunk_stream(data);

    Bytes shifted;
    shifted.push_back(0x42);
    shifted.insert(shifted.end(), data.begin(), data.end());
    auto after = ch.chunk_stream(shifted);

    std::set<Fingerprint> fps;
    for (const auto& c : after) fps.insert(fingerprint_of(c.data));
    std::size_t unchanged = 0;
    for (const auto& c : before)
        if (fps.contains(fingerprint_of(c.data))) ++unchanged;
    double frac = static_cast<double>(unchanged) / static_cast<double>(before.size());
    CHECK(frac >= 0.90);
}

TEST_CASE("different seeds give different cut points") {
    ChunkerConfig other = kCfg;
    other.gear_seed = 12345;
    Bytes data = random_bytes(1 << 19, 4);
    auto a = Chunker(kCfg).boundaries(data);
    auto b = Chunker(other).boundaries(data);
    CHECK(a != b);
}

TEST_CASE("boundaries restart cleanly at cut points") {
    // Chunking the suffix that starts at a cut reproduces the remaining cuts;
    // this is the property the workload generator's unit trimming relies on.
    Chunker ch(kCfg);
    Bytes data = random_bytes(1 << 19, 5);
    auto cuts = ch.boundaries(data);
    REQUIRE(cuts.size() > 3);
    std::size_t first = cuts[0];
    auto rest = ch.boundaries(std::span(data).subspan(first));
    REQUIRE(rest.size() == cuts.size() - 1);
    for (std::size_t i = 0; i < rest.size(); ++i) CHECK(rest[i] + first == cuts[i + 1]);
}

TEST_CASE("fixed splitter covers the tail") {
    Bytes data = random_bytes(10000, 6);
    auto chunks = chunk_fixed(data, 4096);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[2].data.size() == 10000 - 2 * 4096);
}
