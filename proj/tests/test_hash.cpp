#include <catch_amalgamated.hpp>

#include "pmdedup/core.hpp"
#include "pmdedup/hash.hpp"

using namespace pmdedup;

static Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

TEST_CASE("sha256 matches the FIPS 180 test vector") {
    // SHA-256("abc")
    CHECK(hex(sha256(bytes_of("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(hex(sha256(Bytes{})) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("hmac-sha256 matches RFC 4231 case 2") {
    Bytes key = bytes_of("Jefe");
    Digest k{};
    // RFC keys are shorter than 32 bytes; hmac helper takes a span key.
    Bytes mac_input = bytes_of("what do ya want for nothing?");
    Digest mac = hmac_sha256(std::span<const std::uint8_t>(key), mac_input);
    CHECK(hex(mac) == "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
    (void)k;
}

TEST_CASE("u64 little-endian round trip") {
    Bytes b;
    put_u64_le(b, 0x0123456789abcdefULL);
    REQUIRE(b.size() == 8);
    CHECK(b[0] == 0xef);
    CHECK(b[7] == 0x01);
    CHECK(get_u64_le(b.data()) == 0x0123456789abcdefULL);
}

TEST_CASE("fingerprints are content addresses") {
    Bytes a = bytes_of("alpha"), b = bytes_of("beta");
    CHECK(fingerprint_of(a) == fingerprint_of(a));
    CHECK(fingerprint_of(a) != fingerprint_of(b));
    CHECK_THROWS_AS(fingerprint_of(Bytes{}), EmptyDataError);
}

TEST_CASE("recipe serialization round trip") {
    FileRecipe r;
    r.file_hash = fingerprint_of(bytes_of("file"));
    r.chunks.push_back({fingerprint_of(bytes_of("c1")), 4096});
    r.chunks.push_back({fingerprint_of(bytes_of("c2")), 12345});
    Bytes wire = serialize_recipe(r);
    // 32-byte file hash, u64 count, then per chunk 32-byte fp + u64 length.
    CHECK(wire.size() == 32 + 8 + 2 * (32 + 8));
    FileRecipe back = deserialize_recipe(wire);
    CHECK(back == r);
}
