#include <catch_amalgamated.hpp>

#include <random>

#include "pmdedup/mle.hpp"

using namespace pmdedup;

namespace {

Bytes random_bytes(std::size_t n, std::uint64_t seed) {
    Bytes b(n);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

Digest test_secret() { return sha256(Bytes{1, 2, 3}); }

}  // namespace

TEST_CASE("identical plaintexts encrypt to identical ciphertexts") {
    KeyServer keys(test_secret());
    PlainChunk chunk{random_bytes(5000, 1)};
    Fingerprint fp = fingerprint_of(chunk.data);
    VirtualTime now{};
    MleKey k1 = keys.derive_key(1, fp, now);
    MleKey k2 = keys.derive_key(2, fp, now);
    CHECK(k1.key == k2.key);  // key depends on content, not client
    CipherChunk c1 = encrypt_chunk(chunk, k1);
    CipherChunk c2 = encrypt_chunk(chunk, k2);
    CHECK(c1.data == c2.data);
    CHECK(fingerprint_of(c1.data) == fingerprint_of(c2.data));
}

TEST_CASE("ciphertext overhead is exactly the nonce plus tag") {
    KeyServer keys(test_secret());
    VirtualTime now{};
    for (std::size_t n : {1, 100, 4096, 65536}) {
        PlainChunk chunk{random_bytes(n, n)};
        MleKey k = keys.derive_key(1, fingerprint_of(chunk.data), now);
        CipherChunk c = encrypt_chunk(chunk, k);
        CHECK(c.data.size() == n + kAeadOverhead);
    }
}

TEST_CASE("nonce is content-derived") {
    PlainChunk chunk{random_bytes(777, 9)};
    MleKey k{sha256(Bytes{9})};
    CipherChunk c = encrypt_chunk(chunk, k);
    Digest h = sha256(chunk.data);
    for (int i = 0; i < 12; ++i) CHECK(c.data[i] == h[i]);
}

TEST_CASE("decryption round-trips and rejects tampering") {
    KeyServer keys(test_secret());
    VirtualTime now{};
    PlainChunk chunk{random_bytes(4321, 2)};
    MleKey k = keys.derive_key(1, fingerprint_of(chunk.data), now);
    CipherChunk c = encrypt_chunk(chunk, k);
    CHECK(decrypt_chunk(c, k).data == chunk.data);

    CipherChunk bad = c;
    bad.data[20] ^= 1;
    CHECK_THROWS_AS(decrypt_chunk(bad, k), AuthFailureError);

    MleKey wrong{sha256(Bytes{0xff})};
    CHECK_THROWS_AS(decrypt_chunk(c, wrong), AuthFailureError);
}

TEST_CASE("key server rate limit refills in virtual time") {
    KeyServer keys(test_secret(), RateLimit{2.0, 1.0});  // 2 tokens, 1/s refill
    Fingerprint fp = fingerprint_of(Bytes{5});
    VirtualTime t{};
    keys.derive_key(1, fp, t);
    keys.derive_key(1, fp, t);
    CHECK_THROWS_AS(keys.derive_key(1, fp, t), RateLimitedError);
    // Another client has its own bucket.
    keys.derive_key(2, fp, t);
    // One virtual second refills one token.
    t += millis_vt(1000.0);
    keys.derive_key(1, fp, t);
    CHECK_THROWS_AS(keys.derive_key(1, fp, t), RateLimitedError);
}

TEST_CASE("secure channel attests the measurement") {
    Digest good = sha256(Bytes{1});
    Digest evil = sha256(Bytes{2});
    CHECK_THROWS_AS(SecureChannel::establish(good, evil, 1, 7), AttestationFailedError);

    SecureChannel a = SecureChannel::establish(good, good, 1, 7);
    SecureChannel b = SecureChannel::establish(good, good, 1, 7);
    CHECK(a.shared_secret() == b.shared_secret());

    Bytes msg = random_bytes(300, 3);
    Bytes sealed = a.seal(msg);
    CHECK(b.open(sealed) == msg);

    Bytes tampered = sealed;
    tampered[tampered.size() / 2] ^= 0x80;
    CHECK_THROWS_AS(b.open(tampered), AuthFailureError);
}

TEST_CASE("channel nonces advance per message") {
    Digest m = sha256(Bytes{4});
    SecureChannel a = SecureChannel::establish(m, m, 2, 1);
    Bytes msg{1, 2, 3};
    CHECK(a.seal(msg) != a.seal(msg));
}
