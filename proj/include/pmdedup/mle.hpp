#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_map>

#include <openssl/evp.h>

#include "pmdedup/core.hpp"
#include "pmdedup/hash.hpp"

namespace pmdedup {

struct RateLimitedError : std::runtime_error {
    RateLimitedError() : std::runtime_error("key server: rate limited") {}
};

struct AuthFailureError : std::runtime_error {
    AuthFailureError() : std::runtime_error("authentication failure") {}
};

struct AttestationFailedError : std::runtime_error {
    AttestationFailedError() : std::runtime_error("enclave measurement mismatch") {}
};

struct MleKey {
    Digest key{};
    bool operator==(const MleKey&) const = default;
};

namespace detail {

// AES-256-GCM. Output layout: nonce(12) || ciphertext || tag(16).
inline Bytes aead_encrypt(std::span<const std::uint8_t> key, std::span<const std::uint8_t> nonce,
                          std::span<const std::uint8_t> plaintext) {
    Bytes out(12 + plaintext.size() + 16);
    std::memcpy(out.data(), nonce.data(), 12);
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(),
                                                                        EVP_CIPHER_CTX_free);
    int len = 0;
    if (!EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) ||
        !EVP_EncryptUpdate(ctx.get(), out.data() + 12, &len, plaintext.data(),
                           static_cast<int>(plaintext.size())) ||
        !EVP_EncryptFinal_ex(ctx.get(), out.data() + 12 + len, &len) ||
        !EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16,
                             out.data() + 12 + plaintext.size())) {
        throw std::runtime_error("aead: encrypt failure");
    }
    return out;
}

inline Bytes aead_decrypt(std::span<const std::uint8_t> key, std::span<const std::uint8_t> blob) {
    if (blob.size() < 12 + 16) throw AuthFailureError{};
    std::size_t clen = blob.size() - 12 - 16;
    Bytes out(clen);
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(),
                                                                        EVP_CIPHER_CTX_free);
    int len = 0;
    Bytes tag(blob.end() - 16, blob.end());
    if (!EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), blob.data()) ||
        !EVP_DecryptUpdate(ctx.get(), out.data(), &len, blob.data() + 12,
                           static_cast<int>(clen)) ||
        !EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data())) {
        throw std::runtime_error("aead: decrypt setup failure");
    }
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &len) <= 0) throw AuthFailureError{};
    return out;
}

}  // namespace detail

/// MLE requires convergent ciphertexts, so the nonce is content-derived:
/// the first 12 bytes of SHA-256(plaintext).
inline CipherChunk encrypt_chunk(const PlainChunk& chunk, const MleKey& key) {
    Digest h = sha256(chunk.data);
    return CipherChunk{detail::aead_encrypt(key.key, std::span(h.data(), 12), chunk.data)};
}

inline PlainChunk decrypt_chunk(const CipherChunk& chunk, const MleKey& key) {
    return PlainChunk{detail::aead_decrypt(key.key, chunk.data)};
}

/// Server-aided MLE key server: PRF over a global secret, token-bucket
/// rate limiting per client in virtual time.
struct RateLimit {
    double capacity = 1e9;
    double refill_per_second = 1e9;
};

class KeyServer {
public:
    KeyServer(Digest global_secret, RateLimit limit = {})
        : global_secret_(global_secret), limit_(limit) {}

    MleKey derive_key(ClientId client, const Fingerprint& plain_fp, VirtualTime now) {
        take_token(client, now);
        Bytes msg(plain_fp.bytes.begin(), plain_fp.bytes.end());
        return MleKey{hmac_sha256(global_secret_, msg)};
    }

private:
    struct Bucket {
        double tokens = 0;
        VirtualTime last{};
        bool init = false;
    };

    void take_token(ClientId client, VirtualTime now) {
        Bucket& b = buckets_[client];
        if (!b.init) {
            b.tokens = limit_.capacity;
            b.last = now;
            b.init = true;
        }
        double dt = static_cast<double>(now.nanos - b.last.nanos) / 1e9;
        b.tokens = std::min(limit_.capacity, b.tokens + dt * limit_.refill_per_second);
        b.last = now;
        if (b.tokens < 1.0) throw RateLimitedError{};
        b.tokens -= 1.0;
    }

    Digest global_secret_;
    RateLimit limit_;
    std::unordered_map<ClientId, Bucket> buckets_;
};

/// Simulated attestation + key agreement between the cloud and an edge enclave.
/// The enclave presents its measurement; on a match both endpoints derive the
/// same K_shared and use it to seal every cloud<->enclave payload.
class SecureChannel {
public:
    static SecureChannel establish(const Digest& expected_measurement,
                                   const Digest& enclave_measurement, EdgeId enclave_id,
                                   std::uint64_t session_nonce) {
        if (enclave_measurement != expected_measurement) throw AttestationFailedError{};
        Bytes msg(enclave_measurement.begin(), enclave_measurement.end());
        put_u64_le(msg, enclave_id);
        put_u64_le(msg, session_nonce);
        static constexpr std::uint8_t label[] = "pm-dedup-channel";
        return SecureChannel(hmac_sha256(std::span(label, sizeof(label) - 1), msg));
    }

    const Digest& shared_secret() const { return k_shared_; }

    Bytes seal(std::span<const std::uint8_t> payload) {
        Bytes nonce(12, 0);
        for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(seq_ >> (8 * i));
        ++seq_;
        return detail::aead_encrypt(k_shared_, nonce, payload);
    }

    Bytes open(std::span<const std::uint8_t> blob) const {
        return detail::aead_decrypt(k_shared_, blob);
    }

private:
    explicit SecureChannel(Digest k) : k_shared_(k) {}

    Digest k_shared_{};
    std::uint64_t seq_ = 0;
};

}  // namespace pmdedup
