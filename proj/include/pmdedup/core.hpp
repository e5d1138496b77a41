#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmdedup/hash.hpp"

namespace pmdedup {

struct EmptyDataError : std::invalid_argument {
    EmptyDataError() : std::invalid_argument("empty input") {}
};

/// Content hash of a ciphertext chunk or plaintext file; the universal index key.
struct Fingerprint {
    Digest bytes{};

    auto operator<=>(const Fingerprint&) const = default;

    std::string hex() const { return pmdedup::hex(bytes); }
};

struct FingerprintHash {
    std::size_t operator()(const Fingerprint& fp) const noexcept {
        std::size_t h;
        std::memcpy(&h, fp.bytes.data(), sizeof(h));
        return h;
    }
};

inline Fingerprint fingerprint_of(std::span<const std::uint8_t> data) {
    if (data.empty()) throw EmptyDataError{};
    return Fingerprint{sha256(data)};
}

struct PlainChunk {
    Bytes data;
};

struct CipherChunk {
    Bytes data;  // nonce || ciphertext || tag
};

// 12-byte content-derived nonce plus 16-byte auth tag.
inline constexpr std::size_t kAeadOverhead = 28;

struct RecipeEntry {
    Fingerprint chunk_fp;
    std::uint64_t chunk_length = 0;

    bool operator==(const RecipeEntry&) const = default;
};

struct FileRecipe {
    Fingerprint file_hash;  // hash of the whole plaintext file
    std::vector<RecipeEntry> chunks;

    bool operator==(const FileRecipe&) const = default;
};

/// Virtual nanoseconds; all latency accounting is in this unit.
struct VirtualTime {
    std::uint64_t nanos = 0;

    auto operator<=>(const VirtualTime&) const = default;
    VirtualTime operator+(VirtualTime o) const { return {nanos + o.nanos}; }
    VirtualTime& operator+=(VirtualTime o) {
        nanos += o.nanos;
        return *this;
    }
    double millis() const { return static_cast<double>(nanos) / 1e6; }
};

inline VirtualTime micros(std::uint64_t us) { return {us * 1000}; }
inline VirtualTime millis_vt(double ms) { return {static_cast<std::uint64_t>(ms * 1e6)}; }

using ClientId = std::uint32_t;
using EdgeId = std::uint32_t;

// Canonical framing: u64 entry count, then 32-byte fingerprint + u64 length per entry,
// preceded by the 32-byte file hash. Used on the wire and on disk.
inline Bytes serialize_recipe(const FileRecipe& r) {
    Bytes out;
    out.insert(out.end(), r.file_hash.bytes.begin(), r.file_hash.bytes.end());
    put_u64_le(out, r.chunks.size());
    for (const auto& e : r.chunks) {
        out.insert(out.end(), e.chunk_fp.bytes.begin(), e.chunk_fp.bytes.end());
        put_u64_le(out, e.chunk_length);
    }
    return out;
}

inline FileRecipe deserialize_recipe(std::span<const std::uint8_t> buf) {
    if (buf.size() < 40) throw std::runtime_error("recipe: truncated header");
    FileRecipe r;
    std::memcpy(r.file_hash.bytes.data(), buf.data(), 32);
    std::uint64_t n = get_u64_le(buf.data() + 32);
    if (buf.size() != 40 + n * 40) throw std::runtime_error("recipe: length mismatch");
    r.chunks.resize(n);
    const std::uint8_t* p = buf.data() + 40;
    for (std::uint64_t i = 0; i < n; ++i, p += 40) {
        std::memcpy(r.chunks[i].chunk_fp.bytes.data(), p, 32);
        r.chunks[i].chunk_length = get_u64_le(p + 32);
    }
    return r;
}

}  // namespace pmdedup
