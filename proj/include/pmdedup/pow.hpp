#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "pmdedup/core.hpp"
#include "pmdedup/hash.hpp"

namespace pmdedup {

struct UnknownIdError : std::runtime_error {
    UnknownIdError() : std::runtime_error("pow: unknown id") {}
};

struct ExhaustedError : std::runtime_error {
    ExhaustedError() : std::runtime_error("pow: challenge pool exhausted") {}
};

struct InvalidatedPairError : std::runtime_error {
    InvalidatedPairError() : std::runtime_error("pow: pair range invalidated") {}
};

/// Response bits, MSB-padded to whole bytes with an explicit bit length.
struct BitString {
    Bytes bytes;
    std::uint32_t bit_count = 0;

    bool operator==(const BitString&) const = default;

    void append_bit(bool b) {
        if (bit_count % 8 == 0) bytes.push_back(0);
        if (b) bytes.back() |= static_cast<std::uint8_t>(0x80u >> (bit_count % 8));
        ++bit_count;
    }
};

/// Seed = HMAC-SHA256(csmk, id || LE64(idc)); unique per (id, counter).
inline Digest gen_seed(const Digest& csmk, const Fingerprint& id, std::uint64_t idc) {
    Bytes msg(id.bytes.begin(), id.bytes.end());
    put_u64_le(msg, idc);
    return hmac_sha256(csmk, msg);
}

/// Sample K bit positions from a seeded PRF and collect the addressed bits.
/// Position j = LE64(HMAC-SHA256(seed, LE64(j))[0..8]) mod (8*len); bits are
/// read LSB-first within each byte. Both prover and verifier run this exact
/// pipeline, so it must never change shape.
inline BitString gen_response(const Digest& seed, std::span<const std::uint8_t> data,
                              std::uint32_t k_bits) {
    if (data.empty()) throw EmptyDataError{};
    if (k_bits == 0) throw std::invalid_argument("gen_response: K must be >= 1");
    BitString res;
    const std::uint64_t total_bits = static_cast<std::uint64_t>(data.size()) * 8;
    for (std::uint32_t j = 1; j <= k_bits; ++j) {
        Bytes msg;
        put_u64_le(msg, j);
        Digest h = hmac_sha256(seed, msg);
        std::uint64_t pos = get_u64_le(h.data()) % total_bits;
        bool bit = (data[pos / 8] >> (pos % 8)) & 1;
        res.append_bit(bit);
    }
    return res;
}

/// K grows with object size but stays within [64, 512] bits.
inline std::uint32_t response_bits_for_size(std::uint64_t size_bytes, std::uint32_t floor = 64,
                                            std::uint32_t cap = 512) {
    std::uint64_t k = (size_bytes + 1023) / 1024;
    return static_cast<std::uint32_t>(std::clamp<std::uint64_t>(k, floor, cap));
}

enum class PowLevel { File, Chunk };

struct Challenge {
    Digest seed{};
    std::uint32_t k_bits = 0;
};

/// Pre-computed challenge/response state for one file or chunk. For file
/// entries, chunk-level responses generated under the same seeds are kept
/// alongside (generated in one pass), keyed by position in `chunk_fps`.
struct PowEntry {
    Bytes object_bytes;  // the bytes challenges sample; empty means no source yet
    std::uint32_t k_bits = 0;
    std::vector<Digest> chal;
    std::vector<BitString> res;
    std::vector<Fingerprint> chunk_fps;                 // file entries only
    std::vector<std::vector<BitString>> chunk_res;      // [pair][chunk], file entries only
    std::uint64_t idc = 0;  // total pairs ever generated
    std::uint64_t idu = 0;  // next unused pair index
    std::uint64_t valid_begin = 0;  // first index this holder may still issue
    std::uint64_t epoch_tag = 0;

    std::uint64_t unused() const { return chal.size() - std::max(idu, valid_begin); }
};

/// A globally auditable record of every issued (entry, index) pair; used to
/// assert the single-use invariant across cloud and edge servers.
struct IssueRecord {
    Fingerprint id;
    PowLevel level = PowLevel::Chunk;
    std::uint64_t index = 0;
    std::uint32_t issuer = 0;

    bool operator==(const IssueRecord&) const = default;
    auto operator<=>(const IssueRecord&) const = default;
};

using IssueLog = std::vector<IssueRecord>;

enum class PowVerdict { Verified, FallbackToChunks, Failed, NoPairsAvailable };

/// The F and C hash-maps: file-level and chunk-level pre-computed pools.
class PowMaps {
public:
    std::map<Fingerprint, PowEntry> files;   // keyed by plaintext file hash
    std::map<Fingerprint, PowEntry> chunks;  // keyed by ciphertext chunk fingerprint

    PowEntry& entry(PowLevel level, const Fingerprint& id) {
        auto& m = level == PowLevel::File ? files : chunks;
        auto it = m.find(id);
        if (it == m.end()) throw UnknownIdError{};
        return it->second;
    }

    const PowEntry* find(PowLevel level, const Fingerprint& id) const {
        const auto& m = level == PowLevel::File ? files : chunks;
        auto it = m.find(id);
        return it == m.end() ? nullptr : &it->second;
    }

    /// Register an object with its byte source (and, for files, the per-chunk
    /// ciphertexts challenges will also cover). Idempotent for known ids.
    void register_chunk(const Fingerprint& fp, Bytes cipher_bytes) {
        auto [it, fresh] = chunks.try_emplace(fp);
        if (fresh) {
            it->second.object_bytes = std::move(cipher_bytes);
            it->second.k_bits = response_bits_for_size(it->second.object_bytes.size());
        }
    }

    void register_file(const Fingerprint& file_hash, Bytes plain_bytes,
                       std::vector<Fingerprint> chunk_fps) {
        auto [it, fresh] = files.try_emplace(file_hash);
        if (fresh) {
            it->second.object_bytes = std::move(plain_bytes);
            it->second.k_bits = response_bits_for_size(it->second.object_bytes.size());
            it->second.chunk_fps = std::move(chunk_fps);
        }
    }

    /// Pool refill: append n fresh (seed, response) pairs to an entry; file
    /// entries additionally get chunk responses for every member chunk under
    /// the same seed.
    void gen_challenges(PowLevel level, const Fingerprint& id, std::uint64_t n, const Digest& csmk,
                        std::uint64_t epoch = 0) {
        PowEntry& e = entry(level, id);
        if (e.object_bytes.empty()) throw UnknownIdError{};
        for (std::uint64_t i = 0; i < n; ++i) {
            ++e.idc;
            Digest seed = gen_seed(csmk, id, e.idc);
            e.chal.push_back(seed);
            e.res.push_back(gen_response(seed, e.object_bytes, e.k_bits));
            if (level == PowLevel::File) {
                std::vector<BitString> per_chunk;
                per_chunk.reserve(e.chunk_fps.size());
                for (const auto& cfp : e.chunk_fps) {
                    const PowEntry& ce = entry(PowLevel::Chunk, cfp);
                    per_chunk.push_back(
                        gen_response(seed, ce.object_bytes, ce.k_bits));
                }
                e.chunk_res.push_back(std::move(per_chunk));
            }
        }
        e.epoch_tag = epoch;
    }

    /// Issue the next unused challenge of an entry, consuming its index.
    /// Issuing and consuming are one step; a pair can never go out twice.
    Challenge issue(PowLevel level, const Fingerprint& id, IssueLog& log, std::uint32_t issuer) {
        PowEntry& e = entry(level, id);
        if (e.idu < e.valid_begin) throw InvalidatedPairError{};
        if (e.idu >= e.chal.size()) throw ExhaustedError{};
        std::uint64_t idx = e.idu++;
        log.push_back({id, level, idx, issuer});
        return Challenge{e.chal[idx], e.k_bits};
    }

    /// Acknowledge invalidated spans and top the pool back up if drained.
    void refresh(PowLevel level, const Fingerprint& id, std::uint64_t n, const Digest& csmk,
                 std::uint64_t epoch = 0) {
        PowEntry& e = entry(level, id);
        e.idu = std::max(e.idu, e.valid_begin);
        if (e.unused() == 0 && n > 0) gen_challenges(level, id, n, csmk, epoch);
    }

    const BitString& stored_response(PowLevel level, const Fingerprint& id,
                                     std::uint64_t index) const {
        const PowEntry* e = find(level, id);
        if (!e || index >= e->res.size()) throw UnknownIdError{};
        return e->res[index];
    }
};

/// One edge server's slice of a pool: pairs [begin, end) of the given entry.
struct PoolRange {
    Fingerprint id;
    PowLevel level = PowLevel::Chunk;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

/// Split every entry's unused pairs into pairwise-disjoint contiguous ranges,
/// one per edge server, and mark the shared spans invalid for the local
/// (cloud-side) holder.
inline std::vector<std::vector<PoolRange>> allocate_pool(PowMaps& maps,
                                                         std::size_t edge_count) {
    if (edge_count == 0) throw std::invalid_argument("allocate_pool: no edge servers");
    std::vector<std::vector<PoolRange>> per_edge(edge_count);
    auto split = [&](PowLevel level, const Fingerprint& id, PowEntry& e) {
        std::uint64_t avail = e.unused();
        if (avail == 0) throw ExhaustedError{};
        std::uint64_t base = std::max(e.idu, e.valid_begin);
        std::uint64_t share = avail / edge_count;
        std::uint64_t extra = avail % edge_count;
        std::uint64_t cursor = base;
        for (std::size_t s = 0; s < edge_count; ++s) {
            std::uint64_t len = share + (s < extra ? 1 : 0);
            if (len == 0) continue;
            per_edge[s].push_back({id, level, cursor, cursor + len});
            cursor += len;
        }
        e.valid_begin = cursor;  // everything handed out is dead locally
    };
    for (auto& [id, e] : maps.files) split(PowLevel::File, id, e);
    for (auto& [id, e] : maps.chunks) split(PowLevel::Chunk, id, e);
    return per_edge;
}

using Responder = std::function<BitString(const Challenge&)>;

/// File-level verification. A missing file entry or a mismatched response
/// falls through to chunk-level verification rather than hard failure.
inline PowVerdict verify_file(PowMaps& maps, const Fingerprint& file_hash,
                              const Responder& respond, IssueLog& log, std::uint32_t issuer) {
    if (!maps.find(PowLevel::File, file_hash)) return PowVerdict::FallbackToChunks;
    PowEntry& e = maps.entry(PowLevel::File, file_hash);
    std::uint64_t idx = e.idu;
    Challenge chal = maps.issue(PowLevel::File, file_hash, log, issuer);
    BitString client_res = respond(chal);
    return client_res == e.res[idx] ? PowVerdict::Verified : PowVerdict::FallbackToChunks;
}

/// Chunk-level verification, with each chunk entry consuming its own counter.
inline PowVerdict verify_chunk(PowMaps& maps, const Fingerprint& chunk_fp,
                               const Responder& respond, IssueLog& log, std::uint32_t issuer) {
    const PowEntry* e = maps.find(PowLevel::Chunk, chunk_fp);
    if (!e || e->idu >= e->chal.size() || e->idu < e->valid_begin)
        return PowVerdict::NoPairsAvailable;
    std::uint64_t idx = e->idu;
    Challenge chal = maps.issue(PowLevel::Chunk, chunk_fp, log, issuer);
    BitString client_res = respond(chal);
    return client_res == maps.stored_response(PowLevel::Chunk, chunk_fp, idx)
               ? PowVerdict::Verified
               : PowVerdict::Failed;
}

/// Audit helper: true when no (entry, level, index) pair appears twice.
inline bool issue_log_single_use(const IssueLog& log) {
    auto key = [](const IssueRecord& r) { return std::tuple(r.id, r.level, r.index); };
    std::vector<std::tuple<Fingerprint, PowLevel, std::uint64_t>> keys;
    keys.reserve(log.size());
    for (const auto& r : log) keys.push_back(key(r));
    std::sort(keys.begin(), keys.end());
    return std::adjacent_find(keys.begin(), keys.end()) == keys.end();
}

}  // namespace pmdedup
