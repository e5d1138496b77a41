#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "pmdedup/chunking.hpp"
#include "pmdedup/cloud.hpp"
#include "pmdedup/core.hpp"
#include "pmdedup/edge.hpp"
#include "pmdedup/latency.hpp"
#include "pmdedup/mle.hpp"
#include "pmdedup/pow.hpp"

namespace pmdedup {

struct UnknownScopeError : std::out_of_range {
    UnknownScopeError() : std::out_of_range("challenge scope beyond plan") {}
};

struct PlannedChunk {
    PlainChunk plain;
    MleKey key;
    CipherChunk cipher;
    Fingerprint fingerprint;  // of the ciphertext
};

struct UploadPlan {
    Fingerprint file_hash;  // hash of the whole plaintext file
    Bytes file_bytes;
    std::vector<PlannedChunk> chunks;

    FileRecipe recipe() const {
        FileRecipe r;
        r.file_hash = file_hash;
        for (const auto& c : chunks) r.chunks.push_back({c.fingerprint, c.plain.data.size()});
        return r;
    }

    std::vector<Fingerprint> fingerprints() const {
        std::vector<Fingerprint> out;
        out.reserve(chunks.size());
        for (const auto& c : chunks) out.push_back(c.fingerprint);
        return out;
    }
};

struct UploadReport {
    std::uint64_t bytes_sent = 0;  // ciphertext payload, recipe excluded
    std::uint64_t recipe_bytes = 0;
    CostLedger ledger;
    std::size_t hit_local = 0;
    std::size_t hit_share = 0;
    std::size_t hit_cloud = 0;
    std::size_t unique = 0;
};

/// Chunk, fetch keys (with bounded virtual-time backoff on rate limiting),
/// encrypt, fingerprint.
inline UploadPlan prepare_upload(std::span<const std::uint8_t> file, const Chunker& chunker,
                                 KeyServer& keys, ClientId client, VirtualTime& clock,
                                 int max_retries = 3) {
    if (file.empty()) throw EmptyDataError{};
    UploadPlan plan;
    plan.file_bytes.assign(file.begin(), file.end());
    plan.file_hash = fingerprint_of(file);
    for (auto& chunk : chunker.chunk_stream(file)) {
        Fingerprint plain_fp = fingerprint_of(chunk.data);
        MleKey key;
        VirtualTime backoff = millis_vt(1.0);
        for (int attempt = 0;; ++attempt) {
            try {
                key = keys.derive_key(client, plain_fp, clock);
                break;
            } catch (const RateLimitedError&) {
                if (attempt >= max_retries) throw;
                clock += backoff;
                backoff.nanos *= 2;
            }
        }
        CipherChunk cipher = encrypt_chunk(chunk, key);
        Fingerprint fp = fingerprint_of(cipher.data);
        plan.chunks.push_back({std::move(chunk), key, std::move(cipher), fp});
    }
    return plan;
}

/// Shared PRF pipeline with the server side: file-level challenges sample the
/// plaintext file, chunk-level challenges sample the ciphertext chunk.
inline BitString answer_challenge(const UploadPlan& plan, const Challenge& chal,
                                  std::optional<std::size_t> chunk_index) {
    if (!chunk_index) return gen_response(chal.seed, plan.file_bytes, chal.k_bits);
    if (*chunk_index >= plan.chunks.size()) throw UnknownScopeError{};
    return gen_response(chal.seed, plan.chunks[*chunk_index].cipher.data, chal.k_bits);
}

/// PoW session, then tiered checks, then the unique ciphertext plus recipe
/// over the wire; everything itemized in virtual time.
inline UploadReport upload(const UploadPlan& plan, ClientId client, EdgeServer& edge,
                           CloudServer& cloud, const LatencyModel& model,
                           bool use_local_index = true) {
    UploadReport report;
    std::map<Fingerprint, std::size_t> index_of;
    for (std::size_t i = 0; i < plan.chunks.size(); ++i)
        index_of.emplace(plan.chunks[i].fingerprint, i);

    auto fps = plan.fingerprints();
    report.ledger.pow += model.edge_round_trip(32 + fps.size() * 32);

    auto chunk_responder = [&](const Fingerprint& fp) -> Responder {
        return [&plan, &index_of, fp](const Challenge& chal) {
            return answer_challenge(plan, chal, index_of.at(fp));
        };
    };
    PowSessionResult pow = edge.pow_session(
        client, plan.file_hash, fps,
        [&plan](const Challenge& chal) { return answer_challenge(plan, chal, std::nullopt); },
        chunk_responder);
    report.ledger.pow += pow.cost;

    std::set<Fingerprint> tokens;
    for (const auto& [fp, status] : pow.chunk_status)
        if (status != OwnershipStatus::Failed) tokens.insert(fp);

    std::vector<std::size_t> to_upload;
    std::set<Fingerprint> uploaded;
    for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
        const Fingerprint& fp = plan.chunks[i].fingerprint;
        auto status = pow.chunk_status.at(fp);
        if (status == OwnershipStatus::Failed) continue;
        if (status == OwnershipStatus::NewData) {
            ++report.unique;
            if (uploaded.insert(fp).second) to_upload.push_back(i);
            continue;
        }
        TierResult tr = edge.tiered_check(fp, tokens, use_local_index);
        report.ledger.check += tr.cost;
        switch (tr.tier) {
            case Tier::HitLocal: ++report.hit_local; break;
            case Tier::HitShare: ++report.hit_share; break;
            case Tier::HitCloud: ++report.hit_cloud; break;
            case Tier::Unique:
                ++report.unique;
                if (uploaded.insert(fp).second) to_upload.push_back(i);
                break;
        }
    }

    std::vector<std::pair<Fingerprint, CipherChunk>> batch;
    for (std::size_t i : to_upload) {
        batch.emplace_back(plan.chunks[i].fingerprint, plan.chunks[i].cipher);
        report.bytes_sent += plan.chunks[i].cipher.data.size();
    }
    FileRecipe recipe = plan.recipe();
    report.recipe_bytes = serialize_recipe(recipe).size();
    report.ledger.transfer += model.cloud_round_trip(report.bytes_sent + report.recipe_bytes);
    cloud.store_chunks(batch);
    cloud.store_recipe(recipe);
    // The edge proxied the whole file, so it tracks the file hash locally;
    // the next epoch rebuild carves file-level pools for files seen here.
    edge.local_files().insert(plan.file_hash);
    return report;
}

}  // namespace pmdedup
