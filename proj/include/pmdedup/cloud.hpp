#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "pmdedup/core.hpp"
#include "pmdedup/mle.hpp"
#include "pmdedup/pow.hpp"
#include "pmdedup/sketch.hpp"

namespace pmdedup {

struct FingerprintMismatchError : std::runtime_error {
    FingerprintMismatchError() : std::runtime_error("stored bytes do not hash to the index key") {}
};

struct DanglingChunkError : std::runtime_error {
    DanglingChunkError() : std::runtime_error("recipe references a chunk absent from the index") {}
};

enum class CheckVerdict { Duplicate, Unique };

struct IndexEntry {
    std::size_t storage_ref = 0;
    std::uint64_t refcount = 0;
};

/// What one edge server tells the cloud at epoch time: its local-index
/// membership, so file/chunk pools can be targeted at it.
struct EdgeReport {
    EdgeId edge = 0;
    std::vector<Fingerprint> local_files;
    std::vector<Fingerprint> local_chunks;
};

struct PoolGrant {
    PoolRange range;
    std::uint32_t k_bits = 0;
    std::vector<Digest> seeds;
    std::vector<BitString> responses;
    std::vector<Fingerprint> chunk_fps;                // file level only
    std::vector<std::vector<BitString>> chunk_res;     // file level only, [pair][chunk]
};

struct EpochDelta {
    std::uint64_t epoch = 0;
    ShareIndex share_index;
    std::vector<PoolGrant> pools;
};

struct CloudConfig {
    std::size_t cms_rows = 4;
    std::size_t cms_cols = 1 << 16;
    std::uint64_t cms_seed = 1;
    std::size_t candidate_factor = 4;  // candidate set bound = factor * total_slots
    std::uint64_t pool_depth = 8;      // pairs generated per entry per epoch
    ShareIndexSpec share_spec{.total_slots = 1024, .cms_fraction = 0.9,
                              .proximity_threshold = 0.5};
    bool locality_enabled = true;
};

/// Authoritative store: full fingerprint index, content-addressed ciphertext
/// log, file recipes, share-index epochs, and pre-computed PoW pools.
class CloudServer {
public:
    CloudServer(CloudConfig cfg, Digest csmk)
        : cfg_(cfg),
          csmk_(csmk),
          sketch_(cfg.cms_rows, cfg.cms_cols, cfg.cms_seed),
          candidates_(cfg.candidate_factor * cfg.share_spec.total_slots) {}

    const CloudConfig& config() const { return cfg_; }
    CountMinSketch& sketch() { return sketch_; }
    PowMaps& pow_maps() { return pow_; }
    IssueLog& issue_log() { return issue_log_; }
    std::uint64_t stored_bytes() const { return stored_bytes_; }
    std::size_t distinct_chunks() const { return index_.size(); }
    std::uint64_t current_epoch() const { return epoch_; }

    std::vector<CheckVerdict> cloud_check(const std::vector<Fingerprint>& fps) const {
        std::vector<CheckVerdict> out;
        out.reserve(fps.size());
        for (const auto& fp : fps)
            out.push_back(index_.contains(fp) ? CheckVerdict::Duplicate : CheckVerdict::Unique);
        return out;
    }

    /// Every fingerprint that reaches the cloud check path feeds the sketch;
    /// counters are cumulative across epochs.
    void observe(const Fingerprint& fp) {
        sketch_.add(fp);
        candidates_.observe(sketch_, fp);
    }

    void store_chunks(const std::vector<std::pair<Fingerprint, CipherChunk>>& batch) {
        for (const auto& [fp, chunk] : batch) {
            if (fingerprint_of(chunk.data) != fp) throw FingerprintMismatchError{};
            if (index_.contains(fp)) continue;
            index_[fp] = IndexEntry{log_.size(), 0};
            stored_bytes_ += chunk.data.size();
            log_.push_back(chunk);
            pow_.register_chunk(fp, chunk.data);
        }
    }

    /// Recipes own the references: storing one bumps each distinct member
    /// chunk's refcount, deleting one drops them.
    void store_recipe(const FileRecipe& recipe) {
        for (const auto& e : recipe.chunks)
            if (!index_.contains(e.chunk_fp)) throw DanglingChunkError{};
        if (recipes_.contains(recipe.file_hash)) return;  // replay of a known file
        std::set<Fingerprint> distinct;
        for (const auto& e : recipe.chunks) distinct.insert(e.chunk_fp);
        for (const auto& fp : distinct) ++index_.at(fp).refcount;
        recipes_[recipe.file_hash] = recipe;
    }

    /// File-level pools sample plaintext file bytes, which the cloud itself
    /// never holds; the harness hands them in at registration time. This
    /// reflects the design assumption that the PoW generator can read
    /// the verified object.
    void register_file_pow(const Fingerprint& file_hash, Bytes plaintext,
                           std::vector<Fingerprint> chunk_fps) {
        pow_.register_file(file_hash, std::move(plaintext), std::move(chunk_fps));
    }

    const FileRecipe* recipe(const Fingerprint& file_hash) const {
        auto it = recipes_.find(file_hash);
        return it == recipes_.end() ? nullptr : &it->second;
    }

    std::vector<FileRecipe> all_recipes() const {
        std::vector<FileRecipe> out;
        out.reserve(recipes_.size());
        for (const auto& [_, r] : recipes_) out.push_back(r);
        return out;
    }

    CipherChunk fetch_chunk(const Fingerprint& fp) const {
        auto it = index_.find(fp);
        if (it == index_.end()) throw DanglingChunkError{};
        return log_[it->second.storage_ref];
    }

    void delete_recipe(const Fingerprint& file_hash) {
        auto it = recipes_.find(file_hash);
        if (it == recipes_.end()) return;
        std::set<Fingerprint> distinct;
        for (const auto& e : it->second.chunks) distinct.insert(e.chunk_fp);
        for (const auto& fp : distinct) {
            auto ie = index_.find(fp);
            if (ie != index_.end() && --ie->second.refcount == 0) {
                stored_bytes_ -= log_[ie->second.storage_ref].data.size();
                index_.erase(ie);
            }
        }
        recipes_.erase(it);
    }

    /// Serve an edge's on-demand request for chunk pools: for fingerprints
    /// the cloud stores, top pools up and carve a fresh range for that edge.
    std::vector<PoolGrant> pool_request(const std::vector<Fingerprint>& chunk_fps,
                                        std::uint64_t pairs_each) {
        std::vector<PoolGrant> grants;
        for (const auto& fp : chunk_fps) {
            if (!index_.contains(fp)) continue;
            pow_.refresh(PowLevel::Chunk, fp, pairs_each, csmk_, epoch_);
            PowEntry& e = pow_.entry(PowLevel::Chunk, fp);
            std::uint64_t base = std::max(e.idu, e.valid_begin);
            std::uint64_t end = e.chal.size();
            if (base >= end) continue;
            grants.push_back(make_grant(PowLevel::Chunk, fp, e, base, end));
            e.valid_begin = end;
        }
        return grants;
    }

    /// Cloud-side real-time verification (the baseline path): generate a fresh
    /// pair on demand and verify immediately.
    PowVerdict realtime_verify_chunk(const Fingerprint& chunk_fp, const Responder& respond) {
        if (!index_.contains(chunk_fp)) return PowVerdict::NoPairsAvailable;
        pow_.refresh(PowLevel::Chunk, chunk_fp, 1, csmk_, epoch_);
        return verify_chunk(pow_, chunk_fp, respond, issue_log_, kCloudIssuer);
    }

    /// Build the next share-index and the per-edge pool deltas. Pools cover
    /// share-index chunks plus every file/chunk the edges report in their
    /// local indexes, regenerating where drained.
    std::vector<EpochDelta> epoch_rebuild(const std::vector<EdgeReport>& reports) {
        ++epoch_;
        ShareIndex share =
            cfg_.locality_enabled
                ? build_share_index(sketch_, candidates_, all_recipes(), cfg_.share_spec)
                : build_share_index(sketch_, candidates_, {},
                                    ShareIndexSpec{cfg_.share_spec.total_slots, 1.0,
                                                   cfg_.share_spec.proximity_threshold});
        share.epoch = epoch_;

        std::set<Fingerprint> chunk_targets;
        std::set<Fingerprint> file_targets;
        for (const auto& fp : share.fingerprints)
            if (index_.contains(fp)) chunk_targets.insert(fp);
        for (const auto& rep : reports) {
            for (const auto& fp : rep.local_chunks)
                if (index_.contains(fp)) chunk_targets.insert(fp);
            for (const auto& fp : rep.local_files)
                if (pow_.files.contains(fp)) file_targets.insert(fp);
        }

        for (const auto& fp : chunk_targets)
            pow_.refresh(PowLevel::Chunk, fp, cfg_.pool_depth, csmk_, epoch_);
        for (const auto& fp : file_targets)
            pow_.refresh(PowLevel::File, fp, cfg_.pool_depth, csmk_, epoch_);

        std::size_t n_edges = reports.size();
        std::vector<EpochDelta> deltas(n_edges);
        for (std::size_t i = 0; i < n_edges; ++i) {
            deltas[i].epoch = epoch_;
            deltas[i].share_index = share;
        }
        if (n_edges == 0) return deltas;

        auto carve = [&](PowLevel level, const Fingerprint& id) {
            PowEntry& e = pow_.entry(level, id);
            std::uint64_t base = std::max(e.idu, e.valid_begin);
            std::uint64_t avail = e.chal.size() - base;
            if (avail == 0) return;
            std::uint64_t share_n = avail / n_edges;
            std::uint64_t extra = avail % n_edges;
            std::uint64_t cursor = base;
            for (std::size_t s = 0; s < n_edges; ++s) {
                std::uint64_t len = share_n + (s < extra ? 1 : 0);
                if (len == 0) continue;
                deltas[s].pools.push_back(make_grant(level, id, e, cursor, cursor + len));
                cursor += len;
            }
            e.valid_begin = cursor;
        };
        for (const auto& fp : file_targets) carve(PowLevel::File, fp);
        for (const auto& fp : chunk_targets) carve(PowLevel::Chunk, fp);
        return deltas;
    }

    static constexpr std::uint32_t kCloudIssuer = 0xC10D;

private:
    PoolGrant make_grant(PowLevel level, const Fingerprint& id, const PowEntry& e,
                         std::uint64_t begin, std::uint64_t end) {
        PoolGrant g;
        g.range = {id, level, begin, end};
        g.k_bits = e.k_bits;
        g.seeds.assign(e.chal.begin() + begin, e.chal.begin() + end);
        g.responses.assign(e.res.begin() + begin, e.res.begin() + end);
        if (level == PowLevel::File) {
            g.chunk_fps = e.chunk_fps;
            g.chunk_res.assign(e.chunk_res.begin() + begin, e.chunk_res.begin() + end);
        }
        return g;
    }

    CloudConfig cfg_;
    Digest csmk_;
    std::map<Fingerprint, IndexEntry> index_;
    std::vector<CipherChunk> log_;
    std::map<Fingerprint, FileRecipe> recipes_;
    CountMinSketch sketch_;
    CandidateTracker candidates_;
    PowMaps pow_;
    IssueLog issue_log_;
    std::uint64_t stored_bytes_ = 0;
    std::uint64_t epoch_ = 0;
};

}  // namespace pmdedup
