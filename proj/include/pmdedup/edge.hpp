#pragma once

#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pmdedup/cloud.hpp"
#include "pmdedup/core.hpp"
#include "pmdedup/latency.hpp"
#include "pmdedup/mle.hpp"
#include "pmdedup/pow.hpp"
#include "pmdedup/sketch.hpp"

namespace pmdedup {

struct CapacityExceededError : std::runtime_error {
    CapacityExceededError() : std::runtime_error("enclave capacity exceeded") {}
};

struct SessionAbortedError : std::runtime_error {
    SessionAbortedError() : std::runtime_error("client suspended after repeated pow failures") {}
};

/// Hash map plus intrusive recency list; classic LRU set.
class LruSet {
public:
    explicit LruSet(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return map_.size(); }

    bool contains(const Fingerprint& fp) const { return map_.contains(fp); }

    /// Move to front on hit; miss is a no-op returning false.
    bool touch(const Fingerprint& fp) {
        auto it = map_.find(fp);
        if (it == map_.end()) return false;
        order_.splice(order_.begin(), order_, it->second);
        return true;
    }

    void insert(const Fingerprint& fp) {
        if (touch(fp)) return;
        if (capacity_ == 0) return;
        if (map_.size() >= capacity_) {
            map_.erase(order_.back());
            order_.pop_back();
        }
        order_.push_front(fp);
        map_[fp] = order_.begin();
    }

    std::vector<Fingerprint> members_mru_first() const {
        return {order_.begin(), order_.end()};
    }

private:
    std::size_t capacity_;
    std::list<Fingerprint> order_;
    std::unordered_map<Fingerprint, std::list<Fingerprint>::iterator, FingerprintHash> map_;
};

/// Edge-side slice of a pre-computed pool: pairs carry their global indices so
/// the system-wide single-use audit spans servers.
struct EdgePoolEntry {
    std::uint32_t k_bits = 0;
    std::vector<std::uint64_t> indices;
    std::vector<Digest> seeds;
    std::vector<BitString> responses;
    std::vector<Fingerprint> chunk_fps;             // file level only
    std::vector<std::vector<BitString>> chunk_res;  // file level only
    std::size_t next = 0;

    bool has_unused() const { return next < seeds.size(); }

    std::size_t footprint() const {
        std::size_t b = seeds.size() * (32 + 8);
        for (const auto& r : responses) b += r.bytes.size();
        for (const auto& row : chunk_res)
            for (const auto& r : row) b += r.bytes.size();
        b += chunk_fps.size() * 32;
        return b;
    }
};

// --- EpochDelta wire form (sealed under K_shared on the cloud->edge link) ---

namespace wire {

inline nlohmann::json to_json(const BitString& b) {
    return {{"bits", b.bit_count}, {"data", hex(b.bytes)}};
}

inline BitString bitstring_from(const nlohmann::json& j) {
    BitString b;
    b.bit_count = j.at("bits").get<std::uint32_t>();
    std::string h = j.at("data").get<std::string>();
    b.bytes.reserve(h.size() / 2);
    for (std::size_t i = 0; i + 1 < h.size(); i += 2)
        b.bytes.push_back(static_cast<std::uint8_t>(std::stoul(h.substr(i, 2), nullptr, 16)));
    return b;
}

inline std::string digest_hex(std::span<const std::uint8_t> d) { return hex(d); }

inline Digest digest_from(const std::string& h) {
    Digest d{};
    for (std::size_t i = 0; i < 32; ++i)
        d[i] = static_cast<std::uint8_t>(std::stoul(h.substr(i * 2, 2), nullptr, 16));
    return d;
}

inline Bytes serialize_delta(const EpochDelta& delta) {
    nlohmann::json j;
    j["epoch"] = delta.epoch;
    nlohmann::json share = nlohmann::json::array();
    for (const auto& fp : delta.share_index.fingerprints) share.push_back(digest_hex(fp.bytes));
    j["share"] = std::move(share);
    nlohmann::json pools = nlohmann::json::array();
    for (const auto& g : delta.pools) {
        nlohmann::json p;
        p["id"] = digest_hex(g.range.id.bytes);
        p["level"] = g.range.level == PowLevel::File ? "file" : "chunk";
        p["begin"] = g.range.begin;
        p["end"] = g.range.end;
        p["k"] = g.k_bits;
        nlohmann::json seeds = nlohmann::json::array();
        for (const auto& s : g.seeds) seeds.push_back(digest_hex(s));
        p["seeds"] = std::move(seeds);
        nlohmann::json res = nlohmann::json::array();
        for (const auto& r : g.responses) res.push_back(to_json(r));
        p["res"] = std::move(res);
        if (g.range.level == PowLevel::File) {
            nlohmann::json cfps = nlohmann::json::array();
            for (const auto& fp : g.chunk_fps) cfps.push_back(digest_hex(fp.bytes));
            p["chunk_fps"] = std::move(cfps);
            nlohmann::json cres = nlohmann::json::array();
            for (const auto& row : g.chunk_res) {
                nlohmann::json jr = nlohmann::json::array();
                for (const auto& r : row) jr.push_back(to_json(r));
                cres.push_back(std::move(jr));
            }
            p["chunk_res"] = std::move(cres);
        }
        pools.push_back(std::move(p));
    }
    j["pools"] = std::move(pools);
    return nlohmann::json::to_cbor(j);
}

inline EpochDelta deserialize_delta(std::span<const std::uint8_t> buf) {
    nlohmann::json j = nlohmann::json::from_cbor(buf);
    EpochDelta delta;
    delta.epoch = j.at("epoch").get<std::uint64_t>();
    delta.share_index.epoch = delta.epoch;
    for (const auto& s : j.at("share"))
        delta.share_index.fingerprints.push_back(Fingerprint{digest_from(s.get<std::string>())});
    for (const auto& p : j.at("pools")) {
        PoolGrant g;
        g.range.id = Fingerprint{digest_from(p.at("id").get<std::string>())};
        g.range.level = p.at("level").get<std::string>() == "file" ? PowLevel::File
                                                                   : PowLevel::Chunk;
        g.range.begin = p.at("begin").get<std::uint64_t>();
        g.range.end = p.at("end").get<std::uint64_t>();
        g.k_bits = p.at("k").get<std::uint32_t>();
        for (const auto& s : p.at("seeds")) g.seeds.push_back(digest_from(s.get<std::string>()));
        for (const auto& r : p.at("res")) g.responses.push_back(bitstring_from(r));
        if (g.range.level == PowLevel::File) {
            for (const auto& s : p.at("chunk_fps"))
                g.chunk_fps.push_back(Fingerprint{digest_from(s.get<std::string>())});
            for (const auto& row : p.at("chunk_res")) {
                std::vector<BitString> rr;
                for (const auto& r : row) rr.push_back(bitstring_from(r));
                g.chunk_res.push_back(std::move(rr));
            }
        }
        delta.pools.push_back(std::move(g));
    }
    return delta;
}

}  // namespace wire

/// Simulated enclave: share-index plus pool slices behind a narrow API, a
/// sealing key for persistence, and a fixed per-access virtual-time cost.
class EnclaveStore {
public:
    EnclaveStore(Digest measurement, Digest sealing_key, std::size_t capacity_bytes)
        : measurement_(measurement), sealing_key_(sealing_key), capacity_(capacity_bytes) {}

    const Digest& measurement() const { return measurement_; }

    bool share_contains(const Fingerprint& fp) const { return share_.contains(fp); }
    std::uint64_t share_epoch() const { return share_.epoch; }
    std::size_t share_size() const { return share_.fingerprints.size(); }

    EdgePoolEntry* pool(PowLevel level, const Fingerprint& id) {
        auto& m = level == PowLevel::File ? file_pools_ : chunk_pools_;
        auto it = m.find(id);
        return it == m.end() ? nullptr : &it->second;
    }

    std::vector<Fingerprint> pooled_ids(PowLevel level) const {
        const auto& m = level == PowLevel::File ? file_pools_ : chunk_pools_;
        std::vector<Fingerprint> out;
        for (const auto& [id, _] : m) out.push_back(id);
        return out;
    }

    void install_grant(const PoolGrant& g) {
        auto& m = g.range.level == PowLevel::File ? file_pools_ : chunk_pools_;
        EdgePoolEntry& e = m[g.range.id];
        e.k_bits = g.k_bits;
        for (std::uint64_t i = g.range.begin; i < g.range.end; ++i) e.indices.push_back(i);
        e.seeds.insert(e.seeds.end(), g.seeds.begin(), g.seeds.end());
        e.responses.insert(e.responses.end(), g.responses.begin(), g.responses.end());
        if (g.range.level == PowLevel::File) {
            e.chunk_fps = g.chunk_fps;
            e.chunk_res.insert(e.chunk_res.end(), g.chunk_res.begin(), g.chunk_res.end());
        }
        enforce_capacity();
    }

    /// Replace the share-index with the epoch's membership, drop pool slices
    /// for ids that left it (local-index pools survive), then re-check the
    /// footprint cap.
    void apply_share_index(ShareIndex share, const std::set<Fingerprint>& keep_pools) {
        share_ = std::move(share);
        for (auto it = chunk_pools_.begin(); it != chunk_pools_.end();) {
            if (!share_.contains(it->first) && !keep_pools.contains(it->first))
                it = chunk_pools_.erase(it);
            else
                ++it;
        }
        enforce_capacity();
    }

    std::size_t footprint() const {
        std::size_t b = share_.fingerprints.size() * 32;
        for (const auto& [_, e] : file_pools_) b += e.footprint();
        for (const auto& [_, e] : chunk_pools_) b += e.footprint();
        return b;
    }

    std::size_t capacity_bytes() const { return capacity_; }

    /// Sealed persistence: contents leave the enclave only as AEAD ciphertext
    /// under the sealing key.
    Bytes seal_state() const {
        nlohmann::json j;
        nlohmann::json share = nlohmann::json::array();
        for (const auto& fp : share_.fingerprints) share.push_back(wire::digest_hex(fp.bytes));
        j["share"] = std::move(share);
        j["epoch"] = share_.epoch;
        Bytes plain = nlohmann::json::to_cbor(j);
        Bytes nonce(12, 0);
        nonce[0] = 0x5e;
        return detail::aead_encrypt(sealing_key_, nonce, plain);
    }

    ShareIndex unseal_state(std::span<const std::uint8_t> blob) const {
        Bytes plain = detail::aead_decrypt(sealing_key_, blob);
        nlohmann::json j = nlohmann::json::from_cbor(plain);
        ShareIndex s;
        s.epoch = j.at("epoch").get<std::uint64_t>();
        for (const auto& h : j.at("share"))
            s.fingerprints.push_back(Fingerprint{wire::digest_from(h.get<std::string>())});
        return s;
    }

private:
    void enforce_capacity() {
        // Under pressure, trim share entries; pools for the local index are
        // the last thing to go.
        while (footprint() > capacity_ && !share_.fingerprints.empty())
            share_.fingerprints.pop_back();
        if (footprint() > capacity_) {
            for (auto it = chunk_pools_.begin();
                 it != chunk_pools_.end() && footprint() > capacity_;)
                it = chunk_pools_.erase(it);
        }
        if (footprint() > capacity_) throw CapacityExceededError{};
    }

    Digest measurement_;
    Digest sealing_key_;
    std::size_t capacity_;
    ShareIndex share_;
    std::map<Fingerprint, EdgePoolEntry> file_pools_;
    std::map<Fingerprint, EdgePoolEntry> chunk_pools_;
};

enum class Tier { HitLocal, HitShare, HitCloud, Unique };

struct TierResult {
    Tier tier = Tier::Unique;
    VirtualTime cost{};
};

enum class OwnershipStatus { Verified, NewData, Failed };

struct PowSessionResult {
    std::map<Fingerprint, OwnershipStatus> chunk_status;
    bool file_verified = false;
    VirtualTime cost{};
    std::size_t edge_round_trips = 0;
    std::size_t cloud_round_trips = 0;
};

struct EdgeConfig {
    EdgeId id = 0;
    std::size_t local_index_capacity = 4096;
    std::size_t hit_window = 10000;
    double hit_threshold = 0.3;
    std::uint32_t suspicious_threshold = 3;
    std::uint64_t pool_request_pairs = 8;
};

/// The branch-local verifier: LRU local index outside the enclave, share-index
/// and pool slices inside it, tiered duplicate checks, and escalation to the
/// cloud when both miss.
class EdgeServer {
public:
    EdgeServer(EdgeConfig cfg, EnclaveStore enclave, CloudServer* cloud, LatencyModel model)
        : cfg_(cfg),
          enclave_(std::move(enclave)),
          cloud_(cloud),
          model_(model),
          local_files_(cfg.local_index_capacity),
          local_chunks_(cfg.local_index_capacity) {}

    EnclaveStore& enclave() { return enclave_; }
    LruSet& local_chunks() { return local_chunks_; }
    LruSet& local_files() { return local_files_; }
    IssueLog& issue_log() { return issue_log_; }
    const EdgeConfig& config() const { return cfg_; }

    EdgeReport report() const {
        EdgeReport r;
        r.edge = cfg_.id;
        r.local_files = local_files_.members_mru_first();
        r.local_chunks = local_chunks_.members_mru_first();
        return r;
    }

    void apply_epoch_delta(SecureChannel& channel, std::span<const std::uint8_t> sealed_blob) {
        Bytes plain = channel.open(sealed_blob);  // AuthFailure on tamper
        EpochDelta delta = wire::deserialize_delta(plain);
        auto local = local_chunks_.members_mru_first();
        std::set<Fingerprint> keep(local.begin(), local.end());
        enclave_.apply_share_index(delta.share_index, keep);
        for (const auto& g : delta.pools) enclave_.install_grant(g);
    }

    /// PoW precedes dedup checking; a fingerprint with no session token is
    /// rejected here.
    TierResult tiered_check(const Fingerprint& fp, const std::set<Fingerprint>& session_tokens,
                            bool use_local_index = true) {
        if (!session_tokens.contains(fp))
            throw std::logic_error("tiered_check: ownership not verified for fingerprint");
        TierResult r;
        record_lookup();
        if (use_local_index && local_chunks_.touch(fp)) {
            r.tier = Tier::HitLocal;
            record_hit();
            return r;
        }
        r.cost += model_.ecall_cost;
        if (enclave_.share_contains(fp)) {
            r.tier = Tier::HitShare;
            record_hit();
            if (use_local_index) local_chunks_.insert(fp);
            return r;
        }
        r.cost += model_.cloud_round_trip(32);
        cloud_->observe(fp);
        bool dup = cloud_->cloud_check({fp})[0] == CheckVerdict::Duplicate;
        r.tier = dup ? Tier::HitCloud : Tier::Unique;
        if (dup && use_local_index) local_chunks_.insert(fp);
        return r;
    }

    /// Dual-level PoW session over pre-computed pools, with cloud escalation
    /// for pairs the enclave lacks (one file-level pair first, then per-chunk pairs, then the pool-request path).
    PowSessionResult pow_session(ClientId client, const Fingerprint& file_hash,
                                 const std::vector<Fingerprint>& chunk_fps,
                                 const Responder& respond_file,
                                 const std::function<Responder(const Fingerprint&)>& chunk_responder) {
        if (suspicious_[client] >= cfg_.suspicious_threshold) throw SessionAbortedError{};
        PowSessionResult out;

        // File level first: one pair settles every chunk.
        if (EdgePoolEntry* fe = enclave_.pool(PowLevel::File, file_hash); fe && fe->has_unused()) {
            out.cost += model_.ecall_cost;
            std::size_t idx = fe->next++;
            issue_log_.push_back({file_hash, PowLevel::File, fe->indices[idx], cfg_.id});
            Challenge chal{fe->seeds[idx], fe->k_bits};
            out.cost += model_.edge_round_trip(64 + (fe->k_bits + 7) / 8);
            ++out.edge_round_trips;
            BitString got = respond_file(chal);
            if (got == fe->responses[idx]) {
                out.file_verified = true;
                local_files_.insert(file_hash);
                for (const auto& fp : chunk_fps)
                    out.chunk_status[fp] = OwnershipStatus::Verified;
                return out;
            }
            note_failure(client);
        }

        // Chunk level: batch what the enclave can serve, collect the rest.
        std::vector<Fingerprint> need_cloud;
        auto verify_local = [&](const Fingerprint& fp) -> bool {
            EdgePoolEntry* ce = enclave_.pool(PowLevel::Chunk, fp);
            if (!ce || !ce->has_unused()) return false;
            out.cost += model_.ecall_cost;
            std::size_t idx = ce->next++;
            issue_log_.push_back({fp, PowLevel::Chunk, ce->indices[idx], cfg_.id});
            Challenge chal{ce->seeds[idx], ce->k_bits};
            BitString got = chunk_responder(fp)(chal);
            if (got == ce->responses[idx]) {
                out.chunk_status[fp] = OwnershipStatus::Verified;
            } else {
                out.chunk_status[fp] = OwnershipStatus::Failed;
                note_failure(client);
            }
            return true;
        };

        bool any_edge_chunk = false;
        for (const auto& fp : chunk_fps) {
            if (verify_local(fp))
                any_edge_chunk = true;
            else
                need_cloud.push_back(fp);
        }
        if (any_edge_chunk) {
            out.cost += model_.edge_round_trip(chunk_fps.size() * 48);
            ++out.edge_round_trips;
        }

        if (!need_cloud.empty()) {
            auto grants = cloud_->pool_request(need_cloud, cfg_.pool_request_pairs);
            out.cost += model_.cloud_round_trip(need_cloud.size() * 32);
            ++out.cloud_round_trips;
            for (const auto& g : grants) enclave_.install_grant(g);
            std::vector<Fingerprint> still;
            for (const auto& fp : need_cloud)
                if (!verify_local(fp)) still.push_back(fp);
            if (grants.size() > 0) {
                out.cost += model_.edge_round_trip(need_cloud.size() * 48);
                ++out.edge_round_trips;
            }
            // Whatever the cloud cannot pool either is new data (prove by
            // uploading) or needs cloud real-time PoW.
            for (const auto& fp : still) {
                if (cloud_->cloud_check({fp})[0] == CheckVerdict::Unique) {
                    out.chunk_status[fp] = OwnershipStatus::NewData;
                } else {
                    out.cost += model_.cloud_round_trip(64) + model_.challenge_gen_cost;
                    ++out.cloud_round_trips;
                    PowVerdict v = cloud_->realtime_verify_chunk(fp, chunk_responder(fp));
                    if (v == PowVerdict::Verified) {
                        out.chunk_status[fp] = OwnershipStatus::Verified;
                    } else {
                        out.chunk_status[fp] = OwnershipStatus::Failed;
                        note_failure(client);
                    }
                }
            }
        }
        if (suspicious_[client] >= cfg_.suspicious_threshold) throw SessionAbortedError{};
        return out;
    }

    /// Sliding-window hit-ratio monitor; true means "ask the cloud for a new
    /// share-index".
    bool wants_update() const {
        if (lookups_.size() < cfg_.hit_window) return false;
        std::size_t hits = 0;
        for (bool h : lookups_) hits += h;
        return static_cast<double>(hits) / static_cast<double>(lookups_.size()) <
               cfg_.hit_threshold;
    }

    void reset_suspicion() { suspicious_.clear(); }

private:
    void record_lookup() {
        lookups_.push_back(false);
        if (lookups_.size() > cfg_.hit_window) lookups_.pop_front();
    }
    void record_hit() { lookups_.back() = true; }
    void note_failure(ClientId client) { ++suspicious_[client]; }

    EdgeConfig cfg_;
    EnclaveStore enclave_;
    CloudServer* cloud_;
    LatencyModel model_;
    LruSet local_files_;
    LruSet local_chunks_;
    IssueLog issue_log_;
    std::deque<bool> lookups_;
    std::unordered_map<ClientId, std::uint32_t> suspicious_;
};

}  // namespace pmdedup
