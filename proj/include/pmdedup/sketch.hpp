#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pmdedup/core.hpp"

namespace pmdedup {

struct SaturatedError : std::overflow_error {
    SaturatedError() : std::overflow_error("count-min counter saturated") {}
};

/// d x w counter matrix; estimates never underestimate the true count and
/// overestimate by at most (e/w)*N with probability >= 1 - e^-d.
class CountMinSketch {
public:
    CountMinSketch(std::size_t rows, std::size_t cols, std::uint64_t seed = 0)
        : d_(rows), w_(cols), counters_(rows * cols, 0) {
        if (rows == 0 || cols == 0) throw std::invalid_argument("cms: zero dimension");
        row_seeds_.reserve(rows);
        for (std::size_t i = 0; i < rows; ++i) row_seeds_.push_back(seed * 0x9e3779b97f4a7c15ULL + i);
    }

    std::size_t rows() const { return d_; }
    std::size_t cols() const { return w_; }

    void add(const Fingerprint& fp) {
        for (std::size_t i = 0; i < d_; ++i) {
            std::uint64_t& c = counters_[i * w_ + bucket(i, fp)];
            if (c == UINT64_MAX) throw SaturatedError{};
            ++c;
        }
    }

    std::uint64_t frequency(const Fingerprint& fp) const {
        std::uint64_t m = UINT64_MAX;
        for (std::size_t i = 0; i < d_; ++i) m = std::min(m, counters_[i * w_ + bucket(i, fp)]);
        return m;
    }

    std::size_t memory_bytes() const {
        return counters_.size() * sizeof(std::uint64_t) + row_seeds_.size() * sizeof(std::uint64_t);
    }

private:
    std::size_t bucket(std::size_t row, const Fingerprint& fp) const {
        Bytes msg;
        put_u64_le(msg, row_seeds_[row]);
        msg.insert(msg.end(), fp.bytes.begin(), fp.bytes.end());
        Digest h = sha256(msg);
        return static_cast<std::size_t>(get_u64_le(h.data()) % w_);
    }

    std::size_t d_, w_;
    std::vector<std::uint64_t> row_seeds_;
    std::vector<std::uint64_t> counters_;
};

/// The sketch cannot enumerate keys, so the cloud keeps a bounded candidate set
/// of fingerprints seen during the epoch, evicting the lowest estimate. Eviction
/// uses a lazy min-heap over cached estimates; stale entries are refreshed on pop.
class CandidateTracker {
public:
    explicit CandidateTracker(std::size_t capacity) : capacity_(capacity) {}

    void observe(const CountMinSketch& sketch, const Fingerprint& fp) {
        std::uint64_t est = sketch.frequency(fp);
        auto [it, inserted] = estimates_.insert_or_assign(fp, est);
        heap_.push({est, fp});
        if (inserted && estimates_.size() > capacity_) evict_lowest();
    }

    std::set<Fingerprint> fingerprints() const {
        std::set<Fingerprint> out;
        for (const auto& [fp, _] : estimates_) out.insert(fp);
        return out;
    }

    std::size_t size() const { return estimates_.size(); }

private:
    struct MinFirst {
        bool operator()(const std::pair<std::uint64_t, Fingerprint>& a,
                        const std::pair<std::uint64_t, Fingerprint>& b) const {
            if (a.first != b.first) return a.first > b.first;
            return a.second > b.second;
        }
    };

    void evict_lowest() {
        while (!heap_.empty()) {
            auto [est, fp] = heap_.top();
            heap_.pop();
            auto it = estimates_.find(fp);
            if (it == estimates_.end()) continue;  // already evicted duplicate
            if (it->second != est) continue;       // stale; a fresher entry exists
            estimates_.erase(it);
            return;
        }
    }

    std::size_t capacity_;
    std::map<Fingerprint, std::uint64_t> estimates_;
    std::priority_queue<std::pair<std::uint64_t, Fingerprint>,
                        std::vector<std::pair<std::uint64_t, Fingerprint>>, MinFirst>
        heap_;
};

struct ShareIndexSpec {
    std::size_t total_slots = 0;
    double cms_fraction = 0.9;
    double proximity_threshold = 0.5;
};

using ScoreMap = std::map<Fingerprint, double>;

/// Proximity scoring over file recipes: every chunk co-resident with a
/// frequent chunk accrues 1/(1 + distance-in-recipe).
inline ScoreMap locality_scores(const std::set<Fingerprint>& frequent,
                                const std::vector<FileRecipe>& recipes) {
    ScoreMap scores;
    for (const auto& r : recipes) {
        for (std::size_t fi = 0; fi < r.chunks.size(); ++fi) {
            if (!frequent.contains(r.chunks[fi].chunk_fp)) continue;
            for (std::size_t ci = 0; ci < r.chunks.size(); ++ci) {
                std::size_t dist = fi > ci ? fi - ci : ci - fi;
                scores[r.chunks[ci].chunk_fp] += 1.0 / (1.0 + static_cast<double>(dist));
            }
        }
    }
    return scores;
}

/// Candidates scoring >= threshold, frequency members excluded, sorted by
/// score descending with byte-order tie-breaks.
inline std::vector<Fingerprint> locality_select(const std::set<Fingerprint>& frequent,
                                                const std::vector<FileRecipe>& recipes,
                                                const ShareIndexSpec& spec) {
    if (frequent.empty()) throw std::invalid_argument("locality_select: empty frequent set");
    ScoreMap scores = locality_scores(frequent, recipes);
    std::vector<std::pair<Fingerprint, double>> ranked;
    for (const auto& [fp, score] : scores) {
        if (score >= spec.proximity_threshold && !frequent.contains(fp))
            ranked.emplace_back(fp, score);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<Fingerprint> out;
    out.reserve(ranked.size());
    for (auto& [fp, _] : ranked) out.push_back(fp);
    return out;
}

struct ShareIndex {
    std::vector<Fingerprint> fingerprints;  // sorted
    std::uint64_t epoch = 0;

    bool contains(const Fingerprint& fp) const {
        return std::binary_search(fingerprints.begin(), fingerprints.end(), fp);
    }
};

/// Top slots by estimated frequency, the remainder filled by locality
/// candidates adjacent to the frequent set.
inline ShareIndex build_share_index(const CountMinSketch& sketch, const CandidateTracker& observed,
                                    const std::vector<FileRecipe>& recipes,
                                    const ShareIndexSpec& spec) {
    if (spec.total_slots == 0) throw std::invalid_argument("share index: zero slots");

    std::vector<std::pair<Fingerprint, std::uint64_t>> by_freq;
    for (const auto& fp : observed.fingerprints()) by_freq.emplace_back(fp, sketch.frequency(fp));
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::size_t cms_slots = static_cast<std::size_t>(
        std::min<double>(spec.total_slots,
                         std::ceil(spec.cms_fraction * static_cast<double>(spec.total_slots))));
    cms_slots = std::min(cms_slots, by_freq.size());

    std::set<Fingerprint> chosen;
    for (std::size_t i = 0; i < cms_slots; ++i) chosen.insert(by_freq[i].first);

    if (chosen.size() < spec.total_slots && !chosen.empty()) {
        for (const auto& fp : locality_select(chosen, recipes, spec)) {
            if (chosen.size() >= spec.total_slots) break;
            chosen.insert(fp);
        }
    }
    // Backfill any remaining slots by frequency.
    for (std::size_t i = cms_slots; i < by_freq.size() && chosen.size() < spec.total_slots; ++i)
        chosen.insert(by_freq[i].first);

    ShareIndex idx;
    idx.fingerprints.assign(chosen.begin(), chosen.end());
    return idx;
}

}  // namespace pmdedup
