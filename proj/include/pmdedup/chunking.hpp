#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "pmdedup/core.hpp"

namespace pmdedup {

struct ChunkerConfig {
    std::size_t min_size = 4 * 1024;
    std::size_t avg_size = 16 * 1024;  // must be a power of two
    std::size_t max_size = 64 * 1024;
    std::uint64_t gear_seed = 0x706d2d6465647570ULL;

    void validate() const {
        if (!(min_size < avg_size && avg_size < max_size))
            throw std::invalid_argument("chunker: need min < avg < max");
        if (!std::has_single_bit(avg_size))
            throw std::invalid_argument("chunker: avg_size must be a power of two");
    }
};

namespace detail {

inline std::array<std::uint64_t, 256> gear_table(std::uint64_t seed) {
    std::array<std::uint64_t, 256> t{};
    std::mt19937_64 rng(seed);
    for (auto& v : t) v = rng();
    return t;
}

// Spread mask bits over the high half of the word so the gear hash's
// recently-shifted-in bytes all participate in the cut decision.
inline std::uint64_t spread_mask(unsigned bits) {
    std::uint64_t m = 0;
    unsigned placed = 0;
    for (unsigned pos = 63; placed < bits; pos -= 2) {
        m |= 1ULL << pos;
        ++placed;
        if (pos < 2) break;
    }
    return m;
}

}  // namespace detail

/// FastCDC: gear rolling hash with normalized chunking (a harder mask below the
/// target size, an easier one above it) and min/max clamps.
class Chunker {
public:
    explicit Chunker(ChunkerConfig cfg) : cfg_(cfg), gear_(detail::gear_table(cfg.gear_seed)) {
        cfg_.validate();
        unsigned bits = static_cast<unsigned>(std::countr_zero(cfg_.avg_size));
        mask_s_ = detail::spread_mask(bits + 2);
        mask_l_ = detail::spread_mask(bits - 2);
    }

    const ChunkerConfig& config() const { return cfg_; }

    /// Offset of the next cut point in data (== data.size() when no cut fires).
    std::size_t next_boundary(std::span<const std::uint8_t> data) const {
        const std::size_t n = data.size();
        if (n <= cfg_.min_size) return n;
        std::size_t normal = std::min(cfg_.avg_size, n);
        std::size_t limit = std::min(cfg_.max_size, n);
        std::uint64_t h = 0;
        std::size_t i = 0;
        // Warm the hash over the skipped region so cut decisions stay
        // content-local rather than offset-dependent.
        std::size_t warm = cfg_.min_size >= 64 ? cfg_.min_size - 64 : 0;
        for (i = warm; i < cfg_.min_size; ++i) h = (h << 1) + gear_[data[i]];
        for (; i < normal; ++i) {
            h = (h << 1) + gear_[data[i]];
            if ((h & mask_s_) == 0) return i + 1;
        }
        for (; i < limit; ++i) {
            h = (h << 1) + gear_[data[i]];
            if ((h & mask_l_) == 0) return i + 1;
        }
        return limit;
    }

    std::vector<std::size_t> boundaries(std::span<const std::uint8_t> data) const {
        std::vector<std::size_t> cuts;
        std::size_t off = 0;
        while (off < data.size()) {
            off += next_boundary(data.subspan(off));
            cuts.push_back(off);
        }
        return cuts;
    }

    std::vector<PlainChunk> chunk_stream(std::span<const std::uint8_t> data) const {
        if (data.empty()) throw EmptyDataError{};
        std::vector<PlainChunk> out;
        std::size_t off = 0;
        for (std::size_t cut : boundaries(data)) {
            out.push_back(PlainChunk{Bytes(data.begin() + off, data.begin() + cut)});
            off = cut;
        }
        return out;
    }

private:
    ChunkerConfig cfg_;
    std::array<std::uint64_t, 256> gear_;
    std::uint64_t mask_s_ = 0;
    std::uint64_t mask_l_ = 0;
};

/// Fixed-size splitter, test helper only.
inline std::vector<PlainChunk> chunk_fixed(std::span<const std::uint8_t> data, std::size_t size) {
    if (data.empty()) throw EmptyDataError{};
    std::vector<PlainChunk> out;
    for (std::size_t off = 0; off < data.size(); off += size) {
        std::size_t len = std::min(size, data.size() - off);
        out.push_back(PlainChunk{Bytes(data.begin() + off, data.begin() + off + len)});
    }
    return out;
}

}  // namespace pmdedup
