#pragma once

#include <cstdint>

#include "pmdedup/core.hpp"

namespace pmdedup {

/// Per-link delays parameterized by the edge:cloud latency ratio, plus a
/// linear serialization cost so fingerprint batches stay cheaper than chunk
/// payloads.
struct LatencyModel {
    VirtualTime edge_rtt = millis_vt(2.0);
    double cloud_ratio = 6.89;  // cloud_rtt = edge_rtt * cloud_ratio
    VirtualTime per_kib = micros(2);
    VirtualTime ecall_cost = micros(5);
    VirtualTime challenge_gen_cost = micros(50);  // real-time PoW generation, baseline path

    VirtualTime serialize(std::uint64_t bytes) const {
        return {per_kib.nanos * ((bytes + 1023) / 1024)};
    }
    VirtualTime edge_round_trip(std::uint64_t bytes) const {
        return edge_rtt + serialize(bytes);
    }
    VirtualTime cloud_round_trip(std::uint64_t bytes) const {
        return VirtualTime{static_cast<std::uint64_t>(
                   static_cast<double>(edge_rtt.nanos) * cloud_ratio)} +
               serialize(bytes);
    }
};

/// Virtual-time cost breakdown accumulated along one upload.
struct CostLedger {
    VirtualTime pow{};
    VirtualTime check{};
    VirtualTime transfer{};
    VirtualTime other{};

    VirtualTime total() const { return pow + check + transfer + other; }
};

}  // namespace pmdedup
