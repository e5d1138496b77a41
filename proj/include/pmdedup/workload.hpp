#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pmdedup/chunking.hpp"
#include "pmdedup/core.hpp"

namespace pmdedup {

struct InfeasibleTargetError : std::invalid_argument {
    InfeasibleTargetError() : std::invalid_argument("dedup ratio target below 1 is infeasible") {}
};

struct CalibrationError : std::runtime_error {
    explicit CalibrationError(double got)
        : std::runtime_error("workload calibration missed the target ratio; achieved " +
                             std::to_string(got)) {}
};

struct SnapshotSpec {
    std::uint64_t base_size = 2 * 1024 * 1024;  // bytes per snapshot, approximate
    std::size_t snapshot_count = 8;
    double mutation_rate = 0.1;       // used when target_dedup_ratio <= 0
    double target_dedup_ratio = 0.0;  // > 0 switches to calibrated skewed mode

    // Skewed-mode shape knobs.
    double zipf_s = 1.2;
    std::size_t units_per_run = 8;   // consecutive units emitted per draw
    std::size_t runs_per_file = 2;
    std::size_t hot_family_units = 32;
    std::size_t hot_window_units = 16;  // width of the hot window within the family
    double hot_fraction = -1.0;      // derived from target when negative
    double core_fraction = 0.0;      // share of hot runs replaying a tiny fixed core
    double drift_per_snapshot = 1.0; // hot-window advance, in units
    std::size_t unit_chunks = 4;     // target unit length in average chunks
};

struct Snapshot {
    std::vector<Bytes> files;
};

struct Workload {
    std::vector<Snapshot> snapshots;
    std::uint64_t total_bytes = 0;
    std::uint64_t unique_bytes = 0;  // by distinct content unit
    double realized_ratio = 1.0;
    std::string profile = "custom";
};

struct TraceEntry {
    Fingerprint fp;
    std::uint64_t size = 0;
};

/// Plaintext chunk occurrence stream in upload order; the exact-frequency
/// ground truth for elimination analysis.
inline std::vector<TraceEntry> chunk_trace(const Workload& w, const Chunker& chunker) {
    std::vector<TraceEntry> trace;
    for (const auto& snap : w.snapshots)
        for (const auto& file : snap.files)
            for (const auto& c : chunker.chunk_stream(file))
                trace.push_back({fingerprint_of(c.data), c.data.size()});
    return trace;
}

/// Fraction of trace volume avoidable when the top_fraction highest-frequency
/// fingerprints live at the edge: duplicate occurrences of those fingerprints
/// over total volume, by size.
inline double elimination_ratio(const std::vector<TraceEntry>& trace, double top_fraction) {
    if (top_fraction <= 0.0 || top_fraction > 1.0)
        throw std::invalid_argument("elimination_ratio: top_fraction out of (0,1]");
    std::map<Fingerprint, std::pair<std::uint64_t, std::uint64_t>> counts;  // fp -> (count, size)
    std::uint64_t total = 0;
    for (const auto& e : trace) {
        auto& c = counts[e.fp];
        ++c.first;
        c.second = e.size;
        total += e.size;
    }
    if (total == 0) return 0.0;
    std::vector<std::pair<std::uint64_t, Fingerprint>> ranked;
    ranked.reserve(counts.size());
    for (const auto& [fp, cs] : counts) ranked.emplace_back(cs.first, fp);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::size_t keep = static_cast<std::size_t>(
        std::ceil(top_fraction * static_cast<double>(ranked.size())));
    std::uint64_t avoidable = 0;
    for (std::size_t i = 0; i < keep && i < ranked.size(); ++i) {
        const auto& [count, fp] = ranked[i];
        avoidable += (count - 1) * counts[fp].second;  // first occurrence must upload
    }
    return static_cast<double>(avoidable) / static_cast<double>(total);
}

/// Deterministic synthetic snapshot generator. Content is assembled from
/// "units": random blocks trimmed to an intrinsic cut point of the chunker, so
/// a repeated unit always re-chunks to identical fingerprints no matter what
/// precedes it. Dedup ratio is then controlled exactly by the unit draw plan.
class WorkloadGenerator {
public:
    WorkloadGenerator(SnapshotSpec spec, ChunkerConfig chunk_cfg, std::uint64_t seed)
        : spec_(spec), chunker_(chunk_cfg), seed_(seed) {
        if (spec_.target_dedup_ratio != 0 && spec_.target_dedup_ratio < 1.0)
            throw InfeasibleTargetError{};
        // Small snapshots need shorter runs, or the per-snapshot draw plan is
        // too coarse to calibrate.
        std::size_t unit_len_est = spec_.unit_chunks * chunker_.config().avg_size;
        std::size_t units_per_snap = std::max<std::size_t>(1, spec_.base_size / unit_len_est);
        while (spec_.units_per_run > 1 && units_per_snap / spec_.units_per_run < 8)
            spec_.units_per_run /= 2;
    }

    Workload generate() {
        return spec_.target_dedup_ratio > 0 ? generate_skewed() : generate_mutation();
    }

private:
    // ---- unit materialization ----

    using UnitKey = std::uint64_t;

    std::uint64_t mix(std::uint64_t a, std::uint64_t b) const {
        std::uint64_t x = a * 0x9e3779b97f4a7c15ULL ^ b;
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    const Bytes& unit(UnitKey key) {
        auto it = units_.find(key);
        if (it != units_.end()) return it->second;
        std::size_t want = spec_.unit_chunks * chunker_.config().avg_size;
        for (std::uint64_t salt = 0;; ++salt) {
            std::mt19937_64 rng(mix(seed_, mix(key, salt)));
            Bytes raw(want + chunker_.config().max_size);
            for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
            auto cuts = chunker_.boundaries(raw);
            // The final entry is just end-of-data; trim to the last real cut.
            if (cuts.size() < 2) continue;
            raw.resize(cuts[cuts.size() - 2]);
            return units_.emplace(key, std::move(raw)).first->second;
        }
    }

    std::uint64_t unit_len(UnitKey key) { return unit(key).size(); }

    // Key spaces: hot family, common families, mutation-mode slots, fresh units.
    UnitKey hot_key(std::size_t i) const { return 0x1000000000000000ULL + i; }
    UnitKey family_key(std::size_t fam, std::size_t i) const {
        return 0x2000000000000000ULL + fam * 1024 + i;
    }
    UnitKey base_key(std::size_t slot) const { return 0x3000000000000000ULL + slot; }
    UnitKey fresh_key(std::uint64_t n) const { return 0x4000000000000000ULL + n; }

    // ---- mutation mode: base snapshot with per-slot rewrites ----

    Workload generate_mutation() {
        double m = std::clamp(spec_.mutation_rate, 0.0, 1.0);
        std::size_t unit_len_est = spec_.unit_chunks * chunker_.config().avg_size;
        std::size_t slots = std::max<std::size_t>(1, spec_.base_size / unit_len_est);
        std::size_t per_file = std::max<std::size_t>(1, spec_.units_per_run * spec_.runs_per_file);
        std::uint64_t fresh = 0;

        std::vector<std::vector<UnitKey>> plan(spec_.snapshot_count);
        for (std::size_t t = 0; t < spec_.snapshot_count; ++t) {
            plan[t].reserve(slots);
            std::mt19937_64 rng(mix(seed_, 0xA110C ^ t));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (std::size_t s = 0; s < slots; ++s) {
                bool rewrite = t > 0 && u(rng) < m;
                plan[t].push_back(rewrite ? fresh_key(fresh++) : base_key(s));
            }
        }
        return materialize(plan, per_file);
    }

    // ---- skewed mode: hot window with drift, Zipf families, fresh runs ----

    struct Shape {
        std::size_t runs = 0;
        double hot = 0;
        std::size_t families = 0;
        std::size_t family_size = 0;
    };

    Shape shape() const {
        Shape s;
        std::size_t unit_len_est = spec_.unit_chunks * chunker_.config().avg_size;
        std::size_t units_per_snap =
            std::max<std::size_t>(spec_.units_per_run, spec_.base_size / unit_len_est);
        s.runs = std::max<std::size_t>(1, units_per_snap / spec_.units_per_run);
        double r = spec_.target_dedup_ratio;
        s.hot = spec_.hot_fraction >= 0 ? spec_.hot_fraction
                                        : std::clamp(0.98 * (1.0 - 1.0 / r), 0.05, 0.92);
        s.family_size = spec_.units_per_run * 2;
        double total_units =
            static_cast<double>(spec_.snapshot_count * s.runs * spec_.units_per_run);
        std::size_t fam = static_cast<std::size_t>(
            std::max(2.0, total_units / (static_cast<double>(s.family_size) * r * 2.0)));
        s.families = fam;
        return s;
    }

    std::vector<std::vector<UnitKey>> plan_skewed(const Shape& sh, double p_new,
                                                  std::size_t window, double core_fraction) {
        std::vector<std::vector<UnitKey>> plan(spec_.snapshot_count);
        std::uint64_t fresh = 0;
        // Error-diffused run budgets, so small per-snapshot run counts still
        // realize the target fractions over the whole trace.
        double fresh_acc = 0, hot_acc = 0;
        double zipf_norm = 0;
        for (std::size_t f = 1; f <= sh.families; ++f)
            zipf_norm += std::pow(static_cast<double>(f), -spec_.zipf_s);

        for (std::size_t t = 0; t < spec_.snapshot_count; ++t) {
            std::mt19937_64 rng(mix(seed_, 0x5EED ^ (t * 131)));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            fresh_acc += p_new * static_cast<double>(sh.runs);
            std::size_t n_new = std::min(static_cast<std::size_t>(fresh_acc), sh.runs);
            fresh_acc -= static_cast<double>(n_new);
            hot_acc += sh.hot * static_cast<double>(sh.runs);
            std::size_t n_hot =
                std::min(static_cast<std::size_t>(hot_acc), sh.runs - n_new);
            hot_acc -= static_cast<double>(n_hot);
            std::size_t n_common = sh.runs - n_hot - n_new;

            std::size_t w0 = static_cast<std::size_t>(spec_.drift_per_snapshot *
                                                      static_cast<double>(t)) %
                             spec_.hot_family_units;
            std::size_t core = std::max<std::size_t>(1, spec_.units_per_run / 4);
            std::vector<std::vector<UnitKey>> runs;
            for (std::size_t i = 0; i < n_hot; ++i) {
                std::vector<UnitKey> run;
                if (u(rng) < core_fraction) {
                    // A tiny fixed core absorbs most hot traffic, so a handful
                    // of fingerprints dominate the frequency ranking.
                    for (std::size_t k = 0; k < spec_.units_per_run; ++k)
                        run.push_back(hot_key(k % core));
                } else {
                    // Runs start anywhere in a window that drifts slowly
                    // relative to its width, so units at the leading edge
                    // appear in recipes beside established hot units well
                    // before they dominate the frequency ranking.
                    std::size_t width = std::max(window, spec_.units_per_run);
                    std::size_t span = width - spec_.units_per_run + 1;
                    std::size_t start =
                        w0 + static_cast<std::size_t>(u(rng) * static_cast<double>(span));
                    for (std::size_t k = 0; k < spec_.units_per_run; ++k)
                        run.push_back(hot_key((start + k) % spec_.hot_family_units));
                }
                runs.push_back(std::move(run));
            }
            for (std::size_t i = 0; i < n_common; ++i) {
                double x = u(rng) * zipf_norm;
                std::size_t fam = sh.families;
                for (std::size_t f = 1; f <= sh.families; ++f) {
                    x -= std::pow(static_cast<double>(f), -spec_.zipf_s);
                    if (x <= 0) {
                        fam = f;
                        break;
                    }
                }
                std::size_t off = static_cast<std::size_t>(u(rng) * 2.0) %
                                  (sh.family_size - spec_.units_per_run + 1);
                std::vector<UnitKey> run;
                for (std::size_t k = 0; k < spec_.units_per_run; ++k)
                    run.push_back(family_key(fam - 1, off + k));
                runs.push_back(std::move(run));
            }
            for (std::size_t i = 0; i < n_new; ++i) {
                std::vector<UnitKey> run;
                for (std::size_t k = 0; k < spec_.units_per_run; ++k)
                    run.push_back(fresh_key(fresh++));
                runs.push_back(std::move(run));
            }
            std::shuffle(runs.begin(), runs.end(), rng);
            for (const auto& run : runs)
                plan[t].insert(plan[t].end(), run.begin(), run.end());
        }
        return plan;
    }

    double planned_ratio(const std::vector<std::vector<UnitKey>>& plan) {
        std::uint64_t total = 0, uniq = 0;
        std::map<UnitKey, bool> seen;
        for (const auto& snap : plan)
            for (UnitKey k : snap) {
                std::uint64_t len = unit_len(k);
                total += len;
                if (!seen[k]) {
                    seen[k] = true;
                    uniq += len;
                }
            }
        return static_cast<double>(total) / static_cast<double>(uniq);
    }

    Workload generate_skewed() {
        Shape sh = shape();
        double target = spec_.target_dedup_ratio;
        std::size_t window = std::max(spec_.hot_window_units, spec_.units_per_run);
        double core = spec_.core_fraction;
        // Small traces may not reach the target even with zero fresh units; in
        // that case escalate density — narrow the hot window, then route more
        // hot runs through the fixed core — and recalibrate.
        for (;;) {
            double lo = 0.0, hi = 1.0 - sh.hot;
            // Realized ratio falls monotonically as the fresh-unit share
            // grows; bisect, then take the best plan seen.
            double best_err = 1e18, best_p = 0.0;
            bool densest_short = false;
            for (int iter = 0; iter < 14; ++iter) {
                double p = (iter == 0) ? 0.0 : (iter == 1 ? hi : 0.5 * (lo + hi));
                double r = planned_ratio(plan_skewed(sh, p, window, core));
                double err = std::abs(r - target) / target;
                if (err < best_err) {
                    best_err = err;
                    best_p = p;
                }
                if (iter == 0) {
                    if (r < target) {
                        densest_short = true;
                        break;
                    }
                    continue;
                }
                if (iter == 1 && r > target) break;  // even all-fresh is too dense
                if (r > target)
                    lo = p;
                else
                    hi = p;
            }
            if (best_err <= 0.10) {
                auto plan = plan_skewed(sh, best_p, window, core);
                return materialize(plan, spec_.units_per_run * spec_.runs_per_file);
            }
            if (densest_short && window > spec_.units_per_run) {
                window = std::max(spec_.units_per_run, window / 2);
                continue;
            }
            if (densest_short && core < 1.0) {
                core = core < 0.5 ? 0.5 : std::min(1.0, core + 0.25);
                continue;
            }
            throw CalibrationError(planned_ratio(plan_skewed(sh, best_p, window, core)));
        }
    }

    Workload materialize(const std::vector<std::vector<UnitKey>>& plan,
                         std::size_t units_per_file) {
        Workload w;
        std::map<UnitKey, bool> seen;
        for (const auto& snap_plan : plan) {
            Snapshot snap;
            Bytes file;
            std::size_t in_file = 0;
            for (UnitKey k : snap_plan) {
                const Bytes& u = unit(k);
                file.insert(file.end(), u.begin(), u.end());
                w.total_bytes += u.size();
                if (!seen[k]) {
                    seen[k] = true;
                    w.unique_bytes += u.size();
                }
                if (++in_file == units_per_file) {
                    snap.files.push_back(std::move(file));
                    file.clear();
                    in_file = 0;
                }
            }
            if (!file.empty()) snap.files.push_back(std::move(file));
            w.snapshots.push_back(std::move(snap));
        }
        w.realized_ratio =
            static_cast<double>(w.total_bytes) / static_cast<double>(w.unique_bytes);
        return w;
    }

    SnapshotSpec spec_;
    Chunker chunker_;
    std::uint64_t seed_;
    std::unordered_map<UnitKey, Bytes> units_;
};

/// Table-driven dataset profiles from the backup-trace literature.
inline SnapshotSpec profile_spec(const std::string& name) {
    SnapshotSpec s;
    if (name == "LAB") {
        s.snapshot_count = 33;
        s.target_dedup_ratio = 27.1;
        s.hot_fraction = 0.94;
        s.core_fraction = 0.97;
    } else if (name == "FSL") {
        s.snapshot_count = 20;
        s.target_dedup_ratio = 11.8;
    } else if (name == "MS") {
        s.snapshot_count = 30;
        s.target_dedup_ratio = 5.1;
    } else if (name == "UBUNTU") {
        s.snapshot_count = 12;
        s.target_dedup_ratio = 4.1;
    } else if (name == "GCC") {
        s.snapshot_count = 24;
        s.target_dedup_ratio = 1.4;
    } else {
        throw std::invalid_argument("unknown dataset profile: " + name);
    }
    return s;
}

}  // namespace pmdedup
