// Command-line front end: run one experiment, generate a workload corpus, or
// sweep a parameter axis. Exit status is nonzero if any run violates the
// single-use audit over the merged challenge issue log.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmdedup/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmdedup;

namespace {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    in >> j;
    return j;
}

void apply_snapshot(const json& j, SnapshotSpec& s) {
    s.base_size = j.value("base_size", s.base_size);
    s.snapshot_count = j.value("snapshot_count", s.snapshot_count);
    s.mutation_rate = j.value("mutation_rate", s.mutation_rate);
    s.target_dedup_ratio = j.value("target_dedup_ratio", s.target_dedup_ratio);
    s.zipf_s = j.value("zipf_s", s.zipf_s);
    s.units_per_run = j.value("units_per_run", s.units_per_run);
    s.runs_per_file = j.value("runs_per_file", s.runs_per_file);
    s.hot_family_units = j.value("hot_family_units", s.hot_family_units);
    s.hot_fraction = j.value("hot_fraction", s.hot_fraction);
    s.core_fraction = j.value("core_fraction", s.core_fraction);
    s.drift_per_snapshot = j.value("drift_per_snapshot", s.drift_per_snapshot);
    s.unit_chunks = j.value("unit_chunks", s.unit_chunks);
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig cfg;
    cfg.mode = mode_from_string(j.value("mode", "pm_dedup"));
    cfg.profile = j.value("profile", "custom");
    if (cfg.profile != "custom") cfg.snapshot = profile_spec(cfg.profile);
    if (j.contains("snapshot")) apply_snapshot(j.at("snapshot"), cfg.snapshot);

    if (j.contains("chunker")) {
        const json& c = j.at("chunker");
        cfg.chunker.min_size = c.value("min_size", cfg.chunker.min_size);
        cfg.chunker.avg_size = c.value("avg_size", cfg.chunker.avg_size);
        cfg.chunker.max_size = c.value("max_size", cfg.chunker.max_size);
        cfg.chunker.gear_seed = c.value("gear_seed", cfg.chunker.gear_seed);
    }
    if (j.contains("latency")) {
        const json& l = j.at("latency");
        cfg.latency.edge_rtt = millis_vt(l.value("edge_rtt_ms", 2.0));
        cfg.latency.cloud_ratio = l.value("cloud_ratio", cfg.latency.cloud_ratio);
        cfg.latency.per_kib = micros(l.value("per_kib_us", 2));
        cfg.latency.ecall_cost = micros(l.value("ecall_us", 5));
        cfg.latency.challenge_gen_cost = micros(l.value("challenge_gen_us", 50));
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.edge_count = j.value("edge_count", cfg.edge_count);
    cfg.clients = j.value("clients", cfg.clients);
    if (j.contains("warmup_snapshots"))
        cfg.warmup_snapshots = j.at("warmup_snapshots").get<std::size_t>();
    cfg.share_coverage = j.value("share_coverage", cfg.share_coverage);
    cfg.local_coverage = j.value("local_coverage", cfg.local_coverage);
    cfg.epoch_bytes = j.value("epoch_bytes", cfg.epoch_bytes);
    if (j.contains("refresh_at_snapshots"))
        cfg.refresh_at_snapshots =
            j.at("refresh_at_snapshots").get<std::vector<std::size_t>>();
    return cfg;
}

// Returns false on an audit violation.
bool run_one(const ExperimentConfig& cfg, std::ostream& os, bool header) {
    ExperimentResult res = run_experiment(cfg);
    if (header) os << kCsvHeader << '\n';
    for (const auto& r : res.rows) os << csv_row(r) << '\n';
    if (!issue_log_single_use(res.merged_issue_log)) {
        std::cerr << "audit failure: a challenge pair was issued more than once\n";
        return false;
    }
    return true;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out, std::optional<std::string> mode) {
    json j = config_path.empty() ? json::object() : load_json(config_path);
    ExperimentConfig cfg = parse_config(j);
    if (seed) cfg.seed = *seed;
    if (mode) cfg.mode = mode_from_string(*mode);

    bool ok;
    if (out.empty() || out == "-") {
        ok = run_one(cfg, std::cout, true);
    } else {
        std::ofstream f(out);
        if (!f) throw ConfigError("cannot open output file: " + out);
        ok = run_one(cfg, f, true);
        std::cerr << "wrote " << out << '\n';
    }
    return ok ? 0 : 1;
}

int cmd_gen(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out_dir) {
    json j = config_path.empty() ? json::object() : load_json(config_path);
    ExperimentConfig cfg = parse_config(j);
    if (seed) cfg.seed = *seed;

    WorkloadGenerator gen(cfg.snapshot, cfg.chunker, cfg.seed);
    Workload w = gen.generate();
    fs::create_directories(out_dir);

    json manifest;
    manifest["profile"] = cfg.profile;
    manifest["seed"] = cfg.seed;
    manifest["total_bytes"] = w.total_bytes;
    manifest["unique_bytes"] = w.unique_bytes;
    manifest["dedup_ratio"] = w.realized_ratio;
    json snaps = json::array();
    for (std::size_t t = 0; t < w.snapshots.size(); ++t) {
        json files = json::array();
        for (std::size_t i = 0; i < w.snapshots[t].files.size(); ++i) {
            const Bytes& f = w.snapshots[t].files[i];
            std::ostringstream name;
            name << "snap" << t << "_file" << i << ".bin";
            std::ofstream of(fs::path(out_dir) / name.str(), std::ios::binary);
            of.write(reinterpret_cast<const char*>(f.data()),
                     static_cast<std::streamsize>(f.size()));
            files.push_back({{"name", name.str()},
                             {"bytes", f.size()},
                             {"sha256", hex(fingerprint_of(f).bytes)}});
        }
        snaps.push_back({{"snapshot", t}, {"files", std::move(files)}});
    }
    manifest["snapshots"] = std::move(snaps);
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << '\n';
    std::cerr << "wrote " << w.snapshots.size() << " snapshots ("
              << w.total_bytes << " bytes, ratio " << w.realized_ratio << ") to "
              << out_dir << '\n';
    return 0;
}

int cmd_sweep(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out, const std::string& axis,
              const std::vector<double>& values) {
    json j = config_path.empty() ? json::object() : load_json(config_path);
    ExperimentConfig base = parse_config(j);
    if (seed) base.seed = *seed;

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!out.empty() && out != "-") {
        file.open(out);
        if (!file) throw ConfigError("cannot open output file: " + out);
        os = &file;
    }

    bool ok = true, header = true;
    for (double v : values) {
        ExperimentConfig cfg = base;
        if (axis == "cloud_ratio") {
            cfg.latency.cloud_ratio = v;
        } else if (axis == "top_fraction") {
            cfg.share_coverage = v;
        } else if (axis == "chunk_size") {
            auto avg = static_cast<std::size_t>(v);
            cfg.chunker.avg_size = avg;
            cfg.chunker.min_size = avg / 4;
            cfg.chunker.max_size = avg * 4;
        } else {
            throw ConfigError("unknown sweep axis: " + axis);
        }
        ok = run_one(cfg, *os, header) && ok;
        header = false;
    }
    if (os == &file) std::cerr << "wrote " << out << '\n';
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"secure source-based deduplication simulator"};
    app.require_subcommand(1);

    std::string config, out = "-", mode_str, axis;
    std::optional<std::uint64_t> seed;
    std::vector<double> values;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON config file");
        sub->add_option("--seed", seed, "override the experiment seed");
        sub->add_option("--out", out, "output path ('-' for stdout)");
    };

    CLI::App* run = app.add_subcommand("run", "replay one workload and emit per-upload CSV");
    add_common(run);
    run->add_option("--mode", mode_str,
                    "pm_dedup | pm_no_local | source_baseline | target_baseline");

    CLI::App* gen = app.add_subcommand("gen", "materialize a workload corpus with a manifest");
    add_common(gen);

    CLI::App* sweep = app.add_subcommand("sweep", "repeat a run across parameter values");
    add_common(sweep);
    sweep->add_option("--sweep-axis", axis, "cloud_ratio | top_fraction | chunk_size")
        ->required();
    sweep->add_option("--sweep-values", values, "values for the chosen axis")
        ->required()
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config, seed,
                           out == "-" && run->count("--out") == 0 ? "" : out,
                           mode_str.empty() ? std::nullopt
                                            : std::optional<std::string>(mode_str));
        if (gen->parsed()) {
            if (out == "-") throw ConfigError("gen needs --out <directory>");
            return cmd_gen(config, seed, out);
        }
        if (sweep->parsed()) return cmd_sweep(config, seed, out, axis, values);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
