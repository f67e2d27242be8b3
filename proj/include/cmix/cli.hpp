#pragma once

// Command-line front end: batch runs with seed lists and parameter sweeps,
// grid scenario generation and adversary-only replays of exported logs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cmix/adversary.hpp"
#include "cmix/metrics.hpp"
#include "cmix/sim.hpp"

namespace cmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

/// One simulated run followed by the eavesdropper attack and both reports.
struct Evaluation {
    sim::RunResult run;
    adversary::AttackResult attack;
    metrics::LinkabilityReport linkability;
    metrics::OverheadReport overhead;
};

/// The chaining seed is the scenario's `rng_seed`.
Evaluation evaluate(const sim::ScenarioConfig& config);

/// "1..5" (inclusive range) or "1,4,9". Errc::ConfigError otherwise.
std::vector<std::uint64_t> parse_seeds(std::string_view text);

struct SweepAxis {
    std::string key;
    std::vector<double> values;
};

/// "relay_fraction=0,0.5,1". Errc::ConfigError on malformed text.
SweepAxis parse_sweep(std::string_view text);

/// Zone file written next to exported logs: geometry inputs plus the
/// attack parameters needed to rebuild the in-process instance.
nlohmann::json zones_json(const sim::ScenarioConfig& config);

struct ZoneFile {
    std::vector<road::MixZoneGeometry> zones;
    double v_min_mps = road::kDefaultVMin;
};

/// Errc::ConfigError when the file does not describe zones on `graph`.
ZoneFile load_zones(const nlohmann::json& j, const road::RoadGraph& graph);

struct GridSpec {
    int rows = 4;
    int cols = 4;
    double spacing_m = 500.0;
    std::size_t zones = 2;
    std::size_t vehicles = 200;
    std::uint64_t synthesis_seed = 7;
    double arrival_rate_per_s = 0.5;
};

/// Junction ids of the `spec.zones` interior junctions closest to the grid
/// center, ties broken by id. Errc::ConfigError when the request cannot be met.
std::vector<std::int64_t> central_junctions(const GridSpec& spec);

/// Scenario JSON referencing `graph_file`, with the default protocol parameters.
nlohmann::json grid_scenario(const GridSpec& spec, const std::string& graph_file);

/// Full command-line entry point; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmix::cli
