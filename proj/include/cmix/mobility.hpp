#pragma once

// Vehicle trajectories: synthesized trips over the road graph or ingested
// SUMO-style traces, both reduced to timestamped samples.

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmix/core.hpp"
#include "cmix/road.hpp"

namespace cmix::mobility {

struct Trip {
    EntityId vehicle;
    SimSeconds departure = 0.0;
    std::vector<std::uint32_t> edges;  // edge indices, consecutive edges share a junction
    std::vector<double> speeds;        // per edge, m/s
    VehicleLength length;

    [[nodiscard]] SimSeconds duration(const road::RoadGraph& g) const;
};

struct TraceSample {
    SimSeconds time = 0.0;
    EntityId vehicle;
    Vec2 pos;
    double speed = 0.0;
    double heading = 0.0;
};

struct Trajectory {
    EntityId vehicle;
    VehicleLength length;
    std::vector<TraceSample> samples;  // strictly increasing in time

    [[nodiscard]] SimSeconds start() const { return samples.front().time; }
    [[nodiscard]] SimSeconds end() const { return samples.back().time; }
    /// Linear interpolation between samples; nullopt outside [start, end].
    [[nodiscard]] std::optional<TraceSample> at(SimSeconds t) const;
};

/// Discrete vehicle-length distribution.
struct LengthMix {
    std::vector<std::pair<double, double>> weights;  // (meters, probability)

    static LengthMix standard();  // 4.5 m 80%, 7.5 m 12%, 12.0 m 8%
    VehicleLength draw(Rng& rng) const;
};

struct SynthesisOptions {
    LengthMix lengths = LengthMix::standard();
    double speed_factor_min = 0.6;  // per-vehicle fraction of the limit, drawn in [min, 1]
    double speed_factor_max = 1.0;
    SimSeconds start_time = 0.0;
    std::uint32_t first_vehicle_id = 1;
};

/// Poisson departures at `arrival_rate` per second, shortest-path routes
/// between uniformly random junction pairs. Errc::SynthesisFailed after 100
/// unroutable draws for one vehicle.
std::vector<Trip> synthesize_trips(const road::RoadGraph& g, std::size_t n_vehicles, double arrival_rate,
                                   std::uint64_t seed, const SynthesisOptions& opts = {});

/// Position of a trip at time t (nullopt before departure or after arrival).
std::optional<TraceSample> trip_position(const road::RoadGraph& g, const Trip& trip, SimSeconds t);

/// Samples the trip on the absolute grid k * step_s inside [departure, arrival].
Trajectory trajectory_of(const road::RoadGraph& g, const Trip& trip, SimSeconds step_s);

/// CSV with header `time,vehicle,x,y,speed,heading`, fixed decimals.
void export_trace(std::ostream& out, const std::vector<Trajectory>& trajectories);
std::string export_trace(const std::vector<Trajectory>& trajectories);

/// Parses a trace, snapping positions to the graph. Vehicle lengths are not
/// part of the format and are drawn from `lengths` with a per-vehicle stream
/// derived from `length_seed`.
/// Errors: Errc::TraceOrderError, Errc::OffNetwork, Errc::ParseError.
std::vector<Trajectory> ingest_trace(std::istream& in, const road::RoadGraph& g, std::uint64_t length_seed = 0,
                                     const LengthMix& lengths = LengthMix::standard());

}  // namespace cmix::mobility
