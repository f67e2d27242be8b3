#include "cmix/mobility.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>

namespace cmix::mobility {

SimSeconds Trip::duration(const road::RoadGraph& g) const {
    SimSeconds d = 0.0;
    for (std::size_t i = 0; i < edges.size(); ++i) d += g.edge(edges[i]).length / speeds[i];
    return d;
}

std::optional<TraceSample> Trajectory::at(SimSeconds t) const {
    if (samples.empty() || t < samples.front().time || t > samples.back().time) return std::nullopt;
    auto it = std::lower_bound(samples.begin(), samples.end(), t,
                               [](const TraceSample& s, SimSeconds v) { return s.time < v; });
    if (it->time == t) return *it;
    const auto& b = *it;
    const auto& a = *(it - 1);
    const double u = (t - a.time) / (b.time - a.time);
    TraceSample s = a;
    s.time = t;
    s.pos = a.pos + (b.pos - a.pos) * u;
    s.speed = a.speed + (b.speed - a.speed) * u;
    if (norm(b.pos - a.pos) > 0.0) s.heading = heading_of(b.pos - a.pos);
    return s;
}

LengthMix LengthMix::standard() { return LengthMix{{{4.5, 0.80}, {7.5, 0.12}, {12.0, 0.08}}}; }

VehicleLength LengthMix::draw(Rng& rng) const {
    double u = rng.uniform();
    for (const auto& [meters, p] : weights) {
        if (u < p) return VehicleLength::from_meters(meters);
        u -= p;
    }
    return VehicleLength::from_meters(weights.back().first);
}

std::vector<Trip> synthesize_trips(const road::RoadGraph& g, std::size_t n_vehicles, double arrival_rate,
                                   std::uint64_t seed, const SynthesisOptions& opts) {
    if (n_vehicles < 1) throw std::invalid_argument("need at least one vehicle");
    if (!(arrival_rate > 0.0)) throw std::invalid_argument("arrival rate must be positive");
    Rng rng(seed);
    const auto nj = g.junctions().size();
    std::vector<Trip> trips;
    trips.reserve(n_vehicles);
    SimSeconds clock = opts.start_time;
    for (std::size_t i = 0; i < n_vehicles; ++i) {
        clock += rng.exponential(arrival_rate);
        std::optional<std::vector<std::uint32_t>> route;
        for (int attempt = 0; attempt < 100 && !route; ++attempt) {
            const auto from = static_cast<std::uint32_t>(rng.below(nj));
            const auto to = static_cast<std::uint32_t>(rng.below(nj));
            if (from != to) route = g.shortest_path(from, to);
        }
        if (!route) throw Error(Errc::SynthesisFailed, "no routable junction pair after 100 draws");

        Trip trip;
        trip.vehicle = EntityId{opts.first_vehicle_id + static_cast<std::uint32_t>(i)};
        trip.departure = std::round(clock * 10.0) / 10.0;
        trip.edges = std::move(*route);
        const double factor = rng.uniform(opts.speed_factor_min, opts.speed_factor_max);
        for (const auto e : trip.edges) trip.speeds.push_back(g.edge(e).speed_limit * factor);
        trip.length = opts.lengths.draw(rng);
        trips.push_back(std::move(trip));
    }
    return trips;
}

std::optional<TraceSample> trip_position(const road::RoadGraph& g, const Trip& trip, SimSeconds t) {
    if (t < trip.departure) return std::nullopt;
    SimSeconds edge_start = trip.departure;
    for (std::size_t i = 0; i < trip.edges.size(); ++i) {
        const auto& edge = g.edge(trip.edges[i]);
        const SimSeconds edge_time = edge.length / trip.speeds[i];
        const bool last = i + 1 == trip.edges.size();
        if (t < edge_start + edge_time || (last && t <= edge_start + edge_time)) {
            const double offset = std::min((t - edge_start) * trip.speeds[i], edge.length);
            return TraceSample{t, trip.vehicle, g.point_at(trip.edges[i], offset), trip.speeds[i],
                               g.heading_at(trip.edges[i], offset)};
        }
        edge_start += edge_time;
    }
    return std::nullopt;
}

Trajectory trajectory_of(const road::RoadGraph& g, const Trip& trip, SimSeconds step_s) {
    Trajectory tr{trip.vehicle, trip.length, {}};
    const SimSeconds arrival = trip.departure + trip.duration(g);
    // Times are built from integer deciseconds so that every run sees the
    // same doubles regardless of the step.
    const std::int64_t step_ds = std::max<std::int64_t>(1, std::llround(step_s * 10.0));
    for (auto k = static_cast<std::int64_t>(std::ceil(trip.departure * 10.0 / step_ds - 1e-9));; ++k) {
        const SimSeconds t = static_cast<double>(k * step_ds) / 10.0;
        if (t > arrival + 1e-9) break;
        if (auto s = trip_position(g, trip, std::min(t, arrival))) {
            s->time = t;
            tr.samples.push_back(*s);
        }
    }
    return tr;
}

void export_trace(std::ostream& out, const std::vector<Trajectory>& trajectories) {
    std::vector<TraceSample> rows;
    for (const auto& tr : trajectories) rows.insert(rows.end(), tr.samples.begin(), tr.samples.end());
    std::stable_sort(rows.begin(), rows.end(), [](const TraceSample& a, const TraceSample& b) {
        return a.time < b.time || (a.time == b.time && a.vehicle < b.vehicle);
    });
    out << "time,vehicle,x,y,speed,heading\n";
    char buf[256];
    for (const auto& s : rows) {
        std::snprintf(buf, sizeof buf, "%.3f,%u,%.6f,%.6f,%.6f,%.6f\n", s.time, s.vehicle.value, s.pos.x, s.pos.y,
                      s.speed, s.heading);
        out << buf;
    }
}

std::string export_trace(const std::vector<Trajectory>& trajectories) {
    std::ostringstream os;
    export_trace(os, trajectories);
    return os.str();
}

std::vector<Trajectory> ingest_trace(std::istream& in, const road::RoadGraph& g, std::uint64_t length_seed,
                                     const LengthMix& lengths) {
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::ParseError, "empty trace");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "time,vehicle,x,y,speed,heading") throw Error(Errc::ParseError, "unexpected trace header: " + line);

    std::map<std::uint32_t, Trajectory> by_vehicle;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        TraceSample s;
        unsigned vehicle = 0;
        int consumed = 0;
        if (std::sscanf(line.c_str(), "%lf,%u,%lf,%lf,%lf,%lf%n", &s.time, &vehicle, &s.pos.x, &s.pos.y, &s.speed,
                        &s.heading, &consumed) != 6 ||
            static_cast<std::size_t>(consumed) != line.size()) {
            throw Error(Errc::ParseError, "malformed trace row at line " + std::to_string(lineno));
        }
        if (s.speed < 0.0) throw Error(Errc::ParseError, "negative speed at line " + std::to_string(lineno));
        s.vehicle = EntityId{vehicle};
        const auto snap = g.snap(s.pos, s.heading);
        if (!snap) throw Error(Errc::OffNetwork, "sample at line " + std::to_string(lineno) + " is off the network");
        s.pos = snap->point;

        auto [it, fresh] = by_vehicle.try_emplace(vehicle);
        auto& tr = it->second;
        if (fresh) {
            tr.vehicle = s.vehicle;
            Rng lrng(Rng::mix(length_seed ^ Rng::mix(vehicle)));
            tr.length = lengths.draw(lrng);
        } else {
            const auto& prev = tr.samples.back();
            if (!(s.time > prev.time)) {
                throw Error(Errc::TraceOrderError, "vehicle " + std::to_string(vehicle) +
                                                       " time does not increase at line " + std::to_string(lineno));
            }
            const double dt = s.time - prev.time;
            const double allowed = std::max(prev.speed, s.speed) * dt * 1.5 + 0.01;
            if (distance(prev.pos, s.pos) > allowed) {
                throw Error(Errc::ParseError, "vehicle " + std::to_string(vehicle) + " jumps at line " +
                                                  std::to_string(lineno));
            }
        }
        tr.samples.push_back(s);
    }
    std::vector<Trajectory> out;
    out.reserve(by_vehicle.size());
    for (auto& [id, tr] : by_vehicle) out.push_back(std::move(tr));
    return out;
}

}  // namespace cmix::mobility
