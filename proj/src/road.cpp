#include "cmix/road.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>

namespace cmix::road {

double polyline_length(const std::vector<Vec2>& shape) {
    double len = 0.0;
    for (std::size_t i = 1; i < shape.size(); ++i) len += distance(shape[i - 1], shape[i]);
    return len;
}

std::uint32_t RoadGraph::add_junction(std::int64_t id, Vec2 pos) {
    if (junction_by_id_.contains(id)) throw Error(Errc::ConfigError, "duplicate junction id " + std::to_string(id));
    const auto idx = static_cast<std::uint32_t>(junctions_.size());
    junctions_.push_back({id, pos});
    out_.emplace_back();
    in_.emplace_back();
    junction_by_id_.emplace(id, idx);
    return idx;
}

std::uint32_t RoadGraph::add_edge(std::int64_t id, std::int64_t from, std::int64_t to, std::vector<Vec2> shape,
                                  double speed_limit) {
    if (edge_by_id_.contains(id)) throw Error(Errc::ConfigError, "duplicate edge id " + std::to_string(id));
    const auto f = junction_index(from);
    const auto t = junction_index(to);
    if (!f || !t) throw Error(Errc::ConfigError, "edge " + std::to_string(id) + " references an unknown junction");
    if (!(speed_limit > 0.0)) throw Error(Errc::ConfigError, "edge " + std::to_string(id) + " needs speed_limit > 0");
    if (shape.empty()) shape = {junctions_[*f].pos, junctions_[*t].pos};
    if (shape.size() < 2) throw Error(Errc::ConfigError, "edge " + std::to_string(id) + " shape needs two points");
    const double len = polyline_length(shape);
    if (!(len > 0.0)) throw Error(Errc::ConfigError, "edge " + std::to_string(id) + " has zero length");

    const auto idx = static_cast<std::uint32_t>(edges_.size());
    edges_.push_back({id, *f, *t, std::move(shape), len, speed_limit});
    out_[*f].push_back(idx);
    in_[*t].push_back(idx);
    edge_by_id_.emplace(id, idx);
    return idx;
}

std::optional<std::uint32_t> RoadGraph::junction_index(std::int64_t id) const {
    auto it = junction_by_id_.find(id);
    if (it == junction_by_id_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint32_t> RoadGraph::edge_index(std::int64_t id) const {
    auto it = edge_by_id_.find(id);
    if (it == edge_by_id_.end()) return std::nullopt;
    return it->second;
}

std::optional<Snap> RoadGraph::snap(Vec2 pos, std::optional<double> heading, double max_dist) const {
    std::optional<Snap> best_aligned;
    std::optional<Snap> best_any;
    const Vec2 hv = heading ? heading_vector(*heading) : Vec2{};

    for (std::uint32_t e = 0; e < edges_.size(); ++e) {
        const auto& shape = edges_[e].shape;
        double along = 0.0;
        Snap local{e, 0.0, std::numeric_limits<double>::infinity(), {}};
        double local_dir_dot = 0.0;
        for (std::size_t i = 1; i < shape.size(); ++i) {
            const Vec2 a = shape[i - 1];
            const Vec2 seg = shape[i] - a;
            const double seg_len = norm(seg);
            const double t = std::clamp(dot(pos - a, seg) / (seg_len * seg_len), 0.0, 1.0);
            const Vec2 p = a + seg * t;
            const double d = distance(pos, p);
            if (d < local.dist) {
                local = {e, along + t * seg_len, d, p};
                local_dir_dot = dot(seg * (1.0 / seg_len), hv);
            }
            along += seg_len;
        }
        if (local.dist > max_dist) continue;
        if (!best_any || local.dist < best_any->dist) best_any = local;
        if (heading && local_dir_dot > 0.0 && (!best_aligned || local.dist < best_aligned->dist)) best_aligned = local;
    }
    return best_aligned ? best_aligned : best_any;
}

Vec2 RoadGraph::point_at(std::uint32_t e, double offset) const {
    const auto& shape = edges_.at(e).shape;
    double along = 0.0;
    for (std::size_t i = 1; i < shape.size(); ++i) {
        const double seg_len = distance(shape[i - 1], shape[i]);
        if (offset <= along + seg_len || i + 1 == shape.size()) {
            const double t = std::clamp((offset - along) / seg_len, 0.0, 1.0);
            return shape[i - 1] + (shape[i] - shape[i - 1]) * t;
        }
        along += seg_len;
    }
    return shape.back();
}

double RoadGraph::heading_at(std::uint32_t e, double offset) const {
    const auto& shape = edges_.at(e).shape;
    double along = 0.0;
    for (std::size_t i = 1; i < shape.size(); ++i) {
        const double seg_len = distance(shape[i - 1], shape[i]);
        if (offset < along + seg_len || i + 1 == shape.size()) return heading_of(shape[i] - shape[i - 1]);
        along += seg_len;
    }
    return 0.0;
}

std::optional<std::vector<std::uint32_t>> RoadGraph::shortest_path(std::uint32_t from, std::uint32_t to) const {
    if (from == to) return std::nullopt;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(junctions_.size(), inf);
    std::vector<std::int64_t> via(junctions_.size(), -1);
    using Item = std::pair<double, std::uint32_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[from] = 0.0;
    pq.push({0.0, from});
    while (!pq.empty()) {
        auto [d, j] = pq.top();
        pq.pop();
        if (d > dist[j]) continue;
        if (j == to) break;
        for (const auto e : out_[j]) {
            const auto& edge = edges_[e];
            const double nd = d + edge.length;
            // Ties resolve to the lower edge index so routes are reproducible.
            if (nd < dist[edge.to] || (nd == dist[edge.to] && via[edge.to] > static_cast<std::int64_t>(e))) {
                const bool improved = nd < dist[edge.to];
                dist[edge.to] = nd;
                via[edge.to] = e;
                if (improved) pq.push({nd, edge.to});
            }
        }
    }
    if (dist[to] == inf) return std::nullopt;
    std::vector<std::uint32_t> path;
    for (std::uint32_t j = to; j != from;) {
        const auto e = static_cast<std::uint32_t>(via[j]);
        path.push_back(e);
        j = edges_[e].from;
    }
    std::reverse(path.begin(), path.end());
    return path;
}

RoadGraph RoadGraph::from_json(const nlohmann::json& j) {
    RoadGraph g;
    try {
        for (const auto& jn : j.at("junctions")) {
            g.add_junction(jn.at("id").get<std::int64_t>(), {jn.at("x").get<double>(), jn.at("y").get<double>()});
        }
        for (const auto& je : j.at("edges")) {
            std::vector<Vec2> shape;
            if (je.contains("shape")) {
                for (const auto& pt : je.at("shape")) shape.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
            }
            g.add_edge(je.at("id").get<std::int64_t>(), je.at("from").get<std::int64_t>(),
                       je.at("to").get<std::int64_t>(), std::move(shape), je.at("speed_limit").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ConfigError, std::string("road graph: ") + e.what());
    }
    return g;
}

nlohmann::json RoadGraph::to_json() const {
    nlohmann::json j;
    j["junctions"] = nlohmann::json::array();
    for (const auto& jn : junctions_) j["junctions"].push_back({{"id", jn.id}, {"x", jn.pos.x}, {"y", jn.pos.y}});
    j["edges"] = nlohmann::json::array();
    for (const auto& e : edges_) {
        nlohmann::json shape = nlohmann::json::array();
        for (const auto& p : e.shape) shape.push_back({p.x, p.y});
        j["edges"].push_back({{"id", e.id},
                              {"from", junctions_[e.from].id},
                              {"to", junctions_[e.to].id},
                              {"shape", shape},
                              {"speed_limit", e.speed_limit}});
    }
    return j;
}

RoadGraph make_grid(int rows, int cols, double spacing_m, double speed_limit_mps) {
    if (rows < 1 || cols < 1) throw Error(Errc::ConfigError, "grid needs at least one row and column");
    RoadGraph g;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) g.add_junction(r * cols + c, {c * spacing_m, r * spacing_m});
    }
    std::int64_t next = 0;
    auto link = [&](int a, int b) {
        g.add_edge(next++, a, b, {}, speed_limit_mps);
        g.add_edge(next++, b, a, {}, speed_limit_mps);
    };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int id = r * cols + c;
            if (c + 1 < cols) link(id, id + 1);
            if (r + 1 < rows) link(id, id + cols);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Mix-zone geometry

bool MixZoneGeometry::junction_inside(std::uint32_t j) const noexcept {
    return std::find(inside_junctions.begin(), inside_junctions.end(), j) != inside_junctions.end();
}

bool MixZoneGeometry::is_entry_edge(std::uint32_t e) const noexcept { return entry_point(e) != nullptr; }
bool MixZoneGeometry::is_exit_edge(std::uint32_t e) const noexcept { return exit_point(e) != nullptr; }

const BoundaryPoint* MixZoneGeometry::exit_point(std::uint32_t e) const noexcept {
    auto it = std::find_if(exit_points.begin(), exit_points.end(), [e](const auto& b) { return b.edge == e; });
    return it == exit_points.end() ? nullptr : &*it;
}

const BoundaryPoint* MixZoneGeometry::entry_point(std::uint32_t e) const noexcept {
    auto it = std::find_if(entry_points.begin(), entry_points.end(), [e](const auto& b) { return b.edge == e; });
    return it == entry_points.end() ? nullptr : &*it;
}

namespace {

// Arc-length offsets at which the polyline crosses the circle.
std::vector<double> circle_crossings(const std::vector<Vec2>& shape, Vec2 c, double r) {
    std::vector<double> hits;
    double along = 0.0;
    for (std::size_t i = 1; i < shape.size(); ++i) {
        const Vec2 a = shape[i - 1] - c;
        const Vec2 d = shape[i] - shape[i - 1];
        const double seg_len = norm(d);
        const double qa = dot(d, d);
        const double qb = 2.0 * dot(a, d);
        const double qc = dot(a, a) - r * r;
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0.0) {
            const double s = std::sqrt(disc);
            for (const double t : {(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)}) {
                if (t >= 0.0 && t <= 1.0) hits.push_back(along + t * seg_len);
            }
        }
        along += seg_len;
    }
    std::sort(hits.begin(), hits.end());
    return hits;
}

}  // namespace

MixZoneGeometry MixZoneGeometry::build(const RoadGraph& g, Vec2 center, double radius, bool allow_uturn) {
    if (!(radius > 0.0)) throw Error(Errc::ConfigError, "mix-zone radius must be positive");
    MixZoneGeometry z;
    z.center = center;
    z.radius = radius;
    z.allow_uturn = allow_uturn;
    for (std::uint32_t j = 0; j < g.junctions().size(); ++j) {
        if (distance(g.junctions()[j].pos, center) < radius) z.inside_junctions.push_back(j);
    }

    std::vector<std::uint32_t> internal;
    for (std::uint32_t e = 0; e < g.edges().size(); ++e) {
        const auto& edge = g.edge(e);
        const bool from_in = z.junction_inside(edge.from);
        const bool to_in = z.junction_inside(edge.to);
        if (from_in && to_in) {
            internal.push_back(e);
            z.zone_edges.push_back(e);
        } else if (!from_in && to_in) {
            const auto hits = circle_crossings(edge.shape, center, radius);
            const double off = hits.empty() ? 0.0 : hits.back();
            z.entry_points.push_back({e, off, g.point_at(e, off)});
            z.zone_edges.push_back(e);
        } else if (from_in && !to_in) {
            const auto hits = circle_crossings(edge.shape, center, radius);
            const double off = hits.empty() ? edge.length : hits.front();
            z.exit_points.push_back({e, off, g.point_at(e, off)});
            z.zone_edges.push_back(e);
        }
    }

    // Shortest boundary-to-boundary route for every connected entry/exit pair.
    for (const auto& entry : z.entry_points) {
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<double> dist(g.edges().size(), inf);  // length up to the end of edge
        using Item = std::pair<double, std::uint32_t>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[entry.edge] = g.edge(entry.edge).length - entry.offset;
        pq.push({dist[entry.edge], entry.edge});
        while (!pq.empty()) {
            auto [d, e] = pq.top();
            pq.pop();
            if (d > dist[e]) continue;
            const auto& edge = g.edge(e);
            if (!z.junction_inside(edge.to)) continue;
            for (const auto next : g.out_edges(edge.to)) {
                if (!allow_uturn && RoadGraph::is_uturn(edge, g.edge(next))) continue;
                const auto* exit = z.exit_point(next);
                const double nd = d + (exit ? exit->offset : g.edge(next).length);
                if (nd < dist[next]) {
                    dist[next] = nd;
                    if (!exit) pq.push({nd, next});
                }
            }
        }
        for (const auto& exit : z.exit_points) {
            if (dist[exit.edge] < inf) z.internal_paths.push_back({entry.edge, exit.edge, dist[exit.edge]});
        }
    }
    return z;
}

namespace {

// Edges reachable from `start` while staying outside the zone. Expansion
// stops at edges that lead into the zone; those are still reported.
std::vector<char> reach_outside(const RoadGraph& g, std::uint32_t start, const MixZoneGeometry& zone) {
    std::vector<char> seen(g.edges().size(), 0);
    std::deque<std::uint32_t> q{start};
    seen[start] = 1;
    while (!q.empty()) {
        const auto e = q.front();
        q.pop_front();
        const auto& edge = g.edge(e);
        if (zone.junction_inside(edge.to)) continue;
        for (const auto next : g.out_edges(edge.to)) {
            if (!seen[next]) {
                seen[next] = 1;
                q.push_back(next);
            }
        }
    }
    return seen;
}

}  // namespace

bool path_exists(const RoadGraph& g, Pose from, Pose to, const MixZoneGeometry& zone) {
    const auto a = g.snap(from.pos, from.heading);
    const auto b = g.snap(to.pos, to.heading);
    if (!a) throw Error(Errc::OffNetwork, "origin position does not snap to the road graph");
    if (!b) throw Error(Errc::OffNetwork, "destination position does not snap to the road graph");
    if (zone.junction_inside(g.edge(a->edge).from)) return false;  // already past the zone

    const auto before = reach_outside(g, a->edge, zone);
    for (const auto& path : zone.internal_paths) {
        if (!before[path.entry_edge]) continue;
        if (path.exit_edge == b->edge) return true;
        if (reach_outside(g, path.exit_edge, zone)[b->edge]) return true;
    }
    return false;
}

TraverseBounds traverse_time_bounds(const MixZoneGeometry& zone, const RoadGraph& g, double v_min) {
    if (zone.internal_paths.empty()) throw std::invalid_argument("zone has no internal path");
    if (!(v_min > 0.0)) throw std::invalid_argument("v_min must be positive");
    double shortest = std::numeric_limits<double>::infinity();
    double longest = 0.0;
    for (const auto& p : zone.internal_paths) {
        shortest = std::min(shortest, p.length);
        longest = std::max(longest, p.length);
    }
    double vmax = 0.0;
    for (const auto e : zone.zone_edges) vmax = std::max(vmax, g.edge(e).speed_limit);
    return {shortest / vmax, longest / v_min};
}

bool exit_direction_consistent(const ObservedBeacon& beacon, const MixZoneGeometry& zone, double gate) {
    if (zone.contains(beacon.pos)) return false;
    if (!(dot(heading_vector(beacon.heading), beacon.pos - zone.center) > 0.0)) return false;
    return std::any_of(zone.exit_points.begin(), zone.exit_points.end(),
                       [&](const BoundaryPoint& p) { return distance(p.pos, beacon.pos) <= gate; });
}

}  // namespace cmix::road
