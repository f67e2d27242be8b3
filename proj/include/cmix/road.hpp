#pragma once

// Road graph with polyline geometry, mix-zone geometry derived from it, and
// the reachability / timing predicates used by the linking attack.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cmix/core.hpp"

namespace cmix::road {

inline constexpr double kSnapDistance = 5.0;
inline constexpr double kExitGate = 50.0;
inline constexpr double kDefaultVMin = 1.39;

struct Junction {
    std::int64_t id = 0;
    Vec2 pos;
};

struct Edge {
    std::int64_t id = 0;
    std::uint32_t from = 0;  // junction index
    std::uint32_t to = 0;
    std::vector<Vec2> shape;
    double length = 0.0;
    double speed_limit = 0.0;
};

struct Snap {
    std::uint32_t edge = 0;
    double offset = 0.0;  // arc length from the edge start
    double dist = 0.0;
    Vec2 point;
};

class RoadGraph {
public:
    std::uint32_t add_junction(std::int64_t id, Vec2 pos);
    /// An empty `shape` means a straight segment between the two junctions.
    std::uint32_t add_edge(std::int64_t id, std::int64_t from, std::int64_t to, std::vector<Vec2> shape,
                           double speed_limit);

    [[nodiscard]] const std::vector<Junction>& junctions() const noexcept { return junctions_; }
    [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }
    [[nodiscard]] const Edge& edge(std::uint32_t e) const { return edges_.at(e); }
    [[nodiscard]] const std::vector<std::uint32_t>& out_edges(std::uint32_t j) const { return out_.at(j); }
    [[nodiscard]] const std::vector<std::uint32_t>& in_edges(std::uint32_t j) const { return in_.at(j); }
    [[nodiscard]] std::optional<std::uint32_t> junction_index(std::int64_t id) const;
    [[nodiscard]] std::optional<std::uint32_t> edge_index(std::int64_t id) const;

    /// Nearest edge within `max_dist`. With a heading, edges whose direction
    /// agrees with it win over opposite-direction twins at the same distance.
    [[nodiscard]] std::optional<Snap> snap(Vec2 pos, std::optional<double> heading,
                                           double max_dist = kSnapDistance) const;

    [[nodiscard]] Vec2 point_at(std::uint32_t e, double offset) const;
    /// Travel direction (radians) at `offset` along the edge.
    [[nodiscard]] double heading_at(std::uint32_t e, double offset) const;

    /// Edge sequence of the shortest (by length) directed path between two
    /// junction indices; nullopt when unreachable or from == to.
    [[nodiscard]] std::optional<std::vector<std::uint32_t>> shortest_path(std::uint32_t from, std::uint32_t to) const;

    [[nodiscard]] static bool is_uturn(const Edge& a, const Edge& b) noexcept { return a.from == b.to && a.to == b.from; }

    static RoadGraph from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;

private:
    std::vector<Junction> junctions_;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::uint32_t>> out_;
    std::vector<std::vector<std::uint32_t>> in_;
    std::unordered_map<std::int64_t, std::uint32_t> junction_by_id_;
    std::unordered_map<std::int64_t, std::uint32_t> edge_by_id_;
};

double polyline_length(const std::vector<Vec2>& shape);

/// Bidirectional rows x cols grid; junction ids are row-major from 0.
RoadGraph make_grid(int rows, int cols, double spacing_m, double speed_limit_mps);

struct BoundaryPoint {
    std::uint32_t edge = 0;
    double offset = 0.0;
    Vec2 pos;
};

struct InternalPath {
    std::uint32_t entry_edge = 0;
    std::uint32_t exit_edge = 0;
    double length = 0.0;
};

struct MixZoneGeometry {
    Vec2 center;
    double radius = 0.0;
    bool allow_uturn = false;
    std::vector<std::uint32_t> inside_junctions;
    std::vector<BoundaryPoint> entry_points;
    std::vector<BoundaryPoint> exit_points;
    std::vector<InternalPath> internal_paths;
    std::vector<std::uint32_t> zone_edges;  // entry, exit and internal edges

    /// Strictly inside the encrypted area.
    [[nodiscard]] bool contains(Vec2 p) const noexcept { return distance(p, center) < radius; }
    [[nodiscard]] bool junction_inside(std::uint32_t j) const noexcept;
    [[nodiscard]] bool is_entry_edge(std::uint32_t e) const noexcept;
    [[nodiscard]] bool is_exit_edge(std::uint32_t e) const noexcept;
    [[nodiscard]] const BoundaryPoint* exit_point(std::uint32_t e) const noexcept;
    [[nodiscard]] const BoundaryPoint* entry_point(std::uint32_t e) const noexcept;

    /// Derive entry/exit boundary points and internal path lengths from the
    /// junctions lying within `radius` of `center`.
    static MixZoneGeometry build(const RoadGraph& g, Vec2 center, double radius, bool allow_uturn = false);
};

struct Pose {
    Vec2 pos;
    double heading = 0.0;
};

/// True iff a directed path leads from the edge under `from`, through the
/// zone exactly once, to the edge under `to`. Errc::OffNetwork if either pose
/// does not snap within 5 m.
bool path_exists(const RoadGraph& g, Pose from, Pose to, const MixZoneGeometry& zone);

struct TraverseBounds {
    double min_s = 0.0;
    double max_s = 0.0;
};

/// min = shortest internal path / fastest zone speed limit,
/// max = longest internal path / v_min.
TraverseBounds traverse_time_bounds(const MixZoneGeometry& zone, const RoadGraph& g, double v_min = kDefaultVMin);

/// Beacon heads away from the zone center and sits within `gate` of an exit point.
bool exit_direction_consistent(const ObservedBeacon& beacon, const MixZoneGeometry& zone, double gate = kExitGate);

}  // namespace cmix::road
