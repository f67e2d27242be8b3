#pragma once

// External eavesdropper: the syntactic and semantic linking attack in
// candidate-set form, cross-zone chaining and the honest-but-curious RSU view.

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "cmix/road.hpp"
#include "cmix/sim.hpp"

namespace cmix::adversary {

/// Observations farther than this beyond the zone radius are ignored when
/// building a zone's linking instance.
inline constexpr double kLocalMargin = 250.0;

struct PseudonymTrack {
    CredentialId id;
    ObservedBeacon first;  // B_f
    ObservedBeacon last;   // B_l
    VehicleLength length;
    std::vector<SimSeconds> times;  // distinct observation times, ascending
    std::vector<Vec2> positions;    // one per entry of `times`
    std::vector<double> headings;
};

/// Tracks keyed by exact length (decimeters).
using LengthClasses = std::map<VehicleLength, std::vector<PseudonymTrack>>;

/// One track per pseudonym id; duplicate captures of one beacon by several
/// eavesdroppers collapse into one sample. Tracks inside a class are ordered by id.
LengthClasses build_tracks(const std::vector<sim::Observation>& obs);

/// Observations within `zone.radius + margin` of the zone center.
std::vector<sim::Observation> local_observations(const std::vector<sim::Observation>& obs,
                                                 const road::MixZoneGeometry& zone, double margin = kLocalMargin);

/// Polyline length through a track's samples.
double observed_distance(const PseudonymTrack& t);

/// Global observation interval of every pseudonym, used by the
/// "not seen together" condition.
using SeenIntervals = std::map<CredentialId, std::pair<SimSeconds, SimSeconds>>;
SeenIntervals seen_intervals(const std::vector<sim::Observation>& obs);

struct LinkInstance {
    std::vector<PseudonymTrack> entering;  // B_l just outside the zone, heading in
    std::vector<PseudonymTrack> exiting;   // B_f just outside the zone
    std::vector<CredentialId> trivially_linked;
};

/// Splits one zone's local tracks. A pseudonym observed going in and then
/// coming out again never changed and is set aside as trivially linked.
LinkInstance filter_trivial(const LengthClasses& tracks, const road::MixZoneGeometry& zone,
                            double gate = road::kExitGate);

struct LinkCandidateSet {
    CredentialId entering;
    std::vector<CredentialId> candidates;  // ascending id order
    std::optional<CredentialId> truth;     // evaluation only
    SimSeconds time = 0.0;                 // B_l timestamp of the entering track
    std::uint32_t zone = 0;
};

struct LinkParams {
    road::TraverseBounds bounds;
    double gate = road::kExitGate;
};

/// Pairwise test of the four conditions, evaluated from scratch.
bool correlated(const PseudonymTrack& in, const PseudonymTrack& out, const SeenIntervals& seen,
                const road::RoadGraph& g, const road::MixZoneGeometry& zone, const LinkParams& p);

/// Candidate sets for every entering track; candidates come from the same
/// length class and satisfy all four conditions.
std::vector<LinkCandidateSet> link(const LinkInstance& inst, const SeenIntervals& seen, const road::RoadGraph& g,
                                   const road::MixZoneGeometry& zone, const LinkParams& p);

/// Reference implementation: nested loops over every pair, no indexing.
std::vector<LinkCandidateSet> brute_force_oracle(const LinkInstance& inst, const SeenIntervals& seen,
                                                 const road::RoadGraph& g, const road::MixZoneGeometry& zone,
                                                 const LinkParams& p);

/// Attaches the successor id when the entering id changed in this zone and
/// the new id is among the zone's exiting tracks.
void attach_truth(std::vector<LinkCandidateSet>& sets, const LinkInstance& inst,
                  const std::vector<sim::PseudonymChange>& changes, std::uint32_t zone);

/// Honest-but-curious RSU view of its own zone: members' transitions resolve
/// exactly and the zone's own chaff ids drop out. Other sets pass through.
std::vector<LinkCandidateSet> hbc_rsu_link(std::vector<LinkCandidateSet> sets,
                                           const std::set<CredentialId>& own_chaff);

struct Chain {
    std::vector<CredentialId> ids;  // successive pseudonyms of one vehicle
    double distance_m = 0.0;
};

/// Follows one candidate per set (uniformly drawn, seeded) and returns the
/// maximal runs where the followed candidate was the true successor.
std::vector<Chain> chain(const std::vector<LinkCandidateSet>& sets, const std::map<CredentialId, double>& distances,
                         std::uint64_t seed);

struct AttackInput {
    const road::RoadGraph* graph = nullptr;
    std::vector<road::MixZoneGeometry> zones;
    std::vector<sim::Observation> observations;
    const sim::GroundTruth* truth = nullptr;  // nullptr: no evaluation
    double v_min = road::kDefaultVMin;
    std::uint64_t seed = 1;
};

struct AttackResult {
    std::vector<LinkCandidateSet> sets;  // zone order, then entering id
    std::vector<CredentialId> trivially_linked;
    std::vector<Chain> chains;
    std::map<CredentialId, double> distances;
};

/// Full attack over every zone. With ground truth, zones listed in
/// `truth->hbc_zones` use the honest-but-curious view.
AttackResult attack(const AttackInput& in);

/// JSON-lines `{"entering", "candidates", "truth"}` per set, plus the zone.
std::string candidates_jsonl(const std::vector<LinkCandidateSet>& sets);

}  // namespace cmix::adversary
