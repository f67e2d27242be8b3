#pragma once

// Deterministic tick-driven simulation binding mobility, mix-zones, vehicles,
// eavesdroppers and chaff-filter dissemination.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cmix/chaff_filter.hpp"
#include "cmix/mixzone.hpp"
#include "cmix/mobility.hpp"
#include "cmix/road.hpp"
#include "cmix/vpki.hpp"

namespace cmix::sim {

inline constexpr std::uint32_t kRsuIdBase = 1'000'000;
inline constexpr EntityId kPcaId{0};
inline constexpr std::uint32_t kFilterQueryBytes = 24;
inline constexpr std::uint32_t kRetireRequestBytes = 24;

struct ZoneSpec {
    Vec2 center;
    double radius_m = 100.0;
    double rsu_range_m = 600.0;
};

struct EavesdropperSpec {
    Vec2 pos;
    double range_m = 250.0;
};

struct SynthesisSpec {
    std::size_t n_vehicles = 0;
    double arrival_rate_per_s = 0.5;
    std::uint64_t seed = 0;
};

/// Hand-specified trip over junction ids; speed 0 means the speed limit.
struct ExplicitTrip {
    std::uint32_t vehicle = 0;
    SimSeconds departure_s = 0.0;
    std::vector<std::int64_t> route;
    double speed_mps = 0.0;
    double length_m = 4.5;
};

/// `Auto` enables RSU sparse-traffic chaff whenever relaying is enabled.
enum class RsuChaffMode { Auto, On, Off };

struct ScenarioConfig {
    road::RoadGraph graph;
    std::vector<ZoneSpec> zones;
    std::vector<EavesdropperSpec> eavesdroppers;
    std::optional<SynthesisSpec> synthesis;
    std::vector<ExplicitTrip> explicit_trips;
    std::optional<std::string> trace_csv;  // trace content, already loaded

    double gamma_v_s = 0.5;
    double gamma_mz_s = 1.0;
    double relay_fraction = 0.0;
    double non_coop_fraction = 0.0;
    double hbc_rsu_fraction = 0.0;
    double filter_bandwidth_Bps = 50.0 * 1024.0;
    double filter_tx_interval_s = 1.0;
    std::size_t sparse_threshold = 2;
    RsuChaffMode rsu_chaff = RsuChaffMode::Auto;
    std::uint64_t rng_seed = 1;
    double duration_s = 0.0;  // 0: until every trip and decoy has finished
    double v_min_mps = road::kDefaultVMin;
    bool allow_uturn = false;
    std::uint64_t filter_capacity = 1000;
    filter::SizeModel filter_size_model = filter::SizeModel::PaperReported;
    double filter_size_fpr = 1e-25;
    double filter_functional_fpr = 1e-6;
    std::size_t chaff_pool_per_rsu = 200;
    double v2v_range_m = 300.0;
    std::size_t pseudonyms_per_vehicle = 10;
    double decoy_route_m = 3000.0;

    /// Parses the scenario JSON; relative file references resolve against `base_dir`.
    /// Errc::ConfigError on unknown keys, wrong types or broken invariants.
    static ScenarioConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ScenarioConfig load(const std::filesystem::path& file);

    /// Errc::ConfigError when an invariant does not hold.
    void validate() const;

    [[nodiscard]] bool rsu_chaff_enabled() const noexcept;
    [[nodiscard]] std::int64_t tick_ds() const;
    [[nodiscard]] std::uint64_t filter_wire_bytes() const;
};

// ---------------------------------------------------------------------------
// Event log

enum class EventKind : std::uint8_t {
    Beacon,
    Advert,
    JoinRequest,
    JoinResponse,
    PeerLengthUpdate,
    PseudonymChange,
    ZoneEnter,
    ZoneExit,
    DecoyPlanned,
    DecoyStart,
    DecoyEnd,
    ChaffRetired,
    FilterChunk,
    FilterDelivered,
    FilterQuery,
    FilterResponse,
    FilterRejected,
    NoResponder,
    Misbehavior,
    PoolEmpty,
    SparseSkipped,
    DegenerateExit,
    Reception,
};

std::string_view to_string(EventKind k) noexcept;

inline constexpr std::uint8_t kFlagChaff = 1;
inline constexpr std::uint8_t kFlagEncrypted = 2;
inline constexpr std::uint8_t kFlagRsuStream = 4;

/// One record. `entity` is the actor whose cost fields are charged.
struct Event {
    SimSeconds time = 0.0;
    EventKind kind = EventKind::Beacon;
    EntityId entity;
    std::int32_t zone = -1;
    CredentialId a;  // beacon/zone: pseudonym; change: old id; decoy: chaff id
    CredentialId b;  // change: new id; decoy: covered pseudonym
    Vec2 pos;
    double value = 0.0;  // latency, speed, pending count
    std::uint32_t bytes = 0;
    std::uint32_t signs = 0;
    std::uint32_t verifies = 0;
    std::uint32_t checks = 0;
    std::uint32_t count = 0;
    std::uint8_t flags = 0;
    EntityId peer;
};

class EventLog {
public:
    void add(Event e) { events_.push_back(std::move(e)); }
    /// Orders by (time, entity id); insertion order breaks remaining ties.
    void finalize();
    [[nodiscard]] const std::vector<Event>& events() const noexcept { return events_; }
    void write_jsonl(std::ostream& out) const;
    [[nodiscard]] std::string to_jsonl() const;

private:
    std::vector<Event> events_;
};

// ---------------------------------------------------------------------------
// Observation log (adversary input)

struct Observation {
    ObservedBeacon beacon;
    std::uint32_t eavesdropper = 0;
};

struct ObservationLog {
    std::vector<Observation> rows;

    /// CSV `time,pseudonym_id,x,y,speed,heading,length,eavesdropper_id`;
    /// numbers use the shortest representation that parses back exactly.
    void write_csv(std::ostream& out) const;
    [[nodiscard]] std::string to_csv() const;
    /// Errc::ParseError on malformed input.
    static ObservationLog read_csv(std::istream& in);
};

// ---------------------------------------------------------------------------
// Ground truth (evaluation only)

struct PseudonymChange {
    SimSeconds time = 0.0;
    EntityId vehicle;
    CredentialId old_id;
    CredentialId new_id;
    std::uint32_t zone = 0;
};

struct ChaffOrigin {
    std::uint32_t zone = 0;
    bool rsu_stream = false;
};

struct GroundTruth {
    std::vector<PseudonymChange> changes;
    std::unordered_map<CredentialId, ChaffOrigin> emitted_chaff;
    std::vector<std::vector<CredentialId>> provisioned_chaff;  // per zone
    std::vector<std::uint32_t> hbc_zones;

    void write_jsonl(std::ostream& out) const;
    static GroundTruth read_jsonl(std::istream& in);
};

// ---------------------------------------------------------------------------
// Filter dissemination and reception

/// Cyclic chunked broadcast of one zone's filter. Chunk i of cycle k goes
/// out at (k * n + i) * interval; a receiver collects one whole cycle.
struct FilterSchedule {
    std::uint64_t filter_bytes = 0;
    double bandwidth_Bps = 0.0;
    std::int64_t interval_ds = 10;

    [[nodiscard]] std::uint32_t chunk_count() const;
    [[nodiscard]] std::uint64_t chunk_bytes(std::uint32_t index) const;
    /// Time at which a receiver present from `arrival_ds` holds the complete filter.
    [[nodiscard]] std::int64_t completion_ds(std::int64_t arrival_ds) const;
    [[nodiscard]] SimSeconds latency(SimSeconds arrival) const;
};

struct HeldFilter {
    std::uint32_t epoch = 0;
    std::shared_ptr<const vpki::SignedFilter> signed_filter;
    std::shared_ptr<const filter::ChaffFilter> filter;
};

enum class SafetyVerdict { Process, DiscardChaff, UnknownPending };

/// `held[z]` is the receiver's copy of zone z's filter, if any.
SafetyVerdict safety_filtering(const std::vector<std::optional<HeldFilter>>& held, const CredentialId& pseudonym,
                               std::uint32_t* checks = nullptr);

struct Neighbor {
    EntityId id;
    Vec2 pos;
    std::optional<std::uint32_t> epoch;  // epoch of the held filter for the queried zone
};

/// Lowest-id neighbor in range holding a newer filter. Errc::NoResponder otherwise.
EntityId peer_filter_exchange(Vec2 requester, std::optional<std::uint32_t> held_epoch,
                              const std::vector<Neighbor>& neighbors, double range_m);

/// Verifies the PCA signature and decodes; nullopt (reject) on failure.
std::optional<HeldFilter> accept_filter(const vpki::SignedFilter& f, const Credential& pca, SimSeconds now);

// ---------------------------------------------------------------------------

struct RunResult {
    EventLog events;
    ObservationLog observations;
    GroundTruth truth;
    std::vector<road::MixZoneGeometry> zones;
    std::vector<EntityId> rsu_ids;
    SimSeconds end_time = 0.0;
    SimSeconds tick = 0.0;
};

/// Runs a scenario to completion. Pure function of the configuration.
RunResult run(const ScenarioConfig& config);

}  // namespace cmix::sim
