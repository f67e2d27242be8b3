#pragma once

// RSU-side controller of one cooperative mix-zone: advertisements, join
// handling, chaff assignment with peer-length pairing, decoy planning and the
// sparse-traffic RSU chaff rule.

#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "cmix/core.hpp"
#include "cmix/road.hpp"
#include "cmix/vpki.hpp"

namespace cmix::mixzone {

inline constexpr std::uint32_t kAdvertPayloadBytes = 24;
inline constexpr std::uint32_t kJoinRequestBytes = 16;
inline constexpr std::uint32_t kSessionKeyBytes = 32;
inline constexpr std::uint32_t kPeerLengthUpdateBytes = 2 + 8 + kEncryptionOverhead;
inline constexpr SimSeconds kJoinFreshness = 5.0;
inline constexpr std::size_t kSpeedHistory = 10;

/// Broadcast body: center x/y and radius (f32), zone id (u32), timestamp (f64).
struct Advertisement {
    Vec2 center;
    double radius = 0.0;
    std::uint32_t zone = 0;
    SimSeconds timestamp = 0.0;

    [[nodiscard]] Bytes encode() const;
    static Advertisement decode(std::span<const std::uint8_t> bytes);
};

/// Join body: declared length (f32 meters), flags (u32, bit 0 = wants chaff), timestamp (f64).
struct JoinRequest {
    VehicleLength length;
    bool request_chaff = false;
    SimSeconds timestamp = 0.0;

    [[nodiscard]] Bytes encode() const;
    static JoinRequest decode(std::span<const std::uint8_t> bytes);
};

SignedEnvelope make_join_request(const Credential& pseudonym, const JoinRequest& req, SimSeconds now);

struct JoinResponse {
    KeyId session_key;
    std::optional<Credential> chaff;
    std::optional<VehicleLength> peer_length;
    std::vector<vpki::SignedFilter> filters;
    SimSeconds timestamp = 0.0;

    [[nodiscard]] Bytes encode() const;
    static JoinResponse decode(std::span<const std::uint8_t> bytes);
};

/// Declared on-air size used for overhead accounting.
std::uint32_t join_response_wire_size(bool with_chaff, std::uint64_t filter_bytes);

/// A phantom vehicle: appears at an exit point of the zone at `start_time`
/// and drives `route` at constant speed.
struct DecoyPlan {
    CredentialId chaff;
    std::uint32_t zone = 0;
    EntityId emitter;
    bool rsu_stream = false;
    CredentialId cover;  // pseudonym of the member the decoy shadows
    std::uint32_t exit_edge = 0;
    double start_offset = 0.0;
    SimSeconds start_time = 0.0;
    SimSeconds dwell = 0.0;
    double speed = 0.0;
    std::vector<std::uint32_t> route;  // begins with exit_edge
    VehicleLength length;
    bool degenerate_exit = false;
};

struct PhantomPosition {
    Vec2 pos;
    double heading = 0.0;
    std::uint32_t edge = 0;
};

/// nullopt before the start or once the route is exhausted.
std::optional<PhantomPosition> decoy_position(const road::RoadGraph& g, const DecoyPlan& plan, SimSeconds t);

struct ZoneParams {
    std::uint32_t zone = 0;
    EntityId rsu;
    double rsu_range = 600.0;
    double relay_fraction = 0.0;
    std::size_t sparse_threshold = 2;
    bool rsu_chaff = true;
    SimSeconds advert_interval = 1.0;
    double v_min = road::kDefaultVMin;
    double decoy_route_length = 3000.0;
    std::uint64_t seed = 0;
};

enum class ZoneEventKind : std::uint8_t {
    PeerLengthUpdate,
    PoolEmpty,
    SparseSkipped,
    DegenerateExit,
};

struct ZoneEvent {
    SimSeconds time = 0.0;
    ZoneEventKind kind{};
    CredentialId subject;
};

/// Where the requester is entering from, and where the RSU expects it to leave.
struct JoinContext {
    Vec2 position;
    std::optional<std::uint32_t> entry_edge;
    std::optional<std::uint32_t> predicted_exit;
};

struct JoinOutcome {
    EncryptedEnvelope response;
    std::optional<DecoyPlan> decoy;
    bool relay = false;
};

struct Assignment {
    CredentialId pseudonym;  // requester, or the RSU's own credential id for RSU streams
    VehicleLength peer_length;
    bool started = false;
    bool rsu_held = false;
};

struct Member {
    CredentialId pseudonym;
    VehicleLength length;
    SimSeconds join_time = 0.0;
    std::uint64_t seq = 0;
    std::optional<std::uint32_t> entry_edge;
    std::optional<std::uint32_t> predicted_exit;
    std::optional<CredentialId> chaff;  // relay assignment, if any
    bool paired = false;
    bool sparse_covered = false;
};

class MixZoneController {
public:
    MixZoneController(const road::RoadGraph& g, road::MixZoneGeometry geometry, ZoneParams params,
                      Credential rsu_cert, std::vector<Credential> chaff_pool);

    /// Signed advertisement, or nullopt while the interval has not elapsed.
    std::optional<SignedEnvelope> advertise(SimSeconds now);

    /// Errc::AuthFailure, Errc::StaleRequest, Errc::OutOfRange.
    JoinOutcome handle_join(const SignedEnvelope& request, const Credential& attached, const JoinContext& ctx,
                            const std::vector<vpki::SignedFilter>& filters, SimSeconds now);

    /// Member left the zone; its dwell and exit speed feed later decoy plans.
    void on_member_exit(const CredentialId& pseudonym, SimSeconds now, road::Pose pose, double speed);

    /// Member vanished inside the zone (trip ended); no history is recorded.
    void drop_member(const CredentialId& pseudonym) { members_.erase(pseudonym); }

    /// One RSU chaff stream per not-yet-covered member while occupancy is in [1, threshold].
    std::vector<DecoyPlan> sparse_tick(SimSeconds now);

    /// Freezes the assignment when its decoy starts emitting; returns the length to use.
    VehicleLength start_decoy(const CredentialId& chaff);

    DecoyPlan plan_decoy(Rng& rng, const CredentialId& chaff, const CredentialId& cover, VehicleLength length,
                         std::optional<std::uint32_t> entry_edge, std::optional<std::uint32_t> predicted_exit,
                         SimSeconds entry_time, SimSeconds now, EntityId emitter, bool rsu_stream);

    /// RSU ledger lookup used by chaff resolution.
    [[nodiscard]] std::optional<CredentialId> assignee(const CredentialId& chaff) const;

    [[nodiscard]] const road::MixZoneGeometry& geometry() const noexcept { return geometry_; }
    [[nodiscard]] const ZoneParams& params() const noexcept { return params_; }
    [[nodiscard]] const Credential& rsu_credential() const noexcept { return rsu_cert_; }
    [[nodiscard]] const KeyId& session_key() const noexcept { return session_key_; }
    [[nodiscard]] const road::TraverseBounds& bounds() const noexcept { return bounds_; }
    [[nodiscard]] const std::map<CredentialId, Member>& members() const noexcept { return members_; }
    [[nodiscard]] const std::map<CredentialId, Assignment>& assignments() const noexcept { return assignments_; }
    [[nodiscard]] std::size_t pool_size() const noexcept { return pool_.size(); }
    [[nodiscard]] std::vector<ZoneEvent> drain_events();

    /// Median dwell of members that have left, nullopt with no history.
    [[nodiscard]] std::optional<double> median_dwell() const;

private:
    Rng join_rng(const CredentialId& pseudonym, std::uint64_t salt) const;
    std::optional<Credential> take_chaff();

    const road::RoadGraph* g_;
    road::MixZoneGeometry geometry_;
    ZoneParams params_;
    Credential rsu_cert_;
    KeyId session_key_;
    road::TraverseBounds bounds_;
    std::deque<Credential> pool_;
    std::optional<SimSeconds> last_advert_;
    std::uint64_t next_seq_ = 0;
    std::map<CredentialId, Member> members_;
    std::map<CredentialId, Assignment> assignments_;
    std::map<std::uint32_t, std::deque<double>> exit_speeds_;
    std::vector<double> dwells_;
    std::vector<ZoneEvent> events_;
};

}  // namespace cmix::mixzone
