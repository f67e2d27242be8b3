#pragma once

// Shared domain vocabulary: identifiers, credentials, beacons and the
// simulated crypto envelopes every other module exchanges.

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "cmix/bytes.hpp"
#include "cmix/rng.hpp"

namespace cmix {

/// Simulation time in seconds.
using SimSeconds = double;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(Vec2 a, double s) noexcept { return {a.x * s, a.y * s}; }
    friend constexpr bool operator==(Vec2, Vec2) noexcept = default;
};

constexpr double dot(Vec2 a, Vec2 b) noexcept { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) noexcept { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) noexcept { return norm(a - b); }
inline Vec2 heading_vector(double heading_rad) noexcept { return {std::cos(heading_rad), std::sin(heading_rad)}; }
inline double heading_of(Vec2 dir) noexcept { return std::atan2(dir.y, dir.x); }

/// Simulation entity: vehicle, RSU, PCA, eavesdropper.
struct EntityId {
    std::uint32_t value = 0;
    friend constexpr auto operator<=>(EntityId, EntityId) noexcept = default;
};

/// Opaque 16-byte credential identifier.
struct CredentialId {
    std::array<std::uint8_t, 16> bytes{};

    static CredentialId random(Rng& rng);
    static CredentialId from_hex(std::string_view hex);
    [[nodiscard]] std::string hex() const;
    [[nodiscard]] std::uint64_t lo() const noexcept;
    [[nodiscard]] std::uint64_t hi() const noexcept;

    friend constexpr auto operator<=>(const CredentialId&, const CredentialId&) noexcept = default;
};

/// Key handle for the simulated encryption; pseudonym keys reuse the
/// credential id, session keys are fresh random ids.
using KeyId = CredentialId;

/// Opaque link-layer address; rotates with the pseudonym.
struct LinkId {
    std::uint64_t value = 0;
    friend constexpr auto operator<=>(LinkId, LinkId) noexcept = default;
};

/// Vehicle length at 10 cm precision, stored in decimeters so that length
/// classes compare exactly.
struct VehicleLength {
    std::uint16_t decimeters = 0;

    static VehicleLength from_meters(double m);
    [[nodiscard]] double meters() const noexcept { return decimeters / 10.0; }
    friend constexpr auto operator<=>(VehicleLength, VehicleLength) noexcept = default;
};

enum class CredentialKind : std::uint8_t { Pseudonym, ChaffPseudonym, LongTermCert };

inline constexpr std::uint32_t kCredentialWireSize = 140;
inline constexpr std::uint32_t kCamWireSize = 350;
inline constexpr std::uint32_t kEncryptionOverhead = 16;

struct Credential {
    CredentialId id;
    CredentialKind kind = CredentialKind::Pseudonym;
    EntityId issuer;
    std::optional<EntityId> holder;  // nullopt: unassigned
    SimSeconds valid_from = 0.0;
    SimSeconds valid_to = 0.0;
    std::uint32_t wire_size = kCredentialWireSize;

    /// Validating constructor; throws std::invalid_argument on a broken invariant.
    static Credential make(CredentialId id, CredentialKind kind, EntityId issuer, std::optional<EntityId> holder,
                           SimSeconds valid_from, SimSeconds valid_to,
                           std::uint32_t wire_size = kCredentialWireSize);

    [[nodiscard]] bool valid_at(SimSeconds t) const noexcept { return valid_from <= t && t <= valid_to; }
};

/// Adversary-facing CAM content. Ground truth lives in Beacon only.
struct ObservedBeacon {
    CredentialId pseudonym_id;
    Vec2 pos;
    double speed = 0.0;
    double heading = 0.0;
    VehicleLength length;
    SimSeconds timestamp = 0.0;
    LinkId link_id;

    friend bool operator==(const ObservedBeacon&, const ObservedBeacon&) = default;
};

struct Beacon {
    ObservedBeacon cam;
    EntityId emitter;       // simulation-internal
    bool is_chaff = false;  // simulation-internal
    std::uint32_t wire_size = kCamWireSize;

    [[nodiscard]] const ObservedBeacon& adversary_view() const noexcept { return cam; }
};

/// Canonical little-endian encoding of the adversary-facing fields, in
/// declaration order: id[16], x, y, speed, heading (f64), length (u16 dm),
/// timestamp (f64), link id (u64). 74 bytes.
Bytes serialize_observed(const ObservedBeacon& b);
ObservedBeacon deserialize_observed(std::span<const std::uint8_t> bytes);
inline constexpr std::size_t kObservedBeaconBytes = 16 + 8 * 4 + 2 + 8 + 8;

// ---------------------------------------------------------------------------
// Simulated crypto

struct SignedEnvelope {
    Bytes payload;
    CredentialId signer;
    std::array<std::uint8_t, 32> signature_tag{};
};

/// Throws Errc::SigningWithExpiredCredential if `signer` is not valid at `now`.
SignedEnvelope sign(Bytes payload, const Credential& signer, SimSeconds now);

/// True iff the envelope names `signer`, the tag matches and `signer` is valid at `now`.
bool verify(const SignedEnvelope& env, const Credential& signer, SimSeconds now);

/// Wire size of a signed message: payload plus the attached credential.
std::uint32_t signed_wire_size(const SignedEnvelope& env, const Credential& signer);

class EncryptedEnvelope {
public:
    EncryptedEnvelope(Bytes plaintext, KeyId recipient);

    [[nodiscard]] const KeyId& recipient() const noexcept { return recipient_; }
    [[nodiscard]] std::uint32_t wire_size() const noexcept {
        return static_cast<std::uint32_t>(plaintext_.size()) + kEncryptionOverhead;
    }

    friend Bytes open(const EncryptedEnvelope& env, const KeyId& key);

private:
    Bytes plaintext_;
    KeyId recipient_;
};

inline EncryptedEnvelope encrypt(Bytes payload, const KeyId& recipient) {
    return EncryptedEnvelope(std::move(payload), recipient);
}

/// Throws Errc::DecryptionDenied unless `key` matches the recipient key.
Bytes open(const EncryptedEnvelope& env, const KeyId& key);

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);

}  // namespace cmix

template <>
struct std::hash<cmix::CredentialId> {
    std::size_t operator()(const cmix::CredentialId& id) const noexcept {
        return static_cast<std::size_t>(cmix::Rng::mix(id.lo() ^ cmix::Rng::mix(id.hi())));
    }
};

template <>
struct std::hash<cmix::EntityId> {
    std::size_t operator()(cmix::EntityId id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};
