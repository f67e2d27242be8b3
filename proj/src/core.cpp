#include "cmix/core.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace cmix {

CredentialId CredentialId::random(Rng& rng) {
    CredentialId id;
    const std::uint64_t a = rng.next();
    const std::uint64_t b = rng.next();
    for (int i = 0; i < 8; ++i) {
        id.bytes[i] = static_cast<std::uint8_t>(a >> (8 * i));
        id.bytes[8 + i] = static_cast<std::uint8_t>(b >> (8 * i));
    }
    return id;
}

CredentialId CredentialId::from_hex(std::string_view hex) {
    if (hex.size() != 32) throw Error(Errc::ParseError, "credential id must be 32 hex digits");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw Error(Errc::ParseError, std::string("bad hex digit '") + c + "'");
    };
    CredentialId id;
    for (std::size_t i = 0; i < 16; ++i) {
        id.bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    }
    return id;
}

std::string CredentialId::hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(32, '0');
    for (std::size_t i = 0; i < 16; ++i) {
        s[2 * i] = digits[bytes[i] >> 4];
        s[2 * i + 1] = digits[bytes[i] & 0xF];
    }
    return s;
}

std::uint64_t CredentialId::lo() const noexcept {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
    return v;
}

std::uint64_t CredentialId::hi() const noexcept {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[8 + i]} << (8 * i);
    return v;
}

VehicleLength VehicleLength::from_meters(double m) {
    const double dm = m * 10.0;
    const double rounded = std::round(dm);
    if (!(rounded > 0.0) || std::abs(dm - rounded) > 1e-6 || rounded > 65535.0) {
        throw std::invalid_argument("vehicle length must be a positive multiple of 0.1 m");
    }
    return VehicleLength{static_cast<std::uint16_t>(rounded)};
}

Credential Credential::make(CredentialId id, CredentialKind kind, EntityId issuer, std::optional<EntityId> holder,
                            SimSeconds valid_from, SimSeconds valid_to, std::uint32_t wire_size) {
    if (!(valid_from < valid_to)) throw std::invalid_argument("credential validity window is empty");
    if (wire_size == 0) throw std::invalid_argument("credential wire size must be positive");
    return Credential{id, kind, issuer, holder, valid_from, valid_to, wire_size};
}

Bytes serialize_observed(const ObservedBeacon& b) {
    Bytes out;
    out.reserve(kObservedBeaconBytes);
    ByteWriter w(out);
    w.raw(b.pseudonym_id.bytes);
    w.f64(b.pos.x);
    w.f64(b.pos.y);
    w.f64(b.speed);
    w.f64(b.heading);
    w.u16(b.length.decimeters);
    w.f64(b.timestamp);
    w.u64(b.link_id.value);
    return out;
}

ObservedBeacon deserialize_observed(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    ObservedBeacon b;
    auto id = r.raw(16);
    std::copy(id.begin(), id.end(), b.pseudonym_id.bytes.begin());
    b.pos.x = r.f64();
    b.pos.y = r.f64();
    b.speed = r.f64();
    b.heading = r.f64();
    b.length.decimeters = r.u16();
    b.timestamp = r.f64();
    b.link_id.value = r.u64();
    if (r.remaining() != 0) throw Error(Errc::DeserializeError, "trailing bytes after beacon");
    return b;
}

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    return out;
}

namespace {

std::array<std::uint8_t, 32> signature_tag(const Bytes& payload, const CredentialId& signer) {
    Bytes buf;
    buf.reserve(payload.size() + 16);
    buf.insert(buf.end(), payload.begin(), payload.end());
    buf.insert(buf.end(), signer.bytes.begin(), signer.bytes.end());
    return sha256(buf);
}

}  // namespace

SignedEnvelope sign(Bytes payload, const Credential& signer, SimSeconds now) {
    if (!signer.valid_at(now)) {
        throw Error(Errc::SigningWithExpiredCredential, "credential " + signer.id.hex() + " not valid at t=" +
                                                            std::to_string(now));
    }
    SignedEnvelope env{std::move(payload), signer.id, {}};
    env.signature_tag = signature_tag(env.payload, signer.id);
    return env;
}

bool verify(const SignedEnvelope& env, const Credential& signer, SimSeconds now) {
    return env.signer == signer.id && signer.valid_at(now) && env.signature_tag == signature_tag(env.payload, signer.id);
}

std::uint32_t signed_wire_size(const SignedEnvelope& env, const Credential& signer) {
    return static_cast<std::uint32_t>(env.payload.size()) + signer.wire_size;
}

EncryptedEnvelope::EncryptedEnvelope(Bytes plaintext, KeyId recipient)
    : plaintext_(std::move(plaintext)), recipient_(recipient) {}

Bytes open(const EncryptedEnvelope& env, const KeyId& key) {
    if (!(key == env.recipient_)) throw Error(Errc::DecryptionDenied, "key does not match envelope recipient");
    return env.plaintext_;
}

}  // namespace cmix
