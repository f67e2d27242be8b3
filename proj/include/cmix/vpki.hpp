#pragma once

// Minimal back end: LTCA registration ledger, PCA issuing pseudonyms and
// per-RSU chaff sets with their filters, and the chaff resolution chain.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "cmix/chaff_filter.hpp"
#include "cmix/core.hpp"

namespace cmix::vpki {

inline constexpr SimSeconds kLongTermValidity = 1e9;

struct FilterPolicy {
    std::uint64_t capacity = 1000;  // constant observable size
    double functional_fpr = 1e-6;
};

struct SignedFilter {
    EntityId rsu;
    std::uint32_t epoch = 0;
    SignedEnvelope envelope;  // payload = serialized filter, signed by the PCA

    [[nodiscard]] filter::ChaffFilter decode() const { return filter::ChaffFilter::deserialize(envelope.payload); }
};

/// Checks the PCA signature before the filter bytes are trusted.
bool verify_filter(const SignedFilter& f, const Credential& pca, SimSeconds now);

struct RemovalRecord {
    SimSeconds time = 0.0;
    CredentialId chaff;
    EntityId rsu;
};

struct MisbehaviorEvent {
    SimSeconds time = 0.0;
    CredentialId chaff;
    EntityId rsu;
};

/// RSU-side lookup: chaff id -> pseudonym of the vehicle it was handed to.
using RsuLedgerLookup = std::function<std::optional<CredentialId>(EntityId rsu, const CredentialId& chaff)>;

class Vpki {
public:
    explicit Vpki(std::uint64_t seed, EntityId pca_id = EntityId{0}, FilterPolicy policy = {});

    void register_vehicle(EntityId vehicle);
    void register_rsu(EntityId rsu);
    [[nodiscard]] bool is_registered(EntityId vehicle) const { return vehicles_.contains(vehicle); }

    /// `count` pseudonyms with identical windows and independent random ids.
    /// Errc::NotRegistered for unknown vehicles.
    std::vector<Credential> issue_pseudonyms(EntityId vehicle, std::size_t count, SimSeconds valid_from,
                                             SimSeconds valid_to);

    struct Provisioned {
        std::vector<Credential> chaff;
        std::uint32_t epoch = 0;
    };

    /// Fresh chaff credentials for one RSU, inserted into that RSU's filter.
    /// Errc::FilterSaturated if the active set would exceed the filter capacity.
    Provisioned provision_chaff(EntityId rsu, std::size_t count, SimSeconds valid_from, SimSeconds valid_to);

    /// Request payload: chaff id (16 bytes) + timestamp (f64), signed under
    /// the chaff credential itself.
    static Bytes retire_payload(const CredentialId& chaff, SimSeconds now);

    /// Errc::UnknownChaff, Errc::AuthFailure, Errc::AlreadyRetired.
    void retire_chaff(const SignedEnvelope& request, SimSeconds now);

    /// Logs and returns a misbehavior event when `pseudonym` is a retired chaff.
    std::optional<MisbehaviorEvent> observe_beacon(const CredentialId& pseudonym, SimSeconds now);

    /// PCA -> RSU -> pseudonym -> LTCA. Errc::UnknownChaff, Errc::NeverAssigned.
    [[nodiscard]] EntityId resolve_chaff(const CredentialId& chaff, const RsuLedgerLookup& rsu_ledger) const;

    [[nodiscard]] const filter::ChaffFilter& filter(EntityId rsu) const;
    [[nodiscard]] SignedFilter signed_filter(EntityId rsu, SimSeconds now) const;
    [[nodiscard]] const Credential& pca_credential() const noexcept { return pca_cert_; }
    [[nodiscard]] std::optional<EntityId> holder_of(const CredentialId& pseudonym) const;
    [[nodiscard]] std::optional<EntityId> chaff_rsu(const CredentialId& chaff) const;
    [[nodiscard]] bool is_active_chaff(const CredentialId& chaff) const;
    [[nodiscard]] const Credential* chaff_credential(const CredentialId& chaff) const;
    [[nodiscard]] std::vector<CredentialId> active_chaff(EntityId rsu) const;
    [[nodiscard]] const std::vector<RemovalRecord>& removal_log() const noexcept { return removals_; }
    [[nodiscard]] const std::vector<MisbehaviorEvent>& misbehavior_log() const noexcept { return misbehavior_; }
    [[nodiscard]] const FilterPolicy& policy() const noexcept { return policy_; }

private:
    struct ChaffRecord {
        Credential credential;
        EntityId rsu;
        bool retired = false;
    };

    CredentialId fresh_id();

    Rng rng_;
    FilterPolicy policy_;
    Credential pca_cert_;
    std::set<EntityId> vehicles_;
    std::map<EntityId, filter::ChaffFilter> filters_;
    std::map<EntityId, std::size_t> active_counts_;
    std::unordered_map<CredentialId, EntityId> pseudonym_holder_;
    std::unordered_map<CredentialId, ChaffRecord> chaff_;
    std::vector<RemovalRecord> removals_;
    std::vector<MisbehaviorEvent> misbehavior_;
};

}  // namespace cmix::vpki
