#include "cmix/vpki.hpp"

#include <algorithm>

namespace cmix::vpki {

bool verify_filter(const SignedFilter& f, const Credential& pca, SimSeconds now) {
    return verify(f.envelope, pca, now);
}

Vpki::Vpki(std::uint64_t seed, EntityId pca_id, FilterPolicy policy)
    : rng_(seed),
      policy_(policy),
      pca_cert_(Credential::make(CredentialId::random(rng_), CredentialKind::LongTermCert, pca_id, pca_id, 0.0,
                                 kLongTermValidity)) {}

CredentialId Vpki::fresh_id() {
    // Collisions are astronomically unlikely; the loop only keeps the ledger exact.
    for (;;) {
        auto id = CredentialId::random(rng_);
        if (!pseudonym_holder_.contains(id) && !chaff_.contains(id) && !(id == pca_cert_.id)) return id;
    }
}

void Vpki::register_vehicle(EntityId vehicle) { vehicles_.insert(vehicle); }

void Vpki::register_rsu(EntityId rsu) {
    if (filters_.contains(rsu)) return;
    filters_.emplace(rsu, filter::ChaffFilter::create(policy_.capacity, policy_.functional_fpr, pca_cert_.issuer));
    active_counts_[rsu] = 0;
}

std::vector<Credential> Vpki::issue_pseudonyms(EntityId vehicle, std::size_t count, SimSeconds valid_from,
                                               SimSeconds valid_to) {
    if (!vehicles_.contains(vehicle)) {
        throw Error(Errc::NotRegistered, "vehicle " + std::to_string(vehicle.value) + " is not registered");
    }
    std::vector<Credential> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto cred = Credential::make(fresh_id(), CredentialKind::Pseudonym, pca_cert_.issuer, vehicle, valid_from,
                                     valid_to);
        pseudonym_holder_.emplace(cred.id, vehicle);
        out.push_back(cred);
    }
    return out;
}

Vpki::Provisioned Vpki::provision_chaff(EntityId rsu, std::size_t count, SimSeconds valid_from, SimSeconds valid_to) {
    auto fit = filters_.find(rsu);
    if (fit == filters_.end()) {
        throw Error(Errc::NotRegistered, "RSU " + std::to_string(rsu.value) + " is not registered");
    }
    auto& active = active_counts_[rsu];
    if (active + count > policy_.capacity) {
        throw Error(Errc::FilterSaturated, "provisioning " + std::to_string(count) + " chaff exceeds capacity " +
                                               std::to_string(policy_.capacity));
    }
    // Stage on a copy so a relocation failure leaves the published filter intact.
    auto staged = fit->second;
    Provisioned result;
    std::vector<Credential> fresh;
    for (std::size_t i = 0; i < count; ++i) {
        auto cred =
            Credential::make(fresh_id(), CredentialKind::ChaffPseudonym, pca_cert_.issuer, std::nullopt, valid_from,
                             valid_to);
        staged.insert(cred.id);
        fresh.push_back(cred);
    }
    staged.set_epoch(staged.epoch() + 1);
    fit->second = std::move(staged);
    active += count;
    for (const auto& c : fresh) chaff_.emplace(c.id, ChaffRecord{c, rsu, false});
    result.chaff = std::move(fresh);
    result.epoch = fit->second.epoch();
    return result;
}

Bytes Vpki::retire_payload(const CredentialId& chaff, SimSeconds now) {
    Bytes out;
    ByteWriter w(out);
    w.raw(chaff.bytes);
    w.f64(now);
    return out;
}

void Vpki::retire_chaff(const SignedEnvelope& request, SimSeconds now) {
    auto it = chaff_.find(request.signer);
    if (it == chaff_.end()) throw Error(Errc::UnknownChaff, "unknown chaff " + request.signer.hex());
    auto& rec = it->second;
    if (!verify(request, rec.credential, now)) throw Error(Errc::AuthFailure, "retire request signature invalid");
    if (request.payload.size() < 16 || !std::equal(rec.credential.id.bytes.begin(), rec.credential.id.bytes.end(),
                                                   request.payload.begin())) {
        throw Error(Errc::AuthFailure, "retire request names a different chaff");
    }
    if (rec.retired) throw Error(Errc::AlreadyRetired, "chaff " + rec.credential.id.hex() + " already retired");
    auto& f = filters_.at(rec.rsu);
    f.remove(rec.credential.id);
    f.set_epoch(f.epoch() + 1);
    rec.retired = true;
    --active_counts_[rec.rsu];
    removals_.push_back({now, rec.credential.id, rec.rsu});
}

std::optional<MisbehaviorEvent> Vpki::observe_beacon(const CredentialId& pseudonym, SimSeconds now) {
    auto it = chaff_.find(pseudonym);
    if (it == chaff_.end() || !it->second.retired) return std::nullopt;
    MisbehaviorEvent ev{now, pseudonym, it->second.rsu};
    misbehavior_.push_back(ev);
    return ev;
}

EntityId Vpki::resolve_chaff(const CredentialId& chaff, const RsuLedgerLookup& rsu_ledger) const {
    auto it = chaff_.find(chaff);
    if (it == chaff_.end()) throw Error(Errc::UnknownChaff, "unknown chaff " + chaff.hex());
    const auto pseudonym = rsu_ledger ? rsu_ledger(it->second.rsu, chaff) : std::nullopt;
    if (!pseudonym) throw Error(Errc::NeverAssigned, "chaff " + chaff.hex() + " was never assigned");
    auto holder = pseudonym_holder_.find(*pseudonym);
    if (holder == pseudonym_holder_.end()) {
        throw Error(Errc::NeverAssigned, "chaff " + chaff.hex() + " assigned to an unknown pseudonym");
    }
    // LTCA step: the registration ledger maps the holder to its long-term identity.
    if (!vehicles_.contains(holder->second)) throw Error(Errc::NotRegistered, "holder lost its registration");
    return holder->second;
}

const filter::ChaffFilter& Vpki::filter(EntityId rsu) const {
    auto it = filters_.find(rsu);
    if (it == filters_.end()) throw Error(Errc::NotRegistered, "RSU " + std::to_string(rsu.value) + " unknown");
    return it->second;
}

SignedFilter Vpki::signed_filter(EntityId rsu, SimSeconds now) const {
    const auto& f = filter(rsu);
    return SignedFilter{rsu, f.epoch(), sign(f.serialize(), pca_cert_, now)};
}

std::optional<EntityId> Vpki::holder_of(const CredentialId& pseudonym) const {
    auto it = pseudonym_holder_.find(pseudonym);
    if (it == pseudonym_holder_.end()) return std::nullopt;
    return it->second;
}

std::optional<EntityId> Vpki::chaff_rsu(const CredentialId& chaff) const {
    auto it = chaff_.find(chaff);
    if (it == chaff_.end()) return std::nullopt;
    return it->second.rsu;
}

bool Vpki::is_active_chaff(const CredentialId& chaff) const {
    auto it = chaff_.find(chaff);
    return it != chaff_.end() && !it->second.retired;
}

const Credential* Vpki::chaff_credential(const CredentialId& chaff) const {
    auto it = chaff_.find(chaff);
    return it == chaff_.end() ? nullptr : &it->second.credential;
}

std::vector<CredentialId> Vpki::active_chaff(EntityId rsu) const {
    std::vector<CredentialId> out;
    for (const auto& [id, rec] : chaff_) {
        if (rec.rsu == rsu && !rec.retired) out.push_back(id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace cmix::vpki
