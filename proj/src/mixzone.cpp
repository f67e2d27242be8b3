#include "cmix/mixzone.hpp"

#include <algorithm>
#include <cmath>

namespace cmix::mixzone {

namespace {

constexpr std::size_t kMaxDecoyEdges = 64;

void encode_credential(ByteWriter& w, const Credential& c) {
    Bytes body;
    ByteWriter b(body);
    b.raw(c.id.bytes);
    b.u8(static_cast<std::uint8_t>(c.kind));
    b.u32(c.issuer.value);
    b.u8(c.holder ? 1 : 0);
    b.u32(c.holder ? c.holder->value : 0);
    b.f64(c.valid_from);
    b.f64(c.valid_to);
    body.resize(kCredentialWireSize, 0);
    w.raw(body);
}

Credential decode_credential(ByteReader& r) {
    ByteReader b(r.raw(kCredentialWireSize));
    CredentialId id;
    auto raw = b.raw(16);
    std::copy(raw.begin(), raw.end(), id.bytes.begin());
    const auto kind = b.u8();
    if (kind > static_cast<std::uint8_t>(CredentialKind::LongTermCert)) {
        throw Error(Errc::DeserializeError, "bad credential kind");
    }
    const EntityId issuer{b.u32()};
    const bool has_holder = b.u8() != 0;
    const EntityId holder{b.u32()};
    const double from = b.f64();
    const double to = b.f64();
    try {
        return Credential::make(id, static_cast<CredentialKind>(kind), issuer,
                                has_holder ? std::optional(holder) : std::nullopt, from, to);
    } catch (const std::invalid_argument& e) {
        throw Error(Errc::DeserializeError, e.what());
    }
}

CredentialId read_id(ByteReader& r) {
    CredentialId id;
    auto raw = r.raw(16);
    std::copy(raw.begin(), raw.end(), id.bytes.begin());
    return id;
}

}  // namespace

Bytes Advertisement::encode() const {
    Bytes out;
    ByteWriter w(out);
    w.f32(static_cast<float>(center.x));
    w.f32(static_cast<float>(center.y));
    w.f32(static_cast<float>(radius));
    w.u32(zone);
    w.f64(timestamp);
    return out;
}

Advertisement Advertisement::decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    Advertisement a;
    a.center.x = r.f32();
    a.center.y = r.f32();
    a.radius = r.f32();
    a.zone = r.u32();
    a.timestamp = r.f64();
    return a;
}

Bytes JoinRequest::encode() const {
    Bytes out;
    ByteWriter w(out);
    w.f32(static_cast<float>(length.meters()));
    w.u32(request_chaff ? 1u : 0u);
    w.f64(timestamp);
    return out;
}

JoinRequest JoinRequest::decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kJoinRequestBytes) throw Error(Errc::DeserializeError, "join request has wrong size");
    ByteReader r(bytes);
    JoinRequest q;
    q.length.decimeters = static_cast<std::uint16_t>(std::lround(r.f32() * 10.0));
    q.request_chaff = (r.u32() & 1u) != 0;
    q.timestamp = r.f64();
    return q;
}

SignedEnvelope make_join_request(const Credential& pseudonym, const JoinRequest& req, SimSeconds now) {
    return sign(req.encode(), pseudonym, now);
}

Bytes JoinResponse::encode() const {
    Bytes out;
    ByteWriter w(out);
    w.raw(session_key.bytes);
    w.raw(std::array<std::uint8_t, kSessionKeyBytes - 16>{});
    w.f64(timestamp);
    w.u8(static_cast<std::uint8_t>((chaff ? 1 : 0) | (peer_length ? 2 : 0)));
    if (chaff) encode_credential(w, *chaff);
    if (peer_length) w.u16(peer_length->decimeters);
    w.u16(static_cast<std::uint16_t>(filters.size()));
    for (const auto& f : filters) {
        w.u32(f.rsu.value);
        w.u32(f.epoch);
        w.u32(static_cast<std::uint32_t>(f.envelope.payload.size()));
        w.raw(f.envelope.payload);
        w.raw(f.envelope.signer.bytes);
        w.raw(f.envelope.signature_tag);
    }
    return out;
}

JoinResponse JoinResponse::decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    JoinResponse resp;
    resp.session_key = read_id(r);
    r.raw(kSessionKeyBytes - 16);
    resp.timestamp = r.f64();
    const auto flags = r.u8();
    if (flags & 1) resp.chaff = decode_credential(r);
    if (flags & 2) resp.peer_length = VehicleLength{r.u16()};
    const auto n = r.u16();
    for (std::uint16_t i = 0; i < n; ++i) {
        vpki::SignedFilter f;
        f.rsu = EntityId{r.u32()};
        f.epoch = r.u32();
        const auto len = r.u32();
        auto payload = r.raw(len);
        f.envelope.payload.assign(payload.begin(), payload.end());
        f.envelope.signer = read_id(r);
        auto tag = r.raw(32);
        std::copy(tag.begin(), tag.end(), f.envelope.signature_tag.begin());
        resp.filters.push_back(std::move(f));
    }
    if (r.remaining() != 0) throw Error(Errc::DeserializeError, "trailing bytes in join response");
    return resp;
}

std::uint32_t join_response_wire_size(bool with_chaff, std::uint64_t filter_bytes) {
    return kSessionKeyBytes + (with_chaff ? kCredentialWireSize : 0) + static_cast<std::uint32_t>(filter_bytes) +
           kEncryptionOverhead;
}

std::optional<PhantomPosition> decoy_position(const road::RoadGraph& g, const DecoyPlan& plan, SimSeconds t) {
    if (t < plan.start_time) return std::nullopt;
    double along = plan.start_offset + plan.speed * (t - plan.start_time);
    for (const auto e : plan.route) {
        const double len = g.edge(e).length;
        if (along <= len) return PhantomPosition{g.point_at(e, along), g.heading_at(e, along), e};
        along -= len;
    }
    return std::nullopt;
}

MixZoneController::MixZoneController(const road::RoadGraph& g, road::MixZoneGeometry geometry, ZoneParams params,
                                     Credential rsu_cert, std::vector<Credential> chaff_pool)
    : g_(&g),
      geometry_(std::move(geometry)),
      params_(params),
      rsu_cert_(std::move(rsu_cert)),
      bounds_(road::traverse_time_bounds(geometry_, g, params.v_min)),
      pool_(chaff_pool.begin(), chaff_pool.end()) {
    Rng rng(Rng::mix(params_.seed ^ Rng::mix(0x5e55'10c0ULL + params_.zone)));
    session_key_ = CredentialId::random(rng);
}

std::optional<SignedEnvelope> MixZoneController::advertise(SimSeconds now) {
    // Times are decisecond multiples; the epsilon absorbs their binary representation.
    if (last_advert_ && now - *last_advert_ < params_.advert_interval - 1e-9) return std::nullopt;
    last_advert_ = now;
    Advertisement ad{geometry_.center, geometry_.radius, params_.zone, now};
    return sign(ad.encode(), rsu_cert_, now);
}

Rng MixZoneController::join_rng(const CredentialId& pseudonym, std::uint64_t salt) const {
    return Rng(Rng::mix(params_.seed ^ Rng::mix(params_.zone + 1) ^ Rng::mix(pseudonym.lo() ^ salt) ^ pseudonym.hi()));
}

std::optional<Credential> MixZoneController::take_chaff() {
    if (pool_.empty()) return std::nullopt;
    auto c = pool_.front();
    pool_.pop_front();
    return c;
}

JoinOutcome MixZoneController::handle_join(const SignedEnvelope& request, const Credential& attached,
                                           const JoinContext& ctx, const std::vector<vpki::SignedFilter>& filters,
                                           SimSeconds now) {
    if (attached.kind != CredentialKind::Pseudonym || !verify(request, attached, now)) {
        throw Error(Errc::AuthFailure, "join request signature does not verify");
    }
    const auto req = JoinRequest::decode(request.payload);
    if (std::abs(req.timestamp - now) > kJoinFreshness) {
        throw Error(Errc::StaleRequest, "join request timestamp outside the freshness window");
    }
    if (distance(ctx.position, geometry_.center) > params_.rsu_range) {
        throw Error(Errc::OutOfRange, "requester outside RSU range");
    }

    // The partner is the most recent other member; it is chosen before the
    // requester itself is recorded.
    const Member* partner = nullptr;
    for (const auto& [id, m] : members_) {
        if (id == attached.id) continue;
        if (!partner || m.seq > partner->seq) partner = &m;
    }
    Member self;
    self.pseudonym = attached.id;
    self.length = req.length;
    self.join_time = now;
    self.seq = next_seq_++;
    self.entry_edge = ctx.entry_edge;
    self.predicted_exit = ctx.predicted_exit;
    VehicleLength peer = req.length;
    if (partner) {
        peer = partner->length;
        auto& p = members_.at(partner->pseudonym);
        if (!p.paired) {
            p.paired = true;
            self.paired = true;
            if (p.chaff) {
                auto& a = assignments_.at(*p.chaff);
                if (!a.started) {
                    a.peer_length = req.length;
                    events_.push_back({now, ZoneEventKind::PeerLengthUpdate, p.pseudonym});
                }
            }
        }
    }

    auto rng = join_rng(attached.id, 0);
    const bool relay = req.request_chaff && rng.uniform() < params_.relay_fraction;

    JoinResponse resp;
    resp.session_key = session_key_;
    resp.filters = filters;
    resp.timestamp = now;
    std::optional<DecoyPlan> plan;
    if (relay) {
        if (auto chaff = take_chaff()) {
            assignments_[chaff->id] = Assignment{attached.id, peer, false, false};
            self.chaff = chaff->id;
            plan = plan_decoy(rng, chaff->id, attached.id, peer, ctx.entry_edge, ctx.predicted_exit, now, now,
                              EntityId{}, false);
            resp.chaff = *chaff;
            resp.peer_length = peer;
        } else {
            events_.push_back({now, ZoneEventKind::PoolEmpty, attached.id});
        }
    }
    members_[attached.id] = self;
    return JoinOutcome{encrypt(resp.encode(), attached.id), std::move(plan), relay};
}

DecoyPlan MixZoneController::plan_decoy(Rng& rng, const CredentialId& chaff, const CredentialId& cover,
                                        VehicleLength length, std::optional<std::uint32_t> entry_edge,
                                        std::optional<std::uint32_t> predicted_exit, SimSeconds entry_time,
                                        SimSeconds now, EntityId emitter, bool rsu_stream) {
    const auto& exits = geometry_.exit_points;
    if (exits.empty()) throw Error(Errc::ConfigError, "mix-zone has no exit point");
    auto reachable = [&](std::uint32_t exit_edge) {
        if (!entry_edge) return true;
        return std::any_of(geometry_.internal_paths.begin(), geometry_.internal_paths.end(),
                           [&](const road::InternalPath& p) {
                               return p.entry_edge == *entry_edge && p.exit_edge == exit_edge;
                           });
    };
    std::vector<const road::BoundaryPoint*> options;
    for (const auto& ep : exits) {
        if (reachable(ep.edge) && ep.edge != predicted_exit) options.push_back(&ep);
    }
    bool degenerate = false;
    if (options.empty()) {
        degenerate = true;
        for (const auto& ep : exits) {
            if (reachable(ep.edge)) options.push_back(&ep);
        }
        if (options.empty()) {
            for (const auto& ep : exits) options.push_back(&ep);
        }
        events_.push_back({now, ZoneEventKind::DegenerateExit, cover});
    }
    const auto& exit = *options[rng.below(options.size())];

    double upper = 2.0 * bounds_.min_s;
    if (auto med = median_dwell()) upper = 2.0 * *med;
    upper = std::clamp(upper, bounds_.min_s, bounds_.max_s);
    const double dwell = rng.uniform(bounds_.min_s, upper);

    double speed = g_->edge(exit.edge).speed_limit / 2.0;
    if (auto it = exit_speeds_.find(exit.edge); it != exit_speeds_.end() && !it->second.empty()) {
        speed = it->second[rng.below(it->second.size())];
    }

    DecoyPlan plan;
    plan.chaff = chaff;
    plan.zone = params_.zone;
    plan.emitter = emitter;
    plan.rsu_stream = rsu_stream;
    plan.cover = cover;
    plan.exit_edge = exit.edge;
    plan.start_offset = exit.offset;
    plan.dwell = dwell;
    plan.start_time = std::max(entry_time + dwell, now);
    plan.speed = speed;
    plan.length = length;
    plan.degenerate_exit = degenerate;
    plan.route.push_back(exit.edge);
    double covered = g_->edge(exit.edge).length - exit.offset;
    while (covered < params_.decoy_route_length && plan.route.size() < kMaxDecoyEdges) {
        const auto& last = g_->edge(plan.route.back());
        std::vector<std::uint32_t> next;
        for (const auto e : g_->out_edges(last.to)) {
            if (!road::RoadGraph::is_uturn(last, g_->edge(e))) next.push_back(e);
        }
        if (next.empty()) break;
        const auto e = next[rng.below(next.size())];
        plan.route.push_back(e);
        covered += g_->edge(e).length;
    }
    return plan;
}

void MixZoneController::on_member_exit(const CredentialId& pseudonym, SimSeconds now, road::Pose pose, double speed) {
    auto it = members_.find(pseudonym);
    if (it == members_.end()) return;
    dwells_.push_back(now - it->second.join_time);
    members_.erase(it);
    if (auto snap = g_->snap(pose.pos, pose.heading, road::kExitGate); snap && geometry_.is_exit_edge(snap->edge)) {
        auto& hist = exit_speeds_[snap->edge];
        hist.push_back(speed);
        if (hist.size() > kSpeedHistory) hist.pop_front();
    }
}

std::vector<DecoyPlan> MixZoneController::sparse_tick(SimSeconds now) {
    std::vector<DecoyPlan> plans;
    if (!params_.rsu_chaff || members_.empty() || members_.size() > params_.sparse_threshold) return plans;
    std::vector<Member*> order;
    for (auto& [id, m] : members_) order.push_back(&m);
    std::sort(order.begin(), order.end(), [](const Member* a, const Member* b) { return a->seq < b->seq; });
    for (auto* m : order) {
        if (m->sparse_covered) continue;
        m->sparse_covered = true;
        auto chaff = take_chaff();
        if (!chaff) {
            events_.push_back({now, ZoneEventKind::SparseSkipped, m->pseudonym});
            continue;
        }
        assignments_[chaff->id] = Assignment{rsu_cert_.id, m->length, false, true};
        auto rng = join_rng(m->pseudonym, 0x2b5ULL);
        plans.push_back(plan_decoy(rng, chaff->id, m->pseudonym, m->length, m->entry_edge, m->predicted_exit,
                                   m->join_time, now, params_.rsu, true));
    }
    return plans;
}

VehicleLength MixZoneController::start_decoy(const CredentialId& chaff) {
    auto& a = assignments_.at(chaff);
    a.started = true;
    return a.peer_length;
}

std::optional<CredentialId> MixZoneController::assignee(const CredentialId& chaff) const {
    auto it = assignments_.find(chaff);
    if (it == assignments_.end() || it->second.rsu_held) return std::nullopt;
    return it->second.pseudonym;
}

std::vector<ZoneEvent> MixZoneController::drain_events() {
    std::vector<ZoneEvent> out;
    out.swap(events_);
    return out;
}

std::optional<double> MixZoneController::median_dwell() const {
    if (dwells_.empty()) return std::nullopt;
    auto v = dwells_;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace cmix::mixzone
