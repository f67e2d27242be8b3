#include "cmix/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cmix::sim {

std::uint32_t FilterSchedule::chunk_count() const {
    const double per_chunk = bandwidth_Bps * static_cast<double>(interval_ds) / 10.0;
    const auto n = static_cast<std::uint64_t>(std::ceil(static_cast<double>(filter_bytes) / per_chunk));
    return static_cast<std::uint32_t>(std::max<std::uint64_t>(n, 1));
}

std::uint64_t FilterSchedule::chunk_bytes(std::uint32_t index) const {
    const auto n = chunk_count();
    const auto per_chunk =
        static_cast<std::uint64_t>(std::floor(bandwidth_Bps * static_cast<double>(interval_ds) / 10.0));
    if (index + 1 < n) return per_chunk;
    return filter_bytes - per_chunk * (n - 1);
}

std::int64_t FilterSchedule::completion_ds(std::int64_t arrival_ds) const {
    const std::int64_t cycle = static_cast<std::int64_t>(chunk_count()) * interval_ds;
    const std::int64_t next_cycle = (arrival_ds + cycle - 1) / cycle * cycle;
    return next_cycle + cycle;
}

SimSeconds FilterSchedule::latency(SimSeconds arrival) const {
    const auto a = std::llround(arrival * 10.0);
    return static_cast<double>(completion_ds(a) - a) / 10.0;
}

SafetyVerdict safety_filtering(const std::vector<std::optional<HeldFilter>>& held, const CredentialId& pseudonym,
                               std::uint32_t* checks) {
    bool missing = false;
    for (const auto& h : held) {
        if (!h) {
            missing = true;
            continue;
        }
        if (checks) ++*checks;
        if (h->filter->contains(pseudonym)) return SafetyVerdict::DiscardChaff;
    }
    return missing ? SafetyVerdict::UnknownPending : SafetyVerdict::Process;
}

EntityId peer_filter_exchange(Vec2 requester, std::optional<std::uint32_t> held_epoch,
                              const std::vector<Neighbor>& neighbors, double range_m) {
    std::optional<EntityId> best;
    for (const auto& n : neighbors) {
        if (!n.epoch || distance(n.pos, requester) > range_m) continue;
        if (held_epoch && *n.epoch <= *held_epoch) continue;
        if (!best || n.id < *best) best = n.id;
    }
    if (!best) throw Error(Errc::NoResponder, "no neighbor holds a newer filter");
    return *best;
}

std::optional<HeldFilter> accept_filter(const vpki::SignedFilter& f, const Credential& pca, SimSeconds now) {
    if (!vpki::verify_filter(f, pca, now)) return std::nullopt;
    try {
        auto decoded = std::make_shared<const filter::ChaffFilter>(f.decode());
        return HeldFilter{f.epoch, std::make_shared<const vpki::SignedFilter>(f), std::move(decoded)};
    } catch (const Error&) {
        return std::nullopt;
    }
}

namespace {

constexpr std::uint32_t kBeaconBytes = kCamWireSize + kCredentialWireSize;
constexpr double kDrainCap = 1800.0;

enum class EndReason { RouteEnd = 0, ReachedZone = 1, RelayEnteredZone = 2, RelayTripEnd = 3, LeftRsuRange = 4, Horizon = 5 };

struct Stream {
    mixzone::DecoyPlan plan;
    Credential chaff;
    LinkId link;
    bool started = false;
    bool ended = false;
    VehicleLength length;
};

struct VehicleRt {
    EntityId id;
    mobility::Trajectory traj;
    bool non_coop = false;
    std::vector<Credential> pseudonyms;
    std::size_t active = 0;
    LinkId link;
    bool seen = false;
    bool finished = false;
    int zone = -1;
    CredentialId join_pseudonym;
    std::vector<char> in_range;
    std::vector<std::optional<std::int64_t>> pending_ds;
    std::vector<std::int64_t> arrival_ds;
    std::vector<std::optional<HeldFilter>> held;
    std::optional<std::size_t> stream;
    std::optional<mobility::TraceSample> now;

    const Credential& pseudonym() const { return pseudonyms[active]; }
};

struct TickBeacon {
    CredentialId id;
    Vec2 pos;
    EntityId emitter;
    int zone = -1;  // encrypting zone, -1 for plaintext
};

class Engine {
public:
    explicit Engine(const ScenarioConfig& c) : c_(c), g_(c.graph), pki_(c.rng_seed, kPcaId, policy(c)) {}

    RunResult run();

private:
    static vpki::FilterPolicy policy(const ScenarioConfig& c) {
        return vpki::FilterPolicy{c.filter_capacity, c.filter_functional_fpr};
    }

    void setup();
    void load_trips();
    int zone_at(Vec2 p) const {
        for (std::size_t z = 0; z < result_.zones.size(); ++z) {
            if (result_.zones[z].contains(p)) return static_cast<int>(z);
        }
        return -1;
    }
    SimSeconds secs(std::int64_t ds) const { return static_cast<double>(ds) / 10.0; }
    LinkId fresh_link() { return LinkId{link_rng_.next()}; }
    const HeldFilter& published(std::size_t z, SimSeconds now);
    std::vector<vpki::SignedFilter> published_all(SimSeconds now);

    void step_vehicle(VehicleRt& v, std::int64_t t_ds);
    void join(VehicleRt& v, std::size_t z, SimSeconds t, bool change_pseudonym);
    void update_filters(VehicleRt& v, std::int64_t t_ds);
    void end_stream(std::size_t idx, SimSeconds t, EndReason why);
    void add_stream(const mixzone::DecoyPlan& plan, const Credential& chaff, SimSeconds t);
    void emit(std::int64_t t_ds);
    void receive(SimSeconds t);
    void peer_exchange(SimSeconds t);
    void drain_zone_events();
    void beacon(const ObservedBeacon& b, EntityId emitter, bool chaff, SimSeconds t);

    std::optional<std::uint32_t> entry_edge_of(const VehicleRt& v, SimSeconds t, std::size_t z) const;
    std::optional<std::uint32_t> predicted_exit_of(const VehicleRt& v, SimSeconds t, std::size_t z) const;

    const ScenarioConfig& c_;
    const road::RoadGraph& g_;
    vpki::Vpki pki_;
    RunResult result_;
    std::vector<mixzone::MixZoneController> zones_;
    std::vector<FilterSchedule> schedules_;
    std::vector<std::optional<HeldFilter>> publications_;
    std::vector<VehicleRt> vehicles_;
    std::vector<Stream> streams_;
    std::vector<TickBeacon> tick_beacons_;
    std::unordered_map<CredentialId, std::size_t> chaff_zone_;
    Rng link_rng_{0};
    std::int64_t tick_ds_ = 1;
    std::int64_t beacon_ds_ = 5;
    std::int64_t filter_ds_ = 10;
    std::uint64_t filter_bytes_ = 0;
    SimSeconds validity_end_ = 0.0;
};

void Engine::load_trips() {
    const double step = secs(tick_ds_);
    std::vector<mobility::Trajectory> trajs;
    if (c_.synthesis) {
        const auto trips =
            mobility::synthesize_trips(g_, c_.synthesis->n_vehicles, c_.synthesis->arrival_rate_per_s, c_.synthesis->seed);
        for (const auto& t : trips) trajs.push_back(mobility::trajectory_of(g_, t, step));
    } else if (c_.trace_csv) {
        std::istringstream in(*c_.trace_csv);
        trajs = mobility::ingest_trace(in, g_, c_.rng_seed);
    } else {
        for (const auto& et : c_.explicit_trips) {
            mobility::Trip trip;
            trip.vehicle = EntityId{et.vehicle};
            trip.departure = et.departure_s;
            try {
                trip.length = VehicleLength::from_meters(et.length_m);
            } catch (const std::invalid_argument& e) {
                throw Error(Errc::ConfigError, std::string("explicit trip: ") + e.what());
            }
            for (std::size_t i = 0; i + 1 < et.route.size(); ++i) {
                const auto from = g_.junction_index(et.route[i]);
                const auto to = g_.junction_index(et.route[i + 1]);
                if (!from || !to) throw Error(Errc::ConfigError, "explicit trip names an unknown junction");
                std::optional<std::uint32_t> edge;
                for (const auto e : g_.out_edges(*from)) {
                    if (g_.edge(e).to == *to) edge = e;
                }
                if (!edge) throw Error(Errc::ConfigError, "explicit trip uses a missing edge");
                trip.edges.push_back(*edge);
                trip.speeds.push_back(et.speed_mps > 0.0 ? et.speed_mps : g_.edge(*edge).speed_limit);
            }
            if (trip.edges.empty()) throw Error(Errc::ConfigError, "explicit trip needs at least two junctions");
            trajs.push_back(mobility::trajectory_of(g_, trip, step));
        }
    }
    std::sort(trajs.begin(), trajs.end(), [](const auto& a, const auto& b) { return a.vehicle < b.vehicle; });
    for (std::size_t i = 1; i < trajs.size(); ++i) {
        if (trajs[i].vehicle == trajs[i - 1].vehicle) throw Error(Errc::ConfigError, "duplicate vehicle id");
    }
    const auto nz = c_.zones.size();
    for (auto& t : trajs) {
        if (t.samples.empty()) continue;
        if (t.vehicle.value >= kRsuIdBase || t.vehicle.value == 0) {
            throw Error(Errc::ConfigError, "vehicle ids must lie in [1, " + std::to_string(kRsuIdBase) + ")");
        }
        VehicleRt v;
        v.id = t.vehicle;
        v.traj = std::move(t);
        Rng r(Rng::mix(c_.rng_seed ^ Rng::mix(v.id.value) ^ 0x90cULL));
        v.non_coop = r.uniform() < c_.non_coop_fraction;
        v.in_range.assign(nz, 0);
        v.pending_ds.assign(nz, std::nullopt);
        v.arrival_ds.assign(nz, 0);
        v.held.assign(nz, std::nullopt);
        vehicles_.push_back(std::move(v));
    }
}

void Engine::setup() {
    tick_ds_ = c_.tick_ds();
    beacon_ds_ = std::llround(c_.gamma_v_s * 10.0);
    filter_ds_ = std::llround(c_.filter_tx_interval_s * 10.0);
    filter_bytes_ = c_.filter_wire_bytes();
    result_.tick = secs(tick_ds_);
    link_rng_ = Rng(Rng::mix(c_.rng_seed ^ 0x11ULL));
    Rng setup_rng(Rng::mix(c_.rng_seed ^ 0x5e7ULL));

    load_trips();
    for (const auto& v : vehicles_) pki_.register_vehicle(v.id);
    SimSeconds last_end = 0.0;
    for (const auto& v : vehicles_) last_end = std::max(last_end, v.traj.end());
    validity_end_ = std::max(c_.duration_s, last_end + kDrainCap) + 1.0;

    const auto nz = c_.zones.size();
    result_.truth.provisioned_chaff.resize(nz);
    for (std::size_t z = 0; z < nz; ++z) {
        const auto& spec = c_.zones[z];
        auto geom = road::MixZoneGeometry::build(g_, spec.center, spec.radius_m, c_.allow_uturn);
        if (geom.internal_paths.empty()) {
            throw Error(Errc::ConfigError, "zone " + std::to_string(z) + " has no path through it");
        }
        const EntityId rsu{kRsuIdBase + static_cast<std::uint32_t>(z)};
        pki_.register_rsu(rsu);
        auto prov = pki_.provision_chaff(rsu, c_.chaff_pool_per_rsu, 0.0, validity_end_);
        for (const auto& ch : prov.chaff) {
            result_.truth.provisioned_chaff[z].push_back(ch.id);
            chaff_zone_[ch.id] = z;
        }
        auto cert = Credential::make(CredentialId::random(setup_rng), CredentialKind::LongTermCert, kPcaId, rsu, 0.0,
                                     validity_end_);
        mixzone::ZoneParams zp;
        zp.zone = static_cast<std::uint32_t>(z);
        zp.rsu = rsu;
        zp.rsu_range = spec.rsu_range_m;
        zp.relay_fraction = c_.relay_fraction;
        zp.sparse_threshold = c_.sparse_threshold;
        zp.rsu_chaff = c_.rsu_chaff_enabled();
        zp.advert_interval = c_.gamma_mz_s;
        zp.v_min = c_.v_min_mps;
        zp.decoy_route_length = c_.decoy_route_m;
        zp.seed = c_.rng_seed;
        result_.zones.push_back(geom);
        result_.rsu_ids.push_back(rsu);
        zones_.emplace_back(g_, std::move(geom), zp, cert, prov.chaff);
        schedules_.push_back(FilterSchedule{filter_bytes_, c_.filter_bandwidth_Bps, filter_ds_});
    }
    publications_.assign(nz, std::nullopt);

    const auto hbc_count = static_cast<std::size_t>(std::llround(c_.hbc_rsu_fraction * static_cast<double>(nz)));
    std::vector<std::uint32_t> order(nz);
    for (std::size_t z = 0; z < nz; ++z) order[z] = static_cast<std::uint32_t>(z);
    Rng hbc_rng(Rng::mix(c_.rng_seed ^ 0x4bcULL));
    for (std::size_t i = nz; i > 1; --i) std::swap(order[i - 1], order[hbc_rng.below(i)]);
    order.resize(std::min(hbc_count, nz));
    std::sort(order.begin(), order.end());
    result_.truth.hbc_zones = order;
}

const HeldFilter& Engine::published(std::size_t z, SimSeconds now) {
    const auto rsu = result_.rsu_ids[z];
    const auto epoch = pki_.filter(rsu).epoch();
    auto& pub = publications_[z];
    if (!pub || pub->epoch != epoch) {
        auto sf = pki_.signed_filter(rsu, now);
        auto decoded = std::make_shared<const filter::ChaffFilter>(pki_.filter(rsu));
        pub = HeldFilter{epoch, std::make_shared<const vpki::SignedFilter>(std::move(sf)), std::move(decoded)};
    }
    return *pub;
}

std::vector<vpki::SignedFilter> Engine::published_all(SimSeconds now) {
    std::vector<vpki::SignedFilter> out;
    for (std::size_t z = 0; z < zones_.size(); ++z) out.push_back(*published(z, now).signed_filter);
    return out;
}

std::optional<std::uint32_t> Engine::entry_edge_of(const VehicleRt& v, SimSeconds t, std::size_t z) const {
    auto prev = v.traj.at(t - result_.tick);
    if (!prev) return std::nullopt;
    auto snap = g_.snap(prev->pos, prev->heading, road::kExitGate);
    if (!snap || !result_.zones[z].is_entry_edge(snap->edge)) return std::nullopt;
    return snap->edge;
}

std::optional<std::uint32_t> Engine::predicted_exit_of(const VehicleRt& v, SimSeconds t, std::size_t z) const {
    const auto& zone = result_.zones[z];
    for (int k = 1; k < 100000; ++k) {
        const SimSeconds tk = t + k * result_.tick;
        auto s = v.traj.at(tk);
        if (!s) return std::nullopt;
        if (zone.contains(s->pos)) continue;
        auto snap = g_.snap(s->pos, s->heading, road::kExitGate);
        if (!snap || !zone.is_exit_edge(snap->edge)) return std::nullopt;
        return snap->edge;
    }
    return std::nullopt;
}

void Engine::add_stream(const mixzone::DecoyPlan& plan, const Credential& chaff, SimSeconds t) {
    Stream s;
    s.plan = plan;
    s.chaff = chaff;
    s.link = fresh_link();
    s.length = plan.length;
    streams_.push_back(s);
    Event e;
    e.time = t;
    e.kind = EventKind::DecoyPlanned;
    e.entity = plan.emitter;
    e.zone = static_cast<std::int32_t>(plan.zone);
    e.a = plan.chaff;
    e.b = plan.cover;
    e.value = plan.start_time;
    e.flags = plan.rsu_stream ? kFlagRsuStream : 0;
    result_.events.add(e);
    result_.truth.emitted_chaff[plan.chaff] = ChaffOrigin{plan.zone, plan.rsu_stream};
}

void Engine::end_stream(std::size_t idx, SimSeconds t, EndReason why) {
    auto& s = streams_[idx];
    if (s.ended) return;
    s.ended = true;
    Event e;
    e.time = t;
    e.kind = EventKind::DecoyEnd;
    e.entity = s.plan.emitter;
    e.zone = static_cast<std::int32_t>(s.plan.zone);
    e.a = s.chaff.id;
    e.value = static_cast<double>(why);
    e.flags = s.plan.rsu_stream ? kFlagRsuStream : 0;
    result_.events.add(e);

    const auto request = sign(vpki::Vpki::retire_payload(s.chaff.id, t), s.chaff, t);
    pki_.retire_chaff(request, t);
    Event r;
    r.time = t;
    r.kind = EventKind::ChaffRetired;
    r.entity = s.plan.emitter;
    r.zone = static_cast<std::int32_t>(s.plan.zone);
    r.a = s.chaff.id;
    r.bytes = kRetireRequestBytes + kCredentialWireSize;
    r.signs = 1;
    result_.events.add(r);
}

void Engine::join(VehicleRt& v, std::size_t z, SimSeconds t, bool change_pseudonym) {
    auto& ctrl = zones_[z];
    const auto& me = v.pseudonym();
    const bool wants_chaff = !v.non_coop;
    const auto request = mixzone::make_join_request(me, {v.traj.length, wants_chaff, t}, t);
    mixzone::JoinContext ctx{v.now->pos, entry_edge_of(v, t, z), predicted_exit_of(v, t, z)};
    auto outcome = ctrl.handle_join(request, me, ctx, published_all(t), t);
    const auto reply = mixzone::JoinResponse::decode(open(outcome.response, me.id));

    Event rq;
    rq.time = t;
    rq.kind = EventKind::JoinRequest;
    rq.entity = v.id;
    rq.zone = static_cast<std::int32_t>(z);
    rq.a = me.id;
    rq.bytes = mixzone::kJoinRequestBytes + kCredentialWireSize;
    rq.signs = 1;
    result_.events.add(rq);

    Event rs;
    rs.time = t;
    rs.kind = EventKind::JoinResponse;
    rs.entity = result_.rsu_ids[z];
    rs.zone = static_cast<std::int32_t>(z);
    rs.a = me.id;
    rs.peer = v.id;
    rs.bytes = mixzone::join_response_wire_size(reply.chaff.has_value(), filter_bytes_ * zones_.size());
    rs.verifies = 1;
    rs.flags = reply.chaff ? kFlagChaff : 0;
    result_.events.add(rs);

    for (std::size_t k = 0; k < zones_.size(); ++k) v.held[k] = published(k, t);
    v.join_pseudonym = me.id;

    Event en;
    en.time = t;
    en.kind = EventKind::ZoneEnter;
    en.entity = v.id;
    en.zone = static_cast<std::int32_t>(z);
    en.a = me.id;
    en.pos = v.now->pos;
    en.verifies = static_cast<std::uint32_t>(reply.filters.size());
    en.value = v.traj.length.meters();
    result_.events.add(en);

    if (outcome.decoy && reply.chaff) {
        auto plan = *outcome.decoy;
        plan.emitter = v.id;
        add_stream(plan, *reply.chaff, t);
        v.stream = streams_.size() - 1;
    }

    if (change_pseudonym && !v.non_coop) {
        const auto old_id = me.id;
        if (++v.active >= v.pseudonyms.size()) {
            auto more = pki_.issue_pseudonyms(v.id, c_.pseudonyms_per_vehicle, 0.0, validity_end_);
            v.pseudonyms.insert(v.pseudonyms.end(), more.begin(), more.end());
        }
        v.link = fresh_link();
        Event pc;
        pc.time = t;
        pc.kind = EventKind::PseudonymChange;
        pc.entity = v.id;
        pc.zone = static_cast<std::int32_t>(z);
        pc.a = old_id;
        pc.b = v.pseudonym().id;
        result_.events.add(pc);
        result_.truth.changes.push_back({t, v.id, old_id, v.pseudonym().id, static_cast<std::uint32_t>(z)});
    }
}

void Engine::update_filters(VehicleRt& v, std::int64_t t_ds) {
    const SimSeconds t = secs(t_ds);
    for (std::size_t z = 0; z < zones_.size(); ++z) {
        const bool in = distance(v.now->pos, result_.zones[z].center) <= c_.zones[z].rsu_range_m;
        if (in && !v.in_range[z]) {
            v.arrival_ds[z] = t_ds;
            v.pending_ds[z] = schedules_[z].completion_ds(t_ds);
        }
        if (!in) v.pending_ds[z].reset();
        v.in_range[z] = in ? 1 : 0;
        if (in && v.pending_ds[z] && t_ds >= *v.pending_ds[z]) {
            const auto& pub = published(z, t);
            if (!v.held[z] || v.held[z]->epoch < pub.epoch) v.held[z] = pub;
            Event e;
            e.time = t;
            e.kind = EventKind::FilterDelivered;
            e.entity = v.id;
            e.zone = static_cast<std::int32_t>(z);
            e.value = secs(*v.pending_ds[z] - v.arrival_ds[z]);
            e.verifies = 1;
            result_.events.add(e);
            v.pending_ds[z].reset();
        }
    }
}

void Engine::step_vehicle(VehicleRt& v, std::int64_t t_ds) {
    const SimSeconds t = secs(t_ds);
    if (v.finished) return;
    v.now = v.traj.at(t);
    if (!v.now) {
        if (!v.seen || t < v.traj.start()) return;
        // Trip over.
        v.finished = true;
        if (v.zone >= 0) {
            zones_[static_cast<std::size_t>(v.zone)].drop_member(v.join_pseudonym);
            Event e;
            e.time = t;
            e.kind = EventKind::ZoneExit;
            e.entity = v.id;
            e.zone = v.zone;
            e.a = v.pseudonym().id;
            e.pos = result_.zones[static_cast<std::size_t>(v.zone)].center;
            e.count = 1;  // left by ending the trip inside
            result_.events.add(e);
        }
        if (v.stream) end_stream(*v.stream, t, EndReason::RelayTripEnd);
        v.stream.reset();
        return;
    }
    const bool first = !v.seen;
    if (first) {
        v.seen = true;
        v.pseudonyms = pki_.issue_pseudonyms(v.id, c_.pseudonyms_per_vehicle, 0.0, validity_end_);
        v.link = fresh_link();
    }
    const int z_now = zone_at(v.now->pos);
    if (v.zone >= 0 && z_now != v.zone) {
        const auto zi = static_cast<std::size_t>(v.zone);
        zones_[zi].on_member_exit(v.join_pseudonym, t, road::Pose{v.now->pos, v.now->heading}, v.now->speed);
        Event e;
        e.time = t;
        e.kind = EventKind::ZoneExit;
        e.entity = v.id;
        e.zone = v.zone;
        e.a = v.pseudonym().id;
        e.pos = v.now->pos;
        result_.events.add(e);
    }
    if (z_now >= 0 && z_now != v.zone) {
        if (v.stream) end_stream(*v.stream, t, EndReason::RelayEnteredZone);
        v.stream.reset();
        join(v, static_cast<std::size_t>(z_now), t, !first);
    }
    v.zone = z_now;
    update_filters(v, t_ds);
}

void Engine::beacon(const ObservedBeacon& b, EntityId emitter, bool chaff, SimSeconds t) {
    const int z = zone_at(b.pos);
    Event e;
    e.time = t;
    e.kind = EventKind::Beacon;
    e.entity = emitter;
    e.zone = z;
    e.a = b.pseudonym_id;
    e.pos = b.pos;
    e.bytes = kBeaconBytes + (z >= 0 ? kEncryptionOverhead : 0);
    e.signs = 1;
    e.flags = static_cast<std::uint8_t>((chaff ? kFlagChaff : 0) | (z >= 0 ? kFlagEncrypted : 0));
    result_.events.add(e);
    tick_beacons_.push_back({b.pseudonym_id, b.pos, emitter, z});
    if (z < 0) {
        for (std::size_t k = 0; k < c_.eavesdroppers.size(); ++k) {
            if (distance(b.pos, c_.eavesdroppers[k].pos) <= c_.eavesdroppers[k].range_m) {
                result_.observations.rows.push_back({b, static_cast<std::uint32_t>(k)});
            }
        }
    }
    if (auto mis = pki_.observe_beacon(b.pseudonym_id, t)) {
        Event m;
        m.time = t;
        m.kind = EventKind::Misbehavior;
        m.entity = kPcaId;
        m.a = mis->chaff;
        m.peer = emitter;
        result_.events.add(m);
    }
}

void Engine::emit(std::int64_t t_ds) {
    const SimSeconds t = secs(t_ds);
    tick_beacons_.clear();
    for (auto& v : vehicles_) {
        if (v.finished || !v.now) continue;
        ObservedBeacon b;
        b.pseudonym_id = v.pseudonym().id;
        b.pos = v.now->pos;
        b.speed = v.now->speed;
        b.heading = v.now->heading;
        b.length = v.traj.length;
        b.timestamp = t;
        b.link_id = v.link;
        beacon(b, v.id, false, t);
    }
    for (std::size_t i = 0; i < streams_.size(); ++i) {
        auto& s = streams_[i];
        if (s.ended || t < s.plan.start_time) continue;
        const auto pos = mixzone::decoy_position(g_, s.plan, t);
        if (!pos) {
            end_stream(i, t, EndReason::RouteEnd);
            continue;
        }
        if (zone_at(pos->pos) >= 0) {
            end_stream(i, t, EndReason::ReachedZone);
            continue;
        }
        if (s.plan.rsu_stream && distance(pos->pos, result_.zones[s.plan.zone].center) > c_.zones[s.plan.zone].rsu_range_m) {
            end_stream(i, t, EndReason::LeftRsuRange);
            continue;
        }
        if (!s.started) {
            s.started = true;
            s.length = zones_[s.plan.zone].start_decoy(s.chaff.id);
            Event e;
            e.time = t;
            e.kind = EventKind::DecoyStart;
            e.entity = s.plan.emitter;
            e.zone = static_cast<std::int32_t>(s.plan.zone);
            e.a = s.chaff.id;
            e.value = s.length.meters();
            e.flags = s.plan.rsu_stream ? kFlagRsuStream : 0;
            result_.events.add(e);
        }
        ObservedBeacon b;
        b.pseudonym_id = s.chaff.id;
        b.pos = pos->pos;
        b.speed = s.plan.speed;
        b.heading = pos->heading;
        b.length = s.length;
        b.timestamp = t;
        b.link_id = s.link;
        beacon(b, s.plan.emitter, true, t);
    }
}

void Engine::receive(SimSeconds t) {
    for (auto& v : vehicles_) {
        if (v.finished || !v.now) continue;
        Event e;
        e.time = t;
        e.kind = EventKind::Reception;
        e.entity = v.id;
        std::uint32_t pending = 0;
        for (const auto& b : tick_beacons_) {
            if (b.emitter == v.id || distance(b.pos, v.now->pos) > c_.v2v_range_m) continue;
            if (b.zone >= 0 && b.zone != v.zone) continue;  // cannot decrypt
            switch (safety_filtering(v.held, b.id, &e.checks)) {
                case SafetyVerdict::DiscardChaff:
                    ++e.count;
                    break;
                case SafetyVerdict::UnknownPending:
                    ++pending;
                    ++e.verifies;
                    break;
                case SafetyVerdict::Process:
                    ++e.verifies;
                    break;
            }
        }
        e.value = pending;
        if (e.checks || e.verifies || e.count) result_.events.add(e);
    }
}

void Engine::peer_exchange(SimSeconds t) {
    for (auto& v : vehicles_) {
        if (v.finished || !v.now) continue;
        if (std::any_of(v.in_range.begin(), v.in_range.end(), [](char c) { return c != 0; })) continue;
        for (std::size_t z = 0; z < zones_.size(); ++z) {
            if (v.held[z]) continue;
            Event q;
            q.time = t;
            q.kind = EventKind::FilterQuery;
            q.entity = v.id;
            q.zone = static_cast<std::int32_t>(z);
            q.bytes = kFilterQueryBytes + kCredentialWireSize;
            q.signs = 1;
            result_.events.add(q);

            std::vector<Neighbor> neighbors;
            for (const auto& n : vehicles_) {
                if (n.id == v.id || n.finished || !n.now || !n.held[z]) continue;
                neighbors.push_back({n.id, n.now->pos, n.held[z]->epoch});
            }
            try {
                const auto responder = peer_filter_exchange(v.now->pos, std::nullopt, neighbors, c_.v2v_range_m);
                const auto& src = *std::find_if(vehicles_.begin(), vehicles_.end(),
                                                [&](const VehicleRt& n) { return n.id == responder; });
                Event r;
                r.time = t;
                r.kind = EventKind::FilterResponse;
                r.entity = responder;
                r.zone = static_cast<std::int32_t>(z);
                r.peer = v.id;
                r.bytes = static_cast<std::uint32_t>(filter_bytes_) + kEncryptionOverhead;
                result_.events.add(r);
                if (auto ok = accept_filter(*src.held[z]->signed_filter, pki_.pca_credential(), t)) {
                    v.held[z] = src.held[z];
                } else {
                    Event x;
                    x.time = t;
                    x.kind = EventKind::FilterRejected;
                    x.entity = v.id;
                    x.zone = static_cast<std::int32_t>(z);
                    x.peer = responder;
                    result_.events.add(x);
                }
            } catch (const Error& err) {
                if (err.code() != Errc::NoResponder) throw;
                Event n;
                n.time = t;
                n.kind = EventKind::NoResponder;
                n.entity = v.id;
                n.zone = static_cast<std::int32_t>(z);
                result_.events.add(n);
            }
        }
    }
}

void Engine::drain_zone_events() {
    for (std::size_t z = 0; z < zones_.size(); ++z) {
        for (const auto& ze : zones_[z].drain_events()) {
            Event e;
            e.time = ze.time;
            e.entity = result_.rsu_ids[z];
            e.zone = static_cast<std::int32_t>(z);
            e.a = ze.subject;
            switch (ze.kind) {
                case mixzone::ZoneEventKind::PeerLengthUpdate:
                    e.kind = EventKind::PeerLengthUpdate;
                    e.bytes = mixzone::kPeerLengthUpdateBytes;
                    break;
                case mixzone::ZoneEventKind::PoolEmpty:
                    e.kind = EventKind::PoolEmpty;
                    break;
                case mixzone::ZoneEventKind::SparseSkipped:
                    e.kind = EventKind::SparseSkipped;
                    break;
                case mixzone::ZoneEventKind::DegenerateExit:
                    e.kind = EventKind::DegenerateExit;
                    break;
            }
            result_.events.add(e);
        }
    }
}

RunResult Engine::run() {
    setup();
    SimSeconds last_end = 0.0;
    SimSeconds first_start = 1e300;
    for (const auto& v : vehicles_) {
        last_end = std::max(last_end, v.traj.end());
        first_start = std::min(first_start, v.traj.start());
    }
    const std::int64_t cap_ds = c_.duration_s > 0.0 ? std::llround(c_.duration_s * 10.0)
                                                   : std::llround((last_end + kDrainCap) * 10.0);
    std::int64_t t_ds = 0;
    for (; t_ds <= cap_ds; t_ds += tick_ds_) {
        const SimSeconds t = secs(t_ds);
        if (c_.duration_s <= 0.0 && t > last_end &&
            std::all_of(streams_.begin(), streams_.end(), [](const Stream& s) { return s.ended; })) {
            break;
        }
        for (std::size_t z = 0; z < zones_.size(); ++z) {
            if (auto ad = zones_[z].advertise(t)) {
                Event e;
                e.time = t;
                e.kind = EventKind::Advert;
                e.entity = result_.rsu_ids[z];
                e.zone = static_cast<std::int32_t>(z);
                e.bytes = signed_wire_size(*ad, zones_[z].rsu_credential());
                e.signs = 1;
                result_.events.add(e);
            }
            if (t_ds % filter_ds_ == 0) {
                const auto& sch = schedules_[z];
                const auto idx = static_cast<std::uint32_t>((t_ds / filter_ds_) % sch.chunk_count());
                Event e;
                e.time = t;
                e.kind = EventKind::FilterChunk;
                e.entity = result_.rsu_ids[z];
                e.zone = static_cast<std::int32_t>(z);
                e.bytes = static_cast<std::uint32_t>(sch.chunk_bytes(idx));
                e.count = idx;
                if (idx == 0) e.signs = 1;
                result_.events.add(e);
            }
        }
        if (t + 1e-9 >= first_start || t_ds == 0) {
            for (auto& v : vehicles_) step_vehicle(v, t_ds);
            for (std::size_t z = 0; z < zones_.size(); ++z) {
                for (const auto& plan : zones_[z].sparse_tick(t)) {
                    const auto* cred = pki_.chaff_credential(plan.chaff);
                    add_stream(plan, *cred, t);
                }
            }
            drain_zone_events();
            if (t_ds % beacon_ds_ == 0) {
                emit(t_ds);
                receive(t);
                peer_exchange(t);
            }
        }
    }
    const SimSeconds t_end = secs(std::min(t_ds, cap_ds));
    for (std::size_t i = 0; i < streams_.size(); ++i) end_stream(i, t_end, EndReason::Horizon);
    result_.end_time = t_end;
    result_.events.finalize();
    return std::move(result_);
}

}  // namespace

RunResult run(const ScenarioConfig& config) {
    config.validate();
    Engine engine(config);
    return engine.run();
}

}  // namespace cmix::sim
