#include "cmix/adversary.hpp"

#include <algorithm>
#include <sstream>

namespace cmix::adversary {

namespace {

bool near_zone(Vec2 p, const road::MixZoneGeometry& zone, double gate) {
    return distance(p, zone.center) <= zone.radius + gate;
}

bool heading_inward(const ObservedBeacon& b, const road::MixZoneGeometry& zone) {
    return dot(heading_vector(b.heading), zone.center - b.pos) > 0.0;
}

bool seen_together(const CredentialId& a, const CredentialId& b, const SeenIntervals& seen) {
    const auto ia = seen.find(a);
    const auto ib = seen.find(b);
    if (ia == seen.end() || ib == seen.end()) return false;
    return ia->second.first <= ib->second.second && ib->second.first <= ia->second.second;
}

bool path_ok(const road::RoadGraph& g, const ObservedBeacon& from, const ObservedBeacon& to,
             const road::MixZoneGeometry& zone) {
    try {
        return road::path_exists(g, {from.pos, from.heading}, {to.pos, to.heading}, zone);
    } catch (const Error& e) {
        if (e.code() == Errc::OffNetwork) return false;
        throw;
    }
}

bool in_window(double diff, const road::TraverseBounds& b) {
    // Observation times are decisecond multiples; the slack absorbs rounding.
    return diff >= b.min_s - 1e-9 && diff <= b.max_s + 1e-9;
}

Rng follow_rng(std::uint64_t seed, const CredentialId& id) {
    return Rng(Rng::mix(seed ^ Rng::mix(id.lo()) ^ Rng::mix(id.hi() + 0x0c4a1ULL)));
}

}  // namespace

LengthClasses build_tracks(const std::vector<sim::Observation>& obs) {
    std::map<CredentialId, PseudonymTrack> by_id;
    for (const auto& o : obs) {
        const auto& b = o.beacon;
        auto [it, fresh] = by_id.try_emplace(b.pseudonym_id);
        auto& t = it->second;
        if (fresh) {
            t.id = b.pseudonym_id;
            t.first = b;
            t.length = b.length;
        }
        if (!t.times.empty() && t.times.back() == b.timestamp) continue;
        t.last = b;
        t.times.push_back(b.timestamp);
        t.positions.push_back(b.pos);
        t.headings.push_back(b.heading);
    }
    LengthClasses out;
    for (auto& [id, t] : by_id) out[t.length].push_back(std::move(t));
    return out;
}

std::vector<sim::Observation> local_observations(const std::vector<sim::Observation>& obs,
                                                 const road::MixZoneGeometry& zone, double margin) {
    std::vector<sim::Observation> out;
    for (const auto& o : obs) {
        if (distance(o.beacon.pos, zone.center) <= zone.radius + margin) out.push_back(o);
    }
    return out;
}

double observed_distance(const PseudonymTrack& t) {
    double d = 0.0;
    for (std::size_t i = 1; i < t.positions.size(); ++i) d += distance(t.positions[i - 1], t.positions[i]);
    return d;
}

SeenIntervals seen_intervals(const std::vector<sim::Observation>& obs) {
    SeenIntervals out;
    for (const auto& o : obs) {
        const auto t = o.beacon.timestamp;
        auto [it, fresh] = out.try_emplace(o.beacon.pseudonym_id, t, t);
        if (!fresh) {
            it->second.first = std::min(it->second.first, t);
            it->second.second = std::max(it->second.second, t);
        }
    }
    return out;
}

LinkInstance filter_trivial(const LengthClasses& tracks, const road::MixZoneGeometry& zone, double gate) {
    LinkInstance inst;
    for (const auto& [len, list] : tracks) {
        for (const auto& t : list) {
            // Went in and came out under the same id: consecutive samples on
            // either side of the encrypted area.
            bool crossed = false;
            for (std::size_t i = 1; i < t.times.size() && !crossed; ++i) {
                const Vec2 prev = t.positions[i - 1];
                const Vec2 cur = t.positions[i];
                crossed = near_zone(prev, zone, gate) && near_zone(cur, zone, gate) &&
                          dot(heading_vector(t.headings[i - 1]), zone.center - prev) > 0.0 &&
                          dot(heading_vector(t.headings[i]), cur - zone.center) > 0.0;
            }
            if (crossed) {
                inst.trivially_linked.push_back(t.id);
                continue;
            }
            if (near_zone(t.last.pos, zone, gate) && heading_inward(t.last, zone)) inst.entering.push_back(t);
            if (near_zone(t.first.pos, zone, gate)) inst.exiting.push_back(t);
        }
    }
    std::sort(inst.trivially_linked.begin(), inst.trivially_linked.end());
    return inst;
}

bool correlated(const PseudonymTrack& in, const PseudonymTrack& out, const SeenIntervals& seen,
                const road::RoadGraph& g, const road::MixZoneGeometry& zone, const LinkParams& p) {
    if (in.id == out.id || in.length != out.length) return false;
    if (!in_window(out.first.timestamp - in.last.timestamp, p.bounds)) return false;
    if (seen_together(in.id, out.id, seen)) return false;
    if (!path_ok(g, in.last, out.first, zone)) return false;
    return road::exit_direction_consistent(out.first, zone, p.gate);
}

std::vector<LinkCandidateSet> link(const LinkInstance& inst, const SeenIntervals& seen, const road::RoadGraph& g,
                                   const road::MixZoneGeometry& zone, const LinkParams& p) {
    // Exiting tracks per length class, ordered by B_f time, so each entering
    // track only scans its traverse-time window.
    std::map<VehicleLength, std::vector<const PseudonymTrack*>> exits;
    for (const auto& t : inst.exiting) {
        if (road::exit_direction_consistent(t.first, zone, p.gate)) exits[t.length].push_back(&t);
    }
    for (auto& [len, v] : exits) {
        std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->first.timestamp < b->first.timestamp; });
    }
    std::map<std::pair<std::uint32_t, std::uint32_t>, bool> path_cache;

    std::vector<LinkCandidateSet> out;
    for (const auto& in : inst.entering) {
        LinkCandidateSet s;
        s.entering = in.id;
        s.time = in.last.timestamp;
        const auto cls = exits.find(in.length);
        if (cls != exits.end()) {
            const auto& v = cls->second;
            const double lo = in.last.timestamp + p.bounds.min_s - 1e-6;
            const double hi = in.last.timestamp + p.bounds.max_s + 1e-6;
            auto it = std::lower_bound(v.begin(), v.end(), lo,
                                       [](const auto* t, double x) { return t->first.timestamp < x; });
            const auto a = g.snap(in.last.pos, in.last.heading);
            for (; it != v.end() && (*it)->first.timestamp <= hi; ++it) {
                const auto& o = **it;
                if (o.id == in.id || !in_window(o.first.timestamp - in.last.timestamp, p.bounds)) continue;
                if (seen_together(in.id, o.id, seen)) continue;
                const auto b = g.snap(o.first.pos, o.first.heading);
                if (!a || !b) continue;
                const auto key = std::make_pair(a->edge, b->edge);
                auto hit = path_cache.find(key);
                if (hit == path_cache.end()) hit = path_cache.emplace(key, path_ok(g, in.last, o.first, zone)).first;
                if (hit->second) s.candidates.push_back(o.id);
            }
        }
        std::sort(s.candidates.begin(), s.candidates.end());
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.entering < y.entering; });
    return out;
}

std::vector<LinkCandidateSet> brute_force_oracle(const LinkInstance& inst, const SeenIntervals& seen,
                                                 const road::RoadGraph& g, const road::MixZoneGeometry& zone,
                                                 const LinkParams& p) {
    std::vector<LinkCandidateSet> out;
    for (const auto& in : inst.entering) {
        LinkCandidateSet s;
        s.entering = in.id;
        s.time = in.last.timestamp;
        for (const auto& o : inst.exiting) {
            if (correlated(in, o, seen, g, zone, p)) s.candidates.push_back(o.id);
        }
        std::sort(s.candidates.begin(), s.candidates.end());
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.entering < y.entering; });
    return out;
}

void attach_truth(std::vector<LinkCandidateSet>& sets, const LinkInstance& inst,
                  const std::vector<sim::PseudonymChange>& changes, std::uint32_t zone) {
    std::map<CredentialId, CredentialId> next;
    for (const auto& c : changes) {
        if (c.zone == zone) next[c.old_id] = c.new_id;
    }
    std::set<CredentialId> exiting;
    for (const auto& t : inst.exiting) exiting.insert(t.id);
    for (auto& s : sets) {
        const auto it = next.find(s.entering);
        if (it != next.end() && exiting.contains(it->second)) s.truth = it->second;
    }
}

std::vector<LinkCandidateSet> hbc_rsu_link(std::vector<LinkCandidateSet> sets, const std::set<CredentialId>& own_chaff) {
    for (auto& s : sets) {
        if (s.truth) {
            s.candidates = {*s.truth};
            continue;
        }
        std::erase_if(s.candidates, [&](const CredentialId& id) { return own_chaff.contains(id); });
    }
    return sets;
}

std::vector<Chain> chain(const std::vector<LinkCandidateSet>& sets, const std::map<CredentialId, double>& distances,
                         std::uint64_t seed) {
    std::map<CredentialId, CredentialId> followed;
    std::set<CredentialId> has_pred;
    for (const auto& s : sets) {
        if (s.candidates.empty() || !s.truth) continue;
        auto rng = follow_rng(seed, s.entering);
        const auto& pick = s.candidates[rng.below(s.candidates.size())];
        if (pick != *s.truth) continue;
        followed[s.entering] = pick;
        has_pred.insert(pick);
    }
    auto dist = [&](const CredentialId& id) {
        const auto it = distances.find(id);
        return it == distances.end() ? 0.0 : it->second;
    };
    std::vector<Chain> out;
    for (const auto& [start, next] : followed) {
        if (has_pred.contains(start)) continue;
        Chain c;
        c.ids.push_back(start);
        c.distance_m = dist(start);
        for (auto it = followed.find(start); it != followed.end(); it = followed.find(it->second)) {
            c.ids.push_back(it->second);
            c.distance_m += dist(it->second);
            if (c.ids.size() > followed.size() + 1) break;
        }
        out.push_back(std::move(c));
    }
    return out;
}

AttackResult attack(const AttackInput& in) {
    AttackResult r;
    const auto seen = seen_intervals(in.observations);
    std::set<std::uint32_t> hbc;
    if (in.truth) hbc.insert(in.truth->hbc_zones.begin(), in.truth->hbc_zones.end());

    for (std::size_t z = 0; z < in.zones.size(); ++z) {
        const auto& zone = in.zones[z];
        const auto local = local_observations(in.observations, zone);
        const auto inst = filter_trivial(build_tracks(local), zone);
        LinkParams p{road::traverse_time_bounds(zone, *in.graph, in.v_min)};
        auto sets = link(inst, seen, *in.graph, zone, p);
        for (auto& s : sets) s.zone = static_cast<std::uint32_t>(z);
        if (in.truth) {
            attach_truth(sets, inst, in.truth->changes, static_cast<std::uint32_t>(z));
            if (hbc.contains(static_cast<std::uint32_t>(z))) {
                std::set<CredentialId> own;
                if (z < in.truth->provisioned_chaff.size()) {
                    own.insert(in.truth->provisioned_chaff[z].begin(), in.truth->provisioned_chaff[z].end());
                }
                sets = hbc_rsu_link(std::move(sets), own);
            }
        }
        r.trivially_linked.insert(r.trivially_linked.end(), inst.trivially_linked.begin(), inst.trivially_linked.end());
        r.sets.insert(r.sets.end(), sets.begin(), sets.end());
    }
    for (const auto& [len, list] : build_tracks(in.observations)) {
        for (const auto& t : list) r.distances[t.id] = observed_distance(t);
    }
    if (in.truth) r.chains = chain(r.sets, r.distances, in.seed);
    return r;
}

std::string candidates_jsonl(const std::vector<LinkCandidateSet>& sets) {
    std::ostringstream os;
    for (const auto& s : sets) {
        nlohmann::json j;
        j["zone"] = s.zone;
        j["entering"] = s.entering.hex();
        auto c = nlohmann::json::array();
        for (const auto& id : s.candidates) c.push_back(id.hex());
        j["candidates"] = c;
        if (s.truth) j["truth"] = s.truth->hex();
        os << j.dump() << '\n';
    }
    return os.str();
}

}  // namespace cmix::adversary
