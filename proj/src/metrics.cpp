#include "cmix/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace cmix::metrics {

namespace {

std::string num(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

double transition_probability(const adversary::LinkCandidateSet& s) {
    if (!s.truth || s.candidates.empty()) return 0.0;
    if (std::find(s.candidates.begin(), s.candidates.end(), *s.truth) == s.candidates.end()) return 0.0;
    return 1.0 / static_cast<double>(s.candidates.size());
}

std::optional<double> success_rate(const std::vector<adversary::LinkCandidateSet>& sets) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : sets) {
        if (!s.truth) continue;
        sum += transition_probability(s);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

DistanceReport tracked_distance(const std::vector<adversary::Chain>& chains) {
    DistanceReport r;
    if (chains.empty()) return r;
    double total = 0.0;
    for (const auto& c : chains) {
        total += c.distance_m;
        ++r.histogram_km[static_cast<std::int64_t>(std::floor(c.distance_m / 1000.0))];
    }
    r.average_m = total / static_cast<double>(chains.size());
    return r;
}

std::vector<std::size_t> anonymity_set_sizes(const sim::EventLog& log) {
    struct Period {
        std::set<EntityId> inside;
        std::set<EntityId> members;
        std::size_t decoys = 0;
    };
    std::map<std::int32_t, Period> open;
    std::vector<std::size_t> out;
    for (const auto& e : log.events()) {
        if (e.zone < 0) continue;
        switch (e.kind) {
            case sim::EventKind::ZoneEnter: {
                auto& p = open[e.zone];
                p.inside.insert(e.entity);
                p.members.insert(e.entity);
                break;
            }
            case sim::EventKind::DecoyPlanned:
                if (auto it = open.find(e.zone); it != open.end()) ++it->second.decoys;
                break;
            case sim::EventKind::ZoneExit: {
                auto it = open.find(e.zone);
                if (it == open.end()) break;
                it->second.inside.erase(e.entity);
                if (it->second.inside.empty()) {
                    out.push_back(it->second.members.size() + it->second.decoys);
                    open.erase(it);
                }
                break;
            }
            default:
                break;
        }
    }
    for (const auto& [z, p] : open) out.push_back(p.members.size() + p.decoys);
    return out;
}

std::vector<std::pair<std::size_t, double>> empirical_cdf(std::vector<std::size_t> samples) {
    std::vector<std::pair<std::size_t, double>> out;
    if (samples.empty()) return out;
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i + 1 < samples.size() && samples[i + 1] == samples[i]) continue;
        out.emplace_back(samples[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

LinkabilityReport linkability(const adversary::AttackResult& attack, const sim::EventLog& log) {
    LinkabilityReport r;
    r.success_rate = success_rate(attack.sets);
    std::map<std::uint32_t, std::vector<adversary::LinkCandidateSet>> by_zone;
    std::map<std::int64_t, std::vector<adversary::LinkCandidateSet>> by_hour;
    for (const auto& s : attack.sets) {
        if (s.truth) ++r.transitions;
        by_zone[s.zone].push_back(s);
        by_hour[static_cast<std::int64_t>(std::floor(s.time / 3600.0))].push_back(s);
    }
    for (const auto& [z, v] : by_zone) r.per_zone[z] = success_rate(v);
    for (const auto& [h, v] : by_hour) r.per_hour[h] = success_rate(v);
    for (const auto& c : attack.chains) ++r.linked_sets[std::min<std::size_t>(c.ids.size(), 4) - 2];
    r.distance = tracked_distance(attack.chains);
    r.anonymity_sets = anonymity_set_sizes(log);
    return r;
}

EntityClass classify(EntityId id) noexcept {
    if (id == sim::kPcaId) return EntityClass::Pca;
    if (id.value >= sim::kRsuIdBase) return EntityClass::Rsu;
    return EntityClass::Vehicle;
}

std::string_view to_string(EntityClass c) noexcept {
    switch (c) {
        case EntityClass::Vehicle: return "vehicle";
        case EntityClass::Rsu: return "rsu";
        case EntityClass::Pca: return "pca";
    }
    return "unknown";
}

double event_ms(const sim::Event& e, const CostModel& costs) {
    const bool vehicle = classify(e.entity) == EntityClass::Vehicle;
    const double sign = vehicle ? costs.vehicle_sign_ms : costs.rsu_sign_ms;
    const double verify = vehicle ? costs.vehicle_verify_ms : costs.rsu_verify_ms;
    return e.signs * sign + e.verifies * verify + e.checks * costs.check_ms;
}

OverheadReport overhead(const sim::EventLog& log, const CostModel& costs) {
    OverheadReport r;
    std::map<EntityId, EntityOverhead> ent;
    std::map<EntityId, std::map<std::int64_t, std::pair<double, double>>> buckets;
    for (const auto& e : log.events()) {
        const auto sec = static_cast<std::int64_t>(std::floor(e.time + 1e-9));
        const double ms = event_ms(e, costs);
        auto& o = ent[e.entity];
        o.id = e.entity;
        o.cls = classify(e.entity);
        o.bytes += e.bytes;
        o.ms += ms;
        auto& b = buckets[e.entity][sec];
        b.first += e.bytes;
        b.second += ms;
        if (e.bytes) r.bytes_by_kind[std::string(sim::to_string(e.kind))] += e.bytes;
    }
    for (auto& [id, o] : ent) {
        const auto& bk = buckets[id];
        o.active_seconds = bk.size();
        o.bytes_per_s = o.bytes / static_cast<double>(o.active_seconds);
        o.ms_per_s = o.ms / static_cast<double>(o.active_seconds);
        auto& c = r.classes[o.cls];
        ++c.entities;
        c.bytes_per_s += o.bytes_per_s;
        c.ms_per_s += o.ms_per_s;
        auto& series = r.series[o.cls];
        for (const auto& [sec, v] : bk) {
            auto& s = series[sec];
            s.bytes += v.first;
            s.ms += v.second;
            ++s.entities;
        }
        r.entities.push_back(o);
    }
    for (auto& [cls, c] : r.classes) {
        c.bytes_per_s /= static_cast<double>(c.entities);
        c.ms_per_s /= static_cast<double>(c.entities);
    }
    return r;
}

nlohmann::json to_json(const LinkabilityReport& r) {
    nlohmann::json j;
    j["success_rate"] = opt_json(r.success_rate);
    j["transitions"] = r.transitions;
    auto zones = nlohmann::json::object();
    for (const auto& [z, v] : r.per_zone) zones[std::to_string(z)] = opt_json(v);
    j["per_zone"] = zones;
    auto hours = nlohmann::json::object();
    for (const auto& [h, v] : r.per_hour) hours[std::to_string(h)] = opt_json(v);
    j["per_hour"] = hours;
    j["linked_sets"] = {{"two", r.linked_sets[0]}, {"three", r.linked_sets[1]}, {"four_plus", r.linked_sets[2]}};
    auto hist = nlohmann::json::object();
    for (const auto& [k, n] : r.distance.histogram_km) hist[std::to_string(k)] = n;
    j["tracked_distance"] = {{"average_m", opt_json(r.distance.average_m)}, {"histogram_km", hist}};
    auto cdf = nlohmann::json::array();
    for (const auto& [size, f] : empirical_cdf(r.anonymity_sets)) cdf.push_back({size, f});
    j["anonymity_set_cdf"] = cdf;
    return j;
}

nlohmann::json to_json(const OverheadReport& r) {
    nlohmann::json j;
    auto classes = nlohmann::json::object();
    for (const auto& [cls, c] : r.classes) {
        classes[std::string(to_string(cls))] = {
            {"entities", c.entities}, {"bytes_per_s", c.bytes_per_s}, {"ms_per_s", c.ms_per_s}};
    }
    j["classes"] = classes;
    auto kinds = nlohmann::json::object();
    for (const auto& [k, b] : r.bytes_by_kind) kinds[k] = b;
    j["bytes_by_kind"] = kinds;
    auto series = nlohmann::json::object();
    for (const auto& [cls, m] : r.series) {
        auto rows = nlohmann::json::array();
        for (const auto& [sec, s] : m) rows.push_back({sec, s.bytes, s.ms, s.entities});
        series[std::string(to_string(cls))] = rows;
    }
    j["series"] = series;
    return j;
}

std::string linkability_csv(const LinkabilityReport& r) {
    std::ostringstream os;
    os << "scope,key,success_rate\n";
    os << "aggregate,," << opt_num(r.success_rate) << '\n';
    for (const auto& [z, v] : r.per_zone) os << "zone," << z << ',' << opt_num(v) << '\n';
    for (const auto& [h, v] : r.per_hour) os << "hour," << h << ',' << opt_num(v) << '\n';
    os << "\nmetric,key,value\n";
    os << "transitions,," << r.transitions << '\n';
    os << "linked_sets,2," << r.linked_sets[0] << '\n';
    os << "linked_sets,3," << r.linked_sets[1] << '\n';
    os << "linked_sets,4+," << r.linked_sets[2] << '\n';
    os << "tracked_distance_avg_m,," << opt_num(r.distance.average_m) << '\n';
    for (const auto& [k, n] : r.distance.histogram_km) os << "tracked_distance_km," << k << ',' << n << '\n';
    for (const auto& [size, f] : empirical_cdf(r.anonymity_sets)) os << "anonymity_cdf," << size << ',' << num(f) << '\n';
    return os.str();
}

std::string overhead_csv(const OverheadReport& r) {
    std::ostringstream os;
    os << "class,entities,bytes_per_s,ms_per_s\n";
    for (const auto& [cls, c] : r.classes) {
        os << to_string(cls) << ',' << c.entities << ',' << num(c.bytes_per_s) << ',' << num(c.ms_per_s) << '\n';
    }
    os << "\nclass,second,bytes,ms,entities\n";
    for (const auto& [cls, m] : r.series) {
        for (const auto& [sec, s] : m) {
            os << to_string(cls) << ',' << sec << ',' << num(s.bytes) << ',' << num(s.ms) << ',' << s.entities << '\n';
        }
    }
    return os.str();
}

}  // namespace cmix::metrics
