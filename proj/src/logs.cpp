#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "cmix/sim.hpp"

namespace cmix::sim {

namespace {

using nlohmann::json;

void put_number(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

double parse_number(std::string_view s, std::size_t line) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw Error(Errc::ParseError, "bad number '" + std::string(s) + "' at line " + std::to_string(line));
    }
    return v;
}

constexpr std::string_view kObservationHeader = "time,pseudonym_id,x,y,speed,heading,length,eavesdropper_id";

}  // namespace

std::string_view to_string(EventKind k) noexcept {
    switch (k) {
        case EventKind::Beacon: return "beacon";
        case EventKind::Advert: return "advert";
        case EventKind::JoinRequest: return "join_request";
        case EventKind::JoinResponse: return "join_response";
        case EventKind::PeerLengthUpdate: return "peer_length_update";
        case EventKind::PseudonymChange: return "pseudonym_change";
        case EventKind::ZoneEnter: return "zone_enter";
        case EventKind::ZoneExit: return "zone_exit";
        case EventKind::DecoyPlanned: return "decoy_planned";
        case EventKind::DecoyStart: return "decoy_start";
        case EventKind::DecoyEnd: return "decoy_end";
        case EventKind::ChaffRetired: return "chaff_retired";
        case EventKind::FilterChunk: return "filter_chunk";
        case EventKind::FilterDelivered: return "filter_delivered";
        case EventKind::FilterQuery: return "filter_query";
        case EventKind::FilterResponse: return "filter_response";
        case EventKind::FilterRejected: return "filter_rejected";
        case EventKind::NoResponder: return "no_responder";
        case EventKind::Misbehavior: return "misbehavior";
        case EventKind::PoolEmpty: return "pool_empty";
        case EventKind::SparseSkipped: return "sparse_skipped";
        case EventKind::DegenerateExit: return "degenerate_exit";
        case EventKind::Reception: return "reception";
    }
    return "unknown";
}

void EventLog::finalize() {
    std::stable_sort(events_.begin(), events_.end(), [](const Event& x, const Event& y) {
        if (x.time != y.time) return x.time < y.time;
        return x.entity < y.entity;
    });
}

void EventLog::write_jsonl(std::ostream& out) const {
    const CredentialId none{};
    for (const auto& e : events_) {
        json j;
        j["t"] = e.time;
        j["kind"] = to_string(e.kind);
        j["entity"] = e.entity.value;
        if (e.zone >= 0) j["zone"] = e.zone;
        if (e.a != none) j["a"] = e.a.hex();
        if (e.b != none) j["b"] = e.b.hex();
        if (e.kind == EventKind::Beacon || e.kind == EventKind::ZoneEnter || e.kind == EventKind::ZoneExit) {
            j["x"] = e.pos.x;
            j["y"] = e.pos.y;
        }
        if (e.value != 0.0) j["value"] = e.value;
        if (e.bytes) j["bytes"] = e.bytes;
        if (e.signs) j["signs"] = e.signs;
        if (e.verifies) j["verifies"] = e.verifies;
        if (e.checks) j["checks"] = e.checks;
        if (e.count) j["count"] = e.count;
        if (e.flags) j["flags"] = e.flags;
        if (e.peer.value) j["peer"] = e.peer.value;
        out << j.dump() << '\n';
    }
}

std::string EventLog::to_jsonl() const {
    std::ostringstream os;
    write_jsonl(os);
    return os.str();
}

void ObservationLog::write_csv(std::ostream& out) const {
    std::string line;
    out << kObservationHeader << '\n';
    for (const auto& r : rows) {
        const auto& b = r.beacon;
        line.clear();
        put_number(line, b.timestamp);
        line += ',';
        line += b.pseudonym_id.hex();
        for (double v : {b.pos.x, b.pos.y, b.speed, b.heading}) {
            line += ',';
            put_number(line, v);
        }
        line += ',';
        line += std::to_string(b.length.decimeters / 10) + '.' + std::to_string(b.length.decimeters % 10);
        line += ',';
        line += std::to_string(r.eavesdropper);
        line += '\n';
        out << line;
    }
}

std::string ObservationLog::to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
}

ObservationLog ObservationLog::read_csv(std::istream& in) {
    ObservationLog log;
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::ParseError, "empty observation log");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kObservationHeader) throw Error(Errc::ParseError, "unexpected observation header: " + line);
    std::size_t lineno = 1;
    std::vector<std::string_view> cols;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        cols.clear();
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            cols.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (cols.size() != 8) throw Error(Errc::ParseError, "expected 8 columns at line " + std::to_string(lineno));
        Observation o;
        o.beacon.timestamp = parse_number(cols[0], lineno);
        try {
            o.beacon.pseudonym_id = CredentialId::from_hex(cols[1]);
        } catch (const Error&) {
            throw Error(Errc::ParseError, "bad pseudonym id at line " + std::to_string(lineno));
        }
        o.beacon.pos = {parse_number(cols[2], lineno), parse_number(cols[3], lineno)};
        o.beacon.speed = parse_number(cols[4], lineno);
        o.beacon.heading = parse_number(cols[5], lineno);
        const double len = parse_number(cols[6], lineno);
        if (!(len > 0.0) || len > 6553.5) throw Error(Errc::ParseError, "bad length at line " + std::to_string(lineno));
        o.beacon.length.decimeters = static_cast<std::uint16_t>(std::lround(len * 10.0));
        const double eid = parse_number(cols[7], lineno);
        if (eid < 0 || eid != std::floor(eid)) {
            throw Error(Errc::ParseError, "bad eavesdropper id at line " + std::to_string(lineno));
        }
        o.eavesdropper = static_cast<std::uint32_t>(eid);
        if (!log.rows.empty() && o.beacon.timestamp < log.rows.back().beacon.timestamp) {
            throw Error(Errc::ParseError, "observations out of time order at line " + std::to_string(lineno));
        }
        log.rows.push_back(o);
    }
    return log;
}

void GroundTruth::write_jsonl(std::ostream& out) const {
    for (const auto& c : changes) {
        out << json{{"type", "change"}, {"time", c.time},         {"vehicle", c.vehicle.value},
                    {"old", c.old_id.hex()}, {"new", c.new_id.hex()}, {"zone", c.zone}}
                   .dump()
            << '\n';
    }
    std::vector<std::pair<CredentialId, ChaffOrigin>> chaff(emitted_chaff.begin(), emitted_chaff.end());
    std::sort(chaff.begin(), chaff.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [id, o] : chaff) {
        out << json{{"type", "chaff"}, {"id", id.hex()}, {"zone", o.zone}, {"rsu_stream", o.rsu_stream}}.dump()
            << '\n';
    }
    for (std::size_t z = 0; z < provisioned_chaff.size(); ++z) {
        json ids = json::array();
        for (const auto& id : provisioned_chaff[z]) ids.push_back(id.hex());
        out << json{{"type", "provisioned"}, {"zone", z}, {"ids", ids}}.dump() << '\n';
    }
    out << json{{"type", "hbc"}, {"zones", hbc_zones}}.dump() << '\n';
}

GroundTruth GroundTruth::read_jsonl(std::istream& in) {
    GroundTruth t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "change") {
                t.changes.push_back({j.at("time").get<double>(), EntityId{j.at("vehicle").get<std::uint32_t>()},
                                     CredentialId::from_hex(j.at("old").get<std::string>()),
                                     CredentialId::from_hex(j.at("new").get<std::string>()),
                                     j.at("zone").get<std::uint32_t>()});
            } else if (type == "chaff") {
                t.emitted_chaff[CredentialId::from_hex(j.at("id").get<std::string>())] =
                    ChaffOrigin{j.at("zone").get<std::uint32_t>(), j.at("rsu_stream").get<bool>()};
            } else if (type == "provisioned") {
                const auto z = j.at("zone").get<std::size_t>();
                if (t.provisioned_chaff.size() <= z) t.provisioned_chaff.resize(z + 1);
                for (const auto& id : j.at("ids")) t.provisioned_chaff[z].push_back(CredentialId::from_hex(id.get<std::string>()));
            } else if (type == "hbc") {
                t.hbc_zones = j.at("zones").get<std::vector<std::uint32_t>>();
            } else {
                throw Error(Errc::ParseError, "unknown record type " + type);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::ParseError, "ground truth line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return t;
}

}  // namespace cmix::sim
