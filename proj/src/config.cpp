#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cmix/sim.hpp"

namespace cmix::sim {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::ConfigError, msg); }

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) config_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(std::string("field '") + key + "' has the wrong type");
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) config_error(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!known.contains(k)) config_error("unknown field '" + k + "' in " + where);
    }
}

std::int64_t to_ds(double seconds, const char* name) {
    const double ds = seconds * 10.0;
    const auto r = std::llround(ds);
    if (!(seconds > 0.0) || std::abs(ds - static_cast<double>(r)) > 1e-6) {
        config_error(std::string(name) + " must be a positive multiple of 0.1 s");
    }
    return r;
}

road::RoadGraph parse_graph(const json& j, const std::filesystem::path& base) {
    if (j.contains("graph_file")) {
        const auto path = base / j.at("graph_file").get<std::string>();
        json g;
        try {
            g = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            config_error("graph file " + path.string() + ": " + e.what());
        }
        return road::RoadGraph::from_json(g);
    }
    if (!j.contains("graph")) config_error("scenario needs 'graph' or 'graph_file'");
    const auto& g = j.at("graph");
    if (g.contains("grid")) {
        const auto& grid = g.at("grid");
        reject_unknown(grid, {"rows", "cols", "spacing_m", "speed_limit_mps"}, "graph.grid");
        return road::make_grid(field<int>(grid, "rows", 4), field<int>(grid, "cols", 4),
                               field<double>(grid, "spacing_m", 500.0), field<double>(grid, "speed_limit_mps", 13.89));
    }
    return road::RoadGraph::from_json(g);
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    static const std::set<std::string> known{
        "name",           "description",      "graph",           "graph_file",          "zones",
        "eavesdroppers",  "trips",            "gamma_v_s",       "gamma_mz_s",          "relay_fraction",
        "non_coop_fraction", "hbc_rsu_fraction", "filter_bandwidth_Bps", "filter_tx_interval_s",
        "sparse_threshold", "rsu_chaff",      "rng_seed",        "duration_s",          "v_min_mps",
        "allow_uturn",    "filter_capacity",  "filter_size_model", "filter_size_fpr",   "filter_functional_fpr",
        "chaff_pool_per_rsu", "v2v_range_m",  "pseudonyms_per_vehicle", "decoy_route_m"};
    reject_unknown(j, known, "scenario");

    ScenarioConfig c;
    c.graph = parse_graph(j, base_dir);

    try {
        if (!j.contains("zones") || !j.at("zones").is_array()) config_error("scenario needs a 'zones' array");
        for (const auto& jz : j.at("zones")) {
            reject_unknown(jz, {"junction", "x", "y", "radius_m", "rsu_range_m"}, "zone");
            ZoneSpec z;
            if (jz.contains("junction")) {
                const auto idx = c.graph.junction_index(jz.at("junction").get<std::int64_t>());
                if (!idx) config_error("zone refers to an unknown junction");
                z.center = c.graph.junctions()[*idx].pos;
            } else {
                z.center = {field<double>(jz, "x", 0.0), field<double>(jz, "y", 0.0)};
            }
            z.radius_m = field<double>(jz, "radius_m", z.radius_m);
            z.rsu_range_m = field<double>(jz, "rsu_range_m", z.rsu_range_m);
            c.zones.push_back(z);
        }

        if (j.contains("eavesdroppers")) {
            for (const auto& je : j.at("eavesdroppers")) {
                reject_unknown(je, {"zone", "x", "y", "range_m"}, "eavesdropper");
                EavesdropperSpec e;
                if (je.contains("zone")) {
                    const auto zi = je.at("zone").get<std::size_t>();
                    if (zi >= c.zones.size()) config_error("eavesdropper refers to an unknown zone");
                    e.pos = c.zones[zi].center;
                } else {
                    e.pos = {field<double>(je, "x", 0.0), field<double>(je, "y", 0.0)};
                }
                e.range_m = field<double>(je, "range_m", e.range_m);
                c.eavesdroppers.push_back(e);
            }
        } else {
            for (const auto& z : c.zones) c.eavesdroppers.push_back({z.center, 250.0});
        }

        if (!j.contains("trips")) config_error("scenario needs 'trips'");
        const auto& jt = j.at("trips");
        reject_unknown(jt, {"synthesis", "trace_csv", "explicit"}, "trips");
        if (jt.size() != 1) config_error("'trips' needs exactly one of synthesis, trace_csv, explicit");
        if (jt.contains("synthesis")) {
            const auto& js = jt.at("synthesis");
            reject_unknown(js, {"n_vehicles", "arrival_rate_per_s", "seed"}, "trips.synthesis");
            c.synthesis = SynthesisSpec{field<std::size_t>(js, "n_vehicles", 0),
                                        field<double>(js, "arrival_rate_per_s", 0.5),
                                        field<std::uint64_t>(js, "seed", 0)};
        } else if (jt.contains("trace_csv")) {
            c.trace_csv = read_file(base_dir / jt.at("trace_csv").get<std::string>());
        } else {
            for (const auto& je : jt.at("explicit")) {
                reject_unknown(je, {"vehicle", "departure_s", "route", "speed_mps", "length_m"}, "explicit trip");
                ExplicitTrip t;
                t.vehicle = je.at("vehicle").get<std::uint32_t>();
                t.departure_s = field<double>(je, "departure_s", 0.0);
                t.route = je.at("route").get<std::vector<std::int64_t>>();
                t.speed_mps = field<double>(je, "speed_mps", 0.0);
                t.length_m = field<double>(je, "length_m", 4.5);
                c.explicit_trips.push_back(std::move(t));
            }
        }
    } catch (const json::exception& e) {
        config_error(std::string("scenario: ") + e.what());
    }

    c.gamma_v_s = field(j, "gamma_v_s", c.gamma_v_s);
    c.gamma_mz_s = field(j, "gamma_mz_s", c.gamma_mz_s);
    c.relay_fraction = field(j, "relay_fraction", c.relay_fraction);
    c.non_coop_fraction = field(j, "non_coop_fraction", c.non_coop_fraction);
    c.hbc_rsu_fraction = field(j, "hbc_rsu_fraction", c.hbc_rsu_fraction);
    c.filter_bandwidth_Bps = field(j, "filter_bandwidth_Bps", c.filter_bandwidth_Bps);
    c.filter_tx_interval_s = field(j, "filter_tx_interval_s", c.filter_tx_interval_s);
    c.sparse_threshold = field(j, "sparse_threshold", c.sparse_threshold);
    c.rng_seed = field(j, "rng_seed", c.rng_seed);
    c.duration_s = field(j, "duration_s", c.duration_s);
    c.v_min_mps = field(j, "v_min_mps", c.v_min_mps);
    c.allow_uturn = field(j, "allow_uturn", c.allow_uturn);
    c.filter_capacity = field(j, "filter_capacity", c.filter_capacity);
    c.filter_size_fpr = field(j, "filter_size_fpr", c.filter_size_fpr);
    c.filter_functional_fpr = field(j, "filter_functional_fpr", c.filter_functional_fpr);
    c.chaff_pool_per_rsu = field(j, "chaff_pool_per_rsu", c.chaff_pool_per_rsu);
    c.v2v_range_m = field(j, "v2v_range_m", c.v2v_range_m);
    c.pseudonyms_per_vehicle = field(j, "pseudonyms_per_vehicle", c.pseudonyms_per_vehicle);
    c.decoy_route_m = field(j, "decoy_route_m", c.decoy_route_m);

    const auto mode = field<std::string>(j, "rsu_chaff", "auto");
    if (mode == "auto") {
        c.rsu_chaff = RsuChaffMode::Auto;
    } else if (mode == "on") {
        c.rsu_chaff = RsuChaffMode::On;
    } else if (mode == "off") {
        c.rsu_chaff = RsuChaffMode::Off;
    } else {
        config_error("rsu_chaff must be auto, on or off");
    }
    const auto model = field<std::string>(j, "filter_size_model", "paper");
    if (model == "paper") {
        c.filter_size_model = filter::SizeModel::PaperReported;
    } else if (model == "deletable") {
        c.filter_size_model = filter::SizeModel::Deletable;
    } else {
        config_error("filter_size_model must be paper or deletable");
    }

    c.validate();
    return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        config_error(file.string() + ": " + e.what());
    }
    return from_json(j, file.parent_path());
}

void ScenarioConfig::validate() const {
    auto unit = [](double f, const char* name) {
        if (!(f >= 0.0 && f <= 1.0)) config_error(std::string(name) + " must lie in [0, 1]");
    };
    unit(relay_fraction, "relay_fraction");
    unit(non_coop_fraction, "non_coop_fraction");
    unit(hbc_rsu_fraction, "hbc_rsu_fraction");
    to_ds(gamma_v_s, "gamma_v_s");
    to_ds(gamma_mz_s, "gamma_mz_s");
    to_ds(filter_tx_interval_s, "filter_tx_interval_s");
    if (!(filter_bandwidth_Bps > 0.0)) config_error("filter_bandwidth_Bps must be positive");
    if (!(duration_s >= 0.0)) config_error("duration_s must be non-negative");
    if (!(v_min_mps > 0.0)) config_error("v_min_mps must be positive");
    if (!(v2v_range_m > 0.0)) config_error("v2v_range_m must be positive");
    if (zones.empty()) config_error("scenario needs at least one zone");
    for (const auto& z : zones) {
        if (!(z.radius_m > 0.0) || !(z.rsu_range_m >= z.radius_m)) {
            config_error("zone radius must be positive and within the RSU range");
        }
    }
    for (const auto& e : eavesdroppers) {
        if (!(e.range_m > 0.0)) config_error("eavesdropper range must be positive");
    }
    if (chaff_pool_per_rsu > filter_capacity) config_error("chaff_pool_per_rsu exceeds filter_capacity");
    if (pseudonyms_per_vehicle < 1) config_error("pseudonyms_per_vehicle must be >= 1");
    const int sources = (synthesis ? 1 : 0) + (trace_csv ? 1 : 0) + (explicit_trips.empty() ? 0 : 1);
    if (sources != 1) config_error("exactly one trip source is required");
    if (synthesis && (synthesis->n_vehicles < 1 || !(synthesis->arrival_rate_per_s > 0.0))) {
        config_error("synthesis needs n_vehicles >= 1 and a positive arrival rate");
    }
    (void)filter_wire_bytes();
}

bool ScenarioConfig::rsu_chaff_enabled() const noexcept {
    switch (rsu_chaff) {
        case RsuChaffMode::On:
            return true;
        case RsuChaffMode::Off:
            return false;
        case RsuChaffMode::Auto:
            break;
    }
    return relay_fraction > 0.0;
}

std::int64_t ScenarioConfig::tick_ds() const {
    const auto v = to_ds(gamma_v_s, "gamma_v_s");
    const auto m = to_ds(gamma_mz_s, "gamma_mz_s");
    const auto f = to_ds(filter_tx_interval_s, "filter_tx_interval_s");
    return std::gcd(std::gcd(v, m), f);
}

std::uint64_t ScenarioConfig::filter_wire_bytes() const {
    try {
        return filter::size_filter(filter_capacity, filter_size_fpr, filter_size_model).size_bytes;
    } catch (const std::invalid_argument& e) {
        config_error(std::string("filter sizing: ") + e.what());
    }
}

}  // namespace cmix::sim
