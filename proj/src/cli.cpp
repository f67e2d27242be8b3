#include "cmix/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

namespace cmix::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::ConfigError, msg); }

std::string num(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string read_input(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) config_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json_file(const fs::path& p) {
    try {
        return json::parse(read_input(p));
    } catch (const json::parse_error& e) {
        throw Error(Errc::ParseError, p.string() + ": " + e.what());
    }
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + p.string());
    out << content;
    if (!out.flush()) throw Error(Errc::IoError, "write failed for " + p.string());
}

void make_dirs(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error(Errc::IoError, "cannot create " + p.string() + ": " + ec.message());
}

/// Refuses to reuse an existing directory unless forced.
void prepare_output(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !force) {
        throw Error(Errc::IoError, dir.string() + " already exists (use --force to overwrite)");
    }
    make_dirs(dir);
}

double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty()) config_error("invalid number '" + std::string(s) + "' in " + what);
    return v;
}

std::uint64_t parse_uint(std::string_view s, const std::string& what) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty()) config_error("invalid integer '" + std::string(s) + "' in " + what);
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

int exit_code(Errc c) {
    switch (c) {
        case Errc::IoError:
            return kExitIo;
        case Errc::ConfigError:
        case Errc::ParseError:
        case Errc::DeserializeError:
        case Errc::TraceOrderError:
        case Errc::SynthesisFailed:
        case Errc::OffNetwork:
            return kExitConfig;
        default:
            return 1;
    }
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
    std::string scenario;
    std::string seeds = "1";
    std::vector<std::string> sweeps;
    std::string out;
    bool force = false;
    unsigned workers = 1;
    std::string format = "csv";
    bool emit_events = false;
};

struct Point {
    std::vector<std::pair<std::string, double>> settings;
};

std::vector<Point> expand(const std::vector<SweepAxis>& axes) {
    std::vector<Point> points(1);
    for (const auto& axis : axes) {
        std::vector<Point> next;
        for (const auto& p : points) {
            for (double v : axis.values) {
                auto q = p;
                q.settings.emplace_back(axis.key, v);
                next.push_back(std::move(q));
            }
        }
        points = std::move(next);
    }
    return points;
}

/// Scalar summaries collected from every run for the cross-seed table.
using RunMetrics = std::map<std::string, std::optional<double>>;

RunMetrics summarize(const Evaluation& e) {
    RunMetrics m;
    m["success_rate"] = e.linkability.success_rate;
    m["transitions"] = static_cast<double>(e.linkability.transitions);
    m["linked_sets_2"] = static_cast<double>(e.linkability.linked_sets[0]);
    m["linked_sets_3"] = static_cast<double>(e.linkability.linked_sets[1]);
    m["linked_sets_4plus"] = static_cast<double>(e.linkability.linked_sets[2]);
    m["tracked_distance_avg_m"] = e.linkability.distance.average_m;
    const auto& sizes = e.linkability.anonymity_sets;
    if (!sizes.empty()) {
        double total = 0.0;
        for (auto s : sizes) total += static_cast<double>(s);
        m["anonymity_set_mean"] = total / static_cast<double>(sizes.size());
    } else {
        m["anonymity_set_mean"] = std::nullopt;
    }
    for (auto cls : {metrics::EntityClass::Vehicle, metrics::EntityClass::Rsu, metrics::EntityClass::Pca}) {
        const std::string name(metrics::to_string(cls));
        auto it = e.overhead.classes.find(cls);
        m[name + "_bytes_per_s"] = it == e.overhead.classes.end() ? std::nullopt : std::optional(it->second.bytes_per_s);
        m[name + "_ms_per_s"] = it == e.overhead.classes.end() ? std::nullopt : std::optional(it->second.ms_per_s);
    }
    return m;
}

void write_run(const fs::path& dir, const sim::ScenarioConfig& config, const Evaluation& e, const RunOptions& opt) {
    make_dirs(dir);
    if (opt.format == "json") {
        write_file(dir / "linkability.json", metrics::to_json(e.linkability).dump(2) + "\n");
        write_file(dir / "overhead.json", metrics::to_json(e.overhead).dump(2) + "\n");
    } else {
        write_file(dir / "linkability.csv", metrics::linkability_csv(e.linkability));
        write_file(dir / "overhead.csv", metrics::overhead_csv(e.overhead));
    }
    write_file(dir / "candidates.jsonl", adversary::candidates_jsonl(e.attack.sets));
    write_file(dir / "observations.csv", e.run.observations.to_csv());
    std::ostringstream truth;
    e.run.truth.write_jsonl(truth);
    write_file(dir / "ground_truth.jsonl", truth.str());
    write_file(dir / "graph.json", config.graph.to_json().dump() + "\n");
    write_file(dir / "zones.json", zones_json(config).dump(2) + "\n");
    if (opt.emit_events) write_file(dir / "events.jsonl", e.run.events.to_jsonl());
}

std::string point_label(std::size_t index) {
    std::string s = std::to_string(index);
    return "point_" + std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
}

int cmd_run(const RunOptions& opt, std::ostream& out) {
    if (opt.format != "csv" && opt.format != "json") config_error("--format must be csv or json");
    const fs::path scenario_path(opt.scenario);
    const json base = parse_json_file(scenario_path);
    if (!base.is_object()) config_error("scenario must be a JSON object");
    const auto seeds = parse_seeds(opt.seeds);
    std::vector<SweepAxis> axes;
    for (const auto& s : opt.sweeps) axes.push_back(parse_sweep(s));
    const auto points = expand(axes);

    // Validate every configuration before touching the output directory.
    struct Job {
        std::size_t point;
        std::uint64_t seed;
        sim::ScenarioConfig config;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < points.size(); ++p) {
        for (auto seed : seeds) {
            json j = base;
            for (const auto& [k, v] : points[p].settings) j[k] = v;
            j["rng_seed"] = seed;
            jobs.push_back({p, seed, sim::ScenarioConfig::from_json(j, scenario_path.parent_path())});
        }
    }

    const fs::path root(opt.out);
    if (opt.force) {
        std::error_code ec;
        fs::remove_all(root / "runs", ec);
    }
    prepare_output(root, opt.force);

    std::vector<RunMetrics> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const auto& job = jobs[i];
                const auto e = evaluate(job.config);
                write_run(root / "runs" / point_label(job.point) / ("seed_" + std::to_string(job.seed)), job.config, e,
                          opt);
                results[i] = summarize(e);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned n_workers = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(jobs.size())));
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    // Summary across seeds: mean and sample standard deviation per metric.
    std::ostringstream csv;
    csv << "point";
    for (const auto& axis : axes) csv << ',' << axis.key;
    csv << ",metric,n,mean,std\n";
    for (std::size_t p = 0; p < points.size(); ++p) {
        std::map<std::string, std::vector<double>> samples;
        std::vector<std::string> names;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].point != p) continue;
            for (const auto& [name, v] : results[i]) {
                if (!samples.contains(name)) names.push_back(name);
                auto& s = samples[name];
                if (v) s.push_back(*v);
            }
        }
        for (const auto& name : names) {
            const auto& s = samples[name];
            csv << point_label(p);
            for (const auto& [k, v] : points[p].settings) csv << ',' << num(v);
            csv << ',' << name << ',' << s.size() << ',';
            if (!s.empty()) {
                double mean = 0.0;
                for (double x : s) mean += x;
                mean /= static_cast<double>(s.size());
                csv << num(mean);
                csv << ',';
                if (s.size() > 1) {
                    double ss = 0.0;
                    for (double x : s) ss += (x - mean) * (x - mean);
                    csv << num(std::sqrt(ss / static_cast<double>(s.size() - 1)));
                }
            } else {
                csv << ',';
            }
            csv << '\n';
        }
    }
    write_file(root / "summary.csv", csv.str());

    json manifest;
    manifest["scenario"] = scenario_path.filename().string();
    manifest["seeds"] = seeds;
    auto jaxes = json::array();
    for (const auto& a : axes) jaxes.push_back({{"key", a.key}, {"values", a.values}});
    manifest["sweep"] = jaxes;
    auto jpoints = json::array();
    for (std::size_t p = 0; p < points.size(); ++p) {
        json settings = json::object();
        for (const auto& [k, v] : points[p].settings) settings[k] = v;
        jpoints.push_back({{"label", point_label(p)}, {"settings", settings}});
    }
    manifest["points"] = jpoints;
    manifest["format"] = opt.format;
    write_file(root / "manifest.json", manifest.dump(2) + "\n");

    out << jobs.size() << " runs over " << points.size() << " points written to " << root.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-grid

int cmd_gen_grid(const GridSpec& spec, const std::string& out_dir, bool force, std::ostream& out) {
    const auto junctions = central_junctions(spec);
    const auto scenario = grid_scenario(spec, "graph.json");
    const auto graph = road::make_grid(spec.rows, spec.cols, spec.spacing_m, 13.89);
    const auto config = sim::ScenarioConfig::from_json(
        [&] {
            json j = scenario;
            j.erase("graph_file");
            j["graph"] = graph.to_json();
            return j;
        }(),
        {});

    const fs::path root(out_dir);
    prepare_output(root, force);
    write_file(root / "graph.json", graph.to_json().dump(2) + "\n");
    write_file(root / "zones.json", zones_json(config).dump(2) + "\n");
    write_file(root / "scenario.json", scenario.dump(2) + "\n");
    out << graph.junctions().size() << " junctions, " << junctions.size() << " zones, " << config.eavesdroppers.size()
        << " eavesdroppers written to " << root.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// attack

struct AttackOptions {
    std::string obs;
    std::string graph;
    std::string zones;
    std::string truth;
    std::string out;
    std::string format = "csv";
    std::uint64_t seed = 1;
    bool force = false;
};

int cmd_attack(const AttackOptions& opt, std::ostream& out) {
    if (opt.format != "csv" && opt.format != "json") config_error("--format must be csv or json");
    const auto graph = road::RoadGraph::from_json(parse_json_file(opt.graph));
    const auto zones = load_zones(parse_json_file(opt.zones), graph);
    std::istringstream obs_text(read_input(opt.obs));
    const auto obs = sim::ObservationLog::read_csv(obs_text);
    std::optional<sim::GroundTruth> truth;
    if (!opt.truth.empty()) {
        std::istringstream t(read_input(opt.truth));
        truth = sim::GroundTruth::read_jsonl(t);
    }

    adversary::AttackInput in;
    in.graph = &graph;
    in.zones = zones.zones;
    in.observations = obs.rows;
    in.truth = truth ? &*truth : nullptr;
    in.v_min = zones.v_min_mps;
    in.seed = opt.seed;
    const auto result = adversary::attack(in);
    const auto report = metrics::linkability(result, sim::EventLog{});
    const auto candidates = adversary::candidates_jsonl(result.sets);

    if (opt.out.empty()) {
        out << candidates;
        return kExitOk;
    }
    const fs::path root(opt.out);
    prepare_output(root, opt.force);
    write_file(root / "candidates.jsonl", candidates);
    if (opt.format == "json") {
        write_file(root / "linkability.json", metrics::to_json(report).dump(2) + "\n");
    } else {
        write_file(root / "linkability.csv", metrics::linkability_csv(report));
    }
    out << result.sets.size() << " candidate sets";
    if (truth) out << ", " << report.transitions << " transitions";
    out << " written to " << root.string() << '\n';
    return kExitOk;
}

}  // namespace

Evaluation evaluate(const sim::ScenarioConfig& config) {
    Evaluation e;
    e.run = sim::run(config);
    adversary::AttackInput in;
    in.graph = &config.graph;
    in.zones = e.run.zones;
    in.observations = e.run.observations.rows;
    in.truth = &e.run.truth;
    in.v_min = config.v_min_mps;
    in.seed = config.rng_seed;
    e.attack = adversary::attack(in);
    e.linkability = metrics::linkability(e.attack, e.run.events);
    e.overhead = metrics::overhead(e.run.events);
    return e;
}

std::vector<std::uint64_t> parse_seeds(std::string_view text) {
    std::vector<std::uint64_t> seeds;
    if (const auto dots = text.find(".."); dots != std::string_view::npos) {
        const auto lo = parse_uint(text.substr(0, dots), "--seeds");
        const auto hi = parse_uint(text.substr(dots + 2), "--seeds");
        if (hi < lo) config_error("--seeds range is empty");
        if (hi - lo >= 100000) config_error("--seeds range is too large");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    for (auto part : split(text, ',')) seeds.push_back(parse_uint(part, "--seeds"));
    return seeds;
}

SweepAxis parse_sweep(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos || eq == 0) config_error("--sweep expects key=v1,v2,...");
    SweepAxis axis;
    axis.key = std::string(text.substr(0, eq));
    if (axis.key == "rng_seed") config_error("use --seeds to vary rng_seed");
    for (auto part : split(text.substr(eq + 1), ',')) axis.values.push_back(parse_double(part, "--sweep " + axis.key));
    return axis;
}

json zones_json(const sim::ScenarioConfig& config) {
    json j;
    j["allow_uturn"] = config.allow_uturn;
    j["v_min_mps"] = config.v_min_mps;
    auto zones = json::array();
    for (const auto& z : config.zones) {
        zones.push_back({{"x", z.center.x}, {"y", z.center.y}, {"radius_m", z.radius_m}, {"rsu_range_m", z.rsu_range_m}});
    }
    j["zones"] = zones;
    return j;
}

ZoneFile load_zones(const json& j, const road::RoadGraph& graph) {
    ZoneFile f;
    try {
        const bool uturn = j.value("allow_uturn", false);
        f.v_min_mps = j.value("v_min_mps", road::kDefaultVMin);
        for (const auto& jz : j.at("zones")) {
            Vec2 center;
            if (jz.contains("junction")) {
                const auto idx = graph.junction_index(jz.at("junction").get<std::int64_t>());
                if (!idx) config_error("zone refers to an unknown junction");
                center = graph.junctions()[*idx].pos;
            } else {
                center = {jz.at("x").get<double>(), jz.at("y").get<double>()};
            }
            const double radius = jz.value("radius_m", 100.0);
            if (!(radius > 0.0)) config_error("zone radius must be positive");
            f.zones.push_back(road::MixZoneGeometry::build(graph, center, radius, uturn));
        }
    } catch (const json::exception& e) {
        config_error(std::string("zones file: ") + e.what());
    }
    if (!(f.v_min_mps > 0.0)) config_error("v_min_mps must be positive");
    return f;
}

std::vector<std::int64_t> central_junctions(const GridSpec& spec) {
    if (spec.rows < 2 || spec.cols < 2) config_error("grid needs rows >= 2 and cols >= 2");
    if (!(spec.spacing_m > 200.0)) config_error("spacing must exceed 200 m so that 100 m zones do not overlap");
    if (spec.zones < 1) config_error("at least one zone is required");
    struct Candidate {
        double dist2;
        std::int64_t id;
    };
    std::vector<Candidate> interior;
    const double cr = (spec.rows - 1) / 2.0;
    const double cc = (spec.cols - 1) / 2.0;
    for (int r = 1; r + 1 < spec.rows; ++r) {
        for (int c = 1; c + 1 < spec.cols; ++c) {
            interior.push_back({(r - cr) * (r - cr) + (c - cc) * (c - cc), static_cast<std::int64_t>(r) * spec.cols + c});
        }
    }
    if (spec.zones > interior.size()) {
        config_error(std::to_string(spec.zones) + " zones requested but the grid has " + std::to_string(interior.size()) +
                     " interior junctions");
    }
    std::sort(interior.begin(), interior.end(),
              [](const Candidate& a, const Candidate& b) { return std::tie(a.dist2, a.id) < std::tie(b.dist2, b.id); });
    std::vector<std::int64_t> ids;
    for (std::size_t i = 0; i < spec.zones; ++i) ids.push_back(interior[i].id);
    return ids;
}

json grid_scenario(const GridSpec& spec, const std::string& graph_file) {
    json j;
    j["name"] = "grid" + std::to_string(spec.rows) + "x" + std::to_string(spec.cols);
    j["graph_file"] = graph_file;
    auto zones = json::array();
    auto eaves = json::array();
    const auto ids = central_junctions(spec);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        zones.push_back({{"junction", ids[i]}, {"radius_m", 100.0}, {"rsu_range_m", 600.0}});
        eaves.push_back({{"zone", i}, {"range_m", 250.0}});
    }
    j["zones"] = zones;
    j["eavesdroppers"] = eaves;
    j["trips"] = {{"synthesis",
                   {{"n_vehicles", spec.vehicles},
                    {"arrival_rate_per_s", spec.arrival_rate_per_s},
                    {"seed", spec.synthesis_seed}}}};
    j["gamma_v_s"] = 0.5;
    j["filter_bandwidth_Bps"] = 50.0 * 1024.0;
    j["filter_tx_interval_s"] = 1.0;
    j["sparse_threshold"] = 2;
    j["relay_fraction"] = 0.0;
    j["rng_seed"] = 1;
    return j;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cooperative mix-zone simulator and linking adversary", "cmix"};
    app.require_subcommand(1);

    RunOptions run_opt;
    auto* run = app.add_subcommand("run", "Simulate a scenario for every seed and sweep point, then attack and report");
    run->add_option("--scenario", run_opt.scenario, "Scenario JSON file")->required();
    run->add_option("--seeds", run_opt.seeds, "Seed range a..b or list a,b,c");
    run->add_option("--sweep", run_opt.sweeps, "Sweep axis key=v1,v2,... (repeatable; grid product)");
    run->add_option("--out", run_opt.out, "Output directory")->required();
    run->add_flag("--force", run_opt.force, "Overwrite an existing output directory");
    run->add_option("--workers", run_opt.workers, "Parallel runs")->check(CLI::PositiveNumber);
    run->add_option("--format", run_opt.format, "Report format: csv or json");
    run->add_flag("--emit-events", run_opt.emit_events, "Also write the full event log of every run");

    GridSpec grid;
    std::string grid_out;
    bool grid_force = false;
    auto* gen = app.add_subcommand("gen-grid", "Write a grid road graph, zone placement and scenario");
    gen->add_option("--rows", grid.rows, "Junction rows")->required();
    gen->add_option("--cols", grid.cols, "Junction columns")->required();
    gen->add_option("--spacing", grid.spacing_m, "Junction spacing in meters");
    gen->add_option("--zones", grid.zones, "Number of mix-zones")->required();
    gen->add_option("--vehicles", grid.vehicles, "Synthesized vehicles");
    gen->add_option("--synthesis-seed", grid.synthesis_seed, "Trip synthesis seed");
    gen->add_option("--out", grid_out, "Output directory")->required();
    gen->add_flag("--force", grid_force, "Overwrite an existing output directory");

    AttackOptions atk;
    auto* attack = app.add_subcommand("attack", "Run the linking attack over an exported observation log");
    attack->add_option("--obs", atk.obs, "Observation CSV")->required();
    attack->add_option("--graph", atk.graph, "Road graph JSON")->required();
    attack->add_option("--zones", atk.zones, "Zones JSON")->required();
    attack->add_option("--truth", atk.truth, "Ground-truth JSONL for evaluation");
    attack->add_option("--seed", atk.seed, "Chain-following seed");
    attack->add_option("--out", atk.out, "Output directory (candidates go to stdout when omitted)");
    attack->add_option("--format", atk.format, "Report format: csv or json");
    attack->add_flag("--force", atk.force, "Overwrite an existing output directory");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(run_opt, out);
        if (gen->parsed()) return cmd_gen_grid(grid, grid_out, grid_force, out);
        return cmd_attack(atk, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace cmix::cli
