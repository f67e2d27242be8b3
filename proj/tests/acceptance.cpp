// Acceptance harness: prints one PASS/FAIL line per criterion.
//
// Exit status is non-zero when a criterion fails, except for criteria listed
// in kKnownUnattainable, whose failure is reported but expected.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "cmix/cli.hpp"
#include "cmix/metrics.hpp"
#include "scenarios.hpp"

using namespace cmix;
namespace fs = std::filesystem;

namespace {

// The paper's worked example prints (1 + 1/2 + 1/3)/5 as 0.36; the exact value is 0.3666...
const std::set<int> kKnownUnattainable{1};

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

/// Every run result produced by the harness, for the global observability audit.
std::vector<const sim::RunResult*> g_audit;
std::vector<std::unique_ptr<sim::RunResult>> g_runs;

const sim::RunResult& keep(sim::RunResult r) {
    g_runs.push_back(std::make_unique<sim::RunResult>(std::move(r)));
    g_audit.push_back(g_runs.back().get());
    return *g_runs.back();
}

sim::ScenarioConfig crossing(std::vector<sim::ExplicitTrip> trips) {
    sim::ScenarioConfig c;
    c.graph = testing::four_way();
    c.zones.push_back({{0, 0}, 100.0, 600.0});
    c.eavesdroppers.push_back({{0, 0}, 250.0});
    c.explicit_trips = std::move(trips);
    return c;
}

/// Success rate of one crossing scenario, with the run kept for the audit.
std::optional<double> crossing_rate(const sim::ScenarioConfig& c) {
    auto e = cli::evaluate(c);
    const auto rate = e.linkability.success_rate;
    keep(std::move(e.run));
    return rate;
}

// ---------------------------------------------------------------------------
// Grid scenario shared by the sweep criteria: 4x4 grid, 500 m spacing,
// 200 synthesized vehicles (synthesis seed 7), two central zones.

sim::ScenarioConfig grid_config(double relay, double non_coop, double hbc, std::uint64_t seed) {
    cli::GridSpec spec;  // defaults: 4x4, 500 m, 2 zones, 200 vehicles, seed 7
    auto j = cli::grid_scenario(spec, "graph.json");
    j.erase("graph_file");
    j["graph"] = road::make_grid(spec.rows, spec.cols, spec.spacing_m, 13.89).to_json();
    j["relay_fraction"] = relay;
    j["non_coop_fraction"] = non_coop;
    j["hbc_rsu_fraction"] = hbc;
    j["rng_seed"] = seed;
    return sim::ScenarioConfig::from_json(j);
}

constexpr std::uint64_t kGridSeeds = 10;

/// Mean success rate over rng_seed 1..10, memoized per setting.
double grid_mean(double relay, double non_coop, double hbc) {
    static std::map<std::tuple<double, double, double>, double> cache;
    const auto key = std::make_tuple(relay, non_coop, hbc);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= kGridSeeds; ++seed) {
        auto e = cli::evaluate(grid_config(relay, non_coop, hbc, seed));
        if (e.linkability.success_rate) {
            total += *e.linkability.success_rate;
            ++n;
        }
        keep(std::move(e.run));
    }
    const double mean = n ? total / static_cast<double>(n) : std::nan("");
    cache[key] = mean;
    return mean;
}

// ---------------------------------------------------------------------------

Outcome c1_worked_example() {
    using testing::id_of;
    std::vector<adversary::LinkCandidateSet> sets{
        {id_of(1), {id_of(11)}, id_of(11), 0.0, 0},
        {id_of(2), {id_of(12), id_of(13)}, id_of(12), 0.0, 0},
        {id_of(3), {id_of(14)}, id_of(13), 0.0, 0},
        {id_of(4), {id_of(13), id_of(14), id_of(15)}, id_of(14), 0.0, 0},
        {id_of(5), {}, id_of(15), 0.0, 0},
    };
    for (auto& s : sets) std::sort(s.candidates.begin(), s.candidates.end());
    const auto t0 = Clock::now();
    const auto rate = metrics::success_rate(sets);
    const double ms = seconds_since(t0) * 1e3;
    const bool exact = rate && std::abs(*rate - 0.36) <= 1e-12;
    return {exact && ms < 1.0, "success_rate=" + fmt(rate.value_or(-1), 17) + " target=0.36 tol=1e-12 runtime=" +
                                   fmt(ms, 3) + "ms (formula gives 11/30)"};
}

Outcome c2_filter_sizes() {
    struct Row {
        std::uint64_t n;
        double p;
        double kib;
    };
    const Row rows[] = {{500, 1e-25, 7.31},   {1000, 1e-25, 14.63},  {5000, 1e-25, 73.13}, {10000, 1e-25, 146.26},
                        {20000, 1e-25, 292.51}, {500, 1e-30, 8.78},  {1000, 1e-30, 17.55}, {5000, 1e-30, 87.75},
                        {10000, 1e-30, 175.51}, {20000, 1e-30, 351.02}};
    double worst = 0.0;
    for (const auto& r : rows) {
        const double kib = static_cast<double>(filter::paper_size_model(r.n, r.p)) / 1024.0;
        worst = std::max(worst, std::abs(kib - r.kib) / r.kib);
    }
    return {worst <= 0.005, "worst relative error " + fmt(worst * 100.0, 3) + "% over 10 rows (limit 0.5%)"};
}

Outcome c3_digest() {
    const auto digest = filter::digest_list_size(5000, filter::DigestAlgorithm::SHA256);
    const auto fsize = filter::paper_size_model(5000, 1e-25);
    const bool ok = digest == 160000 && std::abs(digest / 1024.0 - 156.25) < 1e-12 && digest > fsize;
    return {ok, "digest list " + std::to_string(digest) + " B (" + fmt(digest / 1024.0) + " KB) vs filter " +
                    std::to_string(fsize) + " B (" + fmt(fsize / 1024.0) + " KB)"};
}

Outcome c4_filter() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    std::size_t false_negatives = 0;
    for (int seq = 0; seq < 100000; ++seq) {
        auto f = filter::ChaffFilter::create(32, 1e-3);
        std::vector<CredentialId> ids;
        const auto n = 1 + rng.below(16);
        for (std::uint64_t i = 0; i < n; ++i) {
            ids.push_back(CredentialId::random(rng));
            f.insert(ids.back());
            for (const auto& x : ids) false_negatives += f.contains(x) ? 0 : 1;
        }
    }
    std::size_t restore_failures = 0;
    for (int seq = 0; seq < 2000; ++seq) {
        auto f = filter::ChaffFilter::create(128, 1e-4);
        std::vector<CredentialId> members;
        for (int i = 0; i < 80; ++i) {
            members.push_back(CredentialId::random(rng));
            f.insert(members.back());
        }
        const auto x = CredentialId::random(rng);
        const bool before = f.contains(x);
        f.insert(x);
        f.remove(x);
        bool restored = f.contains(x) == before;
        for (const auto& m : members) restored = restored && f.contains(m);
        restore_failures += restored ? 0 : 1;
    }
    auto big = filter::ChaffFilter::create(100000, 1e-3);
    Rng members(11);
    for (int i = 0; i < 100000; ++i) big.insert(CredentialId::random(members));
    Rng probes(12);
    int hits = 0;
    for (int i = 0; i < 100000; ++i) hits += big.contains(CredentialId::random(probes)) ? 1 : 0;
    const double fpr = hits / 100000.0;
    const double secs = seconds_since(t0);
    const bool ok = false_negatives == 0 && restore_failures == 0 && fpr <= 2e-3 && secs < 10.0;
    return {ok, "false negatives " + std::to_string(false_negatives) + " over 1e5 sequences, delete-restore failures " +
                    std::to_string(restore_failures) + ", FPR " + fmt(fpr) + " (limit 2e-3), runtime " +
                    fmt(secs, 3) + "s"};
}

Outcome c5_oracle() {
    const auto t0 = Clock::now();
    const auto g = testing::four_way();
    const auto zone = road::MixZoneGeometry::build(g, {0, 0}, 100.0);
    const adversary::LinkParams params{road::traverse_time_bounds(zone, g)};
    std::size_t discrepancies = 0, non_empty = 0;
    for (std::uint64_t seed = 1; seed <= 500; ++seed) {
        const auto [inst, seen] = testing::random_instance(seed);
        const auto a = adversary::link(inst, seen, g, zone, params);
        const auto b = adversary::brute_force_oracle(inst, seen, g, zone, params);
        if (a.size() != b.size()) {
            ++discrepancies;
            continue;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].entering != b[i].entering || a[i].candidates != b[i].candidates) ++discrepancies;
            if (!a[i].candidates.empty()) ++non_empty;
        }
    }
    const double secs = seconds_since(t0);
    return {discrepancies == 0 && secs < 30.0, std::to_string(discrepancies) + " discrepancies over 500 instances (" +
                                                   std::to_string(non_empty) + " non-empty sets), runtime " +
                                                   fmt(secs, 3) + "s"};
}

Outcome c6_isolated() {
    const sim::ExplicitTrip west_east{1, 0.0, {4, 0, 2}, 0.0, 4.5};

    auto base = crossing({west_east});
    const auto alone = crossing_rate(base);

    auto one_decoy = base;
    one_decoy.relay_fraction = 1.0;
    one_decoy.rsu_chaff = sim::RsuChaffMode::Off;
    const auto with_decoy = crossing_rate(one_decoy);

    // Decoys for every stream the zone can produce: the member's relayed
    // decoy plus the RSU sparse-traffic stream give one stream per exit
    // (k = 3 non-U-turn exits). The entry arm rotates with the seed.
    const int k = 3;
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const std::int64_t in = 1 + static_cast<std::int64_t>(seed % 4);
        const std::int64_t out = 1 + static_cast<std::int64_t>((seed + 2) % 4);
        auto c = crossing({{1, 0.0, {in, 0, out}, 0.0, 4.5}});
        c.relay_fraction = 1.0;
        c.rsu_chaff = sim::RsuChaffMode::On;
        c.rng_seed = seed;
        if (const auto r = crossing_rate(c)) {
            total += *r;
            ++n;
        }
    }
    const double mean = n ? total / static_cast<double>(n) : 1.0;
    const bool ok = alone == 1.0 && with_decoy == 0.5 && n == 100 && mean <= 1.0 / k + 0.05;
    return {ok, "no decoy " + fmt(alone.value_or(-1)) + " (want 1), one decoy " + fmt(with_decoy.value_or(-1)) +
                    " (want 0.5), full decoy mean over 100 seeds " + fmt(mean) + " (limit 1/3+0.05=" +
                    fmt(1.0 / k + 0.05) + ")"};
}

Outcome c7_monotone() {
    const auto t0 = Clock::now();
    const double relays[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> means;
    for (double r : relays) means.push_back(grid_mean(r, 0.0, 0.0));
    bool monotone = true;
    for (std::size_t i = 1; i < means.size(); ++i) monotone = monotone && means[i] <= means[i - 1];
    const double ratio = means[2] / means[0];
    const double secs = seconds_since(t0);
    std::string detail = "means";
    for (double m : means) detail += " " + fmt(m, 4);
    detail += "; 0.5/0.0 ratio " + fmt(ratio, 4) + " (limit 0.6), runtime " + fmt(secs, 3) + "s";
    return {monotone && ratio <= 0.6 && secs < 300.0, detail};
}

Outcome c8_non_coop() {
    std::vector<double> means;
    for (double nc : {0.0, 0.25, 0.5}) means.push_back(grid_mean(0.5, nc, 0.0));
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    const double spread = (*hi - *lo) * 100.0;
    return {spread < 10.0, "means " + fmt(means[0], 4) + " " + fmt(means[1], 4) + " " + fmt(means[2], 4) +
                               "; spread " + fmt(spread, 3) + " points (limit 10)"};
}

Outcome c9_sparse() {
    const std::vector<sim::ExplicitTrip> trips{
        {1, 0.0, {4, 0, 2}, 0.0, 4.5}, {2, 0.0, {1, 0, 3}, 0.0, 4.5}, {3, 0.0, {2, 0, 4}, 0.0, 4.5}};
    const std::size_t expected[] = {1, 2, 0};
    bool ok = true;
    std::string detail;
    for (std::size_t n = 1; n <= 3; ++n) {
        auto c = crossing({trips.begin(), trips.begin() + static_cast<std::ptrdiff_t>(n)});
        c.rsu_chaff = sim::RsuChaffMode::On;
        c.sparse_threshold = 2;
        const auto& r = keep(sim::run(c));
        std::size_t streams = 0;
        for (const auto& e : r.events.events()) {
            if (e.kind == sim::EventKind::DecoyPlanned && (e.flags & sim::kFlagRsuStream)) ++streams;
        }
        ok = ok && streams == expected[n - 1];
        detail += std::to_string(n) + " vehicle(s) -> " + std::to_string(streams) + " RSU streams; ";
    }
    return {ok, detail + "expected 1, 2, 0"};
}

Outcome c10_observability() {
    std::size_t checked = 0, violations = 0;
    for (const auto* r : g_audit) {
        for (const auto& o : r->observations.rows) {
            ++checked;
            for (const auto& z : r->zones) violations += z.contains(o.beacon.pos) ? 1 : 0;
        }
    }
    return {violations == 0 && checked > 0, std::to_string(violations) + " in-zone observations among " +
                                                std::to_string(checked) + " across " + std::to_string(g_audit.size()) +
                                                " runs"};
}

Outcome c11_schedule() {
    const std::uint64_t sizes[] = {filter::paper_size_model(1000, 1e-25), filter::paper_size_model(5000, 1e-25),
                                   filter::paper_size_model(10000, 1e-25)};
    bool ok = true;
    std::string detail;
    for (auto bytes : sizes) {
        const sim::FilterSchedule s{bytes, 50.0 * 1024.0, 10};
        const std::int64_t n = s.chunk_count();
        const std::int64_t cycle = n * 10;
        // Cycle-aligned arrival: one full cycle. One decisecond late: the rest
        // of this cycle plus a whole one.
        const bool aligned = s.completion_ds(0) == cycle && s.completion_ds(3 * cycle) == 4 * cycle;
        const bool mid = s.completion_ds(1) - 1 == 2 * cycle - 1 && s.completion_ds(cycle + 1) - (cycle + 1) == 2 * cycle - 1;
        ok = ok && aligned && mid;
        detail += fmt(bytes / 1024.0, 5) + "KB: " + std::to_string(n) + " chunks, aligned " +
                  fmt((s.completion_ds(0)) / 10.0) + "s, mid-cycle " + fmt((s.completion_ds(1) - 1) / 10.0) + "s; ";
    }
    return {ok && sizes[0] == 14977 && sizes[1] == 74884 && sizes[2] == 149767, detail};
}

Outcome c12_overhead() {
    auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}, {2, 2.0, {1, 0, 3}, 0.0, 7.5}});
    c.relay_fraction = 1.0;
    const auto& r = keep(sim::run(c));
    const auto a = metrics::overhead(r.events);
    const auto b = metrics::overhead(r.events);
    const bool identical = metrics::to_json(a).dump() == metrics::to_json(b).dump() &&
                           metrics::overhead_csv(a) == metrics::overhead_csv(b);

    sim::EventLog adverts;
    for (int t = 0; t < 10; ++t) {
        sim::Event e;
        e.time = t;
        e.kind = sim::EventKind::Advert;
        e.entity = EntityId{sim::kRsuIdBase};
        e.bytes = 24 + 140;
        e.signs = 1;
        adverts.add(e);
    }
    sim::EventLog beacons;
    for (int k = 0; k < 50; ++k) {
        sim::Event e;
        e.time = k * 0.2;
        e.kind = sim::EventKind::Beacon;
        e.entity = EntityId{7};
        e.bytes = 350 + 140;
        e.signs = 1;
        beacons.add(e);
    }
    const double rsu_kbps = metrics::overhead(adverts).entities.at(0).bytes_per_s / 1000.0;
    const double veh_kbps = metrics::overhead(beacons).entities.at(0).bytes_per_s / 1000.0;
    sim::Event check;
    check.checks = 1;
    const double check_ms = metrics::event_ms(check);
    const bool ok = identical && rsu_kbps == 0.164 && veh_kbps == 2.45 && check_ms == 3.68e-4;
    return {ok, std::string("recompute ") + (identical ? "bit-identical" : "DIFFERS") + ", advert " + fmt(rsu_kbps) +
                    " KB/s (want 0.164), beaconing " + fmt(veh_kbps) + " KB/s (want 2.45), check " + fmt(check_ms) +
                    " ms"};
}

Outcome c13_hbc() {
    const double external = grid_mean(1.0, 0.0, 0.0);
    const double half = grid_mean(1.0, 0.0, 0.5);
    const double full = grid_mean(1.0, 0.0, 1.0);
    return {external < half && half < full, "external " + fmt(external, 4) + " < hbc 0.5 " + fmt(half, 4) +
                                                " < hbc 1.0 " + fmt(full, 4)};
}

Outcome c14_determinism() {
    const auto root = fs::temp_directory_path() / "cmix_acceptance_e2e";
    fs::remove_all(root);
    std::ostringstream out, err;
    int rc = cli::run_cli({"gen-grid", "--rows", "3", "--cols", "3", "--zones", "1", "--vehicles", "40", "--out",
                           (root / "grid").string()},
                          out, err);
    auto run_once = [&](const std::string& name) {
        return cli::run_cli({"run", "--scenario", (root / "grid" / "scenario.json").string(), "--seeds", "1..2",
                             "--sweep", "relay_fraction=0,0.5", "--emit-events", "--out", (root / name).string()},
                            out, err);
    };
    rc = rc || run_once("a") || run_once("b");
    std::size_t files = 0, differing = 0;
    if (rc == 0) {
        for (const auto& f : fs::recursive_directory_iterator(root / "a")) {
            if (!f.is_regular_file()) continue;
            auto slurp = [](const fs::path& p) {
                std::ifstream in(p, std::ios::binary);
                std::ostringstream ss;
                ss << in.rdbuf();
                return ss.str();
            };
            ++files;
            if (slurp(f.path()) != slurp(root / "b" / fs::relative(f.path(), root / "a"))) ++differing;
        }
    }
    fs::remove_all(root);
    return {rc == 0 && files > 0 && differing == 0,
            "exit " + std::to_string(rc) + ", " + std::to_string(files) + " files compared, " +
                std::to_string(differing) + " differ" + (rc ? " (" + err.str() + ")" : "")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"Worked success-rate example", c1_worked_example},
        {"Reported filter sizes", c2_filter_sizes},
        {"Digest-list comparison", c3_digest},
        {"Filter behavior suite", c4_filter},
        {"Link/oracle equivalence", c5_oracle},
        {"Isolated-vehicle baselines", c6_isolated},
        {"Monotone decoy benefit", c7_monotone},
        {"Non-cooperative robustness", c8_non_coop},
        {"Sparse-threshold rule", c9_sparse},
        {"Observability invariant", c10_observability},
        {"Filter dissemination schedule", c11_schedule},
        {"Overhead accounting determinism", c12_overhead},
        {"hbc-RSU ordering", c13_hbc},
        {"End-to-end determinism", c14_determinism},
    };
    // The observability audit runs after every scenario-producing criterion.
    const std::vector<int> order{1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 14, 10};
    std::map<int, Outcome> results;
    for (int id : order) {
        try {
            results[id] = criteria[id - 1].second();
        } catch (const std::exception& e) {
            results[id] = {false, std::string("exception: ") + e.what()};
        }
    }
    int passed = 0, unexpected = 0;
    for (const auto& [id, r] : results) {
        const bool known = kKnownUnattainable.contains(id);
        std::cout << (r.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << criteria[id - 1].first << ": " << r.detail
                  << (!r.pass && known ? " [known unattainable]" : "") << '\n';
        if (r.pass) {
            ++passed;
        } else if (!known) {
            ++unexpected;
        }
    }
    std::cout << passed << "/" << results.size() << " criteria pass";
    if (unexpected) std::cout << ", " << unexpected << " unexpected failure(s)";
    std::cout << '\n';
    return unexpected == 0 ? 0 : 1;
}
