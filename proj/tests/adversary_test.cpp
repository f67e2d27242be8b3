#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "cmix/adversary.hpp"
#include "fixtures.hpp"

using namespace cmix;
using namespace cmix::adversary;
using namespace cmix::testing;

namespace {

struct Fixture {
    road::RoadGraph g = cmix::testing::four_way();
    road::MixZoneGeometry zone = road::MixZoneGeometry::build(g, {0, 0}, 100.0);
    LinkParams params{road::traverse_time_bounds(zone, g)};
};

sim::ScenarioConfig crossing(std::vector<sim::ExplicitTrip> trips) {
    sim::ScenarioConfig c;
    c.graph = cmix::testing::four_way();
    c.zones.push_back({{0, 0}, 100.0, 600.0});
    c.eavesdroppers.push_back({{0, 0}, 250.0});
    c.explicit_trips = std::move(trips);
    return c;
}

AttackResult attack_run(const sim::ScenarioConfig& c, const sim::RunResult& r) {
    AttackInput in;
    in.graph = &c.graph;
    in.zones = r.zones;
    in.observations = r.observations.rows;
    in.truth = &r.truth;
    return attack(in);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tracks

TEST(BuildTracks, LengthClasses) {
    const auto a = id_of(1), b = id_of(2), c = id_of(3);
    const auto classes = build_tracks({obs(a, 0, {0, 300}, 0), obs(b, 0, {0, 310}, 0, 4.5), obs(c, 0.5, {5, 5}, 0, 12.0),
                                       obs(a, 1.0, {0, 290}, 0)});
    ASSERT_EQ(classes.size(), 2u);
    EXPECT_EQ(classes.at(VehicleLength::from_meters(4.5)).size(), 2u);
    EXPECT_EQ(classes.at(VehicleLength::from_meters(12.0)).size(), 1u);
    EXPECT_TRUE(build_tracks({}).empty());
    const auto& single = classes.at(VehicleLength::from_meters(12.0)).front();
    EXPECT_EQ(single.first, single.last);
    for (const auto& t : classes.at(VehicleLength::from_meters(4.5))) {
        if (t.id == a) {
            EXPECT_EQ(t.first.timestamp, 0.0);
            EXPECT_EQ(t.last.timestamp, 1.0);
            EXPECT_DOUBLE_EQ(observed_distance(t), 10.0);
        }
    }
}

TEST(BuildTracks, DuplicateCapturesCollapse) {
    const auto a = id_of(1);
    auto o1 = obs(a, 0, {0, 150}, 0);
    auto o2 = o1;
    o2.eavesdropper = 1;
    const auto t = build_tracks({o1, o2}).begin()->second.front();
    EXPECT_EQ(t.times.size(), 1u);
}

// ---------------------------------------------------------------------------
// Trivial linking

TEST(FilterTrivial, NonCooperativeVehicleIsTriviallyLinked) {
    auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}});
    c.non_coop_fraction = 1.0;
    const auto r = sim::run(c);
    Fixture f;
    const auto inst = filter_trivial(build_tracks(local_observations(r.observations.rows, f.zone)), f.zone);
    EXPECT_EQ(inst.trivially_linked.size(), 1u);
    EXPECT_TRUE(inst.entering.empty());
    EXPECT_TRUE(inst.exiting.empty());
    EXPECT_TRUE(attack_run(c, r).sets.empty());
}

TEST(FilterTrivial, CooperativeVehicleSplitsIntoEnteringAndExiting) {
    const auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}});
    const auto r = sim::run(c);
    Fixture f;
    const auto inst = filter_trivial(build_tracks(local_observations(r.observations.rows, f.zone)), f.zone);
    ASSERT_EQ(inst.entering.size(), 1u);
    ASSERT_EQ(inst.exiting.size(), 1u);
    EXPECT_EQ(inst.entering[0].id, r.truth.changes[0].old_id);
    EXPECT_EQ(inst.exiting[0].id, r.truth.changes[0].new_id);
    EXPECT_TRUE(inst.trivially_linked.empty());
}

TEST(FilterTrivial, AllNonCooperativeGivesEmptyInstance) {
    auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}, {2, 2.0, {1, 0, 3}, 0.0, 4.5}, {3, 4.0, {2, 0, 1}, 0.0, 7.5}});
    c.non_coop_fraction = 1.0;
    const auto r = sim::run(c);
    const auto a = attack_run(c, r);
    EXPECT_TRUE(a.sets.empty());
    EXPECT_EQ(a.trivially_linked.size(), 3u);
}

// ---------------------------------------------------------------------------
// Linking

TEST(Link, SingleVehicleThroughEmptyZone) {
    const auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}});
    const auto r = sim::run(c);
    const auto a = attack_run(c, r);
    ASSERT_EQ(a.sets.size(), 1u);
    EXPECT_EQ(a.sets[0].candidates, std::vector<CredentialId>{r.truth.changes[0].new_id});
    EXPECT_EQ(a.sets[0].truth, r.truth.changes[0].new_id);
}

TEST(Link, TwoSimultaneousSameLengthVehicles) {
    // West->east and north->south, entering together. Each exit is reachable
    // from each entry, so the brute-force instance has two candidates per set.
    const auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}, {2, 0.0, {1, 0, 3}, 0.0, 4.5}});
    const auto r = sim::run(c);
    const auto a = attack_run(c, r);
    ASSERT_EQ(a.sets.size(), 2u);
    for (const auto& s : a.sets) {
        EXPECT_EQ(s.candidates.size(), 2u);
        ASSERT_TRUE(s.truth);
        EXPECT_NE(std::find(s.candidates.begin(), s.candidates.end(), *s.truth), s.candidates.end());
    }
}

TEST(Link, ExitHeadingBackTowardZoneIsExcluded) {
    Fixture f;
    LinkInstance inst;
    inst.entering.push_back(track_at(id_of(1), 4, 110, false, 0.0));
    inst.exiting.push_back(track_at(id_of(2), 2, 110, false, 20.0));  // on the east arm, heading in
    inst.exiting.push_back(track_at(id_of(3), 2, 110, true, 20.0));
    const SeenIntervals seen;
    const auto sets = link(inst, seen, f.g, f.zone, f.params);
    ASSERT_EQ(sets.size(), 1u);
    EXPECT_EQ(sets[0].candidates, std::vector<CredentialId>{id_of(3)});
}

TEST(Link, TimeWindowAndSeenTogether) {
    Fixture f;
    LinkInstance inst;
    inst.entering.push_back(track_at(id_of(1), 4, 110, false, 100.0));
    inst.exiting.push_back(track_at(id_of(2), 2, 110, true, 100.0 + f.params.bounds.min_s - 1.0));
    const SeenIntervals none;
    EXPECT_TRUE(link(inst, none, f.g, f.zone, f.params)[0].candidates.empty());
    EXPECT_TRUE(brute_force_oracle(inst, none, f.g, f.zone, f.params)[0].candidates.empty());

    inst.exiting[0] = track_at(id_of(2), 2, 110, true, 100.0 + f.params.bounds.min_s + 1.0);
    EXPECT_EQ(link(inst, none, f.g, f.zone, f.params)[0].candidates.size(), 1u);
    SeenIntervals overlap{{id_of(1), {50.0, 100.0}}, {id_of(2), {90.0, 200.0}}};
    EXPECT_TRUE(link(inst, overlap, f.g, f.zone, f.params)[0].candidates.empty());
}

TEST(Link, LengthClassIsolation) {
    Fixture f;
    LinkInstance inst;
    inst.entering.push_back(track_at(id_of(1), 4, 110, false, 0.0, 4.5));
    inst.exiting.push_back(track_at(id_of(2), 2, 110, true, 20.0, 7.5));
    EXPECT_TRUE(link(inst, {}, f.g, f.zone, f.params)[0].candidates.empty());
}

TEST(Link, NoUturnCandidate) {
    Fixture f;
    LinkInstance inst;
    inst.entering.push_back(track_at(id_of(1), 4, 110, false, 0.0));
    inst.exiting.push_back(track_at(id_of(2), 4, 110, true, 20.0));
    EXPECT_TRUE(link(inst, {}, f.g, f.zone, f.params)[0].candidates.empty());
}

TEST(Oracle, EmptyInstance) {
    Fixture f;
    EXPECT_TRUE(brute_force_oracle({}, {}, f.g, f.zone, f.params).empty());
    EXPECT_TRUE(link({}, {}, f.g, f.zone, f.params).empty());
}

TEST(Oracle, EquivalentOnSeededInstances) {
    Fixture f;
    std::size_t non_empty = 0;
    for (std::uint64_t seed = 1; seed <= 500; ++seed) {
        const auto [inst, seen] = random_instance(seed);
        const auto a = link(inst, seen, f.g, f.zone, f.params);
        const auto b = brute_force_oracle(inst, seen, f.g, f.zone, f.params);
        ASSERT_EQ(a.size(), b.size()) << "seed " << seed;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ASSERT_EQ(a[i].entering, b[i].entering) << "seed " << seed;
            ASSERT_EQ(a[i].candidates, b[i].candidates) << "seed " << seed;
            if (!a[i].candidates.empty()) ++non_empty;
        }
    }
    EXPECT_GT(non_empty, 50u);
}

TEST(Oracle, EmittedPairsSatisfyEveryCondition) {
    Fixture f;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const auto [inst, seen] = random_instance(seed);
        for (const auto& s : link(inst, seen, f.g, f.zone, f.params)) {
            const auto& in = *std::find_if(inst.entering.begin(), inst.entering.end(),
                                           [&](const auto& t) { return t.id == s.entering; });
            for (const auto& c : s.candidates) {
                const auto& out = *std::find_if(inst.exiting.begin(), inst.exiting.end(),
                                                [&](const auto& t) { return t.id == c; });
                const double diff = out.first.timestamp - in.last.timestamp;
                EXPECT_GE(diff, f.params.bounds.min_s - 1e-6);
                EXPECT_LE(diff, f.params.bounds.max_s + 1e-6);
                EXPECT_EQ(in.length, out.length);
                EXPECT_FALSE(seen.at(in.id).first <= seen.at(out.id).second &&
                             seen.at(out.id).first <= seen.at(in.id).second);
                EXPECT_TRUE(road::path_exists(f.g, {in.last.pos, in.last.heading}, {out.first.pos, out.first.heading},
                                              f.zone));
                EXPECT_TRUE(road::exit_direction_consistent(out.first, f.zone));
            }
        }
    }
}

TEST(Oracle, AddingConsistentDecoyNeverShrinksSets) {
    Fixture f;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        auto [inst, seen] = random_instance(seed);
        const auto before = link(inst, seen, f.g, f.zone, f.params);
        const auto decoy = track_at(id_of(999'999 + seed), 2, 105, true, 90.0);
        inst.exiting.push_back(decoy);
        seen[decoy.id] = {90.0, 90.0};
        const auto after = link(inst, seen, f.g, f.zone, f.params);
        ASSERT_EQ(before.size(), after.size());
        for (std::size_t i = 0; i < before.size(); ++i) {
            for (const auto& c : before[i].candidates) {
                EXPECT_TRUE(std::binary_search(after[i].candidates.begin(), after[i].candidates.end(), c));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Honest-but-curious RSU

TEST(Hbc, ResolvesMembersAndDropsOwnChaffOnly) {
    LinkCandidateSet member{id_of(1), {id_of(2), id_of(3), id_of(4)}, id_of(3), 0.0, 0};
    LinkCandidateSet other{id_of(5), {id_of(6), id_of(7), id_of(8)}, std::nullopt, 0.0, 0};
    const auto out = hbc_rsu_link({member, other}, {id_of(7)});
    EXPECT_EQ(out[0].candidates, std::vector<CredentialId>{id_of(3)});
    EXPECT_EQ(out[1].candidates, (std::vector<CredentialId>{id_of(6), id_of(8)}));
}

TEST(Hbc, UnflaggedZoneMatchesLink) {
    auto c = crossing({{1, 0.0, {4, 0, 2}, 0.0, 4.5}, {2, 1.0, {1, 0, 3}, 0.0, 4.5}});
    c.relay_fraction = 1.0;
    const auto r = sim::run(c);
    auto truth = r.truth;
    const auto plain = attack_run(c, r);
    truth.hbc_zones = {};
    AttackInput in{&c.graph, r.zones, r.observations.rows, &truth};
    EXPECT_EQ(candidates_jsonl(attack(in).sets), candidates_jsonl(plain.sets));

    truth.hbc_zones = {0};
    const auto curious = attack(in).sets;
    for (const auto& s : curious) {
        if (s.truth) EXPECT_EQ(s.candidates.size(), 1u);
    }
}

TEST(Hbc, ForeignChaffStaysInCandidateSets) {
    const auto own = id_of(10);
    const auto foreign = id_of(11);
    LinkCandidateSet s{id_of(1), {own, foreign}, std::nullopt, 0.0, 0};
    const auto out = hbc_rsu_link({s}, {own});
    EXPECT_EQ(out[0].candidates, std::vector<CredentialId>{foreign});
}

// ---------------------------------------------------------------------------
// Chains

TEST(Chain, FollowsCorrectLinksAcrossZones) {
    const auto p0 = id_of(1), p1 = id_of(2), p2 = id_of(3);
    const std::map<CredentialId, double> dist{{p0, 100.0}, {p1, 250.0}, {p2, 40.0}};
    std::vector<LinkCandidateSet> sets{{p0, {p1}, p1, 0.0, 0}, {p1, {p2}, p2, 60.0, 1}};
    auto chains = chain(sets, dist, 1);
    ASSERT_EQ(chains.size(), 1u);
    EXPECT_EQ(chains[0].ids, (std::vector<CredentialId>{p0, p1, p2}));
    EXPECT_DOUBLE_EQ(chains[0].distance_m, 390.0);

    sets[1].candidates = {id_of(9)};
    chains = chain(sets, dist, 1);
    ASSERT_EQ(chains.size(), 1u);
    EXPECT_EQ(chains[0].ids, (std::vector<CredentialId>{p0, p1}));
    EXPECT_DOUBLE_EQ(chains[0].distance_m, 350.0);
}

TEST(Chain, UniformFollowRate) {
    // Two candidates per set: about half of the follows land on the truth.
    std::vector<LinkCandidateSet> sets;
    for (std::uint64_t k = 0; k < 2000; ++k) {
        std::vector<CredentialId> c{id_of(10'000 + k), id_of(20'000 + k)};
        std::sort(c.begin(), c.end());
        sets.push_back({id_of(k + 1), c, id_of(10'000 + k), 0.0, 0});
    }
    const auto chains = chain(sets, {}, 42);
    EXPECT_NEAR(static_cast<double>(chains.size()) / 2000.0, 0.5, 0.05);
    EXPECT_EQ(chain(sets, {}, 42).size(), chains.size());
}

TEST(Attack, CandidateJsonFormat) {
    LinkCandidateSet s{id_of(1), {id_of(2)}, id_of(2), 0.0, 3};
    const auto line = candidates_jsonl({s});
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("entering"), id_of(1).hex());
    EXPECT_EQ(j.at("candidates").size(), 1u);
    EXPECT_EQ(j.at("truth"), id_of(2).hex());
    EXPECT_EQ(j.at("zone"), 3);
    s.truth.reset();
    EXPECT_FALSE(nlohmann::json::parse(candidates_jsonl({s})).contains("truth"));
}
