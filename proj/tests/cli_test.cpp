#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cmix/cli.hpp"

using namespace cmix;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("cmix_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    int cli(std::vector<std::string> args) {
        out_.str("");
        err_.str("");
        return cli::run_cli(args, out_, err_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    /// Small grid scenario so that runs stay fast.
    std::string small_scenario() {
        EXPECT_EQ(cli({"gen-grid", "--rows", "3", "--cols", "3", "--zones", "1", "--vehicles", "30", "--out",
                       path("grid")}),
                  0)
            << err_.str();
        return path("grid/scenario.json");
    }

    fs::path dir_;
    std::ostringstream out_;
    std::ostringstream err_;
};

}  // namespace

TEST(ParseSeeds, RangeAndList) {
    EXPECT_EQ(cli::parse_seeds("1..5"), (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
    EXPECT_EQ(cli::parse_seeds("3,9"), (std::vector<std::uint64_t>{3, 9}));
    for (const char* bad : {"", "5..1", "a", "1,,2", "1..x"}) {
        try {
            cli::parse_seeds(bad);
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::ConfigError);
        }
    }
}

TEST(ParseSweep, KeyAndValues) {
    const auto a = cli::parse_sweep("relay_fraction=0,0.25,0.5,0.75,1.0");
    EXPECT_EQ(a.key, "relay_fraction");
    EXPECT_EQ(a.values, (std::vector<double>{0, 0.25, 0.5, 0.75, 1.0}));
    EXPECT_THROW(cli::parse_sweep("relay_fraction"), Error);
    EXPECT_THROW(cli::parse_sweep("relay_fraction=0,x"), Error);
    EXPECT_THROW(cli::parse_sweep("rng_seed=1,2"), Error);
}

TEST(CentralJunctions, PicksInteriorClosestToCenter) {
    cli::GridSpec g;
    g.zones = 2;
    EXPECT_EQ(cli::central_junctions(g), (std::vector<std::int64_t>{5, 6}));
    g.rows = g.cols = 5;
    g.zones = 1;
    EXPECT_EQ(cli::central_junctions(g), (std::vector<std::int64_t>{12}));
    g.zones = 5;
    EXPECT_EQ(cli::central_junctions(g), (std::vector<std::int64_t>{12, 7, 11, 13, 17}));
    g.zones = 10;
    EXPECT_THROW(cli::central_junctions(g), Error);
}

TEST_F(CliTest, GenGridWritesZonesAndEavesdroppers) {
    ASSERT_EQ(cli({"gen-grid", "--rows", "4", "--cols", "4", "--spacing", "500", "--zones", "2", "--out", path("g")}), 0);
    const auto config = sim::ScenarioConfig::load(path("g/scenario.json"));
    EXPECT_EQ(config.graph.junctions().size(), 16u);
    ASSERT_EQ(config.zones.size(), 2u);
    EXPECT_EQ(config.eavesdroppers.size(), 2u);
    EXPECT_EQ(config.eavesdroppers[0].range_m, 250.0);
    EXPECT_GT(distance(config.zones[0].center, config.zones[1].center),
              config.zones[0].radius_m + config.zones[1].radius_m);
    for (const auto& e : config.graph.edges()) EXPECT_NEAR(e.speed_limit, 50.0 / 3.6, 0.01);
}

TEST_F(CliTest, GenGridRejectsTooManyZones) {
    EXPECT_EQ(cli({"gen-grid", "--rows", "4", "--cols", "4", "--zones", "5", "--out", path("g")}), 2);
    EXPECT_FALSE(fs::exists(path("g")));
    EXPECT_EQ(cli({"gen-grid", "--rows", "1", "--cols", "4", "--zones", "1", "--out", path("g")}), 2);
}

TEST_F(CliTest, RunSweepProducesOneDirectoryPerRunAndOneSummary) {
    const auto scenario = small_scenario();
    ASSERT_EQ(cli({"run", "--scenario", scenario, "--seeds", "1..5", "--sweep", "relay_fraction=0,0.25,0.5,0.75,1.0",
                   "--out", path("out"), "--workers", "2"}),
              0)
        << err_.str();
    std::size_t runs = 0;
    for (const auto& p : fs::directory_iterator(path("out/runs"))) {
        for (const auto& s : fs::directory_iterator(p.path())) {
            EXPECT_TRUE(fs::exists(s.path() / "linkability.csv"));
            EXPECT_TRUE(fs::exists(s.path() / "overhead.csv"));
            EXPECT_FALSE(fs::exists(s.path() / "events.jsonl"));
            ++runs;
        }
    }
    EXPECT_EQ(runs, 25u);
    const auto summary = slurp(path("out/summary.csv"));
    EXPECT_EQ(summary.rfind("point,relay_fraction,metric,n,mean,std\n", 0), 0u);
    EXPECT_NE(summary.find("point_004,1,success_rate,"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(cli({"run", "--scenario", path("missing.json"), "--out", path("o")}), 2);
    EXPECT_EQ(cli({"run"}), 2);
    EXPECT_EQ(cli({"bogus"}), 2);
    const auto scenario = small_scenario();
    EXPECT_EQ(cli({"run", "--scenario", scenario, "--sweep", "relay_fraction=2", "--out", path("o")}), 2);
    EXPECT_EQ(cli({"run", "--scenario", scenario, "--sweep", "no_such_key=1", "--out", path("o")}), 2);
    EXPECT_EQ(cli({"run", "--scenario", scenario, "--format", "xml", "--out", path("o")}), 2);
    ASSERT_EQ(cli({"run", "--scenario", scenario, "--out", path("o")}), 0);
    EXPECT_EQ(cli({"run", "--scenario", scenario, "--out", path("o")}), 3);
    EXPECT_EQ(cli({"run", "--scenario", scenario, "--out", path("o"), "--force"}), 0);
}

TEST_F(CliTest, RunIsByteIdenticalAcrossRepeatsAndWorkerCounts) {
    const auto scenario = small_scenario();
    const std::vector<std::string> base{"run", "--scenario", scenario, "--seeds", "1,2", "--sweep", "relay_fraction=0,1",
                                        "--format", "json", "--emit-events"};
    auto a = base;
    a.insert(a.end(), {"--out", path("a")});
    auto b = base;
    b.insert(b.end(), {"--out", path("b"), "--workers", "4"});
    ASSERT_EQ(cli(a), 0);
    ASSERT_EQ(cli(b), 0);
    std::size_t compared = 0;
    for (const auto& f : fs::recursive_directory_iterator(path("a"))) {
        if (!f.is_regular_file()) continue;
        const auto rel = fs::relative(f.path(), path("a"));
        EXPECT_EQ(slurp(f.path()), slurp(fs::path(path("b")) / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 30u);
}

TEST_F(CliTest, AttackReplayMatchesInProcessCandidates) {
    const auto scenario = small_scenario();
    ASSERT_EQ(cli({"run", "--scenario", scenario, "--seeds", "3", "--sweep", "relay_fraction=0.5", "--out", path("r")}), 0);
    const std::string run = path("r/runs/point_000/seed_3/");
    ASSERT_EQ(cli({"attack", "--obs", run + "observations.csv", "--graph", run + "graph.json", "--zones",
                   run + "zones.json", "--truth", run + "ground_truth.jsonl", "--seed", "3", "--out", path("atk")}),
              0)
        << err_.str();
    const auto replay = slurp(path("atk/candidates.jsonl"));
    EXPECT_FALSE(replay.empty());
    EXPECT_EQ(replay, slurp(run + "candidates.jsonl"));

    // Without --out the candidate sets go to stdout.
    ASSERT_EQ(cli({"attack", "--obs", run + "observations.csv", "--graph", run + "graph.json", "--zones",
                   run + "zones.json", "--truth", run + "ground_truth.jsonl"}),
              0);
    EXPECT_EQ(out_.str(), replay);
}

TEST_F(CliTest, AttackErrors) {
    const auto scenario = small_scenario();
    {
        std::ofstream(path("bad.csv")) << "time,pseudonym_id\n1,2\n";
        std::ofstream(path("empty.csv")) << "time,pseudonym_id,x,y,speed,heading,length,eavesdropper_id\n";
    }
    const std::string g = path("grid/graph.json"), z = path("grid/zones.json");
    EXPECT_EQ(cli({"attack", "--obs", path("bad.csv"), "--graph", g, "--zones", z}), 2);
    EXPECT_EQ(cli({"attack", "--obs", path("nothing.csv"), "--graph", g, "--zones", z}), 2);
    ASSERT_EQ(cli({"attack", "--obs", path("empty.csv"), "--graph", g, "--zones", z, "--format", "json", "--out",
                   path("e")}),
              0);
    const auto report = nlohmann::json::parse(slurp(path("e/linkability.json")));
    EXPECT_TRUE(report.at("success_rate").is_null());
}
