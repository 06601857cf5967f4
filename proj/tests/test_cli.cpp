#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "nevicut/cli/run.hpp"

using namespace nevicut;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::vector<const char*> argv{"nevicut"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = cli::run_command(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("nevicut_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
               std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string p(const std::string& rel) const { return (dir / rel).string(); }
    fs::path dir;
};

}  // namespace

TEST_F(CliTest, HelpExitsZero) {
    Result r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("benchmark"), std::string::npos);
    EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST_F(CliTest, UnknownFlagNamesTheFlag) {
    Result r = run({"benchmark", "gaussian_bias", "--bogus", "--out", p("x")});
    EXPECT_EQ(r.code, cli::exit_config);
    EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingSubcommandIsUsageError) { EXPECT_EQ(run({}).code, cli::exit_config); }

TEST_F(CliTest, UnknownExperimentListsKnownOnes) {
    Result r = run({"benchmark", "nope", "--out", p("x")});
    EXPECT_EQ(r.code, cli::exit_config);
    EXPECT_NE(r.err.find("gaussian_bias"), std::string::npos);
}

TEST_F(CliTest, UnknownConfigKeyCitesLine) {
    io::write_atomic(p("c.ini"), "[train]\nlr = 0.01\n\n[flow]\nlayerz = 2\n");
    Result r = run({"benchmark", "gaussian_bias", "--config", p("c.ini"), "--out", p("x")});
    EXPECT_EQ(r.code, cli::exit_config);
    EXPECT_NE(r.err.find(":5:"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("flow.layerz"), std::string::npos) << r.err;
}

TEST_F(CliTest, BadConfigValueCitesLine) {
    io::write_atomic(p("c.ini"), "[train]\nlr = fast\n");
    Result r = run({"benchmark", "gaussian_bias", "--config", p("c.ini"), "--out", p("x")});
    EXPECT_EQ(r.code, cli::exit_config);
    EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingInputFileIsConfigError) {
    Result r = run({"train", "--dataset", p("none.csv"), "--upstream", p("none2.csv"), "--out", p("o")});
    EXPECT_EQ(r.code, cli::exit_config);
    EXPECT_NE(r.err.find("does not exist"), std::string::npos);
}

TEST_F(CliTest, SimulateTrainSampleDensityCompare) {
    ASSERT_EQ(run({"simulate", "gaussian_bias", "--seed", "1", "-n", "300", "--out", p("sim")}).code, 0);
    EXPECT_TRUE(fs::exists(p("sim/manifest.json")));
    auto up = io::load_upstream_csv(p("sim/upstream.csv"));
    EXPECT_EQ(up.size(), 300u);

    io::write_atomic(p("t.ini"), "seed = 4\n[paths]\ndataset = " + p("sim/data.csv") + "\nupstream = " + p("sim/upstream.csv") +
                                     "\noutput = " + p("train") + "\n[train]\nmax_iters = 40\nwarm_start_iters = 0\n[flow]\nlayers = 1\nhidden = 8\n");
    Result tr = run({"train", "--config", p("t.ini")});
    ASSERT_EQ(tr.code, 0) << tr.err;
    for (const char* f : {"checkpoint.txt", "trace.csv", "samples.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(p("train/") + f)) << f;
    auto m = nlohmann::json::parse(io::read_file(p("train/manifest.json")));
    EXPECT_EQ(m["seed"], 4);
    EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);

    // The eta block of the draws is the upstream file, unchanged.
    auto d = io::load_samples_csv(p("train/samples.csv"));
    ASSERT_EQ(d.eta.rows(), up.size());
    for (std::size_t i = 0; i < up.size(); ++i) EXPECT_EQ(d.eta(i, 0), up.eta(i, 0));

    ASSERT_EQ(run({"sample", "-k", p("train/checkpoint.txt"), "-u", p("sim/upstream.csv"), "-o", p("s1.csv"), "-s", "9"}).code, 0);
    ASSERT_EQ(run({"sample", "-k", p("train/checkpoint.txt"), "-u", p("sim/upstream.csv"), "-o", p("s2.csv"), "-s", "9"}).code, 0);
    EXPECT_EQ(io::read_file(p("s1.csv")), io::read_file(p("s2.csv")));
    EXPECT_TRUE(fs::exists(p("s1.csv.manifest.json")));

    ASSERT_EQ(run({"density", "-k", p("train/checkpoint.txt"), "--eta0", "0.05", "--grid", "-2:3:51", "-o", p("g.csv")}).code, 0);
    auto g = io::load_table(p("g.csv"));
    EXPECT_EQ(g.values.rows(), 51u);
    EXPECT_EQ(g.header, (std::vector<std::string>{"theta", "density"}));

    Result c = run({"compare", p("s1.csv"), p("s2.csv")});
    ASSERT_EQ(c.code, 0) << c.err;
    auto j = nlohmann::json::parse(c.out);
    EXPECT_EQ(j["theta"]["theta_1"]["w2"], 0.0);
}

TEST_F(CliTest, DensityGridValidation) {
    Result r = run({"density", "-k", p("missing.txt"), "--eta0", "0", "--grid", "1:0:5", "-o", p("g.csv")});
    EXPECT_EQ(r.code, cli::exit_config);
}

TEST_F(CliTest, CompareClrMode) {
    cut::CutPosteriorDraws a;
    a.eta = ad::Tensor(2, 1, 0.0);
    a.theta = ad::Tensor(2, 3);
    a.eta_names = {"eta_1"};
    const double rows[2][3] = {{0.5, 0.25, 0.25}, {0.2, 0.3, 0.5}};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) a.theta(i, j) = rows[i][j];
    io::save_samples_csv(p("a.csv"), a);
    Result r = run({"compare", "--clr", p("a.csv"), p("a.csv"), "-o", p("cmp.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(io::read_file(p("cmp.json")));
    EXPECT_EQ(j["mode"], "clr");
    EXPECT_EQ(j["theta"]["theta_3"]["w1"], 0.0);
}

TEST_F(CliTest, BenchmarkWritesReportTimingsAndManifest) {
    Result r = run({"benchmark", "hpv", "-r", "1", "-s", "2", "-q", "--out", p("b"), "--set", "run.n_upstream=100", "--set",
                    "train.max_iters=20", "--set", "nested.kept=2", "--set", "nested.warmup=50", "--set", "va.max_iters=10",
                    "--save-draws"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto rep = nlohmann::json::parse(io::read_file(p("b/report.json")));
    EXPECT_EQ(rep["replicates"], 1);
    EXPECT_TRUE(rep["diagnostics"].contains("w1.nevi_nested.theta_1"));
    EXPECT_EQ(io::read_file(p("b/report.json")).find("seconds"), std::string::npos);
    auto t = nlohmann::json::parse(io::read_file(p("b/timings.json")));
    EXPECT_GE(t["seconds"]["nevi"]["median"].get<double>(), 0.0);
    auto m = nlohmann::json::parse(io::read_file(p("b/manifest.json")));
    EXPECT_EQ(m["command"], "benchmark");
    EXPECT_TRUE(fs::exists(p("b/draws_nested.csv")));
}

TEST_F(CliTest, RuntimeFailureMarksOutputDirectory) {
    // Negative confusion-matrix entries put every draw outside the support, so training aborts.
    ASSERT_EQ(run({"simulate", "va_calibration", "-n", "50", "--out", p("sim")}).code, 0);
    cut::UpstreamSamples bad;
    bad.eta = ad::Tensor(50, 6, -0.5);
    io::save_upstream_csv(p("bad.csv"), bad);
    Result r = run({"train", "-d", p("sim/data.csv"), "-u", p("bad.csv"), "-o", p("t"), "--set", "train.max_iters=50"});
    EXPECT_EQ(r.code, cli::exit_runtime) << r.err;
    EXPECT_TRUE(fs::exists(p("t/FAILED")));
    EXPECT_FALSE(fs::exists(p("t/checkpoint.txt")));
}
