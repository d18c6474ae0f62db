#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "support/oracles.hpp"

using namespace medcurve;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("medcurve_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& args) {
    const std::string cmd = std::string(MEDCURVE_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_population(const fs::path& p, const CurvePopulation& pop) { io::write_file(p, io::curves_csv(pop)); }

CurvePopulation toy_population(std::size_t N, std::size_t D, unsigned seed) {
    auto pop = oracle::random_population(N, D, seed);
    // Round-trip through the CSV formatting so library and CLI see the same numbers.
    const auto dir = scratch("roundtrip");
    write_population(dir / "p.csv", pop);
    return io::read_curves(dir / "p.csv");
}

} // namespace

TEST(CliMedian, SingleCurveIsEchoed) {
    const auto dir = scratch("single");
    io::write_file(dir / "one.csv", "id,0.25,0.5,0.75,1\nm1,3,1.5,-2,4\n");
    ASSERT_EQ(run("median --input " + (dir / "one.csv").string() + " --out " + dir.string()), 0);
    EXPECT_EQ(slurp(dir / "median.csv"), "t,median\n0.25,3\n0.5,1.5\n0.75,-2\n1,4\n");
}

TEST(CliMedian, SymmetricFourPointsGiveZero) {
    const auto dir = scratch("sym");
    io::write_file(dir / "four.csv", "id,1,2\na,1,0\nb,-1,0\nc,0,1\nd,0,-1\n");
    ASSERT_EQ(run("median --input " + (dir / "four.csv").string() + " --out " + dir.string()), 0);
    const Vector m = io::read_series(dir / "median.csv");
    EXPECT_LT(m.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CliMedian, MatchesGridSearchOracle) {
    const auto dir = scratch("grid");
    const auto pop = toy_population(10, 2, 21);
    write_population(dir / "p.csv", pop);
    ASSERT_EQ(run("median --input " + (dir / "p.csv").string() + " --tol 1e-12 --out " + dir.string()), 0);
    const Vector m = io::read_series(dir / "median.csv");
    const auto q = oracle::weights_of(*pop.grid());
    const auto rows = oracle::rows_of(pop);
    const std::vector<double> w(10, 1.0);
    double best = 0.0;
    oracle::grid_search_2d(q, rows, w, &best);
    EXPECT_LE(oracle::objective(q, rows, w, {m[0], m[1]}), best + 1e-6);
    EXPECT_TRUE(slurp(dir / "diagnostics.json").find("\"converged\": true") != std::string::npos);
}

TEST(CliMedian, ExitCodes) {
    const auto dir = scratch("codes");
    io::write_file(dir / "bad.csv", "id,1,2\na,1,2\nb,1\n");
    EXPECT_EQ(run("median --input " + (dir / "bad.csv").string() + " --out " + dir.string()), 2);
    EXPECT_EQ(run("median --input " + (dir / "missing.csv").string()), 2);
    const auto pop = toy_population(30, 4, 2);
    write_population(dir / "p.csv", pop);
    EXPECT_EQ(run("median --input " + (dir / "p.csv").string() + " --max-iter 1 --out " + dir.string()), 3);
    io::write_file(dir / "big.json", R"({"type": "SRSWOR", "n": 31})");
    EXPECT_EQ(run("estimate --input " + (dir / "p.csv").string() + " --design " + (dir / "big.json").string() +
                  " --seed 1 --out " + dir.string()),
              4);
    io::write_file(dir / "ok.json", R"({"type": "SRSWOR", "n": 10})");
    EXPECT_EQ(run("estimate --input " + (dir / "p.csv").string() + " --design " + (dir / "ok.json").string() +
                  " --out " + dir.string()),
              2);  // --seed is mandatory
    EXPECT_EQ(run("stratify --input " + (dir / "p.csv").string() + " --on raw --out " + dir.string()), 2);
}

TEST(CliEstimate, CensusMatchesMedianAndZeroVariance) {
    const auto dir = scratch("census");
    const auto pop = toy_population(25, 5, 3);
    write_population(dir / "p.csv", pop);
    io::write_file(dir / "d.json", R"({"type": "SRSWOR", "n": 25})");
    ASSERT_EQ(run("median --input " + (dir / "p.csv").string() + " --out " + (dir / "m").string()), 0);
    ASSERT_EQ(run("estimate --input " + (dir / "p.csv").string() + " --design " + (dir / "d.json").string() +
                  " --seed 4 --out " + (dir / "e").string()),
              0);
    EXPECT_EQ(slurp(dir / "m" / "median.csv"), slurp(dir / "e" / "median.csv"));
    EXPECT_EQ(io::read_series(dir / "e" / "variance.csv").cwiseAbs().maxCoeff(), 0.0);
}

TEST(CliEstimate, SrsworVarianceMatchesLibrary) {
    const auto dir = scratch("parity");
    const auto pop = toy_population(40, 6, 5);
    write_population(dir / "p.csv", pop);
    io::write_file(dir / "d.json", R"({"type": "SRSWOR", "n": 20})");
    ASSERT_EQ(run("estimate --input " + (dir / "p.csv").string() + " --design " + (dir / "d.json").string() +
                  " --seed 11 --out " + dir.string()),
              0);
    const auto s = draw_srswor(40, 20, derive_seed(11, 1));
    const auto ws = ht_sample(s, sample_curves(s, pop));
    const auto fit = l1_median(ws.curves, ws.weights);
    const auto uhat = estimated_linearized_variables(ws.curves, ws.weights, fit.median);
    const auto v = variance_estimate(uhat, pop.grid(), Design::srswor(40, 20), s);
    const Vector cli_v = io::read_series(dir / "variance.csv");
    const Vector cli_m = io::read_series(dir / "median.csv");
    for (Eigen::Index t = 0; t < 6; ++t) {
        EXPECT_NEAR(cli_v[t], v.values[t], 1e-11 * std::abs(v.values[t]));
        EXPECT_NEAR(cli_m[t], fit.median[t], 1e-11 * std::max(1.0, std::abs(fit.median[t])));
    }
}

TEST(CliEstimate, EveryDesignTypeRunsAndIsReproducible) {
    const auto dir = scratch("designs");
    SynthConfig c;
    c.N = 120;
    c.D = 8;
    const auto sp = synth_population(c);
    write_population(dir / "w1.csv", sp.week1);
    write_population(dir / "w2.csv", sp.week2);
    io::write_file(dir / "strata.csv", io::strata_csv(quartile_strata(max_summary(sp.week1)), sp.week1));
    const std::vector<std::string> specs{
        R"({"type": "SRSWOR", "n": 30})",
        R"({"type": "SYS", "n": 30, "aux": "w1.csv"})",
        R"({"type": "STRAT", "n": 30, "strata": "strata.csv", "alloc": "PROP"})",
        R"({"type": "STRAT", "n": 30, "strata": {"on": "linearized", "H": 3}, "alloc": "OPTIM", "aux": "w1.csv"})",
        R"({"type": "STRAT", "strata": "strata.csv", "alloc": [5, 6, 7, 8]})",
        R"({"type": "PPS", "n": 30, "aux": "w1.csv"})",
        R"({"type": "POST", "n": 30, "groups": "strata.csv"})"};
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto spec = dir / ("d" + std::to_string(i) + ".json");
        io::write_file(spec, specs[i]);
        for (const char* out : {"a", "b"})
            ASSERT_EQ(run("estimate --input " + (dir / "w2.csv").string() + " --design " + spec.string() +
                          " --seed 8 --out " + (dir / out).string()),
                      0)
                << specs[i];
        for (const char* f : {"sample.csv", "median.csv", "variance.csv", "diagnostics.json"})
            EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << specs[i] << " " << f;
    }
}

TEST(CliStratify, PlantedClustersQuartilesAndPublishedAllocation) {
    const auto dir = scratch("stratify");
    // Four separated clusters of 5 curves.
    CurveMatrix y(20, 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 0.01);
    for (int k = 0; k < 20; ++k)
        for (int d = 0; d < 3; ++d) y(k, d) = 5.0 * (k % 4) * (d == (k % 4) % 3 ? 1.0 : -1.0) + g(rng);
    write_population(dir / "c.csv", CurvePopulation(TimeGrid::uniform(3), y));
    ASSERT_EQ(run("stratify --input " + (dir / "c.csv").string() + " --on raw --H 4 --seed 3 --n 8 --out " +
                  dir.string()),
              0);
    const auto pop = io::read_curves(dir / "c.csv");
    const auto s = io::read_strata(dir / "strata.csv", pop);
    for (int k = 4; k < 20; ++k) EXPECT_EQ(s.label(k), s.label(k % 4));
    EXPECT_EQ(s.H(), 4u);
    const std::string first = slurp(dir / "allocations.json");
    ASSERT_EQ(run("stratify --input " + (dir / "c.csv").string() + " --on raw --H 4 --seed 3 --n 8 --out " +
                  dir.string()),
              0);
    EXPECT_EQ(first, slurp(dir / "allocations.json"));

    std::string toy = "id,1\n";
    for (int k = 1; k <= 8; ++k) toy += "u" + std::to_string(k) + "," + std::to_string(k) + "\n";
    io::write_file(dir / "toy.csv", toy);
    ASSERT_EQ(run("stratify --input " + (dir / "toy.csv").string() + " --on scalar-max --H 4 --n 4 --out " +
                  dir.string()),
              0);
    EXPECT_EQ(slurp(dir / "strata.csv"), "unit_id,stratum\nu1,1\nu2,1\nu3,2\nu4,2\nu5,3\nu6,3\nu7,4\nu8,4\n");

    // Strata of the published sizes; PROP for n = 2000.
    std::string big = "id,1\n", strata = "unit_id,stratum\n";
    const std::size_t sizes[] = {6767, 2420, 2503, 7212};
    std::size_t id = 0;
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t i = 0; i < sizes[h]; ++i, ++id) {
            big += std::to_string(id) + "," + std::to_string(id % 97) + "\n";
            strata += std::to_string(id) + "," + std::to_string(h + 1) + "\n";
        }
    io::write_file(dir / "big.csv", big);
    io::write_file(dir / "big_strata.csv", strata);
    ASSERT_EQ(run("stratify --input " + (dir / "big.csv").string() + " --strata " + (dir / "big_strata.csv").string() +
                  " --n 2000 --out " + dir.string()),
              0);
    const auto j = io::read_json(dir / "allocations.json");
    EXPECT_EQ(j["PROP"]["n_h"].get<std::vector<std::size_t>>(), (std::vector<std::size_t>{716, 256, 265, 763}));
}

TEST(CliSimulate, CensusZeroLossAndReproducible) {
    const auto dir = scratch("simulate");
    io::write_file(dir / "synth.json", R"({"N": 80, "D": 8})");
    io::write_file(dir / "census.json", R"({"n": 80, "H": 2, "designs": ["SRSWOR"]})");
    ASSERT_EQ(run("simulate --config " + (dir / "synth.json").string() + " --design " + (dir / "census.json").string() +
                  " --reps 1 --seed 2 --tol 1e-12 --max-iter 5000 --out " + dir.string()),
              0);
    const auto rep = io::read_json(dir / "report.json");
    EXPECT_LT(rep["designs"][0]["loss"]["mean"].get<double>(), 1e-8);

    io::write_file(dir / "small.json", R"({"n": 20, "H": 2})");
    const std::string args = "simulate --config " + (dir / "synth.json").string() + " --design " +
                             (dir / "small.json").string() + " --reps 4 --seed 5 --out ";
    ASSERT_EQ(run(args + (dir / "a").string()), 0);
    ASSERT_EQ(run(args + (dir / "b").string() + " --threads 2"), 0);
    for (const char* f : {"report.json", "losses.csv", "truth.csv", "variance_SRSWOR.csv"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_EQ(io::read_json(dir / "a" / "report.json")["designs"].size(), 8u);
}

TEST(CliSynth, WritesBothWeeksDeterministically) {
    const auto dir = scratch("synth");
    io::write_file(dir / "s.json", R"({"N": 30, "D": 14, "days": 7})");
    ASSERT_EQ(run("synth --config " + (dir / "s.json").string() + " --seed 4 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("synth --config " + (dir / "s.json").string() + " --seed 4 --out " + (dir / "b").string()), 0);
    EXPECT_EQ(slurp(dir / "a" / "week2.csv"), slurp(dir / "b" / "week2.csv"));
    EXPECT_EQ(io::read_curves(dir / "a" / "week1.csv").size(), 30u);
    io::write_file(dir / "bad.json", R"({"N": 3})");
    EXPECT_EQ(run("synth --config " + (dir / "bad.json").string() + " --seed 4 --out " + dir.string()), 2);
}
