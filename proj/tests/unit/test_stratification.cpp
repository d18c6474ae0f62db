#include <gtest/gtest.h>

#include <map>
#include <random>

#include "medcurve/stratification.hpp"
#include "support/oracles.hpp"

using namespace medcurve;

namespace {

std::size_t sum(const std::vector<std::size_t>& v) { return std::accumulate(v.begin(), v.end(), std::size_t{0}); }

// Four tight clusters with well separated centres; truth[k] = cluster of unit k.
CurvePopulation planted_clusters(std::size_t per, std::vector<std::size_t>& truth, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.05);
    const std::size_t D = 6;
    CurveMatrix y(4 * per, D);
    truth.clear();
    for (std::size_t k = 0; k < 4 * per; ++k) {
        const std::size_t c = (k * 7) % 4;  // interleave clusters in the file
        truth.push_back(c);
        for (std::size_t d = 0; d < D; ++d) y(k, d) = 10.0 * static_cast<double>(c) * (d % 2 ? 1.0 : -1.0) + g(rng);
    }
    return {TimeGrid::uniform(D), std::move(y)};
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::map<std::size_t, std::size_t> ab, ba;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (ab.emplace(a[k], b[k]).first->second != b[k]) return false;
        if (ba.emplace(b[k], a[k]).first->second != a[k]) return false;
    }
    return true;
}

} // namespace

TEST(ProportionalAllocation, ReproducesPublishedRows) {
    const std::vector<std::size_t> t1{6767, 2420, 2503, 7212};
    EXPECT_EQ(proportional_allocation(t1, 2000).n_h, (std::vector<std::size_t>{716, 256, 265, 763}));
    const std::vector<std::size_t> t2{4725, 4726, 4725, 4726};
    EXPECT_EQ(proportional_allocation(t2, 2000).n_h, (std::vector<std::size_t>{500, 500, 500, 500}));
    const std::vector<std::size_t> eq{100, 100};
    EXPECT_EQ(proportional_allocation(eq, 10).n_h, (std::vector<std::size_t>{5, 5}));
}

TEST(ProportionalAllocation, MinimumOneRepairAndErrors) {
    const std::vector<std::size_t> sizes{1000, 1, 1};
    const auto a = proportional_allocation(sizes, 10);
    EXPECT_TRUE(a.min_one_repair);
    EXPECT_EQ(a.n_h, (std::vector<std::size_t>{8, 1, 1}));
    EXPECT_THROW(proportional_allocation(sizes, 2), Error);
    EXPECT_THROW(proportional_allocation(sizes, 1003), Error);
}

TEST(ProportionalAllocation, AlwaysSumsToNWithinBounds) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> size(1, 50), H(2, 6);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<std::size_t> sizes(H(rng));
        for (auto& s : sizes) s = size(rng);
        const std::size_t N = sum(sizes);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(sizes.size(), N)(rng);
        const auto a = proportional_allocation(sizes, n);
        EXPECT_EQ(sum(a.n_h), n);
        for (std::size_t h = 0; h < sizes.size(); ++h) {
            EXPECT_GE(a.n_h[h], 1u);
            EXPECT_LE(a.n_h[h], sizes[h]);
        }
    }
}

TEST(OptimalAllocation, HandComputedTwoStrata) {
    // Stratum 0: values {0, sqrt2} (variance 1); stratum 1: {0, 2 sqrt2} (variance 4). D = 1, T = 1.
    const auto g = TimeGrid::uniform(1);
    std::vector<std::size_t> labels;
    CurveMatrix y(20, 1);
    for (std::size_t k = 0; k < 20; ++k) {
        const bool second = k >= 10;
        labels.push_back(second);
        y(k, 0) = (k % 2) * std::sqrt(2.0) * (second ? 2.0 : 1.0);
    }
    // S^2 over 10 alternating values 0, c: c^2 * (10/4) / 9.  Rescale so the integrals are 1 and 4.
    y *= std::sqrt(9.0 / 10.0 * 4.0 / 2.0);
    StrataSpec strata(labels, 2);
    const auto integrals = within_variance_integrals(strata, CurvePopulation(g, y));
    EXPECT_NEAR(integrals[0], 1.0, 1e-12);
    EXPECT_NEAR(integrals[1], 4.0, 1e-12);
    const auto a = optimal_allocation(strata, CurvePopulation(g, y), 10);
    EXPECT_NEAR(a.targets[0], 10.0 / 3.0, 1e-12);
    EXPECT_EQ(a.n_h, (std::vector<std::size_t>{3, 7}));
}

TEST(OptimalAllocation, SymmetryZeroVarianceAndFallback) {
    auto pop = oracle::random_population(40, 3, 4);
    std::vector<std::size_t> labels(40);
    for (std::size_t k = 0; k < 40; ++k) labels[k] = k % 2;
    // Mirror stratum 0 into stratum 1 so within-stratum variances are equal.
    CurveMatrix y = pop.values();
    for (std::size_t k = 1; k < 40; k += 2) y.row(k) = -y.row(k - 1);
    const auto g = TimeGrid::uniform(3);
    EXPECT_EQ(optimal_allocation(StrataSpec(labels, 2), CurvePopulation(g, y), 10).n_h,
              (std::vector<std::size_t>{5, 5}));

    CurveMatrix z = y;
    for (std::size_t k = 0; k < 40; k += 2) z.row(k).setConstant(1.0);
    const auto a = optimal_allocation(StrataSpec(labels, 2), CurvePopulation(g, z), 10);
    EXPECT_EQ(a.n_h, (std::vector<std::size_t>{1, 9}));
    EXPECT_TRUE(a.min_one_repair);

    const auto flat = optimal_allocation(StrataSpec(labels, 2), CurvePopulation(g, CurveMatrix::Ones(40, 3)), 10);
    EXPECT_TRUE(flat.fell_back_to_prop);
    EXPECT_EQ(flat.n_h, (std::vector<std::size_t>{5, 5}));
}

TEST(OptimalAllocation, CapsAtStratumSize) {
    const auto g = TimeGrid::uniform(1);
    CurveMatrix y(13, 1);
    std::vector<std::size_t> labels;
    for (std::size_t k = 0; k < 13; ++k) {
        labels.push_back(k < 3 ? 0 : 1);
        y(k, 0) = k < 3 ? 100.0 * static_cast<double>(k) : 0.01 * static_cast<double>(k);
    }
    const auto a = optimal_allocation(StrataSpec(labels, 2), CurvePopulation(g, y), 8);
    EXPECT_EQ(a.n_h, (std::vector<std::size_t>{3, 5}));
}

TEST(QuartileStrata, RanksTiesAndPublishedSizes) {
    const std::vector<double> s{8, 7, 6, 5, 4, 3, 2, 1};
    EXPECT_EQ(quartile_strata(s).labels(), (std::vector<std::size_t>{3, 3, 2, 2, 1, 1, 0, 0}));
    const std::vector<double> flat(8, 1.0);
    EXPECT_EQ(quartile_strata(flat).labels(), (std::vector<std::size_t>{0, 0, 1, 1, 2, 2, 3, 3}));
    const std::vector<double> big(18902, 0.0);
    EXPECT_EQ(quartile_strata(big).sizes(), (std::vector<std::size_t>{4725, 4726, 4725, 4726}));
    EXPECT_THROW(quartile_strata(std::vector<double>{1, 2}, 4), Error);
}

TEST(KMeans, RecoversPlantedClusters) {
    std::vector<std::size_t> truth;
    const auto pop = planted_clusters(25, truth, 1);
    const auto res = kmeans(pop, 4, 42);
    EXPECT_TRUE(same_partition(res.strata.labels(), truth));
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
        EXPECT_LE(res.objective_trace[i], res.objective_trace[i - 1] * (1 + 1e-12));
}

TEST(KMeans, DeterministicAndDuplicationInvariant) {
    auto pop = oracle::random_population(60, 4, 5);
    const auto a = kmeans_strata(pop, 3, 11);
    EXPECT_EQ(a.labels(), kmeans_strata(pop, 3, 11).labels());

    std::vector<std::size_t> truth;
    const auto planted = planted_clusters(10, truth, 2);
    CurveMatrix twice(80, planted.dim());
    twice << planted.values(), planted.values();
    const auto dup = kmeans_strata(CurvePopulation(planted.grid(), twice), 4, 3).labels();
    const auto orig = kmeans_strata(planted, 4, 3).labels();
    EXPECT_EQ(std::vector<std::size_t>(dup.begin(), dup.begin() + 40), orig);
    EXPECT_EQ(std::vector<std::size_t>(dup.begin() + 40, dup.end()), orig);
}

TEST(KMeans, PreconditionsAndEmptyClusterRule) {
    auto pop = oracle::random_population(10, 2, 6);
    EXPECT_THROW(kmeans_strata(pop, 1, 0), Error);
    CurveMatrix y(6, 2);
    y << 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1;
    EXPECT_THROW(kmeans_strata(CurvePopulation(TimeGrid::uniform(2), y), 3, 0), Error);
    // Three distinct curves, many duplicates: every cluster must stay nonempty.
    CurveMatrix z(9, 2);
    z << 0, 0, 0, 0, 0, 0, 0, 0, 5, 5, 5, 5, 5, 5, 9, 9, 0, 0;
    const auto s = kmeans_strata(CurvePopulation(TimeGrid::uniform(2), z), 3, 7);
    for (std::size_t n : s.sizes()) EXPECT_GE(n, 1u);
}
