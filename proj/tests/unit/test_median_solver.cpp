#include <gtest/gtest.h>

#include <random>

#include "medcurve/median_solver.hpp"
#include "support/oracles.hpp"

using namespace medcurve;

namespace {

CurvePopulation square_configuration() {
    auto g = TimeGrid::uniform(2);
    CurveMatrix m(4, 2);
    m << 1, 0, -1, 0, 0, 1, 0, -1;
    return {g, m};
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace

TEST(L1Median, SingleCurveIsAnchored) {
    auto pop = oracle::random_population(1, 4, 1);
    const auto fit = l1_median(pop);
    EXPECT_TRUE(fit.converged);
    EXPECT_TRUE(fit.anchored);
    EXPECT_EQ(fit.median.values(), pop.curve(0).values());
}

TEST(L1Median, SymmetricFourPointConfiguration) {
    const auto fit = l1_median(square_configuration());
    EXPECT_TRUE(fit.converged);
    EXPECT_LT(fit.median.values().norm(), 1e-10);
}

TEST(L1Median, CollinearConstantCurvesGiveUnivariateMedian) {
    auto g = TimeGrid::uniform(5);
    CurveMatrix m(3, 5);
    m.row(0).setConstant(0.0);
    m.row(1).setConstant(1.0);
    m.row(2).setConstant(10.0);
    CurvePopulation pop(g, m);
    SolverConfig cfg;
    cfg.init = InitRule::weighted_mean;  // start away from the answer
    const auto fit = l1_median(pop, ones(3), cfg);
    EXPECT_TRUE(fit.converged);
    EXPECT_TRUE(fit.anchored);
    ASSERT_TRUE(fit.anchor_unit);
    EXPECT_EQ(*fit.anchor_unit, 1u);
    EXPECT_LT(max_abs_diff(fit.median.values(), Vector::Ones(5)), 1e-12);
    EXPECT_TRUE(fit.nonunique);
    // Anchor condition: ||sum_{k != 1} (Y_k - Y_1)/||Y_k - Y_1|| || = 0 <= w_1
    const auto s = score(pop, ones(3), fit.median);
    ASSERT_EQ(s.anchors.size(), 1u);
    EXPECT_LE(norm(s.value), 1.0);
}

TEST(L1Median, IdenticalCurvesReturnThatCurve) {
    auto g = TimeGrid::uniform(3);
    CurveMatrix m(4, 3);
    for (int k = 0; k < 4; ++k) m.row(k) << 2, -1, 5;
    const auto fit = l1_median(CurvePopulation(g, m));
    EXPECT_TRUE(fit.anchored);
    EXPECT_TRUE(fit.converged);
    EXPECT_EQ(fit.median.values(), m.row(0).transpose());
}

TEST(L1Median, MatchesGridSearchOn2D) {
    for (unsigned seed = 0; seed < 10; ++seed) {
        auto pop = oracle::random_population(10, 2, 100 + seed);
        const auto fit = l1_median(pop);
        ASSERT_TRUE(fit.converged);
        const auto q = oracle::weights_of(*pop.grid());
        double best = 0.0;
        oracle::grid_search_2d(q, oracle::rows_of(pop), ones(10), &best);
        const double f = objective_value(pop, ones(10), fit.median);
        EXPECT_LE(f, best + 1e-4) << "seed " << seed;
        EXPECT_GE(f, best - 1e-4) << "seed " << seed;
    }
}

TEST(L1Median, WeightsMatterAndScaleOut) {
    auto pop = oracle::random_population(15, 6, 77);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 4.0);
    std::vector<double> w(15), w10(15);
    for (int k = 0; k < 15; ++k) {
        w[k] = u(rng);
        w10[k] = 10.0 * w[k];
    }
    const auto a = l1_median(pop, w);
    const auto b = l1_median(pop, w10);
    const auto c = l1_median(pop);
    EXPECT_LT(max_abs_diff(a.median.values(), b.median.values()), 1e-9);
    EXPECT_GT(max_abs_diff(a.median.values(), c.median.values()), 1e-4);
}

TEST(L1Median, ObjectiveIsMonotoneAcrossIterations) {
    SolverConfig cfg;
    cfg.record_objective = true;
    cfg.init = InitRule::weighted_mean;
    for (unsigned seed = 0; seed < 10; ++seed) {
        auto pop = oracle::random_population(30, 8, 500 + seed);
        const auto fit = l1_median(pop, ones(30), cfg);
        ASSERT_TRUE(fit.converged);
        ASSERT_GE(fit.objective_trace.size(), 2u);
        for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
            EXPECT_LE(fit.objective_trace[i], fit.objective_trace[i - 1] * (1 + 1e-15));
    }
}

TEST(L1Median, NonConvergenceIsReportedWithLastIterate) {
    auto pop = oracle::random_population(40, 10, 9);
    SolverConfig cfg;
    cfg.max_iter = 1;
    const auto fit = l1_median(pop, ones(40), cfg);
    EXPECT_FALSE(fit.converged);
    EXPECT_EQ(fit.iterations, 1u);
    EXPECT_GT(fit.residual_norm, 0.0);
}

TEST(L1Median, RejectsBadConfigAndWeights) {
    auto pop = oracle::random_population(3, 2, 1);
    SolverConfig bad;
    bad.tol = 0.0;
    EXPECT_THROW(l1_median(pop, ones(3), bad), Error);
    EXPECT_THROW(l1_median(pop, std::vector<double>{1, -1, 1}), Error);
    EXPECT_THROW(l1_median(pop, ones(2)), Error);
}

TEST(L1Median, TranslationScaleAndOrthogonalEquivariance) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> n01;
    const std::size_t D = 6;
    for (unsigned seed = 0; seed < 5; ++seed) {
        auto pop = oracle::random_population(25, D, 900 + seed);
        const Vector m = l1_median(pop).median.values();

        Vector c(D);
        for (auto& x : c) x = 5.0 * n01(rng);
        CurveMatrix shifted = pop.values().rowwise() + c.transpose();
        EXPECT_LT(max_abs_diff(l1_median(CurvePopulation(pop.grid(), shifted)).median.values(), m + c), 1e-8);

        CurveMatrix scaled = 3.7 * pop.values();
        EXPECT_LT(max_abs_diff(l1_median(CurvePopulation(pop.grid(), scaled)).median.values(), 3.7 * m), 1e-8);

        Matrix a(D, D);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(rng);
        const Matrix Q = Eigen::HouseholderQR<Matrix>(a).householderQ();
        CurveMatrix rotated = pop.values() * Q.transpose();
        EXPECT_LT(max_abs_diff(l1_median(CurvePopulation(pop.grid(), rotated)).median.values(), Q * m), 1e-8);
    }
}

TEST(L1Median, RayRobustness) {
    auto pop = oracle::random_population(20, 5, 31);
    const Vector m = l1_median(pop).median.values();
    for (std::size_t k = 0; k < pop.size(); k += 4) {
        CurveMatrix moved = pop.values();
        moved.row(k) = (m + 10.0 * (pop.row(k).transpose() - m)).transpose();
        const Vector m2 = l1_median(CurvePopulation(pop.grid(), moved)).median.values();
        EXPECT_LT(max_abs_diff(m, m2), 1e-6);
    }
}

TEST(ObjectiveValue, KnownValues) {
    auto g = TimeGrid::uniform(3);
    CurveMatrix one(1, 3);
    one << 1, 2, 3;
    CurvePopulation single(g, one);
    EXPECT_EQ(objective_value(single, ones(1), single.curve(0)), 0.0);

    CurveMatrix two(2, 3);
    two << 0, 0, 0, 2, 2, 2;
    EXPECT_NEAR(objective_value(CurvePopulation(g, two), ones(2), Curve(g, Vector::Ones(3))), 2.0, 1e-14);
}

TEST(ObjectiveValue, MatchesSummationOracle) {
    auto pop = oracle::random_population(12, 7, 4);
    std::vector<double> w(12);
    for (int k = 0; k < 12; ++k) w[k] = 0.5 + k;
    const Curve y(pop.grid(), Vector::LinSpaced(7, -1, 1));
    std::vector<double> yv(y.values().data(), y.values().data() + 7);
    EXPECT_NEAR(objective_value(pop, w, y),
                oracle::objective(oracle::weights_of(*pop.grid()), oracle::rows_of(pop), w, yv), 1e-12);
}

TEST(Score, ZeroAtSymmetricCenter) {
    auto pop = square_configuration();
    const auto s = score(pop, ones(4), Curve::zero(pop.grid()));
    EXPECT_TRUE(s.anchors.empty());
    EXPECT_LT(s.value.values().norm(), 1e-15);
}

TEST(Score, SingleCurveGivesUnitDirection) {
    auto g = TimeGrid::uniform(4, 2.0);
    CurveMatrix m(1, 4);
    m << 1, 2, 3, 4;
    CurvePopulation pop(g, m);
    const Curve y(g, Vector::Constant(4, 0.5));
    const auto s = score(pop, ones(1), y);
    EXPECT_NEAR(norm(s.value), 1.0, 1e-14);
    const Vector expected = -(m.row(0).transpose() - y.values()) / norm(Curve(g, m.row(0).transpose() - y.values()));
    EXPECT_LT(max_abs_diff(s.value.values(), expected), 1e-15);
}

TEST(Score, MatchesSummationOracleAndFlagsAnchors) {
    auto pop = oracle::random_population(9, 5, 17);
    std::vector<double> w{1, 2, 3, 1, 2, 3, 1, 2, 3};
    const Curve y(pop.grid(), Vector::Constant(5, 0.1));
    const auto s = score(pop, w, y);
    const auto q = oracle::weights_of(*pop.grid());
    const auto rows = oracle::rows_of(pop);
    for (std::size_t d = 0; d < 5; ++d) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 9; ++k) {
            std::vector<double> e(5);
            for (std::size_t t = 0; t < 5; ++t) e[t] = rows[k][t] - 0.1;
            acc -= w[k] * e[d] / oracle::norm(q, e);
        }
        EXPECT_NEAR(s.value[d], acc, 1e-12);
    }
    const auto at_unit = score(pop, w, pop.curve(3));
    ASSERT_EQ(at_unit.anchors.size(), 1u);
    EXPECT_EQ(at_unit.anchors[0], 3u);
}
