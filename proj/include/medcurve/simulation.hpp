#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "medcurve/curves.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/error.hpp"
#include "medcurve/estimators.hpp"
#include "medcurve/linearization.hpp"
#include "medcurve/median_solver.hpp"
#include "medcurve/rng.hpp"
#include "medcurve/stratification.hpp"
#include "medcurve/variance.hpp"

namespace medcurve {

// Synthetic load curves.  Each unit belongs to one of `regimes` consumption
// regimes with its own daily shape; a unit's curve is
//   scale_k * (shape_regime(t) * day_factor(t)) * (1 + noise)
// with log-normal unit scales.  Week 2 repeats week 1 with a small per-unit
// drift and fresh noise.
struct SynthConfig {
    std::size_t N = 2000;
    std::size_t D = 48;          // points per week curve
    std::size_t days = 1;        // days per week curve; D must be divisible by it
    std::size_t regimes = 4;
    double amplitude = 1.0;      // daily peak height relative to the base level
    double weekend_dip = 0.3;    // relative drop on days 6 and 7 of each week
    double scale_sigma = 0.5;    // sd of log unit scale
    double noise = 0.05;         // relative pointwise noise sd
    double drift = 0.05;         // sd of the week-2 relative level change
    double outlier_fraction = 0.01;
    double outlier_magnitude = 8.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (N < 10) throw input_error("synth: N must be at least 10");
        if (D < 1 || days < 1 || D % days != 0) throw input_error("synth: D must be a positive multiple of days");
        if (regimes < 1) throw input_error("synth: need at least one regime");
        if (outlier_fraction < 0.0 || outlier_fraction > 0.2) throw input_error("synth: outlier fraction must lie in [0, 0.2]");
        if (!(outlier_magnitude > 0.0)) throw input_error("synth: outlier magnitude must be positive");
        if (scale_sigma < 0.0 || noise < 0.0 || drift < 0.0 || amplitude < 0.0)
            throw input_error("synth: spreads and amplitude must be nonnegative");
        if (weekend_dip < 0.0 || weekend_dip >= 1.0) throw input_error("synth: weekend dip must lie in [0, 1)");
    }
};

struct SynthPopulation {
    CurvePopulation week1;  // auxiliary X_k
    CurvePopulation week2;  // study variable Y_k
    std::vector<std::size_t> regime;
    std::vector<double> scale;
    std::vector<bool> outlier;
};

namespace detail {

// Daily shape of regime r at time-of-day s in [0, 1): base level plus a
// periodic bump whose centre and width depend on the regime.
inline double regime_shape(std::size_t r, std::size_t regimes, double s, double amplitude) {
    static constexpr double centre[] = {0.1, 0.5, 0.8, 0.3};
    static constexpr double width[] = {0.08, 0.12, 0.06, 0.2};
    static constexpr double level[] = {1.0, 0.6, 0.8, 1.6};
    const std::size_t i = r % 4;
    const double shift = static_cast<double>(r / 4) / static_cast<double>(regimes + 1);
    double dist = std::abs(s - std::fmod(centre[i] + shift, 1.0));
    dist = std::min(dist, 1.0 - dist);
    const double bump = std::exp(-0.5 * (dist / width[i]) * (dist / width[i]));
    return level[i] + amplitude * (i == 3 ? 0.3 : 2.0) * bump;
}

} // namespace detail

inline SynthPopulation synth_population(const SynthConfig& cfg) {
    cfg.validate();
    auto rng = make_rng(cfg.seed);
    std::normal_distribution<double> gauss;
    const std::size_t per_day = cfg.D / cfg.days;
    const auto grid = TimeGrid::uniform(cfg.D, static_cast<double>(cfg.days));

    std::vector<double> shape(cfg.regimes * cfg.D);
    for (std::size_t r = 0; r < cfg.regimes; ++r)
        for (std::size_t d = 0; d < cfg.D; ++d) {
            const std::size_t day = d / per_day;
            const double s = static_cast<double>(d % per_day) / static_cast<double>(per_day);
            const double factor = day % 7 >= 5 ? 1.0 - cfg.weekend_dip : 1.0;
            shape[r * cfg.D + d] = detail::regime_shape(r, cfg.regimes, s, cfg.amplitude) * factor;
        }

    SynthPopulation out{CurvePopulation(grid, CurveMatrix::Zero(static_cast<Eigen::Index>(cfg.N), static_cast<Eigen::Index>(cfg.D))),
                        CurvePopulation(grid, CurveMatrix::Zero(static_cast<Eigen::Index>(cfg.N), static_cast<Eigen::Index>(cfg.D))),
                        {}, {}, {}};
    CurveMatrix w1(cfg.N, cfg.D), w2(cfg.N, cfg.D);
    for (std::size_t k = 0; k < cfg.N; ++k) {
        const std::size_t r = k % cfg.regimes;
        const double scale = std::exp(cfg.scale_sigma * gauss(rng));
        const bool outlier = uniform01(rng) < cfg.outlier_fraction;
        const double level1 = scale * (outlier ? cfg.outlier_magnitude : 1.0);
        const double level2 = level1 * std::max(0.05, 1.0 + cfg.drift * gauss(rng));
        for (std::size_t d = 0; d < cfg.D; ++d) {
            const double base = shape[r * cfg.D + d];
            w1(k, d) = level1 * base * std::max(0.0, 1.0 + cfg.noise * gauss(rng));
            w2(k, d) = level2 * base * std::max(0.0, 1.0 + cfg.noise * gauss(rng));
        }
        out.regime.push_back(r);
        out.scale.push_back(scale);
        out.outlier.push_back(outlier);
    }
    out.week1 = CurvePopulation(grid, std::move(w1));
    out.week2 = CurvePopulation(grid, std::move(w2));
    return out;
}

// Curves of `second` appended after those of `first` on one grid covering both periods.
inline CurvePopulation concatenate_periods(const CurvePopulation& first, const CurvePopulation& second) {
    if (first.size() != second.size()) throw input_error("concatenate: populations differ in size");
    const TimeGrid& a = *first.grid();
    const TimeGrid& b = *second.grid();
    std::vector<double> points = a.points();
    const double offset = a.points().back() + (b.points().size() > 1 ? b.points()[1] - b.points()[0] : 1.0) -
                          b.points().front();
    for (double t : b.points()) points.push_back(t + offset);
    Vector weights(a.weights().size() + b.weights().size());
    weights << a.weights(), b.weights();
    CurveMatrix values(static_cast<Eigen::Index>(first.size()), static_cast<Eigen::Index>(first.dim() + second.dim()));
    values << first.values(), second.values();
    return {std::make_shared<const TimeGrid>(std::move(points), std::move(weights)), std::move(values), first.ids()};
}

// R(a, b) = (1/D) sum_d |a(t_d) - b(t_d)|.
inline double loss_r(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw input_error("loss: length mismatch");
    return (a - b).cwiseAbs().mean();
}

inline double loss_r_median(const Curve& estimate, const Curve& truth) {
    if (!same_grid(estimate.grid(), truth.grid())) throw input_error("loss: curves on different grids");
    return loss_r(estimate.values(), truth.values());
}

// Quadrature version of the integrated absolute error.
inline double loss_r_median_quadrature(const Curve& estimate, const Curve& truth) {
    if (!same_grid(estimate.grid(), truth.grid())) throw input_error("loss: curves on different grids");
    return estimate.grid()->weights().dot((estimate.values() - truth.values()).cwiseAbs());
}

inline double loss_r_variance(const VarianceFunction& estimate, const VarianceFunction& truth) {
    return loss_r(estimate.values, truth.values);
}

struct Summary {
    double mean = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0;
    std::size_t count = 0;
};

// Linear-interpolation quantile (Hyndman-Fan type 7).
inline double quantile7(std::vector<double> v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Summary over the finite entries (failed replicates are NaN).
inline Summary summarize(const std::vector<double>& values) {
    std::vector<double> ok;
    for (double x : values)
        if (std::isfinite(x)) ok.push_back(x);
    Summary s;
    s.count = ok.size();
    if (ok.empty()) {
        s.mean = s.q1 = s.median = s.q3 = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double total = 0.0;
    for (double x : ok) total += x;
    s.mean = total / static_cast<double>(ok.size());
    s.q1 = quantile7(ok, 0.25);
    s.median = quantile7(ok, 0.5);
    s.q3 = quantile7(ok, 0.75);
    return s;
}

enum class EstimatorKind { horvitz_thompson, poststratified };

// One design/estimator combination in a Monte Carlo comparison.
struct DesignCase {
    std::string name;
    Design design;
    EstimatorKind estimator = EstimatorKind::horvitz_thompson;
    std::vector<std::size_t> groups;  // poststratification labels over the population
    bool estimate_variance = false;
    EstimatorOptions weighting;
};

struct MonteCarloConfig {
    std::size_t replicates = 300;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    SolverConfig solver;
    double truth_tol = 1e-10;
    bool keep_estimates = false;  // store every replicate's median (memory: R x D per case)
};

struct CaseResult {
    std::string name;
    std::string design;
    std::vector<double> loss;           // R(m_hat) per replicate, NaN on failure
    std::vector<double> variance_loss;  // R(var_hat) per replicate when estimated
    std::vector<std::string> failure;   // empty string when the replicate succeeded
    std::vector<std::uint64_t> seeds;
    std::vector<Vector> estimates;      // only with keep_estimates
    std::vector<Vector> variance_estimates;
    VarianceFunction variance;          // asymptotic var(t) at the population median
    bool has_variance = false;
    Summary loss_summary;
    Summary variance_loss_summary;
    std::size_t failures = 0;
};

struct MonteCarloReport {
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    Curve truth;
    std::size_t truth_iterations = 0;
    std::vector<CaseResult> cases;

    const CaseResult& at(const std::string& name) const {
        for (const auto& c : cases)
            if (c.name == name) return c;
        throw input_error("report: no design named " + name);
    }
};

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Population variance function for a case; POST uses the group formula.
inline std::optional<VarianceFunction> case_variance(const DesignCase& c, const LinearizedSet& u, const GridPtr& grid) {
    try {
        if (c.estimator == EstimatorKind::poststratified)
            return variance_poststratified(u, grid, c.design.n, StrataSpec::from_labels(c.groups));
        return variance_function(u, grid, c.design);
    } catch (const Error&) {
        return std::nullopt;
    }
}

namespace detail {

struct Replicate {
    double loss = std::numeric_limits<double>::quiet_NaN();
    double variance_loss = std::numeric_limits<double>::quiet_NaN();
    std::string failure;
    Vector estimate;
    Vector variance_estimate;
};

inline Replicate run_replicate(const CurvePopulation& pop, const Curve& truth, const DesignCase& c,
                               const std::optional<VarianceFunction>& var, const SolverConfig& solver,
                               std::uint64_t seed) {
    Replicate out;
    try {
        const SampleDraw s = draw(c.design, seed);
        const CurvePopulation on_sample = sample_curves(s, pop);
        const bool post = c.estimator == EstimatorKind::poststratified;
        std::vector<std::size_t> labels, group_sizes;
        if (post) {
            group_sizes = StrataSpec::from_labels(c.groups).sizes();
            labels = labels_on_sample(s, c.groups);
        }
        const WeightedSample ws = post ? poststratified_sample(s, on_sample, labels, group_sizes)
                                       : ht_sample(s, on_sample, c.weighting);
        const MedianFit fit = l1_median(ws.curves, ws.weights, solver);
        out.estimate = fit.median.values();
        if (!fit.converged) {
            out.failure = "solver did not converge";
            return out;
        }
        out.loss = loss_r_median(fit.median, truth);
        if (c.estimate_variance && var) {
            const auto uhat = estimated_linearized_variables(ws.curves, ws.weights, fit.median);
            VarianceFunction vhat;
            if (post)
                vhat = variance_estimate_poststratified(uhat, pop.grid(), pop.size(), labels, group_sizes.size());
            else
                vhat = variance_estimate(uhat, pop.grid(), c.design, s);
            out.variance_loss = loss_r_variance(vhat, *var);
            out.variance_estimate = vhat.values;
        }
    } catch (const Error& e) {
        out.failure = e.what();
        out.loss = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

} // namespace detail

// Draw, estimate and score every case R times.  Replicate r of case i uses
// seed derive_seed(master, i, r); results are stored by index so the report
// does not depend on the number of threads.
inline MonteCarloReport monte_carlo_compare(const CurvePopulation& pop, const std::vector<DesignCase>& cases,
                                            const MonteCarloConfig& cfg) {
    if (cfg.replicates < 1) throw input_error("simulation: need at least one replicate");
    cfg.solver.validate();
    for (const auto& c : cases) {
        if (c.design.N != pop.size())
            throw design_error("simulation: design " + c.name + " has N=" + std::to_string(c.design.N) +
                               " but the population has " + std::to_string(pop.size()) + " units");
        if (c.estimator == EstimatorKind::poststratified) {
            if (c.design.type != DesignType::srswor) throw design_error("simulation: poststratification needs SRSWOR");
            if (c.groups.size() != pop.size()) throw design_error("simulation: poststratification labels do not cover the population");
        }
    }

    SolverConfig truth_cfg = cfg.solver;
    truth_cfg.tol = cfg.truth_tol;
    truth_cfg.step_tol = std::min(cfg.solver.step_tol, cfg.truth_tol);
    truth_cfg.max_iter = std::max<std::size_t>(cfg.solver.max_iter, 10000);
    const MedianFit truth = l1_median(pop, truth_cfg);

    std::optional<LinearizedSet> u;
    try {
        u = linearized_variables(pop, truth.median);
    } catch (const Error&) {
        u.reset();
    }

    MonteCarloReport report{cfg.replicates, cfg.seed, truth.median, truth.iterations, {}};

    const std::size_t R = cfg.replicates;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const DesignCase& c = cases[i];
        CaseResult res;
        res.name = c.name;
        res.design = to_string(c.design.type);
        std::optional<VarianceFunction> var;
        if (u) var = case_variance(c, *u, pop.grid());
        if (var) {
            res.variance = *var;
            res.has_variance = true;
        }
        std::vector<detail::Replicate> reps(R);
        res.seeds.resize(R);
        for (std::size_t r = 0; r < R; ++r) res.seeds[r] = derive_seed(cfg.seed, i, r);

        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t r = next++; r < R; r = next++)
                reps[r] = detail::run_replicate(pop, truth.median, c, var, cfg.solver, res.seeds[r]);
        };
        const std::size_t T = std::min(resolve_threads(cfg.threads), R);
        if (T <= 1) {
            worker();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < T; ++t) pool.emplace_back(worker);
        }

        for (auto& rep : reps) {
            res.loss.push_back(rep.loss);
            res.variance_loss.push_back(rep.variance_loss);
            if (!rep.failure.empty()) ++res.failures;
            res.failure.push_back(std::move(rep.failure));
            if (cfg.keep_estimates) {
                res.estimates.push_back(std::move(rep.estimate));
                res.variance_estimates.push_back(std::move(rep.variance_estimate));
            }
        }
        res.loss_summary = summarize(res.loss);
        res.variance_loss_summary = summarize(res.variance_loss);
        report.cases.push_back(std::move(res));
    }
    return report;
}

// The design line-up of the study: SRSWOR, SYS on the week-1 mean, STRAT with
// k-means strata on week-1 linearized variables (PROP and u-OPTIM), POST on
// the same groups, quartile strata on the week-1 maximum (PROP and x-OPTIM),
// and PPS proportional to the week-1 mean.
struct ProtocolConfig {
    std::size_t n = 200;
    std::size_t H = 4;
    std::uint64_t seed = 1;  // strata construction
    bool estimate_variance = true;
};

struct Protocol {
    std::vector<DesignCase> cases;
    Curve week1_median;
    LinearizedSet u1;
    StrataSpec u_strata;
    StrataSpec x_strata;
    Allocation u_prop, u_optim, x_prop, x_optim;
};

inline Protocol build_protocol(const CurvePopulation& week1, const ProtocolConfig& cfg) {
    const std::size_t N = week1.size();
    if (cfg.n < cfg.H || cfg.n > N) throw design_error("protocol: need H <= n <= N");
    SolverConfig tight;
    tight.tol = 1e-10;
    tight.step_tol = 1e-12;
    tight.max_iter = 10000;
    Protocol p{{}, l1_median(week1, tight).median, {}, {}, {}, {}, {}, {}, {}};
    p.u1 = linearized_variables(week1, p.week1_median);
    const CurvePopulation u_pop(week1.grid(), p.u1.values, week1.ids());
    p.u_strata = kmeans_strata(u_pop, cfg.H, cfg.seed);
    p.u_prop = proportional_allocation(p.u_strata.sizes(), cfg.n);
    p.u_optim = optimal_allocation(p.u_strata, u_pop, cfg.n, AllocationRule::u_optimal);
    p.x_strata = quartile_strata(max_summary(week1), cfg.H);
    p.x_prop = proportional_allocation(p.x_strata.sizes(), cfg.n);
    p.x_optim = optimal_allocation(p.x_strata, week1, cfg.n, AllocationRule::x_optimal);

    std::vector<double> key(N);
    for (std::size_t k = 0; k < N; ++k) key[k] = week1.row(k).mean();

    const bool v = cfg.estimate_variance;
    p.cases.push_back({"SRSWOR", Design::srswor(N, cfg.n), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"SYS", Design::systematic(key, cfg.n), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"STRAT-u-PROP", Design::stratified(p.u_strata, p.u_prop.n_h), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"STRAT-u-OPTIM", Design::stratified(p.u_strata, p.u_optim.n_h), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"POST", Design::srswor(N, cfg.n), EstimatorKind::poststratified, p.u_strata.labels(), v, {}});
    p.cases.push_back({"STRAT-x-PROP", Design::stratified(p.x_strata, p.x_prop.n_h), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"STRAT-x-OPTIM", Design::stratified(p.x_strata, p.x_optim.n_h), EstimatorKind::horvitz_thompson, {}, v, {}});
    p.cases.push_back({"PPS", Design::ppswr(pps_weights_from_curves(week1), cfg.n), EstimatorKind::horvitz_thompson, {}, v, {}});
    return p;
}

} // namespace medcurve
