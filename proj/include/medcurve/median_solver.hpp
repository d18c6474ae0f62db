#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "medcurve/curves.hpp"

namespace medcurve {

enum class InitRule { weighted_pointwise_median, weighted_mean, user };

struct SolverConfig {
    double tol = 1e-8;        // on ||score|| / sum(w)
    double step_tol = 1e-10;  // on ||y_{i+1} - y_i|| / scale
    std::size_t max_iter = 500;
    InitRule init = InitRule::weighted_pointwise_median;
    std::optional<Curve> init_curve;  // used when init == user
    bool record_objective = false;

    void validate() const {
        if (!(tol > 0.0)) throw input_error("solver tolerance must be positive");
        if (!(step_tol > 0.0)) throw input_error("solver step tolerance must be positive");
        if (max_iter < 1) throw input_error("solver max_iter must be at least 1");
        if (init == InitRule::user && !init_curve) throw input_error("user init rule without an init curve");
    }
};

struct MedianFit {
    Curve median;
    std::size_t iterations = 0;
    double residual_norm = 0.0;  // ||sum_{k not anchor} w_k (Y_k - y)/||Y_k - y|| ||
    double total_weight = 0.0;
    bool anchored = false;
    std::optional<std::size_t> anchor_unit;
    bool converged = false;
    // Every residual direction Y_k - m lies on one line: Kemperman's uniqueness
    // condition fails and the Jacobian operator is singular at the solution.
    bool nonunique = false;
    std::vector<double> objective_trace;
};

namespace detail {

inline void check_weights(const CurvePopulation& curves, std::span<const double> weights) {
    if (weights.size() != curves.size())
        throw input_error("weights length " + std::to_string(weights.size()) + " does not match " +
                          std::to_string(curves.size()) + " curves");
    for (double w : weights)
        if (!(w > 0.0) || !std::isfinite(w)) throw input_error("curve weights must be positive and finite");
}

// Distances r_k = ||Y_k - y|| under the grid quadrature.
inline Vector distances(const CurvePopulation& curves, const Vector& y) {
    const Vector& q = curves.grid()->weights();
    const auto diff = curves.values().rowwise() - y.transpose();
    return (diff.array().square().rowwise() * q.transpose().array()).rowwise().sum().sqrt();
}

// Sum of w_k (Y_k - y)/r_k and of w_k / r_k over units farther than eps_anchor.
struct ScoreParts {
    Vector direction_sum;
    double inverse_distance_sum = 0.0;
};

inline ScoreParts score_parts(const CurvePopulation& curves, std::span<const double> weights, const Vector& y,
                              const Vector& r, double eps_anchor) {
    ScoreParts parts{Vector::Zero(y.size()), 0.0};
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const double rk = r[static_cast<Eigen::Index>(k)];
        if (rk <= eps_anchor) continue;
        const double c = weights[k] / rk;
        parts.direction_sum += c * (curves.row(k).transpose() - y);
        parts.inverse_distance_sum += c;
    }
    return parts;
}

inline double grid_norm(const Vector& q, const Vector& v) { return std::sqrt((q.array() * v.array().square()).sum()); }

// Residual directions all collinear (span of {Y_k - m} has dimension <= 1).
inline bool residuals_collinear(const CurvePopulation& curves, const Vector& m) {
    const Vector& q = curves.grid()->weights();
    Vector axis;
    double best = 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const Vector e = curves.row(k).transpose() - m;
        const double n = grid_norm(q, e);
        if (n > best) {
            best = n;
            axis = e / n;
        }
    }
    if (best == 0.0) return true;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const Vector e = curves.row(k).transpose() - m;
        const double along = (q.array() * e.array() * axis.array()).sum();
        const double n = grid_norm(q, e);
        if (grid_norm(q, e - along * axis) > 1e-9 * std::max(n, best)) return false;
    }
    return true;
}

} // namespace detail

// sum_k w_k ||Y_k - y||
inline double objective_value(const CurvePopulation& curves, std::span<const double> weights, const Curve& y) {
    detail::check_weights(curves, weights);
    if (!same_grid(curves.grid(), y.grid())) throw input_error("objective_value: grid mismatch");
    const Vector r = detail::distances(curves, y.values());
    double f = 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k) f += weights[k] * r[static_cast<Eigen::Index>(k)];
    return f;
}

struct Score {
    Curve value;                      // -sum_k w_k (Y_k - y)/||Y_k - y||
    std::vector<std::size_t> anchors; // units coinciding with y, left out of the sum
};

inline Score score(const CurvePopulation& curves, std::span<const double> weights, const Curve& y) {
    detail::check_weights(curves, weights);
    if (!same_grid(curves.grid(), y.grid())) throw input_error("score: grid mismatch");
    const Vector r = detail::distances(curves, y.values());
    Score out{Curve::zero(curves.grid()), {}};
    Vector acc = Vector::Zero(y.values().size());
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const double rk = r[static_cast<Eigen::Index>(k)];
        if (rk == 0.0) {
            out.anchors.push_back(k);
            continue;
        }
        acc -= (weights[k] / rk) * (curves.row(k).transpose() - y.values());
    }
    out.value = Curve(curves.grid(), std::move(acc));
    return out;
}

// Weighted L1-median: Weiszfeld iteration with the Vardi-Zhang modification at
// data points.  Optimal data points are detected through the anchor condition
// || sum_{k != j} w_k (Y_k - Y_j)/||Y_k - Y_j|| || <= w_j, which only depends on
// the data and is evaluated at most once per unit.
inline MedianFit l1_median(const CurvePopulation& curves, std::span<const double> weights,
                           const SolverConfig& cfg = {}) {
    cfg.validate();
    detail::check_weights(curves, weights);
    const std::size_t n = curves.size();
    const Vector& q = curves.grid()->weights();
    double total_weight = 0.0;
    for (double w : weights) total_weight += w;

    MedianFit fit{Curve::zero(curves.grid())};
    fit.total_weight = total_weight;

    if (n == 1) {
        fit.median = curves.curve(0);
        fit.anchored = true;
        fit.anchor_unit = 0;
        fit.converged = true;
        fit.nonunique = true;
        return fit;
    }

    Vector y;
    switch (cfg.init) {
    case InitRule::weighted_pointwise_median: y = pointwise_median(curves, weights).values(); break;
    case InitRule::weighted_mean: y = weighted_mean_curve(curves, weights).values(); break;
    case InitRule::user:
        if (!same_grid(cfg.init_curve->grid(), curves.grid())) throw input_error("init curve grid mismatch");
        y = cfg.init_curve->values();
        break;
    }

    Vector r = detail::distances(curves, y);
    double scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) scale += weights[k] * r[static_cast<Eigen::Index>(k)];
    scale /= total_weight;
    if (scale == 0.0) {
        // every curve equals the starting point
        fit.median = curves.curve(0);
        fit.anchored = true;
        fit.anchor_unit = 0;
        fit.converged = true;
        fit.nonunique = true;
        return fit;
    }
    const double eps_anchor = 1e-12 * scale;

    std::vector<signed char> anchor_checked(n, -1);  // -1 unknown, 0 not optimal, 1 optimal
    auto anchor_optimal = [&](std::size_t j) {
        if (anchor_checked[j] < 0) {
            const Vector yj = curves.row(j).transpose();
            const Vector rj = detail::distances(curves, yj);
            const auto parts = detail::score_parts(curves, weights, yj, rj, eps_anchor);
            anchor_checked[j] = detail::grid_norm(q, parts.direction_sum) <= weights[j] ? 1 : 0;
        }
        return anchor_checked[j] == 1;
    };
    auto finish_at_anchor = [&](std::size_t j, std::size_t iterations) {
        const Vector yj = curves.row(j).transpose();
        const Vector rj = detail::distances(curves, yj);
        const auto parts = detail::score_parts(curves, weights, yj, rj, eps_anchor);
        fit.median = curves.curve(j);
        fit.iterations = iterations;
        fit.residual_norm = detail::grid_norm(q, parts.direction_sum);
        fit.anchored = true;
        fit.anchor_unit = j;
        fit.converged = true;
        if (cfg.record_objective) {
            double f = 0.0;
            for (std::size_t k = 0; k < n; ++k) f += weights[k] * rj[static_cast<Eigen::Index>(k)];
            fit.objective_trace.push_back(f);
        }
        fit.nonunique = detail::residuals_collinear(curves, yj);
        return fit;
    };

    double last_step = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
        if (iter > 0) r = detail::distances(curves, y);
        Eigen::Index nearest = 0;
        const double r_min = r.minCoeff(&nearest);
        const auto j = static_cast<std::size_t>(nearest);

        if (cfg.record_objective) {
            double f = 0.0;
            for (std::size_t k = 0; k < n; ++k) f += weights[k] * r[static_cast<Eigen::Index>(k)];
            fit.objective_trace.push_back(f);
        }

        if (r_min < 0.1 * scale && anchor_optimal(j)) {
            if (cfg.record_objective) fit.objective_trace.pop_back();
            return finish_at_anchor(j, iter);
        }

        const auto parts = detail::score_parts(curves, weights, y, r, eps_anchor);
        const double residual = detail::grid_norm(q, parts.direction_sum);
        const bool at_anchor = r_min <= eps_anchor;

        if (!at_anchor && residual <= cfg.tol * total_weight && last_step <= cfg.step_tol * scale) {
            fit.median = Curve(curves.grid(), y);
            fit.iterations = iter;
            fit.residual_norm = residual;
            fit.converged = true;
            fit.nonunique = detail::residuals_collinear(curves, y);
            return fit;
        }

        Vector next = y + parts.direction_sum / parts.inverse_distance_sum;  // Weiszfeld map T(y)
        if (at_anchor) {
            // Vardi-Zhang: blend T(y) with y by eta / ||R||, eta = w_j.
            const double ratio = std::min(1.0, weights[j] / residual);
            next = (1.0 - ratio) * next + ratio * y;
        }
        last_step = detail::grid_norm(q, next - y);
        y = std::move(next);
    }

    r = detail::distances(curves, y);
    const auto parts = detail::score_parts(curves, weights, y, r, eps_anchor);
    fit.median = Curve(curves.grid(), y);
    fit.iterations = cfg.max_iter;
    fit.residual_norm = detail::grid_norm(q, parts.direction_sum);
    fit.converged = false;
    fit.nonunique = detail::residuals_collinear(curves, y);
    return fit;
}

inline MedianFit l1_median(std::span<const Curve> curves, std::span<const double> weights,
                           const SolverConfig& cfg = {}) {
    return l1_median(CurvePopulation::from_curves(curves), weights, cfg);
}

// Unit weights: the population median m_N.
inline MedianFit l1_median(const CurvePopulation& curves, const SolverConfig& cfg = {}) {
    const std::vector<double> ones(curves.size(), 1.0);
    return l1_median(curves, ones, cfg);
}

} // namespace medcurve
