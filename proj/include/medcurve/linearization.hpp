#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "medcurve/curves.hpp"
#include "medcurve/error.hpp"

namespace medcurve {

// Discretized Jacobian operator of the median score,
//   Gamma = sum_k (w_k / r_k) [ I - (Y_k - m) (x) (Y_k - m) / r_k^2 ],
// stored as the matrix acting on value vectors (y(t_1), ..., y(t_D)).  With
// quadrature weights Q = diag(q) the matrix is Q-self-adjoint; on uniform grids
// it is symmetric.
struct GammaMatrix {
    Matrix entries;
    Curve at;
    std::vector<double> weights_used;
    std::vector<std::size_t> excluded_anchors;  // units with ||Y_k - m|| below the anchor threshold

    // Q^{1/2} Gamma Q^{-1/2}: the symmetric matrix similar to `entries`.
    Matrix symmetric_form() const {
        const Vector sq = at.grid()->weights().cwiseSqrt();
        return sq.asDiagonal() * entries * sq.cwiseInverse().asDiagonal();
    }

    Vector apply(const Vector& y) const { return entries * y; }
};

enum class LinearizedSource { population, sample_estimated };

struct LinearizedSet {
    CurveMatrix values;  // row k holds u_k(t_1..t_D); zero for excluded anchors
    LinearizedSource source = LinearizedSource::population;
    std::vector<std::size_t> excluded_anchors;
    double condition_estimate = 0.0;  // 1 / rcond of the symmetric factorization
    bool ridge_applied = false;
    double ridge = 0.0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.rows()); }
};

struct LinearizationOptions {
    double anchor_rel = 1e-12;        // anchors: ||Y_k - m|| < anchor_rel * mean distance
    double max_condition = 1e12;      // above this a ridge is added
    double ridge_factor = 1e-10;      // ridge = ridge_factor * trace / D
};

namespace detail {

struct Residuals {
    CurveMatrix e;       // Y_k - m
    Vector r;            // ||Y_k - m||
    std::vector<bool> usable;
    std::vector<std::size_t> anchors;
};

inline Residuals residuals(const CurvePopulation& curves, std::span<const double> weights, const Curve& m,
                           double anchor_rel) {
    if (weights.size() != curves.size()) throw input_error("linearization: weights length mismatch");
    if (!same_grid(curves.grid(), m.grid())) throw input_error("linearization: grid mismatch");
    for (double w : weights)
        if (!(w > 0.0)) throw input_error("linearization: weights must be positive");
    const Vector& q = curves.grid()->weights();
    Residuals out;
    out.e = curves.values().rowwise() - m.values().transpose();
    out.r = (out.e.array().square().rowwise() * q.transpose().array()).rowwise().sum().sqrt();
    double scale = 0.0, total = 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        scale += weights[k] * out.r[static_cast<Eigen::Index>(k)];
        total += weights[k];
    }
    const double eps = anchor_rel * scale / total;
    out.usable.assign(curves.size(), true);
    for (std::size_t k = 0; k < curves.size(); ++k)
        if (!(out.r[static_cast<Eigen::Index>(k)] > eps)) {
            out.usable[k] = false;
            out.anchors.push_back(k);
        }
    if (out.anchors.size() == curves.size())
        throw solver_error("linearization: no usable units (every curve coincides with the median)");
    return out;
}

} // namespace detail

// Tensor-product assembly: one rank-one correction per unit.
inline GammaMatrix gamma_matrix(const CurvePopulation& curves, std::span<const double> weights, const Curve& m,
                                const LinearizationOptions& opt = {}) {
    const auto res = detail::residuals(curves, weights, m, opt.anchor_rel);
    const Vector& q = curves.grid()->weights();
    const auto D = static_cast<Eigen::Index>(curves.dim());
    Matrix G = Matrix::Zero(D, D);
    double diag = 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        if (!res.usable[k]) continue;
        const double rk = res.r[static_cast<Eigen::Index>(k)];
        const double c = weights[k] / rk;
        diag += c;
        const Vector e = res.e.row(static_cast<Eigen::Index>(k)).transpose();
        // (e (x) e) y = <e, y> e  ->  e e^T Q
        G.noalias() -= (c / (rk * rk)) * e * (e.cwiseProduct(q)).transpose();
    }
    G.diagonal().array() += diag;
    return {std::move(G), m, {weights.begin(), weights.end()}, res.anchors};
}

// Integral-kernel assembly:
//   (Gamma y)(t_i) = (sum_k w_k / r_k) y(t_i) - sum_j gamma(t_j, t_i) q_j y(t_j),
//   gamma(s, t)    = sum_k w_k (Y_k(s) - m(s)) (Y_k(t) - m(t)) / r_k^3.
inline GammaMatrix gamma_matrix_integral(const CurvePopulation& curves, std::span<const double> weights,
                                         const Curve& m, const LinearizationOptions& opt = {}) {
    const auto res = detail::residuals(curves, weights, m, opt.anchor_rel);
    const Vector& q = curves.grid()->weights();
    const std::size_t D = curves.dim();
    Matrix kernel = Matrix::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
    double diag = 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        if (!res.usable[k]) continue;
        const double rk = res.r[static_cast<Eigen::Index>(k)];
        diag += weights[k] / rk;
        const double c = weights[k] / (rk * rk * rk);
        for (std::size_t s = 0; s < D; ++s)
            for (std::size_t t = 0; t < D; ++t)
                kernel(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) +=
                    c * res.e(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) *
                    res.e(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t));
    }
    Matrix G(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) {
            const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
            G(I, J) = (i == j ? diag : 0.0) - kernel(J, I) * q[J];
        }
    return {std::move(G), m, {weights.begin(), weights.end()}, res.anchors};
}

// Solve Gamma u_k = (Y_k - m) / ||Y_k - m|| for every usable unit with one
// LDLT factorization of the symmetrized operator.
inline LinearizedSet solve_linearized(const GammaMatrix& gamma, const CurvePopulation& curves, LinearizedSource source,
                                      const LinearizationOptions& opt = {}) {
    const Vector& q = curves.grid()->weights();
    const Vector sq = q.cwiseSqrt();
    const auto D = static_cast<Eigen::Index>(curves.dim());
    Matrix S = gamma.symmetric_form();
    S = 0.5 * (S + S.transpose());

    LinearizedSet out;
    out.source = source;
    out.excluded_anchors = gamma.excluded_anchors;

    Eigen::LDLT<Matrix> ldlt(S);
    double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    if (!(cond <= opt.max_condition)) {
        const double lambda = opt.ridge_factor * S.trace() / static_cast<double>(D);
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw solver_error("linearization: Gamma is singular (condition estimate " + std::to_string(cond) +
                               "); residual directions are collinear");
        S.diagonal().array() += lambda;
        ldlt.compute(S);
        rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
        cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
        if (!std::isfinite(cond))
            throw solver_error("linearization: Gamma factorization failed after ridge (condition estimate " +
                               std::to_string(cond) + ")");
        out.ridge_applied = true;
        out.ridge = lambda;
    }
    out.condition_estimate = cond;

    const Vector m = gamma.at.values();
    const CurveMatrix e = curves.values().rowwise() - m.transpose();
    const Vector r = (e.array().square().rowwise() * q.transpose().array()).rowwise().sum().sqrt();
    std::vector<bool> usable(curves.size(), true);
    for (std::size_t k : gamma.excluded_anchors) usable[k] = false;

    Matrix rhs(D, static_cast<Eigen::Index>(curves.size()));
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const auto K = static_cast<Eigen::Index>(k);
        if (usable[k])
            rhs.col(K) = sq.cwiseProduct(e.row(K).transpose()) / r[K];
        else
            rhs.col(K).setZero();
    }
    const Matrix z = ldlt.solve(rhs);
    out.values = (sq.cwiseInverse().asDiagonal() * z).transpose();
    return out;
}

// Population linearized variables u_k at the population median (unit weights).
inline LinearizedSet linearized_variables(const CurvePopulation& pop, const Curve& median,
                                          const LinearizationOptions& opt = {}) {
    const std::vector<double> ones(pop.size(), 1.0);
    const auto gamma = gamma_matrix(pop, ones, median, opt);
    return solve_linearized(gamma, pop, LinearizedSource::population, opt);
}

// Estimated linearized variables on a sample: Gamma-hat uses the estimator
// weights (1/pi_k for Horvitz-Thompson) and the estimated median.
inline LinearizedSet estimated_linearized_variables(const CurvePopulation& sample_curves,
                                                    std::span<const double> weights, const Curve& median,
                                                    const LinearizationOptions& opt = {}) {
    const auto gamma = gamma_matrix(sample_curves, weights, median, opt);
    return solve_linearized(gamma, sample_curves, LinearizedSource::sample_estimated, opt);
}

} // namespace medcurve
