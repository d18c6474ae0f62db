#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "medcurve/curves.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/error.hpp"
#include "medcurve/linearization.hpp"

namespace medcurve {

enum class VarianceKind { population_asymptotic, estimated };

struct VarianceFunction {
    Vector values;  // one value per grid point
    GridPtr grid;
    VarianceKind kind = VarianceKind::population_asymptotic;
    std::string design;
    bool approximate = false;       // formula borrowed from another design (SYS -> SRSWOR)
    std::size_t clamped = 0;        // negative pointwise values set to 0

    Vector standard_deviation() const { return values.cwiseMax(0.0).cwiseSqrt(); }
};

namespace detail {

inline double fpc_factor(double N, double n) { return N * N * (1.0 / n - 1.0 / N); }

// Column-wise sample variance (divisor m - 1) over the selected rows.
inline Vector column_variance(const CurveMatrix& values, std::span<const std::size_t> rows) {
    const auto D = values.cols();
    Vector mean = Vector::Zero(D), ss = Vector::Zero(D);
    if (rows.size() < 2) return ss;
    for (std::size_t r : rows) mean += values.row(static_cast<Eigen::Index>(r)).transpose();
    mean /= static_cast<double>(rows.size());
    for (std::size_t r : rows) ss += (values.row(static_cast<Eigen::Index>(r)).transpose() - mean).array().square().matrix();
    return ss / static_cast<double>(rows.size() - 1);
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
}

inline VarianceFunction clamp(VarianceFunction v) {
    for (Eigen::Index d = 0; d < v.values.size(); ++d)
        if (v.values[d] < 0.0) {
            v.values[d] = 0.0;
            ++v.clamped;
        }
    return v;
}

} // namespace detail

using JointProbability = std::function<double(std::size_t, std::size_t)>;

// Generic double sum over the population:
//   var(t) = sum_k sum_l (pi_kl - pi_k pi_l) u_k(t)/pi_k u_l(t)/pi_l,  pi_kk = pi_k.
inline VarianceFunction variance_double_sum(const LinearizedSet& u, const GridPtr& grid, std::span<const double> pi,
                                            const JointProbability& pi_kl) {
    const std::size_t N = u.size();
    if (pi.size() != N) throw input_error("variance: inclusion probabilities do not match the linearized set");
    const auto D = u.values.cols();
    Vector acc = Vector::Zero(D);
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t l = 0; l < N; ++l) {
            const double pkl = k == l ? pi[k] : pi_kl(k, l);
            const double delta = (pkl - pi[k] * pi[l]) / (pi[k] * pi[l]);
            acc += delta * u.values.row(static_cast<Eigen::Index>(k)).transpose().cwiseProduct(
                               u.values.row(static_cast<Eigen::Index>(l)).transpose());
        }
    return {std::move(acc), grid, VarianceKind::population_asymptotic, "generic"};
}

// Generic double-sum estimator over the sample:
//   var^(t) = sum_{k,l in s} (pi_kl - pi_k pi_l) / (pi_kl pi_k pi_l) u^_k(t) u^_l(t).
// Negative pointwise values are clamped to zero and counted.
inline VarianceFunction variance_estimate_double_sum(const LinearizedSet& uhat, const GridPtr& grid,
                                                     std::span<const double> pi, const JointProbability& pi_kl) {
    const std::size_t n = uhat.size();
    if (pi.size() != n) throw input_error("variance: inclusion probabilities do not match the linearized set");
    const auto D = uhat.values.cols();
    Vector acc = Vector::Zero(D);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l) {
            const double pkl = k == l ? pi[k] : pi_kl(k, l);
            if (!(pkl > 0.0))
                throw design_error("variance estimate: pi_kl = 0 for a sampled pair; use the SRSWOR approximation");
            const double c = (pkl - pi[k] * pi[l]) / (pkl * pi[k] * pi[l]);
            acc += c * uhat.values.row(static_cast<Eigen::Index>(k)).transpose().cwiseProduct(
                           uhat.values.row(static_cast<Eigen::Index>(l)).transpose());
        }
    return detail::clamp({std::move(acc), grid, VarianceKind::estimated, "generic"});
}

// N^2 (1/n - 1/N) S^2_{u(t),U}
inline VarianceFunction variance_srswor(const LinearizedSet& u, const GridPtr& grid, std::size_t n) {
    const double N = static_cast<double>(u.size());
    const auto rows = detail::all_rows(u.size());
    return {detail::fpc_factor(N, static_cast<double>(n)) * detail::column_variance(u.values, rows), grid,
            VarianceKind::population_asymptotic, "srswor"};
}

// sum_h N_h^2 (1/n_h - 1/N_h) S^2_{u(t),U_h}
inline VarianceFunction variance_stratified(const LinearizedSet& u, const GridPtr& grid, const StrataSpec& strata,
                                            std::span<const std::size_t> allocation) {
    if (strata.N() != u.size()) throw input_error("variance: strata do not cover the linearized set");
    Vector acc = Vector::Zero(u.values.cols());
    for (std::size_t h = 0; h < strata.H(); ++h) {
        const auto members = strata.members(h);
        acc += detail::fpc_factor(static_cast<double>(members.size()), static_cast<double>(allocation[h])) *
               detail::column_variance(u.values, members);
    }
    return {std::move(acc), grid, VarianceKind::population_asymptotic, "stratified"};
}

// Poststratified SRSWOR: N^2 (1/n - 1/N) sum_g (N_g - 1)/(N - 1) S^2_{u(t),U_g}
inline VarianceFunction variance_poststratified(const LinearizedSet& u, const GridPtr& grid, std::size_t n,
                                                const StrataSpec& groups) {
    if (groups.N() != u.size()) throw input_error("variance: groups do not cover the linearized set");
    const double N = static_cast<double>(u.size());
    Vector acc = Vector::Zero(u.values.cols());
    for (std::size_t g = 0; g < groups.H(); ++g) {
        const auto members = groups.members(g);
        acc += (static_cast<double>(members.size()) - 1.0) / (N - 1.0) * detail::column_variance(u.values, members);
    }
    return {detail::fpc_factor(N, static_cast<double>(n)) * acc, grid, VarianceKind::population_asymptotic,
            "poststratified"};
}

// Variance of the Hansen-Hurwitz total under n with-replacement draws:
//   (1/n) sum_k p_k (u_k/p_k - sum_l u_l)^2
inline VarianceFunction variance_ppswr(const LinearizedSet& u, const GridPtr& grid, std::span<const double> p,
                                       std::size_t draws) {
    if (p.size() != u.size()) throw input_error("variance: p does not match the linearized set");
    const Vector total = u.values.colwise().sum().transpose();
    Vector acc = Vector::Zero(u.values.cols());
    for (std::size_t k = 0; k < u.size(); ++k) {
        const Vector z = u.values.row(static_cast<Eigen::Index>(k)).transpose() / p[k] - total;
        acc += p[k] * z.cwiseProduct(z);
    }
    return {acc / static_cast<double>(draws), grid, VarianceKind::population_asymptotic, "ppswr"};
}

// Asymptotic variance function of the median estimator under `design`.
// Systematic sampling has no usable pi_kl and gets the SRSWOR formula (flagged).
inline VarianceFunction variance_function(const LinearizedSet& u, const GridPtr& grid, const Design& design) {
    if (u.size() != design.N) throw input_error("variance: design size does not match the population");
    switch (design.type) {
    case DesignType::srswor: return variance_srswor(u, grid, design.n);
    case DesignType::systematic: {
        auto v = variance_srswor(u, grid, design.n);
        v.design = "systematic";
        v.approximate = true;
        return v;
    }
    case DesignType::stratified: return variance_stratified(u, grid, design.strata, design.allocation);
    case DesignType::ppswr: return variance_ppswr(u, grid, design.p, design.n);
    }
    throw design_error("variance: unknown design");
}

inline VarianceFunction variance_function(const CurvePopulation& pop, const LinearizedSet& u, const Design& design) {
    return variance_function(u, pop.grid(), design);
}

// Generic double-sum route for a design; fails for designs without pi_kl.
inline VarianceFunction variance_function_generic(const LinearizedSet& u, const GridPtr& grid, const Design& design) {
    if (u.size() != design.N) throw input_error("variance: design size does not match the population");
    const auto probe = joint_inclusion(design, 0, design.N > 1 ? 1 : 0);
    if (const auto* rule = std::get_if<JointRule>(&probe))
        throw design_error("variance: design " + to_string(design.type) + " has no second-order inclusion probabilities (" +
                           to_string(*rule) + ")");
    auto v = variance_double_sum(u, grid, design.inclusion_all(),
                                 [&](std::size_t k, std::size_t l) { return std::get<double>(joint_inclusion(design, k, l)); });
    v.design = to_string(design.type);
    return v;
}

// N^2 (1/n - 1/N) S^2_{u^(t),s}
inline VarianceFunction variance_estimate_srswor(const LinearizedSet& uhat, const GridPtr& grid, std::size_t N) {
    const std::size_t n = uhat.size();
    const auto rows = detail::all_rows(n);
    return {detail::fpc_factor(static_cast<double>(N), static_cast<double>(n)) * detail::column_variance(uhat.values, rows),
            grid, VarianceKind::estimated, "srswor"};
}

// Sum over strata of the within-stratum SRSWOR estimators.  `sample_labels`
// gives the stratum of each row of uhat.
inline VarianceFunction variance_estimate_stratified(const LinearizedSet& uhat, const GridPtr& grid,
                                                     const StrataSpec& strata, std::span<const std::size_t> allocation,
                                                     std::span<const std::size_t> sample_labels) {
    if (sample_labels.size() != uhat.size()) throw input_error("variance estimate: one stratum label per sampled unit");
    std::vector<std::vector<std::size_t>> rows(strata.H());
    for (std::size_t i = 0; i < sample_labels.size(); ++i) rows.at(sample_labels[i]).push_back(i);
    Vector acc = Vector::Zero(uhat.values.cols());
    for (std::size_t h = 0; h < strata.H(); ++h) {
        if (rows[h].size() != allocation[h]) throw design_error("variance estimate: stratum sample size mismatch");
        acc += detail::fpc_factor(static_cast<double>(strata.sizes()[h]), static_cast<double>(allocation[h])) *
               detail::column_variance(uhat.values, rows[h]);
    }
    return {std::move(acc), grid, VarianceKind::estimated, "stratified"};
}

// Poststratified SRSWOR: SRSWOR formula applied to the residuals
// u^_k minus the sample mean of u^ in the unit's group.
inline VarianceFunction variance_estimate_poststratified(const LinearizedSet& uhat, const GridPtr& grid, std::size_t N,
                                                         std::span<const std::size_t> sample_labels, std::size_t G) {
    if (sample_labels.size() != uhat.size()) throw input_error("variance estimate: one group label per sampled unit");
    const auto D = uhat.values.cols();
    std::vector<Vector> mean(G, Vector::Zero(D));
    std::vector<double> count(G, 0.0);
    for (std::size_t i = 0; i < uhat.size(); ++i) {
        mean.at(sample_labels[i]) += uhat.values.row(static_cast<Eigen::Index>(i)).transpose();
        count[sample_labels[i]] += 1.0;
    }
    for (std::size_t g = 0; g < G; ++g)
        if (count[g] > 0) mean[g] /= count[g];
    LinearizedSet residual = uhat;
    for (std::size_t i = 0; i < uhat.size(); ++i)
        residual.values.row(static_cast<Eigen::Index>(i)) -= mean[sample_labels[i]].transpose();
    auto v = variance_estimate_srswor(residual, grid, N);
    v.design = "poststratified";
    return v;
}

// (1/(n(n-1))) sum_i (z_i - zbar)^2 with z_i = u^_{k_i} / p_{k_i} over the n draws.
// `draw_rows` maps each draw to its row in uhat.
inline VarianceFunction hansen_hurwitz_variance(const LinearizedSet& uhat, const GridPtr& grid,
                                                std::span<const std::size_t> draw_rows, std::span<const double> row_p) {
    const std::size_t n = draw_rows.size();
    if (n < 2) throw design_error("Hansen-Hurwitz variance needs at least two draws");
    if (row_p.size() != uhat.size()) throw input_error("Hansen-Hurwitz: one p per sampled unit");
    const auto D = uhat.values.cols();
    std::vector<Vector> z(n);
    Vector zbar = Vector::Zero(D);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = draw_rows[i];
        if (row >= uhat.size()) throw input_error("Hansen-Hurwitz: draw refers to a missing row");
        z[i] = uhat.values.row(static_cast<Eigen::Index>(row)).transpose() / row_p[row];
        zbar += z[i];
    }
    zbar /= static_cast<double>(n);
    Vector acc = Vector::Zero(D);
    for (const auto& zi : z) acc += (zi - zbar).array().square().matrix();
    return {acc / (static_cast<double>(n) * static_cast<double>(n - 1)), grid, VarianceKind::estimated, "ppswr"};
}

// Design-appropriate variance estimator for a without-replacement design.
// Systematic samples use the SRSWOR estimator (flagged approximate); ppswr
// goes through hansen_hurwitz_variance.
inline VarianceFunction variance_estimate(const LinearizedSet& uhat, const GridPtr& grid, const Design& design,
                                          const SampleDraw& sample) {
    if (uhat.size() != sample.size()) throw input_error("variance estimate: linearized set does not match the sample");
    switch (design.type) {
    case DesignType::srswor: return variance_estimate_srswor(uhat, grid, design.N);
    case DesignType::systematic: {
        auto v = variance_estimate_srswor(uhat, grid, design.N);
        v.design = "systematic";
        v.approximate = true;
        return v;
    }
    case DesignType::stratified: {
        std::vector<std::size_t> labels(sample.size());
        for (std::size_t i = 0; i < sample.size(); ++i) labels[i] = design.strata.label(sample.units[i]);
        return variance_estimate_stratified(uhat, grid, design.strata, design.allocation, labels);
    }
    case DesignType::ppswr: {
        std::vector<std::size_t> row_of(design.N, 0);
        std::vector<double> row_p(sample.size());
        for (std::size_t i = 0; i < sample.size(); ++i) {
            row_of[sample.units[i]] = i;
            row_p[i] = design.p[sample.units[i]];
        }
        std::vector<std::size_t> draw_rows;
        draw_rows.reserve(sample.draw_sequence.size());
        for (std::size_t k : sample.draw_sequence) draw_rows.push_back(row_of[k]);
        return hansen_hurwitz_variance(uhat, grid, draw_rows, row_p);
    }
    }
    throw design_error("variance estimate: unknown design");
}

// Generic double-sum estimator for a design; pi_kl from joint_inclusion.
inline VarianceFunction variance_estimate_generic(const LinearizedSet& uhat, const GridPtr& grid, const Design& design,
                                                  const SampleDraw& sample) {
    if (uhat.size() != sample.size()) throw input_error("variance estimate: linearized set does not match the sample");
    auto v = variance_estimate_double_sum(uhat, grid, sample.pi, [&](std::size_t i, std::size_t j) {
        const auto jk = joint_inclusion(design, sample.units[i], sample.units[j]);
        if (const auto* rule = std::get_if<JointRule>(&jk))
            throw design_error("variance estimate: design " + to_string(design.type) + " has no pi_kl (" +
                               to_string(*rule) + ")");
        return std::get<double>(jk);
    });
    v.design = to_string(design.type);
    return v;
}

} // namespace medcurve
