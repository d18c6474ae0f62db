#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "medcurve/error.hpp"

namespace medcurve {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One curve per row.
using CurveMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Discretization points t_1 < ... < t_D and quadrature weights q_d with
// sum(q) = T.  All inner products and norms go through these weights.
class TimeGrid {
public:
    TimeGrid(std::vector<double> points, Vector weights)
        : points_(std::move(points)), weights_(std::move(weights)) {
        if (points_.empty()) throw input_error("time grid must have at least one point");
        if (static_cast<std::size_t>(weights_.size()) != points_.size())
            throw input_error("time grid: points and weights differ in length");
        for (std::size_t d = 0; d < points_.size(); ++d) {
            if (!std::isfinite(points_[d])) throw input_error("time grid: non-finite point");
            if (d > 0 && !(points_[d] > points_[d - 1]))
                throw input_error("time grid: points must be strictly increasing");
            if (!(weights_[static_cast<Eigen::Index>(d)] > 0.0))
                throw input_error("time grid: quadrature weights must be positive");
        }
        horizon_ = weights_.sum();
    }

    // Equal weights T/D on the given points.
    static std::shared_ptr<const TimeGrid> uniform(std::vector<double> points, double horizon = 1.0) {
        if (!(horizon > 0.0)) throw input_error("time grid: horizon must be positive");
        const auto D = static_cast<Eigen::Index>(points.size());
        if (D == 0) throw input_error("time grid must have at least one point");
        return std::make_shared<const TimeGrid>(std::move(points),
                                                Vector::Constant(D, horizon / static_cast<double>(D)));
    }

    // Points t_d = d T / D, d = 1..D, with equal weights.
    static std::shared_ptr<const TimeGrid> uniform(std::size_t D, double horizon = 1.0) {
        std::vector<double> pts(D);
        for (std::size_t d = 0; d < D; ++d)
            pts[d] = horizon * static_cast<double>(d + 1) / static_cast<double>(D);
        return uniform(std::move(pts), horizon);
    }

    // Trapezoid weights for non-uniform grids; horizon is t_D - t_1.
    static std::shared_ptr<const TimeGrid> trapezoid(std::vector<double> points) {
        const std::size_t D = points.size();
        if (D < 2) throw input_error("trapezoid quadrature needs at least two points");
        Vector q = Vector::Zero(static_cast<Eigen::Index>(D));
        for (std::size_t d = 0; d + 1 < D; ++d) {
            const double h = 0.5 * (points[d + 1] - points[d]);
            q[static_cast<Eigen::Index>(d)] += h;
            q[static_cast<Eigen::Index>(d + 1)] += h;
        }
        return std::make_shared<const TimeGrid>(std::move(points), std::move(q));
    }

    std::size_t size() const noexcept { return points_.size(); }
    const std::vector<double>& points() const noexcept { return points_; }
    const Vector& weights() const noexcept { return weights_; }
    double horizon() const noexcept { return horizon_; }

    bool is_uniform(double rel_tol = 1e-12) const {
        const double q0 = weights_[0];
        return ((weights_.array() - q0).abs() <= rel_tol * q0).all();
    }

    bool operator==(const TimeGrid& other) const {
        return points_ == other.points_ && weights_ == other.weights_;
    }

private:
    std::vector<double> points_;
    Vector weights_;
    double horizon_ = 0.0;
};

using GridPtr = std::shared_ptr<const TimeGrid>;

inline bool same_grid(const GridPtr& a, const GridPtr& b) {
    return a && b && (a == b || *a == *b);
}

class Curve {
public:
    Curve(GridPtr grid, Vector values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (!grid_) throw input_error("curve without a time grid");
        if (static_cast<std::size_t>(values_.size()) != grid_->size())
            throw input_error("curve length " + std::to_string(values_.size()) +
                              " does not match grid size " + std::to_string(grid_->size()));
        if (!values_.allFinite()) throw input_error("curve contains non-finite values");
    }

    static Curve zero(GridPtr grid) {
        const auto D = static_cast<Eigen::Index>(grid->size());
        return {std::move(grid), Vector::Zero(D)};
    }

    const GridPtr& grid() const noexcept { return grid_; }
    const Vector& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
    double operator[](std::size_t d) const { return values_[static_cast<Eigen::Index>(d)]; }

private:
    GridPtr grid_;
    Vector values_;
};

// The population U = {Y_1, ..., Y_N} on one shared grid.
class CurvePopulation {
public:
    CurvePopulation(GridPtr grid, CurveMatrix values, std::vector<std::string> ids = {})
        : grid_(std::move(grid)), values_(std::move(values)), ids_(std::move(ids)) {
        if (!grid_) throw input_error("population without a time grid");
        if (values_.rows() < 1) throw input_error("population must contain at least one curve");
        if (static_cast<std::size_t>(values_.cols()) != grid_->size())
            throw input_error("population width does not match grid size");
        if (!values_.allFinite()) throw input_error("population contains non-finite values");
        if (ids_.empty()) {
            ids_.reserve(static_cast<std::size_t>(values_.rows()));
            for (Eigen::Index k = 0; k < values_.rows(); ++k) ids_.push_back(std::to_string(k + 1));
        }
        if (ids_.size() != static_cast<std::size_t>(values_.rows()))
            throw input_error("population ids do not match the number of curves");
        std::vector<std::string> sorted = ids_;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw input_error("population ids must be unique");
    }

    static CurvePopulation from_curves(std::span<const Curve> curves) {
        if (curves.empty()) throw input_error("population must contain at least one curve");
        const GridPtr& grid = curves.front().grid();
        CurveMatrix m(static_cast<Eigen::Index>(curves.size()), static_cast<Eigen::Index>(grid->size()));
        for (std::size_t k = 0; k < curves.size(); ++k) {
            if (!same_grid(curves[k].grid(), grid)) throw input_error("curves do not share a time grid");
            m.row(static_cast<Eigen::Index>(k)) = curves[k].values().transpose();
        }
        return {grid, std::move(m)};
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }
    const GridPtr& grid() const noexcept { return grid_; }
    const CurveMatrix& values() const noexcept { return values_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }

    auto row(std::size_t k) const { return values_.row(static_cast<Eigen::Index>(k)); }
    Curve curve(std::size_t k) const { return {grid_, row(k).transpose()}; }

    CurvePopulation subset(std::span<const std::size_t> units) const {
        CurveMatrix m(static_cast<Eigen::Index>(units.size()), values_.cols());
        std::vector<std::string> ids;
        ids.reserve(units.size());
        for (std::size_t i = 0; i < units.size(); ++i) {
            if (units[i] >= size()) throw input_error("unit index out of range");
            m.row(static_cast<Eigen::Index>(i)) = row(units[i]);
            ids.push_back(ids_[units[i]]);
        }
        return {grid_, std::move(m), std::move(ids)};
    }

private:
    GridPtr grid_;
    CurveMatrix values_;
    std::vector<std::string> ids_;
};

namespace detail {

// Weighted lower median: smallest value whose cumulative weight reaches half the total.
inline double weighted_lower_median(std::vector<std::pair<double, double>>& value_weight) {
    std::sort(value_weight.begin(), value_weight.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    double total = 0.0;
    for (const auto& vw : value_weight) total += vw.second;
    const double half = 0.5 * total * (1.0 - 1e-12);
    double cum = 0.0;
    for (const auto& vw : value_weight) {
        cum += vw.second;
        if (cum >= half) return vw.first;
    }
    return value_weight.back().first;
}

} // namespace detail

inline double inner_product(const Curve& a, const Curve& b) {
    if (!same_grid(a.grid(), b.grid())) throw input_error("inner_product: curves live on different grids");
    return (a.grid()->weights().array() * a.values().array() * b.values().array()).sum();
}

inline double norm(const Curve& a) { return std::sqrt(inner_product(a, a)); }

// Coordinate-wise (weighted) lower median.
inline Curve pointwise_median(const CurvePopulation& pop, std::optional<std::span<const double>> weights = {}) {
    const std::size_t N = pop.size();
    if (weights && weights->size() != N) throw input_error("pointwise_median: weights length mismatch");
    if (weights)
        for (double w : *weights)
            if (!(w > 0.0)) throw input_error("pointwise_median: weights must be positive");
    Vector out(static_cast<Eigen::Index>(pop.dim()));
    std::vector<std::pair<double, double>> column(N);
    for (std::size_t d = 0; d < pop.dim(); ++d) {
        for (std::size_t k = 0; k < N; ++k)
            column[k] = {pop.values()(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)),
                         weights ? (*weights)[k] : 1.0};
        out[static_cast<Eigen::Index>(d)] = detail::weighted_lower_median(column);
    }
    return {pop.grid(), std::move(out)};
}

inline Curve weighted_mean_curve(const CurvePopulation& pop, std::span<const double> weights) {
    if (weights.size() != pop.size()) throw input_error("weighted_mean_curve: weights length mismatch");
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(pop.dim()));
    double total = 0.0;
    for (std::size_t k = 0; k < pop.size(); ++k) {
        acc += weights[k] * pop.row(k).transpose();
        total += weights[k];
    }
    return {pop.grid(), acc / total};
}

inline Curve mean_curve(const CurvePopulation& pop) {
    return {pop.grid(), pop.values().colwise().mean().transpose()};
}

} // namespace medcurve
