#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "medcurve/curves.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/error.hpp"
#include "medcurve/rng.hpp"

namespace medcurve {

enum class AllocationRule { proportional, u_optimal, x_optimal };

inline std::string to_string(AllocationRule r) {
    switch (r) {
    case AllocationRule::proportional: return "PROP";
    case AllocationRule::u_optimal: return "u-OPTIM";
    case AllocationRule::x_optimal: return "x-OPTIM";
    }
    return "?";
}

struct Allocation {
    std::vector<std::size_t> n_h;
    AllocationRule rule = AllocationRule::proportional;
    std::size_t n = 0;
    bool min_one_repair = false;   // some stratum was raised to 1
    bool fell_back_to_prop = false; // optimal rule with all variances zero
    std::vector<double> targets;   // unrounded n_h
};

namespace detail {

// Largest-remainder rounding of nonnegative targets summing to n, with n_h <= cap_h.
// Targets above their cap are pinned and the excess redistributed pro rata
// among the rest before rounding.
inline std::vector<std::size_t> largest_remainder(std::vector<double> target, std::size_t n,
                                                  std::span<const std::size_t> cap) {
    const std::size_t H = target.size();
    std::vector<bool> pinned(H, false);
    for (bool changed = true; changed;) {
        changed = false;
        double free_mass = 0.0, free_n = static_cast<double>(n);
        for (std::size_t h = 0; h < H; ++h) {
            if (pinned[h]) free_n -= static_cast<double>(cap[h]);
            else free_mass += target[h];
        }
        for (std::size_t h = 0; h < H; ++h)
            if (!pinned[h] && free_mass > 0.0) target[h] *= free_n / free_mass;
        for (std::size_t h = 0; h < H; ++h)
            if (!pinned[h] && target[h] > static_cast<double>(cap[h])) {
                pinned[h] = true;
                target[h] = static_cast<double>(cap[h]);
                changed = true;
            }
    }
    std::vector<std::size_t> out(H);
    std::size_t assigned = 0;
    for (std::size_t h = 0; h < H; ++h) {
        out[h] = std::min(cap[h], static_cast<std::size_t>(std::floor(target[h] + 1e-9)));
        assigned += out[h];
    }
    std::vector<std::size_t> order(H);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
    });
    for (std::size_t pass = 0; assigned < n && pass < n + H; ++pass)
        for (std::size_t h : order) {
            if (assigned == n) break;
            if (out[h] < cap[h]) {
                ++out[h];
                ++assigned;
            }
        }
    return out;
}

// Raise empty strata to 1 by taking from the currently largest n_h.
inline bool min_one_repair(std::vector<std::size_t>& n_h) {
    bool repaired = false;
    for (auto& x : n_h)
        if (x == 0) {
            auto largest = std::max_element(n_h.begin(), n_h.end());
            if (*largest <= 1) throw design_error("allocation: n is smaller than the number of strata");
            --*largest;
            x = 1;
            repaired = true;
        }
    return repaired;
}

inline void check_total(std::span<const std::size_t> sizes, std::size_t n) {
    if (sizes.empty()) throw design_error("allocation: no strata");
    const std::size_t N = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (n < sizes.size() || n > N)
        throw design_error("allocation: need H <= n <= N (n=" + std::to_string(n) + ", N=" + std::to_string(N) + ")");
    for (std::size_t s : sizes)
        if (s == 0) throw design_error("allocation: empty stratum");
}

inline double grid_distance2(const TimeGrid& grid, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    return (a - b).cwiseAbs2().dot(grid.weights());
}

} // namespace detail

// n_h = n N_h / N with largest-remainder rounding.
inline Allocation proportional_allocation(std::span<const std::size_t> sizes, std::size_t n) {
    detail::check_total(sizes, n);
    const double N = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    Allocation a;
    a.rule = AllocationRule::proportional;
    a.n = n;
    for (std::size_t s : sizes) a.targets.push_back(static_cast<double>(n) * static_cast<double>(s) / N);
    a.n_h = detail::largest_remainder(a.targets, n, sizes);
    a.min_one_repair = detail::min_one_repair(a.n_h);
    return a;
}

// Integral over the grid of the within-stratum variance function of z.
inline std::vector<double> within_variance_integrals(const StrataSpec& strata, const CurvePopulation& z) {
    if (z.size() != strata.N()) throw input_error("allocation: curves do not match the strata");
    std::vector<double> out(strata.H(), 0.0);
    const Vector& q = z.grid()->weights();
    for (std::size_t h = 0; h < strata.H(); ++h) {
        const auto members = strata.members(h);
        if (members.size() < 2) continue;
        Vector mean = Vector::Zero(static_cast<Eigen::Index>(z.dim()));
        for (std::size_t k : members) mean += z.row(k).transpose();
        mean /= static_cast<double>(members.size());
        Vector ss = Vector::Zero(mean.size());
        for (std::size_t k : members) ss += (z.row(k).transpose() - mean).cwiseAbs2();
        out[h] = q.dot(ss) / static_cast<double>(members.size() - 1);
    }
    return out;
}

// n_h proportional to N_h sqrt(int S^2_{z,U_h}(t) dt).  z is the linearized
// variable for u-OPTIM or the auxiliary curve for x-OPTIM.
inline Allocation optimal_allocation(const StrataSpec& strata, const CurvePopulation& z, std::size_t n,
                                     AllocationRule rule = AllocationRule::u_optimal) {
    const auto& sizes = strata.sizes();
    detail::check_total(sizes, n);
    const auto integrals = within_variance_integrals(strata, z);
    std::vector<double> mass(strata.H());
    double total = 0.0;
    for (std::size_t h = 0; h < strata.H(); ++h) {
        mass[h] = static_cast<double>(sizes[h]) * std::sqrt(std::max(0.0, integrals[h]));
        total += mass[h];
    }
    if (!(total > 0.0)) {
        auto a = proportional_allocation(sizes, n);
        a.rule = rule;
        a.fell_back_to_prop = true;
        return a;
    }
    Allocation a;
    a.rule = rule;
    a.n = n;
    for (double m : mass) a.targets.push_back(static_cast<double>(n) * m / total);
    a.n_h = detail::largest_remainder(a.targets, n, sizes);
    a.min_one_repair = detail::min_one_repair(a.n_h);
    return a;
}

// Equal-size strata on a sorted scalar summary (ties by unit index).
// Stratum h holds ranks floor(hN/H) .. floor((h+1)N/H) - 1.
inline StrataSpec quartile_strata(std::span<const double> summary, std::size_t H = 4) {
    const std::size_t N = summary.size();
    if (H < 1 || N < H) throw design_error("quartile strata: need N >= H >= 1");
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return summary[a] < summary[b]; });
    std::vector<std::size_t> labels(N);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t r = h * N / H; r < (h + 1) * N / H; ++r) labels[order[r]] = h;
    return {std::move(labels), H};
}

// max_t X_k(t) per unit.
inline std::vector<double> max_summary(const CurvePopulation& pop) {
    std::vector<double> out(pop.size());
    for (std::size_t k = 0; k < pop.size(); ++k) out[k] = pop.row(k).maxCoeff();
    return out;
}

struct KMeansOptions {
    std::size_t restarts = 20;
    std::size_t max_iter = 300;
};

struct KMeansResult {
    StrataSpec strata;
    double objective = 0.0;                // within-cluster sum of squared grid-norm distances
    std::vector<double> objective_trace;   // per Lloyd iteration of the kept restart
    std::size_t iterations = 0;
    std::size_t reseeds = 0;               // empty-cluster events in the kept restart
};

namespace detail {

struct Lloyd {
    std::vector<std::size_t> labels;
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    std::size_t iterations = 0;
    std::size_t reseeds = 0;
};

inline Lloyd lloyd_once(const CurvePopulation& pop, std::size_t H, std::uint64_t seed, std::size_t max_iter) {
    const std::size_t N = pop.size();
    const TimeGrid& grid = *pop.grid();
    auto rng = make_rng(seed);
    Matrix centers(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(pop.dim()));

    // k-means++ seeding
    std::vector<double> d2(N, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
    centers.row(0) = pop.row(first);
    for (std::size_t c = 1; c < H; ++c) {
        double total = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            d2[k] = std::min(d2[k], grid_distance2(grid, pop.row(k).transpose(), centers.row(c - 1).transpose()));
            total += d2[k];
        }
        std::size_t pick = N - 1;
        if (total > 0.0) {
            double target = uniform01(rng) * total;
            for (std::size_t k = 0; k < N; ++k) {
                target -= d2[k];
                if (target < 0.0) {
                    pick = k;
                    break;
                }
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
        }
        centers.row(static_cast<Eigen::Index>(c)) = pop.row(pick);
    }

    Lloyd out;
    out.labels.assign(N, H);
    std::vector<double> dist(N);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool changed = false;
        double obj = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < H; ++c) {
                const double d = grid_distance2(grid, pop.row(k).transpose(),
                                                centers.row(static_cast<Eigen::Index>(c)).transpose());
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (out.labels[k] != best) changed = true;
            out.labels[k] = best;
            dist[k] = best_d;
            obj += best_d;
        }
        // Empty clusters take the point farthest from its centroid among clusters with > 1 member.
        std::vector<std::size_t> count(H, 0);
        for (std::size_t l : out.labels) ++count[l];
        for (std::size_t c = 0; c < H; ++c)
            if (count[c] == 0) {
                std::size_t far = N;
                for (std::size_t k = 0; k < N; ++k)
                    if (count[out.labels[k]] > 1 && (far == N || dist[k] > dist[far])) far = k;
                if (far == N) throw design_error("k-means: not enough distinct curves for the requested strata");
                obj -= dist[far];
                --count[out.labels[far]];
                out.labels[far] = c;
                count[c] = 1;
                dist[far] = 0.0;
                changed = true;
                ++out.reseeds;
            }
        out.trace.push_back(obj);
        out.objective = obj;
        out.iterations = it + 1;
        centers.setZero();
        for (std::size_t k = 0; k < N; ++k) centers.row(static_cast<Eigen::Index>(out.labels[k])) += pop.row(k);
        for (std::size_t c = 0; c < H; ++c) centers.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(count[c]);
        if (!changed) break;
    }
    // Objective at the final centroids.
    double obj = 0.0;
    for (std::size_t k = 0; k < N; ++k)
        obj += grid_distance2(grid, pop.row(k).transpose(),
                              centers.row(static_cast<Eigen::Index>(out.labels[k])).transpose());
    out.objective = obj;
    return out;
}

// Relabel clusters in order of first appearance so equal partitions get equal labels.
inline std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& labels, std::size_t H) {
    std::vector<std::size_t> map(H, H), out(labels.size());
    std::size_t next = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (map[labels[k]] == H) map[labels[k]] = next++;
        out[k] = map[labels[k]];
    }
    return out;
}

inline std::size_t distinct_rows(const CurvePopulation& pop, std::size_t stop_at) {
    std::set<std::vector<double>> seen;
    for (std::size_t k = 0; k < pop.size() && seen.size() < stop_at; ++k) {
        const auto r = pop.row(k);
        seen.emplace(r.data(), r.data() + r.size());
    }
    return seen.size();
}

} // namespace detail

// k-means with k-means++ seeding and several restarts; the restart with the
// lowest within-cluster sum of squares wins (ties go to the earlier restart).
inline KMeansResult kmeans(const CurvePopulation& pop, std::size_t H, std::uint64_t seed, const KMeansOptions& opt = {}) {
    if (H < 2) throw design_error("k-means strata: need H >= 2");
    if (opt.restarts < 1 || opt.max_iter < 1) throw input_error("k-means: restarts and max_iter must be positive");
    if (detail::distinct_rows(pop, H) < H)
        throw design_error("k-means strata: fewer than " + std::to_string(H) + " distinct curves");
    detail::Lloyd best;
    for (std::size_t r = 0; r < opt.restarts; ++r) {
        auto run = detail::lloyd_once(pop, H, derive_seed(seed, r), opt.max_iter);
        if (run.objective < best.objective) best = std::move(run);
    }
    KMeansResult out;
    out.strata = StrataSpec(detail::canonical_labels(best.labels, H), H);
    out.objective = best.objective;
    out.objective_trace = std::move(best.trace);
    out.iterations = best.iterations;
    out.reseeds = best.reseeds;
    return out;
}

inline StrataSpec kmeans_strata(const CurvePopulation& pop, std::size_t H, std::uint64_t seed,
                                const KMeansOptions& opt = {}) {
    return kmeans(pop, H, seed, opt).strata;
}

} // namespace medcurve
