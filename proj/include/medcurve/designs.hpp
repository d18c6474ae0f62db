#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "medcurve/curves.hpp"
#include "medcurve/error.hpp"
#include "medcurve/rng.hpp"

namespace medcurve {

enum class DesignType { srswor, systematic, stratified, ppswr };

inline std::string to_string(DesignType t) {
    switch (t) {
    case DesignType::srswor: return "srswor";
    case DesignType::systematic: return "systematic";
    case DesignType::stratified: return "stratified";
    case DesignType::ppswr: return "ppswr";
    }
    return "unknown";
}

// Stratum membership.  Labels are 0-based internally; files use 1..H.
class StrataSpec {
public:
    StrataSpec() = default;

    StrataSpec(std::vector<std::size_t> labels, std::size_t H) : labels_(std::move(labels)), sizes_(H, 0) {
        if (H < 1) throw design_error("strata: need at least one stratum");
        for (std::size_t k = 0; k < labels_.size(); ++k) {
            if (labels_[k] >= H)
                throw design_error("strata: unit " + std::to_string(k + 1) + " has label outside 1.." +
                                   std::to_string(H));
            ++sizes_[labels_[k]];
        }
        for (std::size_t h = 0; h < H; ++h)
            if (sizes_[h] == 0) throw design_error("strata: stratum " + std::to_string(h + 1) + " is empty");
    }

    // H is taken as 1 + the largest label.
    static StrataSpec from_labels(std::vector<std::size_t> labels) {
        if (labels.empty()) throw design_error("strata: no units");
        const std::size_t H = *std::max_element(labels.begin(), labels.end()) + 1;
        return {std::move(labels), H};
    }

    std::size_t H() const noexcept { return sizes_.size(); }
    std::size_t N() const noexcept { return labels_.size(); }
    const std::vector<std::size_t>& labels() const noexcept { return labels_; }
    const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
    std::size_t label(std::size_t k) const { return labels_.at(k); }

    std::vector<std::size_t> members(std::size_t h) const {
        std::vector<std::size_t> out;
        out.reserve(sizes_.at(h));
        for (std::size_t k = 0; k < labels_.size(); ++k)
            if (labels_[k] == h) out.push_back(k);
        return out;
    }

private:
    std::vector<std::size_t> labels_;
    std::vector<std::size_t> sizes_;
};

// A sampling design over units 0..N-1.
struct Design {
    DesignType type = DesignType::srswor;
    std::size_t N = 0;
    std::size_t n = 0;                    // sample size, or number of draws for ppswr
    std::vector<double> order_key;        // systematic
    StrataSpec strata;                    // stratified
    std::vector<std::size_t> allocation;  // stratified, n_h per stratum
    std::vector<double> p;                // ppswr selection probabilities

    static Design srswor(std::size_t N, std::size_t n) {
        if (n < 1 || n > N)
            throw design_error("srswor: need 1 <= n <= N (n=" + std::to_string(n) + ", N=" + std::to_string(N) + ")");
        return {DesignType::srswor, N, n, {}, {}, {}, {}};
    }

    static Design systematic(std::vector<double> order_key, std::size_t n) {
        const std::size_t N = order_key.size();
        if (n < 1 || n > N)
            throw design_error("systematic: need 1 <= n <= N (n=" + std::to_string(n) + ", N=" + std::to_string(N) + ")");
        return {DesignType::systematic, N, n, std::move(order_key), {}, {}, {}};
    }

    static Design stratified(StrataSpec strata, std::vector<std::size_t> allocation) {
        if (allocation.size() != strata.H())
            throw design_error("stratified: allocation has " + std::to_string(allocation.size()) + " entries for " +
                               std::to_string(strata.H()) + " strata");
        std::size_t n = 0;
        for (std::size_t h = 0; h < strata.H(); ++h) {
            if (allocation[h] < 1 || allocation[h] > strata.sizes()[h])
                throw design_error("stratified: allocation n_h=" + std::to_string(allocation[h]) + " in stratum " +
                                   std::to_string(h + 1) + " must lie in 1.." + std::to_string(strata.sizes()[h]));
            n += allocation[h];
        }
        const std::size_t N = strata.N();
        return {DesignType::stratified, N, n, {}, std::move(strata), std::move(allocation), {}};
    }

    static Design ppswr(std::vector<double> p, std::size_t draws) {
        if (p.empty()) throw design_error("ppswr: empty selection probabilities");
        if (draws < 1) throw design_error("ppswr: need at least one draw");
        double total = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (!(p[k] > 0.0) || !std::isfinite(p[k]))
                throw design_error("ppswr: p_k must be positive (unit " + std::to_string(k + 1) + ")");
            total += p[k];
        }
        if (std::abs(total - 1.0) > 1e-10) throw design_error("ppswr: selection probabilities must sum to 1");
        const std::size_t N = p.size();
        return {DesignType::ppswr, N, draws, {}, {}, {}, std::move(p)};
    }

    bool fixed_size() const noexcept { return type != DesignType::ppswr; }

    // First-order inclusion probability of unit k.
    double inclusion(std::size_t k) const {
        switch (type) {
        case DesignType::srswor:
        case DesignType::systematic: return static_cast<double>(n) / static_cast<double>(N);
        case DesignType::stratified: {
            const std::size_t h = strata.label(k);
            return static_cast<double>(allocation[h]) / static_cast<double>(strata.sizes()[h]);
        }
        case DesignType::ppswr: return -std::expm1(static_cast<double>(n) * std::log1p(-p.at(k)));
        }
        return 0.0;
    }

    std::vector<double> inclusion_all() const {
        std::vector<double> out(N);
        for (std::size_t k = 0; k < N; ++k) out[k] = inclusion(k);
        return out;
    }
};

struct SampleDraw {
    std::vector<std::size_t> units;           // distinct selected units, ascending
    std::vector<std::size_t> multiplicities;  // draw counts per unit (all 1 without replacement)
    std::vector<std::size_t> draw_sequence;   // ppswr: unit of each draw, in draw order
    std::vector<double> pi;                   // first-order inclusion probability per selected unit
    DesignType design = DesignType::srswor;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return units.size(); }

    std::vector<double> ht_weights() const {
        std::vector<double> w(pi.size());
        for (std::size_t i = 0; i < pi.size(); ++i) w[i] = 1.0 / pi[i];
        return w;
    }
};

namespace detail {

inline SampleDraw finish_without_replacement(const Design& design, std::vector<std::size_t> units,
                                             std::uint64_t seed) {
    std::sort(units.begin(), units.end());
    SampleDraw s;
    s.units = std::move(units);
    s.multiplicities.assign(s.units.size(), 1);
    s.pi.reserve(s.units.size());
    for (std::size_t k : s.units) s.pi.push_back(design.inclusion(k));
    s.design = design.type;
    s.seed = seed;
    return s;
}

inline std::vector<std::size_t> srswor_indices(std::size_t N, std::size_t n, Rng& rng) {
    std::vector<std::size_t> all(N), out;
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.reserve(n);
    std::sample(all.begin(), all.end(), std::back_inserter(out), n, rng);
    return out;
}

} // namespace detail

// 0-based frame ranks floor(start + j * N/n), j = 0..n-1, for a start in [0, N/n).
inline std::vector<std::size_t> systematic_ranks(std::size_t N, std::size_t n, double start) {
    const double step = static_cast<double>(N) / static_cast<double>(n);
    if (!(start >= 0.0) || !(start < step)) throw design_error("systematic: start outside [0, N/n)");
    std::vector<std::size_t> ranks(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto r = static_cast<std::size_t>(std::floor(start + static_cast<double>(j) * step));
        ranks[j] = std::min(r, N - 1);
    }
    return ranks;
}

// Frame order used by the systematic design: ascending key, ties broken by a
// seeded random permutation.
inline std::vector<std::size_t> systematic_frame(std::span<const double> order_key, Rng& rng) {
    std::vector<std::size_t> frame(order_key.size());
    std::iota(frame.begin(), frame.end(), std::size_t{0});
    std::shuffle(frame.begin(), frame.end(), rng);
    std::stable_sort(frame.begin(), frame.end(),
                     [&](std::size_t a, std::size_t b) { return order_key[a] < order_key[b]; });
    return frame;
}

inline SampleDraw draw_srswor(std::size_t N, std::size_t n, std::uint64_t seed) {
    const auto design = Design::srswor(N, n);
    Rng rng = make_rng(seed);
    return detail::finish_without_replacement(design, detail::srswor_indices(N, n, rng), seed);
}

// Fractional-interval systematic sampling: step a = N/n, start uniform on
// [0, a); every unit has inclusion probability exactly n/N.
inline SampleDraw draw_systematic(std::span<const double> order_key, std::size_t n, std::uint64_t seed) {
    const auto design = Design::systematic({order_key.begin(), order_key.end()}, n);
    Rng rng = make_rng(seed);
    const auto frame = systematic_frame(order_key, rng);
    const double step = static_cast<double>(design.N) / static_cast<double>(n);
    double start = step * uniform01(rng);
    if (start >= step) start = 0.0;
    std::vector<std::size_t> units;
    units.reserve(n);
    for (std::size_t rank : systematic_ranks(design.N, n, start)) units.push_back(frame[rank]);
    return detail::finish_without_replacement(design, std::move(units), seed);
}

// Independent SRSWOR within each stratum; stratum h uses derive_seed(seed, h).
inline SampleDraw draw_stratified(const StrataSpec& strata, std::span<const std::size_t> allocation,
                                  std::uint64_t seed) {
    const auto design = Design::stratified(strata, {allocation.begin(), allocation.end()});
    std::vector<std::size_t> units;
    units.reserve(design.n);
    for (std::size_t h = 0; h < strata.H(); ++h) {
        const auto members = strata.members(h);
        Rng rng = make_rng(derive_seed(seed, h));
        for (std::size_t i : detail::srswor_indices(members.size(), allocation[h], rng)) units.push_back(members[i]);
    }
    return detail::finish_without_replacement(design, std::move(units), seed);
}

// n independent draws with probabilities p; the estimator works on the
// distinct units with pi_k = 1 - (1 - p_k)^n.
inline SampleDraw draw_ppswr(std::span<const double> p, std::size_t draws, std::uint64_t seed) {
    const auto design = Design::ppswr({p.begin(), p.end()}, draws);
    Rng rng = make_rng(seed);
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    SampleDraw s;
    s.design = DesignType::ppswr;
    s.seed = seed;
    s.draw_sequence.resize(draws);
    std::vector<std::size_t> counts(p.size(), 0);
    for (std::size_t i = 0; i < draws; ++i) {
        s.draw_sequence[i] = pick(rng);
        ++counts[s.draw_sequence[i]];
    }
    for (std::size_t k = 0; k < p.size(); ++k)
        if (counts[k] > 0) {
            s.units.push_back(k);
            s.multiplicities.push_back(counts[k]);
            s.pi.push_back(design.inclusion(k));
        }
    return s;
}

inline SampleDraw draw(const Design& design, std::uint64_t seed) {
    switch (design.type) {
    case DesignType::srswor: return draw_srswor(design.N, design.n, seed);
    case DesignType::systematic: return draw_systematic(design.order_key, design.n, seed);
    case DesignType::stratified: return draw_stratified(design.strata, design.allocation, seed);
    case DesignType::ppswr: return draw_ppswr(design.p, design.n, seed);
    }
    throw design_error("unknown design");
}

// p_k proportional to the time-average of the auxiliary curve X_k.
inline std::vector<double> pps_weights_from_curves(const CurvePopulation& aux) {
    std::vector<double> p(aux.size());
    double total = 0.0;
    for (std::size_t k = 0; k < aux.size(); ++k) {
        p[k] = aux.row(k).mean();
        if (!(p[k] > 0.0))
            throw design_error("ppswr: unit " + aux.ids()[k] + " has nonpositive mean auxiliary value");
        total += p[k];
    }
    for (double& x : p) x /= total;
    return p;
}

// Designs without a usable pi_kl report the rule to use instead.
enum class JointRule { srswor_approximation, hansen_hurwitz };

inline std::string to_string(JointRule r) {
    return r == JointRule::srswor_approximation ? "use-SRSWOR-approximation" : "use-Hansen-Hurwitz";
}

using JointInclusion = std::variant<double, JointRule>;

inline JointInclusion joint_inclusion(const Design& design, std::size_t k, std::size_t l) {
    if (k >= design.N || l >= design.N) throw design_error("joint_inclusion: unit out of range");
    if (k == l) return design.inclusion(k);
    const auto ratio = [](std::size_t n, std::size_t N) {
        if (N < 2) return 0.0;
        return static_cast<double>(n) * static_cast<double>(n - 1) /
               (static_cast<double>(N) * static_cast<double>(N - 1));
    };
    switch (design.type) {
    case DesignType::srswor: return ratio(design.n, design.N);
    case DesignType::stratified: {
        const std::size_t hk = design.strata.label(k), hl = design.strata.label(l);
        if (hk != hl) return design.inclusion(k) * design.inclusion(l);
        return ratio(design.allocation[hk], design.strata.sizes()[hk]);
    }
    case DesignType::systematic: return JointRule::srswor_approximation;
    case DesignType::ppswr: return JointRule::hansen_hurwitz;
    }
    throw design_error("unknown design");
}

} // namespace medcurve
