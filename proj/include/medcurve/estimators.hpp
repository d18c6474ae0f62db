#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "medcurve/curves.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/error.hpp"
#include "medcurve/median_solver.hpp"

namespace medcurve {

enum class WeightProvenance { horvitz_thompson, poststratified };

// Sampled curves with their estimation weights.
struct WeightedSample {
    CurvePopulation curves;  // row i is unit units[i]
    std::vector<std::size_t> units;
    std::vector<double> weights;
    WeightProvenance provenance = WeightProvenance::horvitz_thompson;
    DesignType design = DesignType::srswor;
};

struct EstimatorOptions {
    // Inclusion probabilities below the floor are raised to it before
    // weighting (0 disables).  Used to probe the instability of PPS weights.
    double pi_floor = 0.0;
};

// Rows of `pop` for the selected units, in sample order.
inline CurvePopulation sample_curves(const SampleDraw& sample, const CurvePopulation& pop) {
    return pop.subset(sample.units);
}

inline std::vector<double> ht_weights(const SampleDraw& sample, const EstimatorOptions& opt = {}) {
    std::vector<double> w(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
        if (!(sample.pi[i] > 0.0)) throw design_error("inclusion probabilities must be positive");
        w[i] = 1.0 / std::max(sample.pi[i], opt.pi_floor);
    }
    return w;
}

inline WeightedSample ht_sample(const SampleDraw& sample, const CurvePopulation& on_sample,
                                const EstimatorOptions& opt = {}) {
    if (sample.size() == 0) throw design_error("empty sample");
    if (on_sample.size() != sample.size())
        throw input_error("sample has " + std::to_string(sample.size()) + " units but " +
                          std::to_string(on_sample.size()) + " curves were supplied");
    return {on_sample, sample.units, ht_weights(sample, opt), WeightProvenance::horvitz_thompson, sample.design};
}

// Horvitz-Thompson substitution estimator: weighted median with w_k = 1/pi_k
// over the distinct sampled units.
inline MedianFit ht_median(const SampleDraw& sample, const CurvePopulation& on_sample, const SolverConfig& cfg = {},
                           const EstimatorOptions& opt = {}) {
    const auto ws = ht_sample(sample, on_sample, opt);
    return l1_median(ws.curves, ws.weights, cfg);
}

// w_k = N_g / (Nhat_g pi_k) with Nhat_g = sum_{s_g} 1/pi_k; under SRSWOR this is N_g / n_g.
// `labels` gives the 0-based group of each sampled unit (sample order).
inline std::vector<double> poststratified_weights(const SampleDraw& sample, std::span<const std::size_t> labels,
                                                  std::span<const std::size_t> group_sizes) {
    if (labels.size() != sample.size()) throw input_error("poststratification: one group label per sampled unit");
    const std::size_t G = group_sizes.size();
    std::vector<double> nhat(G, 0.0);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        if (labels[i] >= G) throw input_error("poststratification: group label out of range");
        nhat[labels[i]] += 1.0 / sample.pi[i];
    }
    for (std::size_t g = 0; g < G; ++g)
        if (group_sizes[g] > 0 && nhat[g] == 0.0)
            throw design_error("poststratification: group " + std::to_string(g + 1) +
                               " has no sampled unit; aggregate small groups so every group is represented");
    std::vector<double> w(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i)
        w[i] = static_cast<double>(group_sizes[labels[i]]) / (nhat[labels[i]] * sample.pi[i]);
    return w;
}

inline WeightedSample poststratified_sample(const SampleDraw& sample, const CurvePopulation& on_sample,
                                            std::span<const std::size_t> labels,
                                            std::span<const std::size_t> group_sizes) {
    if (on_sample.size() != sample.size()) throw input_error("poststratification: curves do not match the sample");
    return {on_sample, sample.units, poststratified_weights(sample, labels, group_sizes),
            WeightProvenance::poststratified, sample.design};
}

inline MedianFit poststratified_median(const SampleDraw& sample, const CurvePopulation& on_sample,
                                       std::span<const std::size_t> labels, std::span<const std::size_t> group_sizes,
                                       const SolverConfig& cfg = {}) {
    const auto ws = poststratified_sample(sample, on_sample, labels, group_sizes);
    return l1_median(ws.curves, ws.weights, cfg);
}

// Group labels of the sampled units looked up from population-level labels.
inline std::vector<std::size_t> labels_on_sample(const SampleDraw& sample, std::span<const std::size_t> population_labels) {
    std::vector<std::size_t> out(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) out[i] = population_labels[sample.units.at(i)];
    return out;
}

} // namespace medcurve
