#pragma once

// Subcommands of the medcurve tool.  Each takes a plain argument struct so the
// test suite can call them without going through argv.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medcurve/medcurve.hpp"

namespace medcurve::cli {

namespace fs = std::filesystem;
using io::json;

struct SolverFlags {
    std::optional<double> tol;
    std::optional<std::size_t> max_iter;

    SolverConfig config() const {
        SolverConfig cfg;
        if (tol) cfg.tol = *tol;
        if (max_iter) cfg.max_iter = *max_iter;
        cfg.validate();
        return cfg;
    }
};

inline std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

inline json fit_json(const MedianFit& fit) {
    json j;
    j["iterations"] = fit.iterations;
    j["residual_norm"] = io::number(fit.residual_norm);
    j["total_weight"] = io::number(fit.total_weight);
    j["converged"] = fit.converged;
    j["anchored"] = fit.anchored;
    j["anchor_unit"] = fit.anchor_unit ? json(*fit.anchor_unit + 1) : json(nullptr);
    j["nonunique"] = fit.nonunique;
    return j;
}

inline json summary_json(const Summary& s) {
    return {{"mean", io::number(s.mean)},
            {"q1", io::number(s.q1)},
            {"median", io::number(s.median)},
            {"q3", io::number(s.q3)},
            {"count", s.count}};
}

inline json allocation_json(const Allocation& a) {
    return {{"rule", to_string(a.rule)},
            {"n", a.n},
            {"n_h", a.n_h},
            {"min_one_repair", a.min_one_repair},
            {"fell_back_to_prop", a.fell_back_to_prop}};
}

// ---------------------------------------------------------------- strata

struct BuiltStrata {
    StrataSpec strata;
    CurvePopulation optim_basis;  // curves whose within-stratum variance drives OPTIM
    AllocationRule optim_rule;
    std::optional<double> kmeans_objective;
};

// on: "linearized" (k-means on linearized variables about the median),
// "raw" (k-means on the curves) or "scalar-max" (quartiles of max_t X_k(t)).
inline BuiltStrata build_strata(const CurvePopulation& pop, const std::string& on, std::size_t H, std::uint64_t seed) {
    if (on == "linearized") {
        SolverConfig tight;
        tight.tol = 1e-10;
        tight.step_tol = 1e-12;
        tight.max_iter = 10000;
        const auto fit = l1_median(pop, tight);
        const auto u = linearized_variables(pop, fit.median);
        CurvePopulation u_pop(pop.grid(), u.values, pop.ids());
        auto km = kmeans(u_pop, H, seed);
        return {std::move(km.strata), std::move(u_pop), AllocationRule::u_optimal, km.objective};
    }
    if (on == "raw") {
        auto km = kmeans(pop, H, seed);
        return {std::move(km.strata), pop, AllocationRule::x_optimal, km.objective};
    }
    if (on == "scalar-max") return {quartile_strata(max_summary(pop), H), pop, AllocationRule::x_optimal, std::nullopt};
    throw input_error("--on must be linearized, raw or scalar-max (got '" + on + "')");
}

inline bool stochastic_strata(const std::string& on) { return on != "scalar-max"; }

// ---------------------------------------------------------------- designs

struct ResolvedDesign {
    Design design;
    bool poststratified = false;
    std::vector<std::size_t> groups;
    std::string name;
};

// JSON design spec:
//   {"type": "SRSWOR" | "SYS" | "STRAT" | "PPS" | "POST", "n": 200,
//    "strata": "strata.csv" | {"on": "linearized", "H": 4},   (STRAT)
//    "groups": same forms as strata,                          (POST)
//    "alloc": "PROP" | "OPTIM" | [n_1, ..., n_H],              (STRAT)
//    "order_key_column": "mean" | "max" | <time point label>,  (SYS)
//    "p_source": "mean" | "p.csv",                             (PPS)
//    "aux": "week1.csv"}
// Paths are relative to the spec file.  Auxiliary quantities (ordering key,
// strata, p_k, OPTIM variances) come from "aux" when given, else from the
// population itself.
inline ResolvedDesign resolve_design(const json& spec, const CurvePopulation& pop, const fs::path& base,
                                     std::uint64_t seed, const std::optional<std::string>& alloc_override = {}) {
    if (!spec.is_object()) throw input_error("design spec must be a JSON object");
    auto get_string = [&](const char* key, const std::string& fallback) {
        if (!spec.contains(key)) return fallback;
        if (!spec[key].is_string()) throw input_error(std::string("design spec: '") + key + "' must be a string");
        return spec[key].get<std::string>();
    };
    const std::string type = upper(get_string("type", ""));
    if (type.empty()) throw input_error("design spec: missing 'type'");

    std::optional<CurvePopulation> aux_store;
    if (spec.contains("aux")) {
        aux_store = io::read_curves(base / get_string("aux", ""));
        if (aux_store->ids() != pop.ids()) throw input_error("design spec: aux file must list the same unit ids in the same order");
    }
    const CurvePopulation& aux = aux_store ? *aux_store : pop;

    std::optional<std::size_t> n;
    if (spec.contains("n")) {
        if (!spec["n"].is_number_integer() || spec["n"].get<long long>() < 1)
            throw input_error("design spec: 'n' must be a positive integer");
        n = spec["n"].get<std::size_t>();
    }
    auto need_n = [&] {
        if (!n) throw input_error("design spec: missing 'n'");
        return *n;
    };

    auto strata_from = [&](const char* key) -> BuiltStrata {
        if (!spec.contains(key)) throw input_error(std::string("design spec: missing '") + key + "'");
        const json& s = spec[key];
        if (s.is_string()) return {io::read_strata(base / s.get<std::string>(), pop), aux, AllocationRule::x_optimal, {}};
        if (s.is_object()) {
            const std::string on = s.value("on", std::string("linearized"));
            const std::size_t H = s.value("H", std::size_t{4});
            return build_strata(aux, on, H, derive_seed(seed, 0x5752ULL));
        }
        throw input_error(std::string("design spec: '") + key + "' must be a path or an object");
    };

    ResolvedDesign out;
    out.name = type;
    if (type == "SRSWOR" || type == "SRS") {
        out.design = Design::srswor(pop.size(), need_n());
    } else if (type == "SYS" || type == "SYSTEMATIC") {
        const std::string col = get_string("order_key_column", "mean");
        std::vector<double> key(aux.size());
        if (col == "mean") {
            for (std::size_t k = 0; k < aux.size(); ++k) key[k] = aux.row(k).mean();
        } else if (col == "max") {
            key = max_summary(aux);
        } else {
            std::size_t d = aux.dim();
            for (std::size_t i = 0; i < aux.dim(); ++i)
                if (io::fmt(aux.grid()->points()[i]) == col) d = i;
            if (d == aux.dim()) throw input_error("design spec: no time column '" + col + "' for the order key");
            for (std::size_t k = 0; k < aux.size(); ++k) key[k] = aux.row(k)[static_cast<Eigen::Index>(d)];
        }
        out.design = Design::systematic(std::move(key), need_n());
    } else if (type == "STRAT" || type == "STRATIFIED") {
        const auto built = strata_from("strata");
        json alloc = spec.contains("alloc") ? spec["alloc"] : json("PROP");
        if (alloc_override) alloc = *alloc_override;
        std::vector<std::size_t> n_h;
        if (alloc.is_array()) {
            n_h = alloc.get<std::vector<std::size_t>>();
        } else if (alloc.is_string() && upper(alloc.get<std::string>()) == "PROP") {
            n_h = proportional_allocation(built.strata.sizes(), need_n()).n_h;
        } else if (alloc.is_string() && upper(alloc.get<std::string>()) == "OPTIM") {
            n_h = optimal_allocation(built.strata, built.optim_basis, need_n(), built.optim_rule).n_h;
        } else {
            throw input_error("design spec: 'alloc' must be PROP, OPTIM or a list of stratum sizes");
        }
        out.design = Design::stratified(built.strata, std::move(n_h));
    } else if (type == "PPS" || type == "PPSWR") {
        const std::string src = get_string("p_source", "mean");
        std::vector<double> p;
        if (src == "mean") {
            p = pps_weights_from_curves(aux);
        } else {
            p = io::read_unit_values(base / src, pop);
            double total = 0.0;
            for (double x : p) total += x;
            for (double& x : p) x /= total;
        }
        out.design = Design::ppswr(std::move(p), need_n());
    } else if (type == "POST" || type == "POSTSTRATIFIED") {
        out.design = Design::srswor(pop.size(), need_n());
        out.poststratified = true;
        out.groups = strata_from("groups").strata.labels();
    } else {
        throw input_error("design spec: unknown type '" + type + "' (use SRSWOR, SYS, STRAT, PPS or POST)");
    }
    return out;
}

// ---------------------------------------------------------------- median

struct MedianArgs {
    fs::path input;
    std::optional<fs::path> weights;
    fs::path out = ".";
    SolverFlags solver;
};

inline int cmd_median(const MedianArgs& a) {
    const auto pop = io::read_curves(a.input);
    std::vector<double> w(pop.size(), 1.0);
    if (a.weights) w = io::read_unit_values(*a.weights, pop);
    const auto fit = l1_median(pop, w, a.solver.config());
    io::write_file(a.out / "median.csv", io::series_csv(*pop.grid(), fit.median.values(), "median"));
    json d = fit_json(fit);
    d["N"] = pop.size();
    d["D"] = pop.dim();
    io::write_file(a.out / "diagnostics.json", io::dump(d));
    if (!fit.converged) throw solver_error("median did not converge in " + std::to_string(fit.iterations) + " iterations");
    return 0;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
    fs::path input;
    fs::path design;
    std::uint64_t seed = 0;
    fs::path out = ".";
    std::optional<std::string> alloc;
    SolverFlags solver;
};

struct EstimateResult {
    ResolvedDesign design;
    SampleDraw sample;
    std::vector<double> weights;
    MedianFit fit;
    std::optional<VarianceFunction> variance;
    std::string variance_note;
};

inline EstimateResult run_estimate(const CurvePopulation& pop, const ResolvedDesign& rd, std::uint64_t seed,
                                   const SolverConfig& cfg) {
    const SampleDraw s = draw(rd.design, derive_seed(seed, 1));
    const auto on_sample = sample_curves(s, pop);
    std::vector<std::size_t> labels, group_sizes;
    WeightedSample ws = [&] {
        if (!rd.poststratified) return ht_sample(s, on_sample);
        group_sizes = StrataSpec::from_labels(rd.groups).sizes();
        labels = labels_on_sample(s, rd.groups);
        return poststratified_sample(s, on_sample, labels, group_sizes);
    }();
    const auto fit = l1_median(ws.curves, ws.weights, cfg);
    EstimateResult r{rd, s, ws.weights, fit, std::nullopt, ""};
    try {
        const auto uhat = estimated_linearized_variables(ws.curves, ws.weights, fit.median);
        r.variance = rd.poststratified
                         ? variance_estimate_poststratified(uhat, pop.grid(), pop.size(), labels, group_sizes.size())
                         : variance_estimate(uhat, pop.grid(), rd.design, s);
        if (r.variance->approximate) r.variance_note = "SRSWOR approximation";
    } catch (const Error& e) {
        r.variance_note = e.what();
    }
    return r;
}

inline int cmd_estimate(const EstimateArgs& a) {
    const auto pop = io::read_curves(a.input);
    const auto spec = io::read_json(a.design);
    const auto rd = resolve_design(spec, pop, a.design.parent_path(), a.seed, a.alloc);
    const auto r = run_estimate(pop, rd, a.seed, a.solver.config());

    std::string sample = "unit_id,pi,weight,multiplicity\n";
    for (std::size_t i = 0; i < r.sample.size(); ++i)
        sample += pop.ids()[r.sample.units[i]] + "," + io::fmt(r.sample.pi[i]) + "," + io::fmt(r.weights[i]) + "," +
                  std::to_string(r.sample.multiplicities[i]) + "\n";
    io::write_file(a.out / "sample.csv", sample);
    io::write_file(a.out / "median.csv", io::series_csv(*pop.grid(), r.fit.median.values(), "median"));
    if (r.variance) io::write_file(a.out / "variance.csv", io::series_csv(*pop.grid(), r.variance->values, "variance"));

    json d = fit_json(r.fit);
    d["design"] = rd.name;
    d["seed"] = a.seed;
    d["N"] = pop.size();
    d["n"] = r.sample.size();
    d["draws"] = rd.design.n;
    d["variance"] = r.variance ? json("variance.csv") : json(nullptr);
    if (r.variance) {
        d["variance_clamped"] = r.variance->clamped;
        d["variance_approximate"] = r.variance->approximate;
    }
    if (!r.variance_note.empty()) d["variance_note"] = r.variance_note;
    io::write_file(a.out / "diagnostics.json", io::dump(d));
    if (!r.fit.converged) throw solver_error("median did not converge in " + std::to_string(r.fit.iterations) + " iterations");
    return 0;
}

// ---------------------------------------------------------------- synth

inline SynthConfig synth_config(const json& j, std::uint64_t seed) {
    SynthConfig c;
    if (!j.is_null() && !j.is_object()) throw input_error("synth config must be a JSON object");
    auto take = [&](const char* key, auto& field) {
        if (j.is_object() && j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    try {
        take("N", c.N);
        take("D", c.D);
        take("days", c.days);
        take("regimes", c.regimes);
        take("amplitude", c.amplitude);
        take("weekend_dip", c.weekend_dip);
        take("scale_sigma", c.scale_sigma);
        take("noise", c.noise);
        take("drift", c.drift);
        take("outlier_fraction", c.outlier_fraction);
        take("outlier_magnitude", c.outlier_magnitude);
    } catch (const json::exception& e) {
        throw input_error(std::string("synth config: ") + e.what());
    }
    c.seed = seed;
    c.validate();
    return c;
}

struct SynthArgs {
    std::optional<fs::path> config;
    std::uint64_t seed = 0;
    fs::path out = ".";
};

inline int cmd_synth(const SynthArgs& a) {
    const auto cfg = synth_config(a.config ? io::read_json(*a.config) : json(), a.seed);
    const auto sp = synth_population(cfg);
    io::write_file(a.out / "week1.csv", io::curves_csv(sp.week1));
    io::write_file(a.out / "week2.csv", io::curves_csv(sp.week2));
    std::string units = "unit_id,regime,scale,outlier\n";
    for (std::size_t k = 0; k < cfg.N; ++k)
        units += sp.week1.ids()[k] + "," + std::to_string(sp.regime[k] + 1) + "," + io::fmt(sp.scale[k]) + "," +
                 (sp.outlier[k] ? "1" : "0") + "\n";
    io::write_file(a.out / "units.csv", units);
    return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::optional<fs::path> config;  // synth config
    std::optional<fs::path> input;   // study population (week 2)
    std::optional<fs::path> aux;     // auxiliary population (week 1)
    std::optional<fs::path> design;  // {"n", "H", "designs": [...], "variance"}
    std::size_t reps = 300;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    fs::path out = ".";
    SolverFlags solver;
};

inline MonteCarloReport run_simulate(const CurvePopulation& week1, const CurvePopulation& week2, const json& designs,
                                     std::size_t reps, std::uint64_t seed, std::size_t threads, const SolverConfig& cfg) {
    if (week1.ids() != week2.ids()) throw input_error("simulate: week-1 and week-2 files must list the same units");
    ProtocolConfig pc;
    pc.seed = derive_seed(seed, 0x5752ULL);
    std::vector<std::string> wanted;
    try {
        if (designs.is_object()) {
            pc.n = designs.value("n", pc.n);
            pc.H = designs.value("H", pc.H);
            pc.estimate_variance = designs.value("variance", pc.estimate_variance);
            if (designs.contains("designs")) wanted = designs["designs"].get<std::vector<std::string>>();
        } else if (!designs.is_null()) {
            throw input_error("simulate: design file must be a JSON object");
        }
    } catch (const json::exception& e) {
        throw input_error(std::string("simulate: design file: ") + e.what());
    }
    const auto protocol = build_protocol(week1, pc);
    std::vector<DesignCase> cases;
    if (wanted.empty()) {
        cases = protocol.cases;
    } else {
        for (const auto& name : wanted) {
            const auto it = std::find_if(protocol.cases.begin(), protocol.cases.end(),
                                         [&](const DesignCase& c) { return upper(c.name) == upper(name); });
            if (it == protocol.cases.end()) throw input_error("simulate: unknown design '" + name + "'");
            cases.push_back(*it);
        }
    }
    MonteCarloConfig mc;
    mc.replicates = reps;
    mc.seed = derive_seed(seed, 2);
    mc.threads = threads;
    mc.solver = cfg;
    return monte_carlo_compare(week2, cases, mc);
}

inline json report_json(const MonteCarloReport& rep) {
    json j;
    j["replicates"] = rep.replicates;
    j["seed"] = rep.seed;
    j["truth_iterations"] = rep.truth_iterations;
    j["designs"] = json::array();
    for (const auto& c : rep.cases) {
        json d;
        d["name"] = c.name;
        d["design"] = c.design;
        d["loss"] = summary_json(c.loss_summary);
        d["variance_loss"] = summary_json(c.variance_loss_summary);
        d["failures"] = c.failures;
        d["integrated_variance"] = c.has_variance ? io::number(c.variance.values.mean()) : json(nullptr);
        d["variance_approximate"] = c.has_variance && c.variance.approximate;
        j["designs"].push_back(std::move(d));
    }
    return j;
}

inline std::string losses_csv(const MonteCarloReport& rep) {
    std::string s = "design,replicate,seed,loss_median,loss_variance,status\n";
    for (const auto& c : rep.cases)
        for (std::size_t r = 0; r < c.loss.size(); ++r) {
            const auto num = [](double x) { return std::isfinite(x) ? io::fmt(x) : std::string(); };
            std::string status = c.failure[r].empty() ? "ok" : "failed: " + c.failure[r];
            std::replace(status.begin(), status.end(), ',', ';');
            s += c.name + "," + std::to_string(r + 1) + "," + std::to_string(c.seeds[r]) + "," + num(c.loss[r]) + "," +
                 num(c.variance_loss[r]) + "," + status + "\n";
        }
    return s;
}

inline int cmd_simulate(const SimulateArgs& a) {
    std::optional<CurvePopulation> w1, w2;
    if (a.input) {
        if (a.config) throw input_error("simulate: give either --config or --input, not both");
        w2 = io::read_curves(*a.input);
        w1 = a.aux ? io::read_curves(*a.aux) : *w2;
    } else {
        const auto cfg = synth_config(a.config ? io::read_json(*a.config) : json(), derive_seed(a.seed, 3));
        auto sp = synth_population(cfg);
        w1 = std::move(sp.week1);
        w2 = std::move(sp.week2);
    }
    const json designs = a.design ? io::read_json(*a.design) : json();
    const auto rep = run_simulate(*w1, *w2, designs, a.reps, a.seed, a.threads, a.solver.config());
    io::write_file(a.out / "report.json", io::dump(report_json(rep)));
    io::write_file(a.out / "losses.csv", losses_csv(rep));
    io::write_file(a.out / "truth.csv", io::series_csv(*w2->grid(), rep.truth.values(), "median"));
    for (const auto& c : rep.cases)
        if (c.has_variance)
            io::write_file(a.out / ("variance_" + c.name + ".csv"), io::series_csv(*w2->grid(), c.variance.values, "variance"));
    return 0;
}

// ---------------------------------------------------------------- stratify

struct StratifyArgs {
    fs::path input;
    std::string on = "linearized";
    std::size_t H = 4;
    std::optional<std::uint64_t> seed;
    std::size_t n = 200;
    std::optional<std::string> alloc;
    std::optional<fs::path> strata;  // use these strata instead of building them
    fs::path out = ".";
};

inline int cmd_stratify(const StratifyArgs& a) {
    if (!a.strata && stochastic_strata(a.on) && !a.seed) throw input_error("stratify --on " + a.on + " needs --seed");
    const auto pop = io::read_curves(a.input);
    const auto built = a.strata ? BuiltStrata{io::read_strata(*a.strata, pop), pop, AllocationRule::x_optimal, {}}
                                : build_strata(pop, a.on, a.H, a.seed.value_or(0));
    io::write_file(a.out / "strata.csv", io::strata_csv(built.strata, pop));
    json j;
    j["on"] = a.strata ? json("file") : json(a.on);
    j["H"] = built.strata.H();
    j["N_h"] = built.strata.sizes();
    if (built.kmeans_objective) j["kmeans_objective"] = *built.kmeans_objective;
    j["n"] = a.n;
    j["PROP"] = allocation_json(proportional_allocation(built.strata.sizes(), a.n));
    j["OPTIM"] = allocation_json(optimal_allocation(built.strata, built.optim_basis, a.n, built.optim_rule));
    if (a.alloc) {
        const std::string sel = upper(*a.alloc);
        if (sel != "PROP" && sel != "OPTIM") throw input_error("--alloc must be PROP or OPTIM");
        j["selected"] = sel;
    }
    io::write_file(a.out / "allocations.json", io::dump(j));
    return 0;
}

// MEDCURVE_THREADS when --threads is absent; 0 means one per hardware thread.
inline std::size_t threads_from_env(std::optional<std::size_t> flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("MEDCURVE_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0') throw input_error("MEDCURVE_THREADS must be a nonnegative integer");
        return static_cast<std::size_t>(v);
    }
    return 0;
}

} // namespace medcurve::cli
