#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace medcurve;

namespace {

void add_solver_flags(CLI::App* app, cli::SolverFlags& s) {
    app->add_option("--tol", s.tol, "relative score tolerance")->check(CLI::PositiveNumber);
    app->add_option("--max-iter", s.max_iter, "iteration cap")->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Median curves under survey sampling designs"};
    app.require_subcommand(1);

    cli::MedianArgs median;
    auto* m = app.add_subcommand("median", "spatial median of the curves in a CSV file");
    m->add_option("--input", median.input, "curve CSV (id,t_1,...,t_D)")->required()->check(CLI::ExistingFile);
    m->add_option("--weights", median.weights, "unit weights CSV (unit_id,weight)")->check(CLI::ExistingFile);
    m->add_option("--out", median.out, "output directory");
    add_solver_flags(m, median.solver);

    cli::EstimateArgs estimate;
    auto* e = app.add_subcommand("estimate", "draw a sample, estimate the median and its variance");
    e->add_option("--input", estimate.input, "population curve CSV")->required()->check(CLI::ExistingFile);
    e->add_option("--design", estimate.design, "design spec JSON")->required()->check(CLI::ExistingFile);
    e->add_option("--seed", estimate.seed, "master seed")->required();
    e->add_option("--alloc", estimate.alloc, "PROP or OPTIM, overrides the spec");
    e->add_option("--out", estimate.out, "output directory");
    add_solver_flags(e, estimate.solver);

    cli::SimulateArgs sim;
    std::optional<std::size_t> threads;
    auto* s = app.add_subcommand("simulate", "Monte Carlo comparison of sampling designs");
    s->add_option("--config", sim.config, "synthetic population config JSON")->check(CLI::ExistingFile);
    s->add_option("--input", sim.input, "study population CSV (week 2)")->check(CLI::ExistingFile);
    s->add_option("--aux", sim.aux, "auxiliary population CSV (week 1)")->check(CLI::ExistingFile);
    s->add_option("--design", sim.design, "design selection JSON")->check(CLI::ExistingFile);
    s->add_option("--reps", sim.reps, "replicates")->check(CLI::PositiveNumber);
    s->add_option("--seed", sim.seed, "master seed")->required();
    s->add_option("--threads", threads, "worker threads (0 = all cores; default MEDCURVE_THREADS)");
    s->add_option("--out", sim.out, "output directory");
    add_solver_flags(s, sim.solver);

    cli::StratifyArgs strat;
    auto* st = app.add_subcommand("stratify", "build strata and allocations");
    st->add_option("--input", strat.input, "curve CSV")->required()->check(CLI::ExistingFile);
    st->add_option("--on", strat.on, "linearized, raw or scalar-max")
        ->check(CLI::IsMember({"linearized", "raw", "scalar-max"}));
    st->add_option("--H", strat.H, "number of strata")->check(CLI::Range(2, 1000));
    st->add_option("--seed", strat.seed, "seed for k-means");
    st->add_option("--n", strat.n, "total sample size for the allocations")->check(CLI::PositiveNumber);
    st->add_option("--alloc", strat.alloc, "PROP or OPTIM");
    st->add_option("--strata", strat.strata, "existing strata CSV (unit_id,stratum); skips clustering")
        ->check(CLI::ExistingFile);
    st->add_option("--out", strat.out, "output directory");

    cli::SynthArgs synth;
    auto* sy = app.add_subcommand("synth", "write a synthetic two-week population");
    sy->add_option("--config", synth.config, "synthetic population config JSON")->check(CLI::ExistingFile);
    sy->add_option("--seed", synth.seed, "seed")->required();
    sy->add_option("--out", synth.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::input);
    }

    try {
        if (*m) return cli::cmd_median(median);
        if (*e) return cli::cmd_estimate(estimate);
        if (*s) {
            sim.threads = cli::threads_from_env(threads);
            return cli::cmd_simulate(sim);
        }
        if (*st) return cli::cmd_stratify(strat);
        if (*sy) return cli::cmd_synth(synth);
    } catch (const Error& err) {
        std::cerr << "medcurve: " << err.what() << "\n";
        return err.exit_code();
    } catch (const std::exception& err) {
        std::cerr << "medcurve: " << err.what() << "\n";
        return static_cast<int>(ErrorKind::input);
    }
    return 0;
}
