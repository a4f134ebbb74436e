// Scenario-driven front end: orbit, guess, solve, compare and manifold subcommands.
//
// Exit status: 0 on success (including solver runs that end Diverged or
// Stalled), 2 on configuration errors, 1 on I/O and other runtime errors.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bundled_scenarios.hpp"
#include "cislunar/cislunar.hpp"

namespace fs = std::filesystem;
using namespace cislunar;

namespace {

struct Options {
    std::string config;
    std::string seed;
    std::string out;
    std::string solver;
    bool quiet = false;
};

enum class Command { Orbit, Guess, Solve, Compare, Manifold };

constexpr int exit_config = 2;
constexpr int exit_io = 1;

ScenarioConfig load_config(const Options& o) {
    if (!o.config.empty() && !o.seed.empty()) throw ConfigError("--config", "cannot be combined with --seed-scenario");
    if (!o.seed.empty()) {
        const auto& table = bundled::scenarios();
        const auto it = table.find(o.seed);
        if (it == table.end()) {
            std::string names;
            for (const auto& [name, text] : table) names += (names.empty() ? "" : ", ") + name;
            throw ConfigError("--seed-scenario", "unknown scenario '" + o.seed + "' (available: " + names + ")");
        }
        return parse_scenario(it->second, o.seed + ".toml", fs::current_path());
    }
    if (o.config.empty()) throw ConfigError("--config", "either --config or --seed-scenario is required");
    return load_scenario(o.config);
}

fs::path output_dir(const Options& o, const std::string& configured, const std::string& name) {
    if (!o.out.empty()) return o.out;
    if (!configured.empty()) return configured;
    return fs::path("out") / name;
}

void print_row(const SummaryRow& r) {
    std::cout << "  n=" << r.segments << " solver=" << r.solver << " status=" << to_string(r.status)
              << " iterations=" << r.iterations << " |F|=" << std::setprecision(3) << r.fnorm
              << " |E|_P=" << std::setprecision(6) << r.ep_km << " km (" << r.seconds << " s)\n";
}

IterationObserver progress(const Options& o, const std::string& label) {
    if (o.quiet) return {};
    return [label](const IterationRecord& r) {
        if (!r.accepted) return;
        std::cout << "  [" << label << "] k=" << r.k << " l=" << r.outer << " |F|=" << std::setprecision(4) << r.fnorm
                  << " beta=" << r.beta << '\n';
    };
}

void write_orbit(const fs::path& dir, const std::string& stem, const PeriodicOrbit& orbit, const Cr3bpSystem& sys,
                 const IntegratorConfig& integ) {
    write_json(dir / (stem + ".json"), to_json(orbit, sys));
    IntegratorConfig dense = integ;
    dense.max_step = orbit.period / 400.0;
    write_trajectory_csv(dir / (stem + ".csv"), orbit_trajectory(orbit, sys, 1.0, dense), "TU from the initial state");
    std::cout << orbit.family << ": period " << std::setprecision(8) << orbit.period << " TU ("
              << orbit.period * sys.char_time() / 86400.0 << " d), Jacobi " << std::setprecision(12) << orbit.jacobi
              << '\n';
}

int cmd_orbit(Scenario& scn, const fs::path& dir) {
    ensure_directory(dir);
    const auto& cfg = scn.config();
    write_orbit(dir, "halo", scn.halo(), scn.system(), cfg.integrator);
    if (cfg.guess.source == "transfer" || cfg.lyapunov.jacobi) {
        write_orbit(dir, "lyapunov", scn.lyapunov(), scn.system(), cfg.integrator);
    }
    return 0;
}

int cmd_guess(Scenario& scn, const fs::path& dir) {
    const ShootingProblem problem = scn.problem();
    write_guess_artifacts(dir, problem, scn.system(), scn.runs(problem.size()));
    std::cout << "guess: " << problem.size() << " patch points, |F(X0)| = " << std::setprecision(6)
              << problem.residual(problem.desired()).norm() << '\n';
    return 0;
}

int solve_problem(const ShootingProblem& problem, const Cr3bpSystem& sys, const std::vector<SolverRun>& runs,
                  const fs::path& dir, const Options& o) {
    std::vector<SummaryRow> rows;
    for (const auto& run : runs) {
        std::cout << "solving with " << run.label << " (" << problem.segments() << " segments)\n";
        const RunOutcome outcome = run_solver(problem, run, progress(o, run.label));
        write_run_artifacts(dir, problem, sys, outcome);
        rows.push_back(summary_row(problem, outcome));
        print_row(rows.back());
        if (!outcome.report.diagnostic.empty()) std::cout << "  note: " << outcome.report.diagnostic << '\n';
    }
    write_summary(dir, rows);
    return 0;
}

int cmd_solve_snapshot(const Options& o) {
    const json snap = json::parse(read_text(o.config), nullptr, false);
    if (snap.is_discarded()) throw ConfigError(o.config, "not valid JSON");
    ProblemSnapshot s = problem_from_snapshot(snap);
    if (!o.solver.empty()) {
        SolverRun run = s.runs.empty() ? SolverRun{} : s.runs.front();
        run.config.mode = solver_mode_from_string(o.solver);
        run.label = o.solver;
        s.runs = {run};
    }
    if (s.runs.empty()) throw ConfigError("runs", "snapshot holds no solver run");
    const fs::path dir = o.out.empty() ? fs::path("out") / "snapshot" : fs::path(o.out);
    write_guess_artifacts(dir, s.problem, s.system, s.runs);
    return solve_problem(s.problem, s.system, s.runs, dir, o);
}

int cmd_solve(Scenario& scn, const fs::path& dir, const Options& o) {
    const ShootingProblem problem = scn.problem();
    const auto runs = scn.runs(problem.size());
    write_guess_artifacts(dir, problem, scn.system(), runs);
    return solve_problem(problem, scn.system(), runs, dir, o);
}

int cmd_compare(Scenario& scn, const fs::path& dir, const Options& o) {
    const auto& cfg = scn.config();
    std::vector<int> counts = cfg.compare.segments;
    if (counts.empty()) counts.push_back(0);
    std::vector<SummaryRow> rows;
    for (int n : counts) {
        const ShootingProblem problem = scn.problem(n);
        const std::string tag = "n" + std::to_string(problem.segments());
        const auto runs = scn.runs(problem.size());
        write_guess_artifacts(dir / tag, problem, scn.system(), runs);
        for (const auto& run : runs) {
            std::cout << "comparing " << run.label << " at " << problem.segments() << " segments\n";
            const RunOutcome outcome = run_solver(problem, run, progress(o, tag + "/" + run.label));
            write_run_artifacts(dir / tag, problem, scn.system(), outcome);
            rows.push_back(summary_row(problem, outcome));
            print_row(rows.back());
        }
    }
    write_summary(dir, rows);
    write_summary_table(std::cout, rows);
    return 0;
}

int cmd_manifold(Scenario& scn, const fs::path& dir) {
    ensure_directory(dir);
    const auto& cfg = scn.config();
    const auto& sys = scn.system();
    const TransferPath& path = scn.transfer();
    const auto& pair = path.pair;
    auto crossing = [&](const SectionCrossing& c) {
        return json{{"index", c.index}, {"sign", c.sign}, {"horizon_TU", c.horizon}, {"state", to_json(c.state)}};
    };
    const json j = {{"section_x", 1.0 - sys.mu()},
                    {"unstable", crossing(pair.unstable)},
                    {"stable", crossing(pair.stable)},
                    {"position_gap_km", pair.position_gap * sys.char_length()},
                    {"velocity_gap_mps", pair.velocity_gap * sys.char_velocity() * 1000.0},
                    {"junction_time_TU", path.junction_time},
                    {"path_duration_TU", path.trajectory.t.back()},
                    {"halo", to_json(path.halo, sys)},
                    {"lyapunov", to_json(path.lyapunov, sys)}};
    write_json(dir / "manifold.json", j);
    write_trajectory_csv(dir / "transfer_path.csv", path.trajectory, "TU from the first Halo apolune");
    const auto& tr = cfg.transfer;
    const auto useeds = manifold_seeds(path.halo, sys, Stability::Unstable, tr.seed_count, tr.integrator);
    const auto sseeds = manifold_seeds(path.lyapunov, sys, Stability::Stable, tr.seed_count, tr.integrator);
    write_trajectory_csv(dir / "unstable_arc.csv",
                         manifold_arc(useeds, pair.unstable.index, pair.unstable.sign, tr.perturbation,
                                      pair.unstable.horizon, sys, tr.integrator)
                             .trajectory,
                         "TU from departure");
    write_trajectory_csv(dir / "stable_arc.csv",
                         manifold_arc(sseeds, pair.stable.index, pair.stable.sign, tr.perturbation,
                                      pair.stable.horizon, sys, tr.integrator)
                             .trajectory,
                         "TU from arrival (negative: backward in time)");
    std::cout << "manifold pair: unstable #" << pair.unstable.index << " (" << pair.unstable.sign << "), stable #"
              << pair.stable.index << " (" << pair.stable.sign << "), gap " << std::setprecision(5)
              << pair.position_gap * sys.char_length() << " km / " << pair.velocity_gap * sys.char_velocity() * 1000.0
              << " m/s\n";
    return 0;
}

int run(Command cmd, const Options& o) {
    if (cmd == Command::Solve && !o.config.empty() && fs::path(o.config).extension() == ".json") {
        return cmd_solve_snapshot(o);
    }
    ScenarioConfig cfg = load_config(o);
    if (!o.solver.empty()) override_solver(cfg, solver_mode_from_string(o.solver));
    const fs::path dir = output_dir(o, cfg.output_dir, cfg.name);
    ensure_directory(dir);
    if (!o.seed.empty()) write_text(dir / "scenario.toml", bundled::scenarios().at(o.seed));
    Scenario scn(std::move(cfg));
    switch (cmd) {
        case Command::Orbit: return cmd_orbit(scn, dir);
        case Command::Guess: return cmd_guess(scn, dir);
        case Command::Solve: return cmd_solve(scn, dir, o);
        case Command::Compare: return cmd_compare(scn, dir, o);
        case Command::Manifold: return cmd_manifold(scn, dir);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cislunar multiple-shooting toolkit: CR3BP orbits transitioned to an ephemeris model"};
    app.require_subcommand(1);
    bool list = false;
    app.add_flag("--list-scenarios", list, "List the bundled scenarios and exit");
    Options opt;
    std::optional<Command> cmd;
    const std::vector<std::pair<Command, std::pair<const char*, const char*>>> commands = {
        {Command::Orbit, {"orbit", "Generate and correct the periodic orbits"}},
        {Command::Guess, {"guess", "Build the shooting problem and write its initial guess"}},
        {Command::Solve, {"solve", "Run the configured solvers (a problem snapshot .json also works as --config)"}},
        {Command::Compare, {"compare", "Sweep the segment counts and compare solvers"}},
        {Command::Manifold, {"manifold", "Select the manifold arcs and write the transfer path"}},
    };
    for (const auto& [c, text] : commands) {
        auto* sub = app.add_subcommand(text.first, text.second);
        sub->add_option("--config", opt.config, "Scenario TOML file");
        sub->add_option("--seed-scenario", opt.seed, "Bundled scenario name");
        sub->add_option("--out", opt.out, "Output directory");
        sub->add_option("--solver", opt.solver, "Override the solver")
            ->check(CLI::IsMember({"mn", "lm", "lm-annealed"}));
        sub->add_flag("--quiet", opt.quiet, "Suppress per-iteration progress");
        sub->callback([&cmd, c = c] { cmd = c; });
    }
    if (argc == 2 && std::string(argv[1]) == "--list-scenarios") {
        for (const auto& [name, text] : bundled::scenarios()) std::cout << name << '\n';
        return 0;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_config;
    }
    try {
        return run(*cmd, opt);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return exit_config;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    }
}
