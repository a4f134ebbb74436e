#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cislunar/config.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/ephemeris.hpp"
#include "cislunar/hfem.hpp"
#include "cislunar/io.hpp"
#include "cislunar/orbits.hpp"
#include "cislunar/shooting.hpp"
#include "cislunar/solvers.hpp"
#include "cislunar/transfer.hpp"

namespace cislunar {

inline Cr3bpSystem make_system(const ScenarioConfig& cfg) {
    return Cr3bpSystem::from_gm(cfg.system.gm_earth, cfg.system.gm_moon, cfg.system.char_length_km);
}

inline std::shared_ptr<const EphemerisProvider> make_provider(const ScenarioConfig& cfg) {
    const auto& e = cfg.ephemeris;
    if (e.model == "table") {
        const std::filesystem::path p(e.table);
        return load_ephemeris_table((p.is_absolute() ? p : cfg.base_dir / p).lexically_normal().string());
    }
    OrbitalElements moon = KeplerianEphemeris::default_moon(e.model == "circular" ? 0.0 : e.eccentricity, e.inclined);
    moon.a = cfg.system.char_length_km;
    moon.gm_parent = cfg.system.gm_earth + cfg.system.gm_moon;
    OrbitalElements earth = KeplerianEphemeris::default_earth_heliocentric();
    earth.gm_parent = cfg.system.gm_sun + cfg.system.gm_earth + cfg.system.gm_moon;
    return std::make_shared<KeplerianEphemeris>(moon, earth);
}

/// HFEM context: Moon always perturbs, the Sun when enabled.
inline std::shared_ptr<const HfemContext> make_context(const ScenarioConfig& cfg) {
    auto ctx = std::make_shared<HfemContext>();
    ctx->provider = make_provider(cfg);
    ctx->gm = {{BodyId::Earth, cfg.system.gm_earth}, {BodyId::Moon, cfg.system.gm_moon}, {BodyId::Sun, cfg.system.gm_sun}};
    ctx->active = {BodyId::Moon};
    if (cfg.ephemeris.sun) ctx->active.push_back(BodyId::Sun);
    ctx->validate();
    return ctx;
}

/// Proximity weights: `weight` on the position entries of the listed points.
inline VecX proximity_weights(const SolverSpec& spec, int points) {
    if (spec.weight_points.empty()) return {};
    std::vector<int> which;
    for (int i : spec.weight_points) {
        const int j = i < 0 ? points + i : i;
        if (j < 0 || j >= points) {
            throw ConfigError("weight_points", "index " + std::to_string(i) + " outside " + std::to_string(points) +
                                                   " patch points");
        }
        which.push_back(j);
    }
    return spec.weight * position_mask(points, which);
}

/// Solver run with the proximity weights resolved for a problem size.
inline SolverRun resolve_run(const SolverSpec& spec, int points) {
    SolverRun run{spec.label, spec.config};
    run.config.q = proximity_weights(spec, points);
    return run;
}

/**
 * @brief Scenario state shared by the subcommands: the system, the HFEM
 * context and lazily built orbits and transfer path.
 */
class Scenario {
public:
    explicit Scenario(ScenarioConfig cfg) : cfg_(std::move(cfg)), sys_(make_system(cfg_)) { cfg_.validate(); }

    const ScenarioConfig& config() const { return cfg_; }
    const Cr3bpSystem& system() const { return sys_; }

    std::shared_ptr<const HfemContext> context() {
        if (!ctx_) ctx_ = make_context(cfg_);
        return ctx_;
    }

    const PeriodicOrbit& halo() {
        if (!halo_) {
            HaloFamilyOptions opt;
            opt.branch = cfg_.halo.branch;
            opt.corrector.integrator = cfg_.integrator;
            halo_ = halo_with_amplitude(cfg_.halo.amplitude_km / sys_.char_length(), sys_, opt);
        }
        return *halo_;
    }

    const PeriodicOrbit& lyapunov() {
        if (!lyapunov_) {
            LyapunovOptions opt;
            opt.corrector.integrator = cfg_.integrator;
            const double j = cfg_.lyapunov.jacobi ? *cfg_.lyapunov.jacobi : halo().jacobi;
            lyapunov_ = lyapunov_at_jacobi(j, sys_, opt).orbit;
        }
        return *lyapunov_;
    }

    const TransferPath& transfer() {
        if (!transfer_) transfer_ = build_transfer_path(halo(), lyapunov(), sys_, cfg_.transfer);
        return *transfer_;
    }

    /// CR3BP patch points; `count` overrides per_revolution (halo) or segments (transfer) when positive.
    std::vector<GuessPoint> guess_points(int count = 0) {
        const auto& g = cfg_.guess;
        if (g.source == "halo") {
            return equal_time_points(halo(), sys_, g.revolutions, count > 0 ? count : g.per_revolution, cfg_.integrator);
        }
        return arclength_points(transfer().trajectory, count > 0 ? count : g.segments);
    }

    ShootingProblem problem(int count = 0) {
        return build_initial_guess(guess_points(count), cfg_.guess.epoch_s, sys_, context(), cfg_.integrator,
                                   cfg_.guess.threads);
    }

    std::vector<SolverRun> runs(int points) const {
        std::vector<SolverRun> out;
        for (const auto& spec : cfg_.runs) out.push_back(resolve_run(spec, points));
        return out;
    }

private:
    ScenarioConfig cfg_;
    Cr3bpSystem sys_;
    std::shared_ptr<const HfemContext> ctx_;
    std::optional<PeriodicOrbit> halo_, lyapunov_;
    std::optional<TransferPath> transfer_;
};

/// Result of one solver run on one problem.
struct RunOutcome {
    SolverRun run;
    ConvergenceReport report;
    ErrorMetrics metrics;
    double seconds = 0.0;
};

inline RunOutcome run_solver(const ShootingProblem& problem, const SolverRun& run,
                             const IterationObserver& observer = {}) {
    const auto start = std::chrono::steady_clock::now();
    ConvergenceReport report = solve(problem, run.config, observer);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    WeightSpec w = default_weights(problem.size());
    if (run.config.q.size() > 0) w.q = run.config.q;
    const ErrorMetrics m = error_metrics(problem, report.X, w);
    return {run, std::move(report), m, seconds};
}

inline SummaryRow summary_row(const ShootingProblem& problem, const RunOutcome& outcome) {
    SummaryRow row;
    row.segments = problem.segments();
    row.solver = outcome.run.label;
    row.status = outcome.report.status;
    row.iterations = outcome.report.iterations();
    row.ep = outcome.metrics.ep;
    row.ep_km = outcome.metrics.ep * problem.scales().length;
    row.ep_per_point_km = row.ep_km / std::sqrt(static_cast<double>(problem.size()));
    row.fnorm = outcome.report.final_fnorm;
    row.seconds = outcome.seconds;
    return row;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline constexpr const char* epoch_time_note = "s past 2020-01-01T00:00:00";

/// Writes `<stem>_inertial.csv` and `<stem>_synodic.csv` for the segments under X.
inline void write_shooting_trajectories(const std::filesystem::path& dir, const std::string& stem,
                                        const ShootingProblem& problem, const Cr3bpSystem& sys, const VecX& X) {
    const Trajectory inertial = concatenate(problem.segment_trajectories(X));
    write_trajectory_csv(dir / (stem + "_inertial.csv"), inertial, epoch_time_note);
    write_trajectory_csv(dir / (stem + "_synodic.csv"), to_synodic(inertial, sys, *problem.context().provider),
                         epoch_time_note);
}

/// Snapshot plus initial-guess trajectories in both frames.
inline void write_guess_artifacts(const std::filesystem::path& dir, const ShootingProblem& problem,
                                  const Cr3bpSystem& sys, const std::vector<SolverRun>& runs,
                                  const std::string& suffix = "") {
    ensure_directory(dir);
    write_json(dir / ("problem" + suffix + ".json"), problem_snapshot(problem, sys, runs));
    write_shooting_trajectories(dir, "guess" + suffix, problem, sys, problem.desired());
}

/// Convergence log (JSON and CSV) and converged trajectories in `dir/<label>`.
inline void write_run_artifacts(const std::filesystem::path& dir, const ShootingProblem& problem,
                                const Cr3bpSystem& sys, const RunOutcome& outcome, bool trajectories = true) {
    const std::filesystem::path sub = dir / outcome.run.label;
    ensure_directory(sub);
    write_json(sub / "log.json", convergence_log(outcome.report, outcome.run.label, problem.segments()));
    {
        auto out = open_output(sub / "log.csv");
        write_convergence_csv(out, outcome.report);
    }
    if (!trajectories) return;
    try {
        write_shooting_trajectories(sub, "converged", problem, sys, outcome.report.X);
    } catch (const SegmentError& e) {
        write_text(sub / "converged_unavailable.txt", std::string("final iterate cannot be propagated: ") + e.what() + "\n");
    }
}

inline void write_summary(const std::filesystem::path& dir, const std::vector<SummaryRow>& rows) {
    ensure_directory(dir);
    {
        auto out = open_output(dir / "summary.csv");
        write_summary_csv(out, rows);
    }
    auto out = open_output(dir / "summary.md");
    write_summary_table(out, rows);
}

}  // namespace cislunar
