#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/ephemeris.hpp"
#include "cislunar/frames.hpp"
#include "cislunar/hfem.hpp"
#include "cislunar/integrate.hpp"
#include "cislunar/orbits.hpp"
#include "cislunar/shooting.hpp"
#include "cislunar/solvers.hpp"

namespace cislunar {

using json = nlohmann::json;

/// Version tag written into every problem snapshot.
inline constexpr const char* snapshot_format = "cislunar-problem/1";

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Creates the directory (and parents); IoError on failure.
inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    auto out = open_output(path);
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

inline const char* velocity_units(Units u) { return u == Units::Nondimensional ? "DU/TU" : "km/s"; }
inline const char* position_units(Units u) { return u == Units::Nondimensional ? "DU" : "km"; }

/**
 * @brief Writes `t,x,y,z,vx,vy,vz` preceded by a comment line naming the frame
 * and units; `time_note` describes the time column.
 */
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& time_note) {
    out << "# frame=" << to_string(traj.frame) << " position=" << position_units(traj.units)
        << " velocity=" << velocity_units(traj.units) << " t=" << time_note << '\n';
    out << "t,x,y,z,vx,vy,vz\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        out << traj.t[i];
        for (int c = 0; c < 6; ++c) out << ',' << traj.x[i](c);
        out << '\n';
    }
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 const std::string& time_note) {
    auto out = open_output(path);
    write_trajectory_csv(out, traj, time_note);
}

/// Joins segment trajectories; junction samples of both neighbours are kept.
inline Trajectory concatenate(const std::vector<Trajectory>& parts) {
    Trajectory out;
    if (!parts.empty()) {
        out.frame = parts.front().frame;
        out.units = parts.front().units;
    }
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.size(); ++i) out.push_back(p.t[i], p.x[i]);
    }
    return out;
}

/// Rotates an inertial trajectory (epoch seconds) into the synodic frame; time is kept in epoch seconds.
inline Trajectory to_synodic(const Trajectory& inertial, const Cr3bpSystem& sys, const EphemerisProvider& provider) {
    if (inertial.frame != Frame::Inertial) throw std::invalid_argument("to_synodic: trajectory must be inertial");
    Trajectory out;
    out.frame = Frame::Synodic;
    out.units = Units::Nondimensional;
    for (std::size_t i = 0; i < inertial.size(); ++i) {
        const double t = inertial.t[i];
        out.push_back(t, inertial_to_synodic(State6::inertial(inertial.x[i]), t, sys, provider).vec());
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON conversions
// ---------------------------------------------------------------------------

inline json to_json(const Vec6& x) {
    json a = json::array();
    for (int c = 0; c < 6; ++c) a.push_back(x(c));
    return a;
}

inline Vec6 vec6_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 6) throw ConfigError(field, "expected an array of 6 numbers");
    Vec6 x;
    for (int c = 0; c < 6; ++c) {
        if (!j[static_cast<std::size_t>(c)].is_number()) throw ConfigError(field, "expected an array of 6 numbers");
        x(c) = j[static_cast<std::size_t>(c)].get<double>();
    }
    return x;
}

inline json to_json(const VecX& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline VecX vecx_from_json(const json& j, const std::string& field) {
    if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
    VecX v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(field, "expected an array of numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

template <class T>
T json_field(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(where + key, "missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + key, "has the wrong type");
    }
}

inline json to_json(const Cr3bpSystem& sys) {
    return {{"mu", sys.mu()}, {"char_length_km", sys.char_length()}, {"char_time_s", sys.char_time()}};
}

inline Cr3bpSystem system_from_json(const json& j) {
    return Cr3bpSystem(json_field<double>(j, "mu", "system."), json_field<double>(j, "char_length_km", "system."),
                       json_field<double>(j, "char_time_s", "system."));
}

inline json to_json(const IntegratorConfig& c) {
    return {{"method", "rkf78"},         {"rel_tol", c.rel_tol},   {"abs_tol", c.abs_tol},
            {"initial_step", c.initial_step}, {"min_step", c.min_step}, {"max_step", c.max_step},
            {"max_steps", c.max_steps}};
}

inline IntegratorConfig integrator_from_json(const json& j) {
    IntegratorConfig c;
    const std::string w = "integrator.";
    c.rel_tol = json_field<double>(j, "rel_tol", w);
    c.abs_tol = json_field<double>(j, "abs_tol", w);
    c.initial_step = json_field<double>(j, "initial_step", w);
    c.min_step = json_field<double>(j, "min_step", w);
    c.max_step = json_field<double>(j, "max_step", w);
    c.max_steps = json_field<long>(j, "max_steps", w);
    c.validate();
    return c;
}

inline json to_json(const OrbitalElements& el) {
    return {{"a_km", el.a},       {"e", el.e},       {"i_rad", el.i},           {"raan_rad", el.raan},
            {"argp_rad", el.argp}, {"M0_rad", el.M0}, {"gm_parent", el.gm_parent}, {"epoch0_s", el.epoch0}};
}

inline OrbitalElements elements_from_json(const json& j, const std::string& where) {
    OrbitalElements el;
    el.a = json_field<double>(j, "a_km", where);
    el.e = json_field<double>(j, "e", where);
    el.i = json_field<double>(j, "i_rad", where);
    el.raan = json_field<double>(j, "raan_rad", where);
    el.argp = json_field<double>(j, "argp_rad", where);
    el.M0 = json_field<double>(j, "M0_rad", where);
    el.gm_parent = json_field<double>(j, "gm_parent", where);
    el.epoch0 = json_field<double>(j, "epoch0_s", where);
    return el;
}

/**
 * @brief Identifies a provider well enough to rebuild it: Keplerian elements
 * in full, or the source path of a table.
 */
inline json provider_to_json(const EphemerisProvider& provider) {
    if (const auto* kep = dynamic_cast<const KeplerianEphemeris*>(&provider)) {
        return {{"id", kep->id()},
                {"moon", to_json(kep->moon_elements())},
                {"earth_heliocentric", to_json(kep->earth_heliocentric_elements())}};
    }
    if (dynamic_cast<const TabulatedEphemeris*>(&provider)) {
        const std::string id = provider.id();
        const std::string prefix = "table:";
        const std::string path = id.rfind(prefix, 0) == 0 ? id.substr(prefix.size()) : id;
        return {{"id", "table"}, {"path", path}};
    }
    throw std::invalid_argument("provider_to_json: provider '" + provider.id() + "' cannot be serialized");
}

inline std::shared_ptr<const EphemerisProvider> provider_from_json(const json& j) {
    const auto id = json_field<std::string>(j, "id", "provider.");
    if (id == "keplerian") {
        return std::make_shared<KeplerianEphemeris>(elements_from_json(j.at("moon"), "provider.moon."),
                                                    elements_from_json(j.at("earth_heliocentric"),
                                                                       "provider.earth_heliocentric."));
    }
    if (id == "table") return load_ephemeris_table(json_field<std::string>(j, "path", "provider."));
    throw ConfigError("provider.id", "unknown provider '" + id + "'");
}

inline json to_json(const HfemContext& ctx) {
    json active = json::array();
    for (BodyId b : ctx.active) active.push_back(to_string(b));
    json gmj = json::object();
    for (const auto& [b, v] : ctx.gm) gmj[to_string(b)] = v;
    return {{"provider", provider_to_json(*ctx.provider)}, {"gm", gmj}, {"active", active}};
}

inline std::shared_ptr<const HfemContext> context_from_json(const json& j) {
    auto ctx = std::make_shared<HfemContext>();
    ctx->provider = provider_from_json(j.at("provider"));
    ctx->active.clear();
    for (const auto& b : j.at("active")) ctx->active.push_back(body_from_string(b.get<std::string>()));
    for (const auto& [name, v] : j.at("gm").items()) ctx->gm[body_from_string(name)] = v.get<double>();
    ctx->validate();
    return ctx;
}

inline json to_json(const PeriodicOrbit& orbit, const Cr3bpSystem& sys) {
    return {{"family", orbit.family},
            {"x0", to_json(orbit.x0.vec())},
            {"frame", "synodic"},
            {"units", "DU,DU/TU"},
            {"period_TU", orbit.period},
            {"period_days", orbit.period * sys.char_time() / 86400.0},
            {"jacobi", orbit.jacobi},
            {"corrections", orbit.corrections},
            {"system", to_json(sys)}};
}

inline PeriodicOrbit orbit_from_json(const json& j) {
    PeriodicOrbit o{State6::synodic(vec6_from_json(j.at("x0"), "x0")), json_field<double>(j, "period_TU", ""),
                    json_field<double>(j, "jacobi", ""), json_field<std::string>(j, "family", ""),
                    json_field<int>(j, "corrections", "")};
    return o;
}

inline json to_json(const SolverConfig& c) {
    json j = {{"mode", to_string(c.mode)},
              {"beta0", c.beta0},
              {"alpha", c.alpha},
              {"eta", c.eta},
              {"sigma", c.sigma},
              {"max_inner_iters", c.max_inner_iters},
              {"rel_var_tol", c.rel_var_tol},
              {"l_max", c.l_max},
              {"anneal_orders", c.anneal_orders},
              {"xi0", c.xi0},
              {"max_rejections", c.max_rejections},
              {"divergence_factor", c.divergence_factor}};
    j["q"] = to_json(c.q);
    return j;
}

inline SolverConfig solver_config_from_json(const json& j) {
    SolverConfig c;
    const std::string w = "solver.";
    c.mode = solver_mode_from_string(json_field<std::string>(j, "mode", w));
    c.beta0 = json_field<double>(j, "beta0", w);
    c.alpha = json_field<double>(j, "alpha", w);
    c.eta = json_field<double>(j, "eta", w);
    c.sigma = json_field<double>(j, "sigma", w);
    c.max_inner_iters = json_field<int>(j, "max_inner_iters", w);
    c.rel_var_tol = json_field<double>(j, "rel_var_tol", w);
    c.l_max = json_field<int>(j, "l_max", w);
    c.anneal_orders = json_field<int>(j, "anneal_orders", w);
    c.xi0 = json_field<double>(j, "xi0", w);
    c.max_rejections = json_field<int>(j, "max_rejections", w);
    c.divergence_factor = json_field<double>(j, "divergence_factor", w);
    c.q = vecx_from_json(j.at("q"), "solver.q");
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Problem snapshot
// ---------------------------------------------------------------------------

/// A labelled solver configuration as stored in snapshots.
struct SolverRun {
    std::string label;
    SolverConfig config;
};

/**
 * @brief Everything needed to rerun a shooting problem: patch points at full
 * precision, scales, ephemeris, gravitational parameters, integrator and
 * the solver configurations.
 */
inline json problem_snapshot(const ShootingProblem& problem, const Cr3bpSystem& sys,
                             const std::vector<SolverRun>& runs = {}) {
    json points = json::array();
    for (const auto& p : problem.patch_points()) {
        json pj = {{"epoch_s", p.tau}, {"state", to_json(p.x.vec())}};
        pj["duration_s"] = p.T ? json(*p.T) : json(nullptr);
        points.push_back(pj);
    }
    json rj = json::array();
    for (const auto& r : runs) rj.push_back({{"label", r.label}, {"config", to_json(r.config)}});
    return {{"format", snapshot_format},
            {"frame", "inertial"},
            {"units", "km,km/s,s"},
            {"system", to_json(sys)},
            {"scales", {{"length_km", problem.scales().length}, {"velocity_kms", problem.scales().velocity}}},
            {"context", to_json(problem.context())},
            {"integrator", to_json(problem.integrator())},
            {"patch_points", points},
            {"runs", rj}};
}

struct ProblemSnapshot {
    Cr3bpSystem system;
    ShootingProblem problem;
    std::vector<SolverRun> runs;
};

inline bool is_problem_snapshot(const json& j) {
    return j.is_object() && j.contains("format") && j["format"] == snapshot_format;
}

inline ProblemSnapshot problem_from_snapshot(const json& j, int threads = 0) {
    if (!is_problem_snapshot(j)) throw ConfigError("format", std::string("expected '") + snapshot_format + "'");
    try {
        const Cr3bpSystem sys = system_from_json(j.at("system"));
        const ShootingScales scales{json_field<double>(j.at("scales"), "length_km", "scales."),
                                    json_field<double>(j.at("scales"), "velocity_kms", "scales.")};
        std::vector<PatchPoint> points;
        for (const auto& pj : j.at("patch_points")) {
            std::optional<double> T;
            if (!pj.at("duration_s").is_null()) T = pj.at("duration_s").get<double>();
            points.push_back({State6::inertial(vec6_from_json(pj.at("state"), "patch_points.state")),
                              pj.at("epoch_s").get<double>(), T});
        }
        ShootingProblem problem(std::move(points), context_from_json(j.at("context")), scales,
                                integrator_from_json(j.at("integrator")), threads);
        std::vector<SolverRun> runs;
        for (const auto& rj : j.at("runs")) {
            runs.push_back({rj.at("label").get<std::string>(), solver_config_from_json(rj.at("config"))});
        }
        return {sys, std::move(problem), std::move(runs)};
    } catch (const json::exception& e) {
        throw ConfigError("snapshot", e.what());
    }
}

// ---------------------------------------------------------------------------
// Convergence log
// ---------------------------------------------------------------------------

inline json to_json(const IterationRecord& r) {
    json j = {{"k", r.k},           {"outer", r.outer}, {"Fnorm", r.fnorm},         {"Ep", r.ep},
              {"Ep1", r.ep1},       {"Eq", r.eq},       {"beta", r.beta},           {"xi", r.xi},
              {"step_norm", r.step_norm}, {"accepted", r.accepted}, {"rejections", r.rejections}};
    j["lin_residual"] = std::isfinite(r.lin_residual) ? json(r.lin_residual) : json(nullptr);
    return j;
}

inline json convergence_log(const ConvergenceReport& report, const std::string& label, int segments) {
    json records = json::array();
    for (const auto& r : report.records) records.push_back(to_json(r));
    json anneal = json::array();
    for (const auto& a : report.anneal) {
        anneal.push_back({{"l", a.l}, {"delta", a.delta}, {"epsilon", a.epsilon}, {"xi", a.xi}});
    }
    return {{"label", label},
            {"segments", segments},
            {"solver", to_string(report.mode)},
            {"status", to_string(report.status)},
            {"iterations", report.iterations()},
            {"final_Fnorm", report.final_fnorm},
            {"diagnostic", report.diagnostic},
            {"outer_starts", report.outer_starts},
            {"anneal", anneal},
            {"records", records}};
}

/// CSV mirror of the log: `k,Fnorm,Ep,Ep1,beta,xi,accepted`.
inline void write_convergence_csv(std::ostream& out, const ConvergenceReport& report) {
    out << "k,Fnorm,Ep,Ep1,beta,xi,accepted\n";
    out << std::setprecision(17);
    for (const auto& r : report.records) {
        out << r.k << ',' << r.fnorm << ',' << r.ep << ',' << r.ep1 << ',' << r.beta << ',' << r.xi << ','
            << (r.accepted ? 1 : 0) << '\n';
    }
}

/// Accepted |F| sequence of a logged run, in iteration order.
inline std::vector<double> accepted_fnorms(const json& log) {
    std::vector<double> out;
    for (const auto& r : log.at("records")) {
        if (r.at("accepted").get<bool>()) out.push_back(r.at("Fnorm").get<double>());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison summary
// ---------------------------------------------------------------------------

/// One row of the solver comparison table.
struct SummaryRow {
    int segments = 0;
    std::string solver;
    ConvergenceStatus status = ConvergenceStatus::Stalled;
    int iterations = 0;
    double ep = 0.0;            ///< final |E|_P, DU
    double ep_km = 0.0;         ///< final |E|_P, km
    double ep_per_point_km = 0.0;
    double fnorm = 0.0;
    double seconds = 0.0;

    /// Iteration count when converged, otherwise the status name.
    std::string result() const {
        return status == ConvergenceStatus::Converged ? std::to_string(iterations) : to_string(status);
    }
};

inline constexpr const char* summary_csv_header =
    "segments,solver,iterations_or_status,final_Ep_DU,final_Ep_km,Ep_per_point_km,status,iterations,Fnorm,seconds";

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << summary_csv_header << '\n';
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.segments << ',' << r.solver << ',' << r.result() << ',' << r.ep << ',' << r.ep_km << ','
            << r.ep_per_point_km << ',' << to_string(r.status) << ',' << r.iterations << ',' << r.fnorm << ','
            << r.seconds << '\n';
    }
}

/// Markdown table with the comparison columns.
inline void write_summary_table(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "| Number of segments, n | Solver | Iterations / status | Final total position error (km) | Final residual norm |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        std::ostringstream ep, f;
        ep << std::setprecision(6) << r.ep_km;
        f << std::setprecision(3) << r.fnorm;
        out << "| " << r.segments << " | " << r.solver << " | " << r.result() << " | " << ep.str() << " | "
            << f.str() << " |\n";
    }
}

}  // namespace cislunar
