#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <toml.hpp>

#include "cislunar/core.hpp"
#include "cislunar/integrate.hpp"
#include "cislunar/io.hpp"
#include "cislunar/orbits.hpp"
#include "cislunar/solvers.hpp"
#include "cislunar/transfer.hpp"

namespace cislunar {

struct SystemSpec {
    double gm_earth = gm::earth;
    double gm_moon = gm::moon;
    double gm_sun = gm::sun;
    double char_length_km = 384400.0;
};

/// Ephemeris choice: "keplerian" (eccentric Moon), "circular" (e = 0 at char_length) or "table".
struct EphemerisSpec {
    std::string model = "keplerian";
    double eccentricity = 0.0549;
    bool inclined = false;
    bool sun = true;
    std::string table;  ///< CSV path for the table model, relative to the config file
};

struct HaloSpec {
    double amplitude_km = 27900.0;  ///< peak-to-peak Z-amplitude
    HaloBranch branch = HaloBranch::South;
};

struct LyapunovSpec {
    std::optional<double> jacobi;  ///< defaults to the Halo's Jacobi constant
};

/// Patch points from Halo revolutions ("halo") or the manifold transfer path ("transfer").
struct GuessSpec {
    std::string source = "halo";
    int revolutions = 10;
    int per_revolution = 4;
    int segments = 60;        ///< arc-length segments on the transfer path
    double epoch_s = 0.0;     ///< start epoch tau_s, s past 2020-01-01
    int threads = 0;          ///< 0 uses every hardware thread

    /// Patch points follow from revolutions * per_revolution (halo) or segments (transfer).
    int segment_count() const { return source == "halo" ? revolutions * per_revolution : segments; }
};

/// Solver settings plus proximity weights on listed patch points (negative indices count from the end).
struct SolverSpec {
    std::string label;
    SolverConfig config;
    std::vector<int> weight_points;
    double weight = 1.0;
};

struct CompareSpec {
    std::vector<int> segments;  ///< transfer: arc-length segments; halo: points per revolution
};

/**
 * @brief One scenario: system, ephemeris, orbits, guess, solver runs and
 * output directory. Unknown keys are rejected when parsing.
 */
struct ScenarioConfig {
    std::string name = "scenario";
    std::string description;
    SystemSpec system;
    EphemerisSpec ephemeris;
    IntegratorConfig integrator;
    HaloSpec halo;
    LyapunovSpec lyapunov;
    GuessSpec guess;
    TransferOptions transfer;
    std::vector<SolverSpec> runs;
    CompareSpec compare;
    std::string output_dir;
    std::filesystem::path base_dir = ".";  ///< directory of the config file

    void validate() const;
};

namespace detail {

/// Re-throws a ConfigError with `prefix` prepended to the field name.
template <class F>
void with_prefix(const std::string& prefix, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        throw ConfigError(prefix + e.field, what.substr(std::min(what.size(), e.field.size() + 2)));
    }
}

// Reads typed keys from one TOML table and remembers which were consumed.
class TomlSection {
public:
    TomlSection(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

    bool present() const { return table_ != nullptr; }

    TomlSection section(const std::string& key) {
        const toml::node* n = node(key);
        if (!n) return {nullptr, field(key) + "."};
        if (!n->is_table()) throw ConfigError(field(key), "expected a table");
        return {n->as_table(), field(key) + "."};
    }

    std::vector<TomlSection> section_array(const std::string& key) {
        std::vector<TomlSection> out;
        const toml::node* n = node(key);
        if (!n) return out;
        if (!n->is_array_of_tables()) throw ConfigError(field(key), "expected an array of tables");
        const auto& arr = *n->as_array();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            out.emplace_back(arr[i].as_table(), field(key) + "[" + std::to_string(i) + "].");
        }
        return out;
    }

    void get(const std::string& key, double& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_number()) throw ConfigError(field(key), "expected a number");
            out = *n->value<double>();
        }
    }
    void get(const std::string& key, int& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_integer()) throw ConfigError(field(key), "expected an integer");
            const std::int64_t v = *n->value<std::int64_t>();
            if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
                throw ConfigError(field(key), "out of range");
            }
            out = static_cast<int>(v);
        }
    }
    void get(const std::string& key, long& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_integer()) throw ConfigError(field(key), "expected an integer");
            out = static_cast<long>(*n->value<std::int64_t>());
        }
    }
    void get(const std::string& key, bool& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_boolean()) throw ConfigError(field(key), "expected true or false");
            out = *n->value<bool>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_string()) throw ConfigError(field(key), "expected a string");
            out = *n->value<std::string>();
        }
    }
    void get(const std::string& key, std::optional<int>& out) {
        int v = 0;
        if (node(key)) {
            get(key, v);
            out = v;
        }
    }
    void get(const std::string& key, std::optional<double>& out) {
        double v = 0.0;
        if (node(key)) {
            get(key, v);
            out = v;
        }
    }
    void get(const std::string& key, std::vector<int>& out) {
        if (const toml::node* n = node(key)) {
            if (!n->is_array()) throw ConfigError(field(key), "expected an array of integers");
            out.clear();
            for (const auto& e : *n->as_array()) {
                if (!e.is_integer()) throw ConfigError(field(key), "expected an array of integers");
                out.push_back(static_cast<int>(*e.value<std::int64_t>()));
            }
        }
    }

    std::string field(const std::string& key) const { return path_ + key; }

    /// Throws on the first key that no getter asked for.
    void finish() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_) {
            const std::string key(k.str());
            if (!used_.count(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    const toml::node* node(const std::string& key) {
        used_.insert(key);
        return table_ ? table_->get(key) : nullptr;
    }
    const toml::table* table_;
    std::string path_;
    std::set<std::string> used_;
};

inline void read_solver(TomlSection& s, SolverSpec& spec) {
    std::string mode = to_string(spec.config.mode);
    s.get("label", spec.label);
    s.get("mode", mode);
    try {
        spec.config.mode = solver_mode_from_string(mode);
    } catch (const ConfigError&) {
        throw ConfigError(s.field("mode"), "unknown solver '" + mode + "' (expected mn, lm or lm-annealed)");
    }
    auto& c = spec.config;
    s.get("beta0", c.beta0);
    s.get("alpha", c.alpha);
    s.get("eta", c.eta);
    s.get("sigma", c.sigma);
    s.get("max_inner_iters", c.max_inner_iters);
    s.get("rel_var_tol", c.rel_var_tol);
    s.get("l_max", c.l_max);
    s.get("anneal_orders", c.anneal_orders);
    s.get("xi0", c.xi0);
    s.get("max_rejections", c.max_rejections);
    s.get("divergence_factor", c.divergence_factor);
    s.get("weight_points", spec.weight_points);
    s.get("weight", spec.weight);
    s.finish();
}

inline std::string default_label(const SolverSpec& s) {
    std::ostringstream out;
    out << to_string(s.config.mode);
    if (s.config.mode != SolverMode::MN) out << "_b" << s.config.beta0;
    return out.str();
}

}  // namespace detail

inline void ScenarioConfig::validate() const {
    auto positive = [](double v, const char* field) {
        if (!(v > 0.0)) throw ConfigError(field, "must be positive");
    };
    positive(system.gm_earth, "system.gm_earth");
    positive(system.gm_moon, "system.gm_moon");
    if (!(system.gm_sun >= 0.0)) throw ConfigError("system.gm_sun", "must be non-negative");
    positive(system.char_length_km, "system.char_length_km");

    if (ephemeris.model != "keplerian" && ephemeris.model != "circular" && ephemeris.model != "table") {
        throw ConfigError("ephemeris.model", "unknown model '" + ephemeris.model + "' (expected keplerian, circular or table)");
    }
    if (!(ephemeris.eccentricity >= 0.0 && ephemeris.eccentricity < 1.0)) {
        throw ConfigError("ephemeris.eccentricity", "must lie in [0, 1)");
    }
    if (ephemeris.model == "table" && ephemeris.table.empty()) throw ConfigError("ephemeris.table", "required by the table model");

    detail::with_prefix("integrator.", [&] { integrator.validate(); });

    positive(halo.amplitude_km, "halo.amplitude_km");
    if (lyapunov.jacobi && !std::isfinite(*lyapunov.jacobi)) throw ConfigError("lyapunov.jacobi", "must be finite");

    if (guess.source != "halo" && guess.source != "transfer") {
        throw ConfigError("guess.source", "unknown source '" + guess.source + "' (expected halo or transfer)");
    }
    if (guess.revolutions < 1) throw ConfigError("guess.revolutions", "must be at least 1");
    if (guess.per_revolution < 1) throw ConfigError("guess.per_revolution", "must be at least 1");
    if (guess.segments < 1) throw ConfigError("guess.segments", "must be at least 1");
    if (guess.threads < 0) throw ConfigError("guess.threads", "must be non-negative");
    if (!std::isfinite(guess.epoch_s)) throw ConfigError("guess.epoch_s", "must be finite");

    if (transfer.halo_revolutions < 0) throw ConfigError("transfer.halo_revolutions", "must be non-negative");
    if (transfer.lyapunov_revolutions < 0) throw ConfigError("transfer.lyapunov_revolutions", "must be non-negative");
    if (transfer.seed_count < 1) throw ConfigError("transfer.seeds", "must be at least 1");
    positive(transfer.perturbation, "transfer.perturbation");
    positive(transfer.max_horizon, "transfer.max_horizon");
    if (!(transfer.velocity_weight >= 0.0)) throw ConfigError("transfer.velocity_weight", "must be non-negative");
    if (!(transfer.sample_step >= 0.0)) throw ConfigError("transfer.sample_step", "must be non-negative");
    for (const auto& [value, field] : {std::pair{transfer.unstable_index, "transfer.unstable_index"},
                                       std::pair{transfer.stable_index, "transfer.stable_index"}}) {
        if (value && (*value < 0 || *value >= transfer.seed_count)) throw ConfigError(field, "must lie in [0, seeds)");
    }
    for (const auto& [value, field] : {std::pair{transfer.unstable_sign, "transfer.unstable_sign"},
                                       std::pair{transfer.stable_sign, "transfer.stable_sign"}}) {
        if (value && *value != 1 && *value != -1) throw ConfigError(field, "must be 1 or -1");
    }

    if (runs.empty()) throw ConfigError("solver", "no solver run configured");
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string prefix = runs.size() == 1 ? "solver." : "run[" + std::to_string(i) + "].";
        detail::with_prefix(prefix, [&] { runs[i].config.validate(); });
        if (!(runs[i].weight >= 0.0) || !std::isfinite(runs[i].weight)) {
            throw ConfigError(prefix + "weight", "must be non-negative");
        }
    }
    for (int n : compare.segments) {
        if (n < 1) throw ConfigError("compare.segments", "entries must be at least 1");
    }
}

/**
 * @brief Parses and validates a scenario from TOML text.
 *
 * Run entries (`[[run]]`) inherit every unset key from `[solver]`; without
 * any, `[solver]` is the single run.
 *
 * @throws ConfigError naming the offending field.
 */
inline ScenarioConfig parse_scenario(const std::string& text, const std::string& source = "config",
                                     const std::filesystem::path& base_dir = ".") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " (line " << e.source().begin.line << ")";
        throw ConfigError(source, msg.str());
    }
    ScenarioConfig cfg;
    cfg.base_dir = base_dir;
    detail::TomlSection top(&root, "");
    top.get("name", cfg.name);
    top.get("description", cfg.description);

    auto system = top.section("system");
    system.get("gm_earth", cfg.system.gm_earth);
    system.get("gm_moon", cfg.system.gm_moon);
    system.get("gm_sun", cfg.system.gm_sun);
    system.get("char_length_km", cfg.system.char_length_km);
    system.finish();

    auto eph = top.section("ephemeris");
    eph.get("model", cfg.ephemeris.model);
    eph.get("eccentricity", cfg.ephemeris.eccentricity);
    eph.get("inclined", cfg.ephemeris.inclined);
    eph.get("sun", cfg.ephemeris.sun);
    eph.get("table", cfg.ephemeris.table);
    eph.finish();

    auto integ = top.section("integrator");
    integ.get("rel_tol", cfg.integrator.rel_tol);
    integ.get("abs_tol", cfg.integrator.abs_tol);
    integ.get("initial_step", cfg.integrator.initial_step);
    integ.get("min_step", cfg.integrator.min_step);
    integ.get("max_step", cfg.integrator.max_step);
    integ.get("max_steps", cfg.integrator.max_steps);
    integ.finish();

    auto halo = top.section("halo");
    halo.get("amplitude_km", cfg.halo.amplitude_km);
    std::string branch = "south";
    halo.get("branch", branch);
    if (branch == "south") cfg.halo.branch = HaloBranch::South;
    else if (branch == "north") cfg.halo.branch = HaloBranch::North;
    else throw ConfigError("halo.branch", "unknown branch '" + branch + "' (expected north or south)");
    halo.finish();

    auto lyap = top.section("lyapunov");
    lyap.get("jacobi", cfg.lyapunov.jacobi);
    lyap.finish();

    auto guess = top.section("guess");
    guess.get("source", cfg.guess.source);
    guess.get("revolutions", cfg.guess.revolutions);
    guess.get("per_revolution", cfg.guess.per_revolution);
    guess.get("segments", cfg.guess.segments);
    guess.get("epoch_s", cfg.guess.epoch_s);
    guess.get("threads", cfg.guess.threads);
    guess.finish();

    auto tr = top.section("transfer");
    tr.get("halo_revolutions", cfg.transfer.halo_revolutions);
    tr.get("lyapunov_revolutions", cfg.transfer.lyapunov_revolutions);
    tr.get("seeds", cfg.transfer.seed_count);
    tr.get("perturbation", cfg.transfer.perturbation);
    tr.get("max_horizon", cfg.transfer.max_horizon);
    tr.get("velocity_weight", cfg.transfer.velocity_weight);
    tr.get("unstable_index", cfg.transfer.unstable_index);
    tr.get("unstable_sign", cfg.transfer.unstable_sign);
    tr.get("stable_index", cfg.transfer.stable_index);
    tr.get("stable_sign", cfg.transfer.stable_sign);
    tr.get("sample_step", cfg.transfer.sample_step);
    tr.finish();
    cfg.transfer.integrator = cfg.integrator;

    SolverSpec base;
    auto solver = top.section("solver");
    detail::read_solver(solver, base);
    for (auto& run : top.section_array("run")) {
        SolverSpec spec = base;
        spec.label.clear();
        detail::read_solver(run, spec);
        cfg.runs.push_back(spec);
    }
    if (cfg.runs.empty()) cfg.runs.push_back(base);
    for (auto& r : cfg.runs) {
        if (r.label.empty()) r.label = detail::default_label(r);
    }

    auto cmp = top.section("compare");
    cmp.get("segments", cfg.compare.segments);
    cmp.finish();

    auto out = top.section("output");
    out.get("dir", cfg.output_dir);
    out.finish();

    top.finish();
    cfg.validate();
    return cfg;
}

/// Reads a scenario file; table paths resolve against its directory.
inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    return parse_scenario(text, path.string(), path.parent_path().empty() ? "." : path.parent_path());
}

/// Replaces the configured runs by a single run of `mode` built from the first run's settings.
inline void override_solver(ScenarioConfig& cfg, SolverMode mode) {
    SolverSpec spec = cfg.runs.front();
    spec.config.mode = mode;
    spec.label = detail::default_label(spec);
    cfg.runs = {spec};
    cfg.validate();
}

}  // namespace cislunar
