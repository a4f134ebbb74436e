#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"

namespace cislunar {

enum class BodyId { Earth, Moon, Sun };

inline const char* to_string(BodyId b) {
    switch (b) {
        case BodyId::Earth: return "earth";
        case BodyId::Moon: return "moon";
        case BodyId::Sun: return "sun";
    }
    return "?";
}

inline BodyId body_from_string(const std::string& name) {
    if (name == "earth") return BodyId::Earth;
    if (name == "moon") return BodyId::Moon;
    if (name == "sun") return BodyId::Sun;
    throw std::invalid_argument("unknown body '" + name + "'");
}

/// Seconds per day.
inline constexpr double seconds_per_day = 86400.0;

/**
 * @brief Classical two-body elements of a body about its parent.
 *
 * Angles in rad, a in km, gm_parent in km^3/s^2; M0 is the mean anomaly at
 * epoch0 (s past the reference epoch 2020-01-01 00:00:00).
 */
struct OrbitalElements {
    double a = 384400.0;
    double e = 0.0;
    double i = 0.0;
    double raan = 0.0;
    double argp = 0.0;
    double M0 = 0.0;
    double gm_parent = gm::earth + gm::moon;
    double epoch0 = 0.0;

    void validate() const {
        if (!(a > 0.0)) throw ConfigError("a", "semi-major axis must be positive");
        if (!(e >= 0.0 && e < 1.0)) throw ConfigError("e", "eccentricity must lie in [0, 1)");
        if (!(gm_parent > 0.0)) throw ConfigError("gm_parent", "must be positive");
    }
    double mean_motion() const { return std::sqrt(gm_parent / (a * a * a)); }
    double period() const { return 2.0 * std::numbers::pi / mean_motion(); }
};

/**
 * @brief Solves Kepler's equation E - e sin E = M.
 *
 * Newton iteration safeguarded by a bisection bracket on the reduced
 * anomaly in (-pi, pi]; the returned E lies on the same revolution as M.
 */
inline double solve_kepler(double M, double e) {
    if (!(e >= 0.0 && e < 1.0)) throw std::invalid_argument("solve_kepler: eccentricity must lie in [0, 1)");
    if (M == 0.0 || e == 0.0) return M;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double k = std::round(M / two_pi);
    const double m = M - k * two_pi;  // in [-pi, pi]

    // f(E) = E - e sin E - m is increasing; the root lies in [m - e, m + e].
    double lo = m - e, hi = m + e;
    double E = m + e * std::sin(m);
    for (int it = 0; it < 100; ++it) {
        const double f = E - e * std::sin(E) - m;
        if (std::abs(f) < 1e-15) break;
        if (f > 0.0) hi = E; else lo = E;
        double next = E - f / (1.0 - e * std::cos(E));
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == E) break;
        E = next;
    }
    return E + k * two_pi;
}

/// Inertial position/velocity of the two-body orbit at epoch t.
inline State6 keplerian_state(const OrbitalElements& el, double t) {
    const double n = el.mean_motion();
    const double M = el.M0 + n * (t - el.epoch0);
    const double E = solve_kepler(M, el.e);
    const double cE = std::cos(E), sE = std::sin(E);
    const double sq = std::sqrt(1.0 - el.e * el.e);
    const Vec3 r_pf(el.a * (cE - el.e), el.a * sq * sE, 0.0);
    const double edot = n / (1.0 - el.e * cE);
    const Vec3 v_pf(-el.a * sE * edot, el.a * sq * cE * edot, 0.0);

    const Mat3 rot = (Eigen::AngleAxisd(el.raan, Vec3::UnitZ()) * Eigen::AngleAxisd(el.i, Vec3::UnitX()) *
                      Eigen::AngleAxisd(el.argp, Vec3::UnitZ()))
                         .toRotationMatrix();
    return State6::inertial(rot * r_pf, rot * v_pf);
}

/**
 * @brief Source of Earth-relative Moon and Sun states versus epoch.
 *
 * Implementations are immutable after construction, so concurrent queries
 * are safe.
 */
class EphemerisProvider {
public:
    virtual ~EphemerisProvider() = default;

    /// Earth-relative state (km, km/s); Earth itself is always the zero state.
    State6 body_state(BodyId body, double t) const {
        if (body == BodyId::Earth) return State6::inertial(Vec6::Zero());
        return state_impl(body, t);
    }

    /// Short identification string for logs and snapshots.
    virtual std::string id() const = 0;

protected:
    virtual State6 state_impl(BodyId body, double t) const = 0;
};

/**
 * @brief Analytic provider: Moon on Keplerian elements about Earth, Sun as
 * the inverted heliocentric Keplerian orbit of Earth.
 */
class KeplerianEphemeris : public EphemerisProvider {
public:
    KeplerianEphemeris(OrbitalElements moon, OrbitalElements earth_helio)
        : moon_(moon), earth_helio_(earth_helio) {
        moon_.validate();
        earth_helio_.validate();
    }

    /// Default Moon (e = 0.0549, optionally inclined 5.145 deg) and Sun.
    static KeplerianEphemeris standard(bool inclined_moon = false) {
        return {default_moon(0.0549, inclined_moon), default_earth_heliocentric()};
    }

    /// e = 0 coplanar Moon at the given distance; reproduces the CR3BP geometry.
    static KeplerianEphemeris circular(double distance = 384400.0) {
        OrbitalElements moon = default_moon(0.0, false);
        moon.a = distance;
        return {moon, default_earth_heliocentric()};
    }

    static OrbitalElements default_moon(double e, bool inclined) {
        OrbitalElements el;
        el.a = 384400.0;
        el.e = e;
        el.i = inclined ? 5.145 * std::numbers::pi / 180.0 : 0.0;
        el.gm_parent = gm::earth + gm::moon;
        return el;
    }

    static OrbitalElements default_earth_heliocentric() {
        OrbitalElements el;
        el.a = 1.496e8;
        el.e = 0.0167;
        el.gm_parent = gm::sun + gm::earth + gm::moon;
        return el;
    }

    const OrbitalElements& moon_elements() const { return moon_; }
    const OrbitalElements& earth_heliocentric_elements() const { return earth_helio_; }

    std::string id() const override { return "keplerian"; }

protected:
    State6 state_impl(BodyId body, double t) const override {
        if (body == BodyId::Moon) return keplerian_state(moon_, t);
        const State6 earth = keplerian_state(earth_helio_, t);
        return State6::inertial(Vec6(-earth.vec()));
    }

private:
    OrbitalElements moon_;
    OrbitalElements earth_helio_;
};

/// Table epochs are not strictly increasing for some body.
struct MonotonicityError : Error {
    using Error::Error;
};

/// Table holds fewer samples than interpolation needs.
struct InsufficientSamplesError : Error {
    using Error::Error;
};

/// One row of an ephemeris table.
struct EphemerisRecord {
    double epoch;
    BodyId body;
    Vec6 x;
};

/**
 * @brief Provider interpolating tabulated states with cubic Hermite splines,
 * using the stored velocities as derivatives.
 */
class TabulatedEphemeris : public EphemerisProvider {
public:
    explicit TabulatedEphemeris(const std::vector<EphemerisRecord>& records, std::string source = "table")
        : source_(std::move(source)) {
        for (const auto& rec : records) {
            auto& series = series_[rec.body];
            if (!series.epochs.empty() && !(rec.epoch > series.epochs.back())) {
                throw MonotonicityError(std::string("ephemeris table: epochs for ") + to_string(rec.body) +
                            " are not strictly increasing at epoch " + std::to_string(rec.epoch));
            }
            series.epochs.push_back(rec.epoch);
            series.states.push_back(rec.x);
        }
        if (series_.empty()) throw InsufficientSamplesError("ephemeris table: insufficient samples (table is empty)");
        for (const auto& [body, series] : series_) {
            if (series.epochs.size() < 4) {
                throw InsufficientSamplesError(std::string("ephemeris table: insufficient samples for ") + to_string(body) +
                            " (need at least 4)");
            }
        }
    }

    bool has_body(BodyId b) const { return b == BodyId::Earth || series_.count(b) > 0; }
    std::pair<double, double> coverage(BodyId b) const {
        const auto& s = series_.at(b);
        return {s.epochs.front(), s.epochs.back()};
    }

    std::string id() const override { return "table:" + source_; }

protected:
    State6 state_impl(BodyId body, double t) const override {
        const auto it = series_.find(body);
        if (it == series_.end()) {
            throw CoverageError(std::string("ephemeris table has no samples for ") + to_string(body));
        }
        const auto& s = it->second;
        if (!(t >= s.epochs.front() && t <= s.epochs.back())) {
            std::ostringstream msg;
            msg << std::setprecision(17) << "epoch " << t << " s outside table coverage [" << s.epochs.front()
                << ", " << s.epochs.back() << "] for " << to_string(body);
            throw CoverageError(msg.str());
        }
        auto upper = std::upper_bound(s.epochs.begin(), s.epochs.end(), t);
        std::size_t k = static_cast<std::size_t>(upper - s.epochs.begin());
        if (k > 0 && s.epochs[k - 1] == t) return State6::inertial(s.states[k - 1]);
        if (k >= s.epochs.size()) k = s.epochs.size() - 1;
        const std::size_t j = k - 1;
        const double t0 = s.epochs[j], t1 = s.epochs[k];
        const double h = t1 - t0;
        const double u = (t - t0) / h;
        const double u2 = u * u, u3 = u2 * u;
        const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
        const double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
        const double d00 = (6 * u2 - 6 * u) / h, d10 = (3 * u2 - 4 * u + 1) / h;
        const double d01 = (-6 * u2 + 6 * u) / h, d11 = (3 * u2 - 2 * u) / h;
        const Vec3 p0 = s.states[j].head<3>(), m0 = s.states[j].tail<3>();
        const Vec3 p1 = s.states[k].head<3>(), m1 = s.states[k].tail<3>();
        const Vec3 r = h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1;
        const Vec3 v = d00 * p0 + d10 * h * m0 + d01 * p1 + d11 * h * m1;
        return State6::inertial(r, v);
    }

private:
    struct Series {
        std::vector<double> epochs;
        std::vector<Vec6> states;
    };
    std::map<BodyId, Series> series_;
    std::string source_;
};

inline constexpr const char* ephemeris_csv_header = "epoch_s,body,x_km,y_km,z_km,vx_kms,vy_kms,vz_kms";

/// Parses the ephemeris CSV format; errors carry the 1-based line number.
inline std::vector<EphemerisRecord> parse_ephemeris_csv(std::istream& in) {
    std::vector<EphemerisRecord> records;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != ephemeris_csv_header) throw ParseError("expected header '" + std::string(ephemeris_csv_header) + "'", lineno);
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 8) throw ParseError("expected 8 comma-separated fields, got " + std::to_string(fields.size()), lineno);
        EphemerisRecord rec{};
        auto number = [&](const std::string& text) {
            std::size_t used = 0;
            double value = 0.0;
            try {
                value = std::stod(text, &used);
            } catch (const std::exception&) {
                throw ParseError("invalid number '" + text + "'", lineno);
            }
            if (used != text.size() || !std::isfinite(value)) throw ParseError("invalid number '" + text + "'", lineno);
            return value;
        };
        rec.epoch = number(fields[0]);
        if (fields[1] == "moon") rec.body = BodyId::Moon;
        else if (fields[1] == "sun") rec.body = BodyId::Sun;
        else throw ParseError("unknown body '" + fields[1] + "' (expected moon or sun)", lineno);
        for (int c = 0; c < 6; ++c) rec.x(c) = number(fields[2 + c]);
        records.push_back(rec);
    }
    return records;
}

inline std::shared_ptr<TabulatedEphemeris> load_ephemeris_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ephemeris table '" + path + "'");
    return std::make_shared<TabulatedEphemeris>(parse_ephemeris_csv(in), path);
}

/// Samples a provider on [t0, t1] at the given cadence and writes the CSV format.
inline void write_ephemeris_table(std::ostream& out, const EphemerisProvider& provider, double t0, double t1,
                                  double step, const std::vector<BodyId>& bodies = {BodyId::Moon, BodyId::Sun}) {
    out << ephemeris_csv_header << '\n';
    out << std::setprecision(17);
    const long count = static_cast<long>(std::floor((t1 - t0) / step + 1e-9));
    for (BodyId b : bodies) {
        for (long k = 0; k <= count; ++k) {
            const double t = t0 + static_cast<double>(k) * step;
            const Vec6 x = provider.body_state(b, t).vec();
            out << t << ',' << to_string(b);
            for (int c = 0; c < 6; ++c) out << ',' << x(c);
            out << '\n';
        }
    }
}

/// Central difference (f(t+h) - f(t-h)) / 2h.
template <class F>
auto numeric_rate(F&& f, double t, double h = 10.0) {
    using Value = std::decay_t<decltype(f(t))>;
    return Value((f(t + h) - f(t - h)) / (2.0 * h));
}

}  // namespace cislunar
