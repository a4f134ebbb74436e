#pragma once

#include <cmath>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/ephemeris.hpp"
#include "cislunar/integrate.hpp"

namespace cislunar {

/**
 * @brief Finite-difference settings for the frame rates Rdot and ddot.
 *
 * With `extrapolate`, the central differences at steps h and 2h are combined
 * by Richardson extrapolation, (4 D(h) - D(2h)) / 3, which is fourth order.
 * The default 600 s step balances truncation against the rounding of the
 * ephemeris phase at epochs of order 1e7 s (about 2e-12 relative in Rdot);
 * a plain 10 s central difference is limited to about 1e-10.
 */
struct FrameRateOptions {
    double step = 600.0;
    bool extrapolate = true;
};

namespace detail {

template <class F>
auto frame_rate(F&& f, double t, const FrameRateOptions& opt) {
    auto d1 = numeric_rate(f, t, opt.step);
    if (!opt.extrapolate) return d1;
    auto d2 = numeric_rate(f, t, 2.0 * opt.step);
    return decltype(d1)((4.0 * d1 - d2) / 3.0);
}

}  // namespace detail

/**
 * @brief Synodic frame geometry at one epoch, from the Moon's ephemeris state.
 *
 * R has columns x0 (Earth to Moon), y0, z0 (orbit normal). rb, vb locate the
 * Earth-Moon barycenter relative to Earth.
 */
struct FrameSample {
    Mat3 R;
    Mat3 Rdot;
    double d;
    double ddot;
    Vec3 rb;
    Vec3 vb;
    double t;
};

namespace detail {

inline Mat3 synodic_axes(const Vec3& rm, const Vec3& vm, double t) {
    const Vec3 h = rm.cross(vm);
    if (h.norm() < 1e-8) {
        throw DegenerateFrameError("Moon state is rectilinear at epoch " + std::to_string(t) +
                                   " s; orbit normal undefined");
    }
    const Vec3 x0 = rm.normalized();
    const Vec3 z0 = h.normalized();
    const Vec3 y0 = -x0.cross(z0);
    Mat3 r;
    r.col(0) = x0;
    r.col(1) = y0;
    r.col(2) = z0;
    return r;
}

inline Mat3 synodic_axes_at(double t, const EphemerisProvider& provider) {
    const State6 m = provider.body_state(BodyId::Moon, t);
    return synodic_axes(m.r(), m.v(), t);
}

}  // namespace detail

inline FrameSample frame_sample(double t, const EphemerisProvider& provider, const Cr3bpSystem& sys,
                                const FrameRateOptions& opt = {}) {
    const State6 moon = provider.body_state(BodyId::Moon, t);
    FrameSample fs;
    fs.t = t;
    fs.R = detail::synodic_axes(moon.r(), moon.v(), t);
    fs.Rdot = detail::frame_rate([&](double s) { return detail::synodic_axes_at(s, provider); }, t, opt);
    fs.d = moon.r().norm();
    fs.ddot = detail::frame_rate([&](double s) { return provider.body_state(BodyId::Moon, s).r().norm(); }, t, opt);
    fs.rb = sys.mu() * moon.r();
    fs.vb = sys.mu() * moon.v();
    return fs;
}

/**
 * @brief dt~/dt: rate of CR3BP time against ephemeris time, both in TU.
 *
 * Equals char_time * sqrt(gm_sum / d^3), i.e. (char_length / d)^1.5.
 */
inline double time_rate(double t, const EphemerisProvider& provider, const Cr3bpSystem& sys) {
    const double d = provider.body_state(BodyId::Moon, t).r().norm();
    return sys.char_time() * std::sqrt(sys.gm_sum() / (d * d * d));
}

/// Synodic (DU, DU/TU) to Earth-centered inertial (km, km/s) at epoch t.
inline State6 synodic_to_inertial(const State6& s, const FrameSample& fs, const Cr3bpSystem& sys,
                                  double rate) {
    if (s.frame() != Frame::Synodic) throw std::invalid_argument("synodic_to_inertial: state must be synodic");
    const Vec3 cr = s.r(), cv = s.v();
    const Vec3 r = fs.rb + fs.d * fs.R * cr;
    const Vec3 v = fs.vb + (fs.ddot * fs.R + fs.d * fs.Rdot) * cr +
                   (fs.d * rate / sys.char_time()) * (fs.R * cv);
    return State6::inertial(r, v);
}

inline State6 synodic_to_inertial(const State6& s, double t, const Cr3bpSystem& sys,
                                  const EphemerisProvider& provider, const FrameRateOptions& opt = {}) {
    return synodic_to_inertial(s, frame_sample(t, provider, sys, opt), sys, time_rate(t, provider, sys));
}

/// Exact inverse of synodic_to_inertial.
inline State6 inertial_to_synodic(const State6& s, const FrameSample& fs, const Cr3bpSystem& sys,
                                  double rate) {
    if (s.frame() != Frame::Inertial) throw std::invalid_argument("inertial_to_synodic: state must be inertial");
    const Vec3 cr = fs.R.transpose() * (s.r() - fs.rb) / fs.d;
    const Vec3 rel_v = s.v() - fs.vb - (fs.ddot * fs.R + fs.d * fs.Rdot) * cr;
    const Vec3 cv = (sys.char_time() / (fs.d * rate)) * (fs.R.transpose() * rel_v);
    return State6::synodic(cr, cv);
}

inline State6 inertial_to_synodic(const State6& s, double t, const Cr3bpSystem& sys,
                                  const EphemerisProvider& provider, const FrameRateOptions& opt = {}) {
    return inertial_to_synodic(s, frame_sample(t, provider, sys, opt), sys, time_rate(t, provider, sys));
}

/**
 * @brief Ephemeris time t (TU, relative to tau_s) elapsed while CR3BP time
 * advances by ttilde (TU).
 *
 * Integrates dt/dt~ = 1 / time_rate(tau_s + t * char_time) from t(0) = 0.
 */
inline double map_relative_time(double ttilde, double tau_s, const EphemerisProvider& provider,
                                const Cr3bpSystem& sys) {
    using Scalar1 = Eigen::Matrix<double, 1, 1>;
    if (ttilde == 0.0) return 0.0;
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-12;
    auto rhs = [&](double, const Scalar1& y) {
        return Scalar1(1.0 / time_rate(tau_s + y(0) * sys.char_time(), provider, sys));
    };
    return propagate(rhs, Scalar1(0.0), 0.0, ttilde, cfg)(0);
}

/// map_relative_time at several increasing CR3BP times in one sweep.
inline std::vector<double> map_relative_times(const std::vector<double>& ttildes, double tau_s,
                                              const EphemerisProvider& provider, const Cr3bpSystem& sys) {
    using Scalar1 = Eigen::Matrix<double, 1, 1>;
    IntegratorConfig cfg;
    auto rhs = [&](double, const Scalar1& y) {
        return Scalar1(1.0 / time_rate(tau_s + y(0) * sys.char_time(), provider, sys));
    };
    std::vector<double> out;
    out.reserve(ttildes.size());
    Scalar1 y(0.0);
    double s = 0.0;
    for (double tt : ttildes) {
        y = propagate(rhs, y, s, tt, cfg);
        s = tt;
        out.push_back(y(0));
    }
    return out;
}

}  // namespace cislunar
