#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <type_traits>
#include <utility>
#include <vector>

#include "cislunar/core.hpp"

namespace cislunar {

/**
 * @brief Tolerances and step bounds for the embedded RKF7(8) integrator.
 *
 * Step sizes are in the time unit of the right-hand side (s for the
 * ephemeris model, TU for the CR3BP).
 */
struct IntegratorConfig {
    double rel_tol = 1e-12;
    double abs_tol = 1e-12;
    double initial_step = 0.0;  ///< 0 selects a starting step automatically
    double min_step = 1e-12;
    double max_step = 1e12;
    long max_steps = 2'000'000;

    void validate() const {
        auto in_range = [](double tol) { return tol > 0.0 && tol <= 1e-2; };
        if (!in_range(rel_tol)) throw ConfigError("rel_tol", "must lie in (0, 1e-2]");
        if (!in_range(abs_tol)) throw ConfigError("abs_tol", "must lie in (0, 1e-2]");
        if (!(min_step > 0.0 && min_step < max_step))
            throw ConfigError("min_step", "must satisfy 0 < min_step < max_step");
        if (initial_step < 0.0) throw ConfigError("initial_step", "must be non-negative");
        if (max_steps <= 0) throw ConfigError("max_steps", "must be positive");
    }
};

/// Dense record of a propagation: every accepted step, in propagation order.
struct Trajectory {
    std::vector<double> t;
    std::vector<Vec6> x;
    Frame frame = Frame::Synodic;
    Units units = Units::Nondimensional;

    std::size_t size() const { return t.size(); }
    bool empty() const { return t.empty(); }
    Sample sample(std::size_t i) const { return {t[i], State6(x[i], frame, units)}; }

    void push_back(double time, const Vec6& state) {
        t.push_back(time);
        x.push_back(state);
    }
};

namespace detail {

// Fehlberg 7(8) tableau. The 8th-order solution is propagated; the error
// estimate is the difference to the embedded 7th-order one.
struct Rkf78 {
    static constexpr int stages = 13;
    static constexpr std::array<double, 13> c{
        0.0, 2.0 / 27.0, 1.0 / 9.0, 1.0 / 6.0, 5.0 / 12.0, 1.0 / 2.0, 5.0 / 6.0,
        1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0, 1.0, 0.0, 1.0};
    static constexpr std::array<std::array<double, 12>, 13> a{{
        {},
        {2.0 / 27.0},
        {1.0 / 36.0, 1.0 / 12.0},
        {1.0 / 24.0, 0.0, 1.0 / 8.0},
        {5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0},
        {1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0},
        {-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0},
        {31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0},
        {2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0},
        {-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0, -19.0 / 60.0,
         17.0 / 6.0, -1.0 / 12.0},
        {2383.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -301.0 / 82.0,
         2133.0 / 4100.0, 45.0 / 82.0, 45.0 / 164.0, 18.0 / 41.0},
        {3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0,
         6.0 / 41.0, 0.0},
        {-1777.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -289.0 / 82.0,
         2193.0 / 4100.0, 51.0 / 82.0, 33.0 / 164.0, 12.0 / 41.0, 0.0, 1.0},
    }};
    static constexpr std::array<double, 13> b{
        0.0, 0.0, 0.0, 0.0, 0.0, 34.0 / 105.0, 9.0 / 35.0, 9.0 / 35.0, 9.0 / 280.0,
        9.0 / 280.0, 0.0, 41.0 / 840.0, 41.0 / 840.0};
    // b(8th) - b(7th); nonzero only on stages 0, 10, 11, 12.
    static constexpr double err_weight = 41.0 / 840.0;
};

template <class State>
double error_norm(const State& err, const State& y0, const State& y1, const IntegratorConfig& cfg) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        worst = std::max(worst, std::abs(err[i]) / scale);
    }
    return worst;
}

template <class State, class Rhs>
double starting_step(Rhs& rhs, double t0, const State& y0, const State& f0, double direction,
                     const IntegratorConfig& cfg) {
    auto scaled_norm = [&](const State& v) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double sc = cfg.abs_tol + cfg.rel_tol * std::abs(y0[i]);
            s += (v[i] / sc) * (v[i] / sc);
        }
        return std::sqrt(s / static_cast<double>(v.size()));
    };
    const double d0 = scaled_norm(y0);
    const double d1 = scaled_norm(f0);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, cfg.max_step);
    const State y1 = y0 + direction * h0 * f0;
    const State f1 = rhs(t0 + direction * h0, y1);
    const double d2 = scaled_norm(State(f1 - f0)) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 8.0);
    return std::clamp(std::min(100.0 * h0, h1), cfg.min_step, cfg.max_step);
}

}  // namespace detail

/**
 * @brief Adaptive RKF7(8) propagation of y' = rhs(t, y) from t0 to t1.
 *
 * Works for any fixed- or dynamic-size Eigen column vector. `t1 < t0`
 * integrates backwards. The last step is clamped so the result lands exactly
 * on t1. Each step is accepted when, component-wise, the embedded error
 * estimate is below abs_tol + rel_tol*|y_i|. Step control is a PI controller
 * (safety 0.9, growth at most x5, shrink at most x0.1).
 *
 * `observer(t, y)` is called at t0 and after every accepted step. If it
 * returns bool, returning false stops the integration and the current state
 * is returned.
 *
 * @throws PropagationError on step underflow or when max_steps is exceeded;
 *         exceptions thrown by rhs propagate unchanged.
 */
template <class State, class Rhs, class Observer>
State propagate(Rhs&& rhs, const State& y0, double t0, double t1, const IntegratorConfig& cfg,
                Observer&& observer) {
    using detail::Rkf78;
    auto notify = [&observer](double t, const State& y) {
        if constexpr (std::is_same_v<decltype(observer(t, y)), bool>) {
            return observer(t, y);
        } else {
            observer(t, y);
            return true;
        }
    };
    if (!notify(t0, y0) || t1 == t0) return y0;

    const double direction = t1 > t0 ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    State y = y0;
    double t = t0;

    State f0 = rhs(t, y);
    double h = cfg.initial_step > 0.0 ? cfg.initial_step
                                      : detail::starting_step(rhs, t, y, f0, direction, cfg);
    h = std::min(h, span);

    constexpr double safety = 0.9;
    constexpr double grow_max = 5.0;
    constexpr double shrink_min = 0.1;
    constexpr double alpha = 0.7 / 8.0;
    constexpr double beta = 0.4 / 8.0;
    double err_prev = 1.0;
    bool last_rejected = false;

    // Compensated (Kahan) sums for y and t: on long arcs the rounding of
    // y + h*incr otherwise accumulates to ~1e-12 of the state.
    State y_comp = State::Zero(y0.size());
    double t_comp = 0.0;

    std::array<State, Rkf78::stages> k;
    long steps = 0;
    while (true) {
        const double remaining = std::abs(t1 - t);
        bool final_step = false;
        if (h >= remaining || remaining - h <= 1e-13 * std::max(1.0, std::abs(t1))) {
            h = remaining;
            final_step = true;
        }
        if (++steps > cfg.max_steps) {
            std::ostringstream msg;
            msg << "max steps (" << cfg.max_steps << ") exceeded at t=" << t;
            throw PropagationError(msg.str());
        }

        const double hs = direction * h;
        k[0] = f0;
        for (int s = 1; s < Rkf78::stages; ++s) {
            State acc = Rkf78::a[s][0] * k[0];
            for (int j = 1; j < s; ++j) {
                if (Rkf78::a[s][j] != 0.0) acc += Rkf78::a[s][j] * k[j];
            }
            k[s] = rhs(t + Rkf78::c[s] * hs, State(y + hs * acc));
        }
        State incr = Rkf78::b[5] * k[5];
        for (int s = 6; s < Rkf78::stages; ++s) {
            if (Rkf78::b[s] != 0.0) incr += Rkf78::b[s] * k[s];
        }
        const State dy = hs * incr - y_comp;
        const State y_new = y + dy;
        const State err = (hs * Rkf78::err_weight) * (k[0] + k[10] - k[11] - k[12]);
        const double en = detail::error_norm(err, y, y_new, cfg);

        if (en <= 1.0 && y_new.allFinite()) {
            if (final_step) {
                t = t1;
            } else {
                const double dt = hs - t_comp;
                const double t_new = t + dt;
                t_comp = (t_new - t) - dt;
                t = t_new;
            }
            y_comp = (y_new - y) - dy;
            y = y_new;
            if (!notify(t, y) || final_step) return y;
            f0 = rhs(t, y);

            double fac = en <= 1e-10 ? grow_max
                                     : safety * std::pow(en, -alpha) * std::pow(err_prev, beta);
            fac = std::clamp(fac, shrink_min, grow_max);
            if (last_rejected) fac = std::min(fac, 1.0);
            err_prev = std::max(en, 1e-4);
            last_rejected = false;
            h = std::min(h * fac, cfg.max_step);
        } else {
            const double fac = std::isfinite(en) ? std::max(shrink_min, safety * std::pow(en, -1.0 / 8.0))
                                                 : shrink_min;
            h *= fac;
            last_rejected = true;
        }
        if (h < cfg.min_step) {
            std::ostringstream msg;
            msg << "step size underflow (h=" << h << ") at t=" << t;
            throw PropagationError(msg.str());
        }
    }
}

template <class State, class Rhs>
State propagate(Rhs&& rhs, const State& y0, double t0, double t1, const IntegratorConfig& cfg = {}) {
    return propagate(std::forward<Rhs>(rhs), y0, t0, t1, cfg, [](double, const State&) {});
}

/// Propagates a 6-state and records every accepted step.
template <class Rhs>
Trajectory propagate_trajectory(Rhs&& rhs, const Vec6& x0, double t0, double t1,
                                const IntegratorConfig& cfg, Frame frame, Units units) {
    Trajectory traj;
    traj.frame = frame;
    traj.units = units;
    propagate(std::forward<Rhs>(rhs), x0, t0, t1, cfg,
              [&](double t, const Vec6& x) { traj.push_back(t, x); });
    return traj;
}

/**
 * @brief Propagates a 6-state and returns it at each requested time.
 *
 * Times must be monotonic in one direction starting from t0; the integrator
 * is restarted at each output time, so every returned state is an exact
 * landing rather than an interpolant.
 */
template <class Rhs>
std::vector<Vec6> propagate_to_times(Rhs&& rhs, const Vec6& x0, double t0,
                                     const std::vector<double>& times, const IntegratorConfig& cfg) {
    std::vector<Vec6> out;
    out.reserve(times.size());
    Vec6 x = x0;
    double t = t0;
    for (double tk : times) {
        x = propagate(rhs, x, t, tk, cfg);
        t = tk;
        out.push_back(x);
    }
    return out;
}

/**
 * @brief Propagates state and STM together from Phi(t0) = I.
 *
 * @param variational_rhs callable (t, Vec42) -> Vec42
 * @return final state and Phi(t1, t0)
 */
template <class Rhs>
std::pair<Vec6, Mat6> propagate_with_stm(Rhs&& variational_rhs, const Vec6& x0, double t0, double t1,
                                         const IntegratorConfig& cfg = {}) {
    const Vec42 y0 = pack_state_stm(x0, Mat6::Identity());
    const Vec42 y1 = propagate(std::forward<Rhs>(variational_rhs), y0, t0, t1, cfg);
    return {y1.head<6>(), unpack_stm(y1)};
}

}  // namespace cislunar
