#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/integrate.hpp"

namespace cislunar {

/// Requested member lies outside the reachable part of an orbit family.
struct FamilyRangeError : Error {
    using Error::Error;
};

/**
 * @brief Periodic CR3BP orbit starting at a perpendicular x-z plane crossing.
 */
struct PeriodicOrbit {
    State6 x0;
    double period;  ///< TU
    double jacobi;
    std::string family;
    int corrections = 0;  ///< Newton updates applied by the corrector
};

struct CorrectorOptions {
    int max_iterations = 50;
    double tolerance = 1e-12;  ///< on the crossing velocity components
    double max_time = 20.0;    ///< TU allowed before the crossing is declared lost
    IntegratorConfig integrator{};
};

namespace detail {

struct Crossing {
    double t;
    Vec42 y;  ///< state and STM at the crossing
};

// First return to y = 0 after leaving it, refined by Newton iteration in time.
inline Crossing find_y_crossing(const Cr3bpSystem& sys, const Vec6& x0, const CorrectorOptions& opt) {
    const Cr3bpVariational rhs{sys};
    double tp = 0.0, tc = 0.0;
    Vec42 yp = pack_state_stm(x0, Mat6::Identity());
    Vec42 yc = yp;
    bool found = false;
    propagate(rhs, yp, 0.0, opt.max_time, opt.integrator, [&](double t, const Vec42& y) {
        if (t == 0.0) return true;
        if (yc(1) != 0.0 && yc(1) * y(1) <= 0.0) {
            tp = tc;
            yp = yc;
            tc = t;
            yc = y;
            found = true;
            return false;
        }
        tc = t;
        yc = y;
        return true;
    });
    if (!found) {
        std::ostringstream msg;
        msg << "trajectory did not return to y = 0 within " << opt.max_time << " TU";
        throw ConvergenceError(msg.str());
    }
    double t = tp + (tc - tp) * yp(1) / (yp(1) - yc(1));
    Vec42 y = yc;
    for (int it = 0; it < 30; ++it) {
        y = propagate(rhs, yp, tp, t, opt.integrator);
        const double dt = -y(1) / y(4);
        t += dt;
        if (std::abs(dt) < 1e-15 * std::max(1.0, std::abs(t))) break;
    }
    y = propagate(rhs, yp, tp, t, opt.integrator);
    return {t, y};
}

inline Vec6 perpendicular_state(const Vec6& x) {
    Vec6 s = x;
    s(1) = 0.0;
    s(3) = 0.0;
    s(5) = 0.0;
    return s;
}

}  // namespace detail

/**
 * @brief Single-shooting corrector for symmetric Halo orbits.
 *
 * Holds z0 fixed and adjusts x0 and ydot0 until the next y = 0 crossing is
 * perpendicular (xdot = zdot = 0); the period is twice the crossing time.
 *
 * @throws ConvergenceError after max_iterations or when the crossing is lost.
 */
inline PeriodicOrbit correct_halo(const State6& guess, const Cr3bpSystem& sys, const CorrectorOptions& opt = {},
                                  std::string family = "halo-L2") {
    Vec6 x = detail::perpendicular_state(guess.vec());
    for (int it = 0; it <= opt.max_iterations; ++it) {
        const auto c = detail::find_y_crossing(sys, x, opt);
        const Vec6 xf = c.y.head<6>();
        if (std::max(std::abs(xf(3)), std::abs(xf(5))) < opt.tolerance) {
            return {State6::synodic(x), 2.0 * c.t, jacobi_integral(x, sys), std::move(family), it};
        }
        if (it == opt.max_iterations) break;
        const Mat6 phi = unpack_stm(c.y);
        const Vec6 f = cr3bp_rhs(xf, sys);
        Eigen::Matrix2d d;
        d << phi(3, 0) - f(3) * phi(1, 0) / f(1), phi(3, 4) - f(3) * phi(1, 4) / f(1),
            phi(5, 0) - f(5) * phi(1, 0) / f(1), phi(5, 4) - f(5) * phi(1, 4) / f(1);
        const Eigen::Vector2d delta = d.partialPivLu().solve(Eigen::Vector2d(-xf(3), -xf(5)));
        if (!delta.allFinite()) throw ConvergenceError("correct_halo: singular correction");
        x(0) += delta(0);
        x(4) += delta(1);
    }
    throw ConvergenceError("correct_halo: no convergence after " + std::to_string(opt.max_iterations) + " iterations");
}

/**
 * @brief Corrector for planar symmetric orbits: holds x0 and adjusts ydot0
 * until the next y = 0 crossing has xdot = 0.
 */
inline PeriodicOrbit correct_planar(const State6& guess, const Cr3bpSystem& sys, const CorrectorOptions& opt = {},
                                    std::string family = "lyapunov-L1") {
    Vec6 x = detail::perpendicular_state(guess.vec());
    x(2) = 0.0;
    for (int it = 0; it <= opt.max_iterations; ++it) {
        const auto c = detail::find_y_crossing(sys, x, opt);
        const Vec6 xf = c.y.head<6>();
        if (std::abs(xf(3)) < opt.tolerance) {
            return {State6::synodic(x), 2.0 * c.t, jacobi_integral(x, sys), std::move(family), it};
        }
        if (it == opt.max_iterations) break;
        const Mat6 phi = unpack_stm(c.y);
        const Vec6 f = cr3bp_rhs(xf, sys);
        const double d = phi(3, 4) - f(3) * phi(1, 4) / f(1);
        const double delta = -xf(3) / d;
        if (!std::isfinite(delta)) throw ConvergenceError("correct_planar: singular correction");
        x(4) += delta;
    }
    throw ConvergenceError("correct_planar: no convergence after " + std::to_string(opt.max_iterations) + " iterations");
}

/// Re-expresses an orbit from its second perpendicular crossing (half a period later).
inline PeriodicOrbit opposite_crossing(const PeriodicOrbit& orbit, const Cr3bpSystem& sys,
                                       const CorrectorOptions& opt = {}) {
    const Vec6 half = propagate(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, 0.5 * orbit.period, opt.integrator);
    const State6 guess = State6::synodic(detail::perpendicular_state(half));
    const bool planar = orbit.x0.vec()(2) == 0.0 && orbit.x0.vec()(5) == 0.0;
    return planar ? correct_planar(guess, sys, opt, orbit.family) : correct_halo(guess, sys, opt, orbit.family);
}

/// Closure error |flow(x0, period) - x0| over one period.
inline double closure_error(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, const IntegratorConfig& cfg = {}) {
    return (propagate(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, orbit.period, cfg) - orbit.x0.vec()).norm();
}

/// Dense trajectory over a number of periods starting from x0.
inline Trajectory orbit_trajectory(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, double revolutions = 1.0,
                                   const IntegratorConfig& cfg = {}) {
    return propagate_trajectory(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, revolutions * orbit.period, cfg,
                                Frame::Synodic, Units::Nondimensional);
}

/// How the Z-amplitude of a Halo orbit is measured.
enum class ZAmplitude {
    PeakToPeak,  ///< max z - min z along the orbit
    MaxAbs,      ///< max |z| along the orbit
};

/// Z-amplitude over one period, in DU.
inline double z_amplitude(const PeriodicOrbit& orbit, const Cr3bpSystem& sys,
                          ZAmplitude measure = ZAmplitude::PeakToPeak, const IntegratorConfig& cfg = {}) {
    double zmax = -std::numeric_limits<double>::infinity();
    double zmin = std::numeric_limits<double>::infinity();
    auto track = [&](double, const Vec6& x) {
        zmax = std::max(zmax, x(2));
        zmin = std::min(zmin, x(2));
    };
    // Landing on the half period captures the second perpendicular crossing exactly.
    const Vec6 half = propagate(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, 0.5 * orbit.period, cfg, track);
    propagate(Cr3bpDynamics{sys}, half, 0.5 * orbit.period, orbit.period, cfg, track);
    return measure == ZAmplitude::PeakToPeak ? zmax - zmin : std::max(std::abs(zmax), std::abs(zmin));
}

// ---------------------------------------------------------------------------
// Analytic seeds
// ---------------------------------------------------------------------------

enum class HaloBranch { North, South };

/// Third-order Richardson approximation of an L2 Halo orbit.
struct RichardsonHalo {
    State6 x0;      ///< state at the crossing nearest the Moon
    double period;  ///< TU
    double ax;      ///< in-plane amplitude, DU
};

/**
 * @brief Third-order analytic Halo approximation about L2.
 *
 * @param az Z-amplitude in DU.
 * @throws FamilyRangeError when no real in-plane amplitude exists for az.
 */
inline RichardsonHalo richardson_l2_halo(double az, const Cr3bpSystem& sys, HaloBranch branch) {
    const double mu = sys.mu();
    const double xl = collinear_points(sys)[1].x();
    const double g = xl - (1.0 - mu);
    auto cn = [&](int n) {
        const double sgn = (n % 2 == 0) ? 1.0 : -1.0;
        return (sgn * mu + sgn * (1.0 - mu) * std::pow(g, n + 1) / std::pow(1.0 + g, n + 1)) / (g * g * g);
    };
    const double c2 = cn(2), c3 = cn(3), c4 = cn(4);
    const double lam = std::sqrt(0.5 * ((2.0 - c2) + std::sqrt((c2 - 2.0) * (c2 - 2.0) + 4.0 * (c2 - 1.0) * (1.0 + 2.0 * c2))));
    const double l2 = lam * lam;
    const double k = (l2 + 1.0 + 2.0 * c2) / (2.0 * lam);
    const double k2 = k * k;
    const double d1 = 3.0 * l2 / k * (k * (6.0 * l2 - 1.0) - 2.0 * lam);
    const double d2 = 8.0 * l2 / k * (k * (11.0 * l2 - 1.0) - 2.0 * lam);

    const double a21 = 3.0 * c3 * (k2 - 2.0) / (4.0 * (1.0 + 2.0 * c2));
    const double a22 = 3.0 * c3 / (4.0 * (1.0 + 2.0 * c2));
    const double a23 = -3.0 * c3 * lam / (4.0 * k * d1) * (3.0 * k2 * k * lam - 6.0 * k * (k - lam) + 4.0);
    const double a24 = -3.0 * c3 * lam / (4.0 * k * d1) * (2.0 + 3.0 * k * lam);
    const double b21 = -3.0 * c3 * lam / (2.0 * d1) * (3.0 * k * lam - 4.0);
    const double b22 = 3.0 * c3 * lam / d1;
    const double d21 = -c3 / (2.0 * l2);

    const double a31 = -9.0 * lam / (4.0 * d2) * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k2)) +
                       (9.0 * l2 + 1.0 - c2) / (2.0 * d2) * (3.0 * c3 * (2.0 * a23 - k * b21) + c4 * (2.0 + 3.0 * k2));
    const double a32 = -1.0 / d2 *
                       (9.0 * lam / 4.0 * (4.0 * c3 * (k * a24 - b22) + k * c4) +
                        1.5 * (9.0 * l2 + 1.0 - c2) * (c3 * (k * b22 + d21 - 2.0 * a24) - c4));
    const double b31 = 3.0 / (8.0 * d2) *
                       (8.0 * lam * (3.0 * c3 * (k * b21 - 2.0 * a23) - c4 * (2.0 + 3.0 * k2)) +
                        (9.0 * l2 + 1.0 + 2.0 * c2) * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k2)));
    const double b32 = 1.0 / d2 *
                       (9.0 * lam * (c3 * (k * b22 + d21 - 2.0 * a24) - c4) +
                        3.0 / 8.0 * (9.0 * l2 + 1.0 + 2.0 * c2) * (4.0 * c3 * (k * a24 - b22) + k * c4));
    const double d31 = 3.0 / (64.0 * l2) * (4.0 * c3 * a24 + c4);
    const double d32 = 3.0 / (64.0 * l2) * (4.0 * c3 * (a23 - d21) + c4 * (4.0 + k2));

    const double den = 2.0 * lam * (lam * (1.0 + k2) - 2.0 * k);
    const double s1 = (1.5 * c3 * (2.0 * a21 * (k2 - 2.0) - a23 * (k2 + 2.0) - 2.0 * k * b21) -
                       3.0 / 8.0 * c4 * (3.0 * k2 * k2 - 8.0 * k2 + 8.0)) / den;
    const double s2 = (1.5 * c3 * (2.0 * a22 * (k2 - 2.0) + a24 * (k2 + 2.0) + 2.0 * k * b22 + 5.0 * d21) +
                       3.0 / 8.0 * c4 * (12.0 - k2)) / den;
    const double a1 = -1.5 * c3 * (2.0 * a21 + a23 + 5.0 * d21) - 3.0 / 8.0 * c4 * (12.0 - k2);
    const double a2 = 1.5 * c3 * (a24 - 2.0 * a22) + 9.0 / 8.0 * c4;
    const double l1c = a1 + 2.0 * l2 * s1;
    const double l2c = a2 + 2.0 * l2 * s2;
    const double delta = l2 - c2;

    const double Az = az / g;
    const double ax2 = -(l2c * Az * Az + delta) / l1c;
    if (!(ax2 > 0.0)) throw FamilyRangeError("richardson_l2_halo: no real in-plane amplitude for this Z-amplitude");
    const double Ax = std::sqrt(ax2);
    const double omega = 1.0 + s1 * ax2 + s2 * Az * Az;
    const double dn = branch == HaloBranch::North ? 1.0 : -1.0;

    // Evaluated at tau1 = 0: y = xdot = zdot = 0.
    const double x = a21 * ax2 + a22 * Az * Az - Ax + (a23 * ax2 - a24 * Az * Az) + (a31 * ax2 * Ax - a32 * Ax * Az * Az);
    const double z = dn * Az + dn * d21 * Ax * Az * (1.0 - 3.0) + dn * (d32 * Az * ax2 - d31 * Az * Az * Az);
    const double ydot = omega * lam * (k * Ax + 2.0 * (b21 * ax2 - b22 * Az * Az) + 3.0 * (b31 * ax2 * Ax - b32 * Ax * Az * Az));

    Vec6 s = Vec6::Zero();
    s(0) = xl + g * x;
    s(2) = g * z;
    s(4) = g * ydot;
    return {State6::synodic(s), 2.0 * std::numbers::pi / (lam * omega), g * Ax};
}

struct HaloFamilyOptions {
    HaloBranch branch = HaloBranch::South;
    ZAmplitude measure = ZAmplitude::PeakToPeak;
    double seed_amplitude = 8000.0 / 384400.0;  ///< DU; seeds continuation
    double step = 0.004;                        ///< DU change in z0 per continuation step
    double amplitude_tolerance = 1e-9;          ///< DU
    CorrectorOptions corrector{};
};

/**
 * @brief L2 Halo orbit with the requested Z-amplitude (DU, per opt.measure).
 *
 * Seeds from the analytic approximation at a small amplitude, continues in
 * z0 with step halving on corrector failure, then solves for the amplitude by
 * regula falsi. The returned orbit starts at the crossing farther from the Moon.
 */
inline PeriodicOrbit halo_with_amplitude(double az_target, const Cr3bpSystem& sys, const HaloFamilyOptions& opt = {}) {
    const double seed_az = std::min(opt.seed_amplitude, 0.25 * az_target);
    const auto seed = richardson_l2_halo(seed_az, sys, opt.branch);
    PeriodicOrbit prev = correct_halo(seed.x0, sys, opt.corrector);
    double a_prev = z_amplitude(prev, sys, opt.measure, opt.corrector.integrator);

    auto corrected_at = [&](double z0, const PeriodicOrbit& near_a, const PeriodicOrbit* near_b) {
        Vec6 guess = near_a.x0.vec();
        if (near_b) {
            const Vec6 xb = near_b->x0.vec();
            const double dz = guess(2) - xb(2);
            if (dz != 0.0) {
                const double f = (z0 - guess(2)) / dz;
                guess(0) += f * (guess(0) - xb(0));
                guess(4) += f * (guess(4) - xb(4));
            }
        }
        guess(2) = z0;
        return correct_halo(State6::synodic(guess), sys, opt.corrector);
    };

    if (a_prev >= az_target) throw FamilyRangeError("halo_with_amplitude: seed amplitude already exceeds target");
    std::optional<PeriodicOrbit> before;
    PeriodicOrbit cur = prev;
    double a_cur = a_prev;
    double step = opt.step * (prev.x0.vec()(2) >= 0.0 ? 1.0 : -1.0);
    int guard = 0;
    while (a_cur < az_target) {
        if (++guard > 2000) throw FamilyRangeError("halo_with_amplitude: target amplitude not reached");
        try {
            PeriodicOrbit next = corrected_at(cur.x0.vec()(2) + step, cur, before ? &*before : nullptr);
            before = cur;
            a_prev = a_cur;
            cur = next;
            a_cur = z_amplitude(cur, sys, opt.measure, opt.corrector.integrator);
        } catch (const ConvergenceError&) {
            step *= 0.5;
            if (std::abs(step) < 1e-7) throw;
        }
    }

    // Regula falsi (Illinois) on z0 between the bracketing members.
    PeriodicOrbit lo = *before, hi = cur;
    double flo = a_prev - az_target, fhi = a_cur - az_target;
    int side = 0;
    for (int it = 0; it < 100; ++it) {
        const double zlo = lo.x0.vec()(2), zhi = hi.x0.vec()(2);
        const double z = zhi - fhi * (zhi - zlo) / (fhi - flo);
        PeriodicOrbit mid = corrected_at(z, std::abs(z - zlo) < std::abs(z - zhi) ? lo : hi, nullptr);
        const double fm = z_amplitude(mid, sys, opt.measure, opt.corrector.integrator) - az_target;
        if (std::abs(fm) < opt.amplitude_tolerance) {
            PeriodicOrbit far = opposite_crossing(mid, sys, opt.corrector);
            return far.x0.vec()(0) > mid.x0.vec()(0) ? far : mid;
        }
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
            if (side == -1) fhi *= 0.5;
            side = -1;
        } else {
            hi = mid;
            fhi = fm;
            if (side == 1) flo *= 0.5;
            side = 1;
        }
    }
    throw ConvergenceError("halo_with_amplitude: amplitude iteration did not converge");
}

/// L1 Lyapunov member at a target Jacobi constant, with the solver's bracket.
struct LyapunovResult {
    PeriodicOrbit orbit;
    double amplitude_lo, amplitude_hi;  ///< DU offsets from L1 that bracket the target
    double jacobi_lo, jacobi_hi;        ///< Jacobi values at the bracket ends
};

struct LyapunovOptions {
    double first_amplitude = 1e-3;  ///< DU
    double step = 4e-3;             ///< DU
    double max_amplitude = 0.3;     ///< DU
    double jacobi_tolerance = 1e-10;
    CorrectorOptions corrector{};
};

/**
 * @brief Planar L1 Lyapunov orbit with the requested Jacobi constant.
 *
 * Seeds from the linearized in-plane oscillation about L1 and continues in the
 * x-offset A (x0 = L1 - A), which lowers the Jacobi constant monotonically,
 * until the target is bracketed; then regula falsi on A.
 *
 * @throws FamilyRangeError if the target is above the L1 value or not reached
 *         before max_amplitude.
 */
inline LyapunovResult lyapunov_at_jacobi(double target_j, const Cr3bpSystem& sys, const LyapunovOptions& opt = {}) {
    const Vec3 l1 = collinear_points(sys)[0];
    const double j_l1 = 2.0 * effective_potential(l1, sys);
    if (!(target_j < j_l1)) {
        std::ostringstream msg;
        msg << "lyapunov_at_jacobi: target " << target_j << " is not below the L1 value " << j_l1;
        throw FamilyRangeError(msg.str());
    }
    const Mat3 h = hessian_effective_potential(l1, sys);
    const double uxx = h(0, 0), uyy = h(1, 1);
    const double b = uxx + uyy - 4.0;
    const double nu2 = 0.5 * (-b + std::sqrt(b * b - 4.0 * uxx * uyy));

    auto member = [&](double amp, double ydot_guess) {
        Vec6 g = Vec6::Zero();
        g(0) = l1.x() - amp;
        g(4) = ydot_guess;
        return correct_planar(State6::synodic(g), sys, opt.corrector);
    };

    double a_prev = opt.first_amplitude;
    PeriodicOrbit prev = member(a_prev, 0.5 * (nu2 + uxx) * a_prev);
    if (prev.jacobi <= target_j) throw FamilyRangeError("lyapunov_at_jacobi: first member already below target");
    double a_before = 0.0, ydot_before = 0.0;
    double step = opt.step;
    while (true) {
        const double a = a_prev + step;
        if (a > opt.max_amplitude) throw FamilyRangeError("lyapunov_at_jacobi: target not reached within max_amplitude");
        const double ydot_prev = prev.x0.vec()(4);
        const double slope = a_before > 0.0 ? (ydot_prev - ydot_before) / (a_prev - a_before) : 0.5 * (nu2 + uxx);
        try {
            PeriodicOrbit cur = member(a, ydot_prev + slope * step);
            if (cur.jacobi <= target_j) {
                // Bracket found: regula falsi on the amplitude.
                double alo = a_prev, ahi = a;
                double flo = prev.jacobi - target_j, fhi = cur.jacobi - target_j;
                double ylo = ydot_prev, yhi = cur.x0.vec()(4);
                int side = 0;
                for (int it = 0; it < 100; ++it) {
                    const double am = ahi - fhi * (ahi - alo) / (fhi - flo);
                    const double yg = ylo + (yhi - ylo) * (am - alo) / (ahi - alo);
                    PeriodicOrbit mid = member(am, yg);
                    const double fm = mid.jacobi - target_j;
                    if (std::abs(fm) < opt.jacobi_tolerance) {
                        return {mid, a_prev, a, prev.jacobi, cur.jacobi};
                    }
                    if ((fm > 0.0) == (flo > 0.0)) {
                        alo = am;
                        flo = fm;
                        ylo = mid.x0.vec()(4);
                        if (side == -1) fhi *= 0.5;
                        side = -1;
                    } else {
                        ahi = am;
                        fhi = fm;
                        yhi = mid.x0.vec()(4);
                        if (side == 1) flo *= 0.5;
                        side = 1;
                    }
                }
                throw ConvergenceError("lyapunov_at_jacobi: Jacobi iteration did not converge");
            }
            a_before = a_prev;
            ydot_before = ydot_prev;
            a_prev = a;
            prev = cur;
        } catch (const ConvergenceError&) {
            step *= 0.5;
            if (step < 1e-7) throw;
        }
    }
}

// ---------------------------------------------------------------------------
// Stability and manifolds
// ---------------------------------------------------------------------------

inline Mat6 monodromy(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, const IntegratorConfig& cfg = {}) {
    return propagate_with_stm(Cr3bpVariational{sys}, orbit.x0.vec(), 0.0, orbit.period, cfg).second;
}

struct EigenDirection {
    Vec6 w;         ///< unit eigenvector
    double lambda;  ///< eigenvalue
    double residual;
};

namespace detail {

inline void normalize_sign(Vec6& w) {
    for (int i = 0; i < 6; ++i) {
        if (std::abs(w(i)) > 1e-12) {
            if (w(i) < 0.0) w = -w;
            return;
        }
    }
}

template <class Apply>
EigenDirection power_iteration(Apply&& apply, const char* what) {
    Vec6 w = Vec6::Constant(1.0 / std::sqrt(6.0));
    double lambda = 0.0;
    double best_res = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 20000; ++it) {
        Vec6 mw = apply(w);
        const double norm = mw.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) break;
        const double sign = mw.dot(w) >= 0.0 ? 1.0 : -1.0;
        w = sign * mw / norm;
        lambda = sign * norm;
        const double res = (apply(w) - lambda * w).norm();
        best_res = std::min(best_res, res);
        if (res <= 1e-12 * std::max(1.0, std::abs(lambda))) {
            normalize_sign(w);
            return {w, lambda, (apply(w) - lambda * w).norm()};
        }
    }
    std::ostringstream msg;
    msg << what << ": power iteration did not converge (best residual " << best_res
        << "); the dominant mode is not a real eigenvalue";
    throw ConvergenceError(msg.str());
}

}  // namespace detail

/**
 * @brief Dominant real eigenpair of M by power iteration.
 *
 * @throws ConvergenceError when no real eigenvalue with |lambda| > 1 + 1e-6
 *         dominates (for example a complex dominant pair).
 */
inline EigenDirection unstable_direction(const Mat6& m) {
    auto d = detail::power_iteration([&m](const Vec6& w) { return Vec6(m * w); }, "unstable_direction");
    if (!(std::abs(d.lambda) > 1.0 + 1e-6)) throw ConvergenceError("unstable_direction: dominant eigenvalue is not unstable");
    return d;
}

/// Eigenpair of M with the smallest |lambda|, via power iteration on M^-1.
inline EigenDirection stable_direction(const Mat6& m) {
    const Eigen::PartialPivLU<Mat6> lu(m);
    auto inv = detail::power_iteration([&lu](const Vec6& w) { return Vec6(lu.solve(w)); }, "stable_direction");
    if (!(std::abs(inv.lambda) > 1.0 + 1e-6)) throw ConvergenceError("stable_direction: no stable real eigenvalue");
    const double lambda = 1.0 / inv.lambda;
    return {inv.w, lambda, (m * inv.w - lambda * inv.w).norm()};
}

enum class Stability { Stable, Unstable };

/// Orbit points and STM-mapped unit eigen-directions at equally spaced times.
struct ManifoldSeeds {
    PeriodicOrbit orbit;
    Stability stability;
    double lambda;
    std::vector<double> times;
    std::vector<Vec6> points;
    std::vector<Vec6> directions;
};

inline ManifoldSeeds manifold_seeds(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, Stability stability,
                                    int count = 100, const IntegratorConfig& cfg = {}) {
    if (count < 1) throw std::invalid_argument("manifold_seeds: count must be positive");
    const Mat6 m = monodromy(orbit, sys, cfg);
    const EigenDirection e = stability == Stability::Unstable ? unstable_direction(m) : stable_direction(m);
    ManifoldSeeds seeds{orbit, stability, e.lambda, {}, {}, {}};
    const Cr3bpVariational rhs{sys};
    Vec42 y = pack_state_stm(orbit.x0.vec(), Mat6::Identity());
    double t = 0.0;
    for (int k = 0; k < count; ++k) {
        const double tk = orbit.period * k / count;
        y = propagate(rhs, y, t, tk, cfg);
        t = tk;
        seeds.times.push_back(tk);
        seeds.points.push_back(y.head<6>());
        seeds.directions.push_back((unpack_stm(y) * e.w).normalized());
    }
    return seeds;
}

struct ManifoldArc {
    PeriodicOrbit source;
    int index;
    int sign;
    Stability stability;
    double perturbation;
    Trajectory trajectory;
};

/**
 * @brief Perturbs orbit point `index` by sign*pert along its eigen-direction and
 * propagates forward (unstable) or backward (stable) for `horizon` TU.
 *
 * Trajectory times are relative to the departure point.
 */
inline ManifoldArc manifold_arc(const ManifoldSeeds& seeds, int index, int sign, double pert, double horizon,
                                const Cr3bpSystem& sys, const IntegratorConfig& cfg = {}) {
    if (index < 0 || index >= static_cast<int>(seeds.points.size())) throw std::out_of_range("manifold_arc: index");
    if (sign != 1 && sign != -1) throw std::invalid_argument("manifold_arc: sign must be +1 or -1");
    const Vec6 x0 = seeds.points[index] + sign * pert * seeds.directions[index];
    const double t1 = seeds.stability == Stability::Unstable ? horizon : -horizon;
    Trajectory traj = propagate_trajectory(Cr3bpDynamics{sys}, x0, 0.0, t1, cfg, Frame::Synodic, Units::Nondimensional);
    return {seeds.orbit, index, sign, seeds.stability, pert, std::move(traj)};
}

inline ManifoldArc manifold_arc(const PeriodicOrbit& orbit, int index, int sign, Stability stability, double pert,
                                double horizon, const Cr3bpSystem& sys, int count = 100,
                                const IntegratorConfig& cfg = {}) {
    return manifold_arc(manifold_seeds(orbit, sys, stability, count, cfg), index, sign, pert, horizon, sys, cfg);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/**
 * @brief Picks n trajectory samples whose cumulative chord length is as close
 * as possible to n-1 equal intervals; the first and last samples are kept.
 */
inline std::vector<Sample> resample_by_arclength(const Trajectory& traj, int n) {
    if (n < 2) throw std::invalid_argument("resample_by_arclength: n must be at least 2");
    if (traj.size() < static_cast<std::size_t>(n)) {
        throw std::invalid_argument("resample_by_arclength: trajectory has fewer samples than requested");
    }
    std::vector<double> s(traj.size(), 0.0);
    for (std::size_t i = 1; i < traj.size(); ++i) {
        s[i] = s[i - 1] + (traj.x[i].head<3>() - traj.x[i - 1].head<3>()).norm();
    }
    const double total = s.back();
    if (!(total > 0.0)) throw Error("resample_by_arclength: trajectory has zero length");
    std::vector<Sample> out;
    out.reserve(n);
    std::size_t cursor = 0, last = 0;
    for (int j = 0; j < n; ++j) {
        std::size_t idx;
        if (j == 0) {
            idx = 0;
        } else if (j == n - 1) {
            idx = traj.size() - 1;
        } else {
            const double target = total * j / (n - 1);
            while (cursor + 1 < traj.size() && s[cursor + 1] < target) ++cursor;
            idx = (cursor + 1 < traj.size() && s[cursor + 1] - target < target - s[cursor]) ? cursor + 1 : cursor;
            // Keep indices strictly increasing with room for the remaining points.
            idx = std::max(idx, out.empty() ? 0 : last + 1);
            idx = std::min(idx, traj.size() - static_cast<std::size_t>(n - j));
        }
        last = idx;
        out.push_back(traj.sample(idx));
    }
    return out;
}

}  // namespace cislunar
