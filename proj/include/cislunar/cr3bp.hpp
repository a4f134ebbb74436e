#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <sstream>

#include "cislunar/core.hpp"

namespace cislunar {

/// Standard gravitational parameters, km^3/s^2.
namespace gm {
inline constexpr double earth = 398600.4418;
inline constexpr double moon = 4902.800066;
inline constexpr double sun = 1.32712440018e11;
}  // namespace gm

/**
 * @brief Mass ratio and characteristic scales of a CR3BP system.
 *
 * char_time is chosen so that the primaries rotate at unit angular rate:
 * T = sqrt(L^3 / (gm1 + gm2)).
 */
class Cr3bpSystem {
public:
    Cr3bpSystem(double mu, double char_length, double char_time)
        : mu_(mu), char_length_(char_length), char_time_(char_time),
          char_velocity_(char_length / char_time) {
        if (!(mu > 0.0 && mu < 0.5)) throw ConfigError("mu", "must lie in (0, 0.5)");
        if (!(char_length > 0.0)) throw ConfigError("char_length", "must be positive");
        if (!(char_time > 0.0)) throw ConfigError("char_time", "must be positive");
    }

    /// System from the two primaries' gravitational parameters and their separation.
    static Cr3bpSystem from_gm(double gm1, double gm2, double char_length) {
        if (!(gm1 > 0.0 && gm2 > 0.0)) throw ConfigError("gm", "primary gm values must be positive");
        const double gm_sum = gm1 + gm2;
        return {gm2 / gm_sum, char_length, std::sqrt(char_length * char_length * char_length / gm_sum)};
    }

    /// Earth-Moon defaults: standard gm values and a 384400 km separation.
    static Cr3bpSystem earth_moon(double char_length = 384400.0) {
        return from_gm(gm::earth, gm::moon, char_length);
    }

    double mu() const { return mu_; }
    double char_length() const { return char_length_; }
    double char_time() const { return char_time_; }
    double char_velocity() const { return char_velocity_; }
    /// Sum of primary gm values implied by the scaling, km^3/s^2.
    double gm_sum() const { return char_length_ * char_length_ * char_length_ / (char_time_ * char_time_); }

    Vec3 primary1() const { return {-mu_, 0.0, 0.0}; }
    Vec3 primary2() const { return {1.0 - mu_, 0.0, 0.0}; }

private:
    double mu_;
    double char_length_;
    double char_time_;
    double char_velocity_;
};

namespace detail {

inline constexpr double cr3bp_singularity_radius = 1e-12;

struct PrimaryDistances {
    Vec3 d1, d2;
    double r1, r2;
};

inline PrimaryDistances primary_distances(const Vec3& r, const Cr3bpSystem& sys) {
    PrimaryDistances pd{r - sys.primary1(), r - sys.primary2(), 0.0, 0.0};
    pd.r1 = pd.d1.norm();
    pd.r2 = pd.d2.norm();
    if (pd.r1 < cr3bp_singularity_radius || pd.r2 < cr3bp_singularity_radius) {
        std::ostringstream msg;
        msg << "position (" << r.x() << ", " << r.y() << ", " << r.z()
            << ") is within 1e-12 DU of a primary";
        throw SingularityError(msg.str());
    }
    return pd;
}

}  // namespace detail

/// U(r) = (x^2 + y^2)/2 + (1-mu)/r1 + mu/r2.
inline double effective_potential(const Vec3& r, const Cr3bpSystem& sys) {
    const auto pd = detail::primary_distances(r, sys);
    const double mu = sys.mu();
    return 0.5 * (r.x() * r.x() + r.y() * r.y()) + (1.0 - mu) / pd.r1 + mu / pd.r2;
}

inline Vec3 grad_effective_potential(const Vec3& r, const Cr3bpSystem& sys) {
    const auto pd = detail::primary_distances(r, sys);
    const double mu = sys.mu();
    const double k1 = (1.0 - mu) / (pd.r1 * pd.r1 * pd.r1);
    const double k2 = mu / (pd.r2 * pd.r2 * pd.r2);
    Vec3 g = -k1 * pd.d1 - k2 * pd.d2;
    g.x() += r.x();
    g.y() += r.y();
    return g;
}

/// Analytic second derivatives of U.
inline Mat3 hessian_effective_potential(const Vec3& r, const Cr3bpSystem& sys) {
    const auto pd = detail::primary_distances(r, sys);
    const double mu = sys.mu();
    Mat3 h = Mat3::Zero();
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;
    auto add_mass = [&h](double m, const Vec3& d, double dist) {
        const double r3 = dist * dist * dist;
        const double r5 = r3 * dist * dist;
        h += m * (3.0 * d * d.transpose() / r5 - Mat3::Identity() / r3);
    };
    add_mass(1.0 - mu, pd.d1, pd.r1);
    add_mass(mu, pd.d2, pd.r2);
    return h;
}

/// Rotating-frame Coriolis matrix acting on velocity.
inline Mat3 coriolis_matrix() {
    Mat3 omega;
    omega << 0.0, 2.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0;
    return omega;
}

inline Vec6 cr3bp_rhs(const Vec6& x, const Cr3bpSystem& sys) {
    const Vec3 v = x.tail<3>();
    Vec6 dx;
    dx.head<3>() = v;
    dx.tail<3>() = grad_effective_potential(x.head<3>(), sys);
    dx(3) += 2.0 * v.y();
    dx(4) -= 2.0 * v.x();
    return dx;
}

inline Vec6 cr3bp_rhs(const State6& s, const Cr3bpSystem& sys) {
    if (s.frame() != Frame::Synodic) throw std::invalid_argument("cr3bp_rhs: state must be synodic");
    return cr3bp_rhs(s.vec(), sys);
}

/// Linearized dynamics A = [[0, I], [Hess U, Omega]].
inline Mat6 cr3bp_jacobian(const Vec3& r, const Cr3bpSystem& sys) {
    Mat6 a = Mat6::Zero();
    a.block<3, 3>(0, 3) = Mat3::Identity();
    a.block<3, 3>(3, 0) = hessian_effective_potential(r, sys);
    a.block<3, 3>(3, 3) = coriolis_matrix();
    return a;
}

inline Vec42 cr3bp_variational_rhs(const Vec42& y, const Cr3bpSystem& sys) {
    const Vec6 x = y.head<6>();
    return pack_variational(cr3bp_rhs(x, sys), cr3bp_jacobian(x.head<3>(), sys), y);
}

/// J = 2U(r) - |v|^2.
inline double jacobi_integral(const Vec6& x, const Cr3bpSystem& sys) {
    return 2.0 * effective_potential(x.head<3>(), sys) - x.tail<3>().squaredNorm();
}

inline double jacobi_integral(const State6& s, const Cr3bpSystem& sys) {
    if (s.frame() != Frame::Synodic) throw std::invalid_argument("jacobi_integral: state must be synodic");
    return jacobi_integral(s.vec(), sys);
}

/**
 * @brief Collinear libration points L1, L2, L3 on the x-axis.
 *
 * Bisection on dU/dx, which is strictly increasing between the singularities
 * along the axis; tolerance 1e-13 DU.
 */
inline std::array<Vec3, 3> collinear_points(const Cr3bpSystem& sys) {
    const double mu = sys.mu();
    auto dudx = [&sys](double x) { return grad_effective_potential(Vec3(x, 0.0, 0.0), sys).x(); };
    auto bisect = [&dudx](double lo, double hi) {
        double flo = dudx(lo);
        const double fhi = dudx(hi);
        if (!(flo < 0.0 && fhi > 0.0)) throw ConvergenceError("collinear_points: bracket does not straddle a root");
        for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = dudx(mid);
            if (fm == 0.0) return mid;
            if ((fm < 0.0) == (flo < 0.0)) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        if (hi - lo > 1e-13) throw ConvergenceError("collinear_points: bisection did not converge");
        return 0.5 * (lo + hi);
    };
    // Offsets keep the brackets clear of the primaries while staying inside
    // the Hill sphere of even very small secondaries.
    const double eps = 1e-3 * std::cbrt(mu / 3.0);
    const double x1 = bisect(-mu + 1e-6, 1.0 - mu - eps);
    const double x2 = bisect(1.0 - mu + eps, 2.0);
    const double x3 = bisect(-2.0, -mu - 1e-6);
    return {Vec3(x1, 0, 0), Vec3(x2, 0, 0), Vec3(x3, 0, 0)};
}

/// Right-hand side bound to a system, for use with propagate().
struct Cr3bpDynamics {
    Cr3bpSystem sys;
    Vec6 operator()(double, const Vec6& x) const { return cr3bp_rhs(x, sys); }
};

struct Cr3bpVariational {
    Cr3bpSystem sys;
    Vec42 operator()(double, const Vec42& y) const { return cr3bp_variational_rhs(y, sys); }
};

}  // namespace cislunar
