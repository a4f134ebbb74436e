#pragma once

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cislunar/core.hpp"
#include "cislunar/ephemeris.hpp"

namespace cislunar {

/**
 * @brief Earth-centered restricted N-body model: ephemeris, gravitational
 * parameters and the set of perturbing bodies.
 */
struct HfemContext {
    std::shared_ptr<const EphemerisProvider> provider;
    std::map<BodyId, double> gm{{BodyId::Earth, gm::earth}, {BodyId::Moon, gm::moon}, {BodyId::Sun, gm::sun}};
    std::vector<BodyId> active{BodyId::Moon, BodyId::Sun};

    HfemContext() = default;
    explicit HfemContext(std::shared_ptr<const EphemerisProvider> p, std::vector<BodyId> bodies = {BodyId::Moon, BodyId::Sun})
        : provider(std::move(p)), active(std::move(bodies)) {
        validate();
    }

    double gm_of(BodyId b) const { return gm.at(b); }

    void validate() const {
        if (!provider) throw ConfigError("ephemeris", "no ephemeris provider");
        for (BodyId b : {BodyId::Earth, BodyId::Moon, BodyId::Sun}) {
            if (gm.count(b) == 0) throw ConfigError(std::string("gm_") + to_string(b), "missing");
            if (!(gm.at(b) >= 0.0)) throw ConfigError(std::string("gm_") + to_string(b), "must be non-negative");
        }
        if (!(gm.at(BodyId::Earth) > 0.0)) throw ConfigError("gm_earth", "must be positive");
        for (BodyId b : active) {
            if (b == BodyId::Earth) throw ConfigError("bodies", "Earth is the central body, not a perturber");
        }
    }
};

namespace detail {

inline constexpr double hfem_singularity_radius = 1e-6;  // km

inline void check_distance(double dist, const char* body, double t) {
    if (dist < hfem_singularity_radius) {
        std::ostringstream msg;
        msg << "spacecraft within 1e-6 km of " << body << " at epoch " << t << " s";
        throw SingularityError(msg.str());
    }
}

struct Perturber {
    double mu;
    Vec3 r;
    const char* name;
};

inline std::vector<Perturber> perturbers(double t, const HfemContext& ctx) {
    std::vector<Perturber> out;
    out.reserve(ctx.active.size());
    for (BodyId b : ctx.active) out.push_back({ctx.gm_of(b), ctx.provider->body_state(b, t).r(), to_string(b)});
    return out;
}

inline Vec3 acceleration(const Vec3& r, double t, double gm_earth, const std::vector<Perturber>& bodies) {
    const double rn = r.norm();
    check_distance(rn, "earth", t);
    Vec3 acc = -gm_earth * r / (rn * rn * rn);
    for (const auto& p : bodies) {
        const Vec3 d = p.r - r;
        const double dn = d.norm();
        check_distance(dn, p.name, t);
        if (p.mu == 0.0) continue;
        const double rjn = p.r.norm();
        acc += p.mu * (d / (dn * dn * dn) - p.r / (rjn * rjn * rjn));
    }
    return acc;
}

inline Mat3 gravity_gradient(const Vec3& r, double gm_earth, const std::vector<Perturber>& bodies) {
    auto term = [](double mu, const Vec3& d) -> Mat3 {
        const double dn = d.norm();
        const double d3 = dn * dn * dn;
        return mu * (3.0 * d * d.transpose() / (d3 * dn * dn) - Mat3::Identity() / d3);
    };
    Mat3 g = term(gm_earth, r);
    for (const auto& p : bodies) {
        if (p.mu != 0.0) g += term(p.mu, Vec3(r - p.r));
    }
    return g;
}

}  // namespace detail

/// Acceleration (km/s^2) at inertial position r (km) and epoch t (s).
inline Vec3 hfem_acceleration(const Vec3& r, double t, const HfemContext& ctx) {
    return detail::acceleration(r, t, ctx.gm_of(BodyId::Earth), detail::perturbers(t, ctx));
}

/// Gravity gradient d(acceleration)/dr; indirect terms do not depend on r.
inline Mat3 hfem_gravity_gradient(const Vec3& r, double t, const HfemContext& ctx) {
    const auto bodies = detail::perturbers(t, ctx);
    detail::acceleration(r, t, ctx.gm_of(BodyId::Earth), bodies);  // singularity checks
    return detail::gravity_gradient(r, ctx.gm_of(BodyId::Earth), bodies);
}

inline Vec6 hfem_rhs(const Vec6& x, double t, const HfemContext& ctx) {
    Vec6 dx;
    dx.head<3>() = x.tail<3>();
    dx.tail<3>() = hfem_acceleration(x.head<3>(), t, ctx);
    return dx;
}

inline Vec6 hfem_rhs(const State6& s, double t, const HfemContext& ctx) {
    if (s.frame() != Frame::Inertial) throw std::invalid_argument("hfem_rhs: state must be inertial");
    return hfem_rhs(s.vec(), t, ctx);
}

inline Vec42 hfem_variational_rhs(const Vec42& y, double t, const HfemContext& ctx) {
    const Vec6 x = y.head<6>();
    const Vec3 r = x.head<3>();
    const double gm_earth = ctx.gm_of(BodyId::Earth);
    const auto bodies = detail::perturbers(t, ctx);
    Vec6 f;
    f.head<3>() = x.tail<3>();
    f.tail<3>() = detail::acceleration(r, t, gm_earth, bodies);
    Mat6 a = Mat6::Zero();
    a.block<3, 3>(0, 3) = Mat3::Identity();
    a.block<3, 3>(3, 0) = detail::gravity_gradient(r, gm_earth, bodies);
    return pack_variational(f, a, y);
}

/// Right-hand side bound to a context, for use with propagate().
struct HfemDynamics {
    const HfemContext* ctx;
    Vec6 operator()(double t, const Vec6& x) const { return hfem_rhs(x, t, *ctx); }
};

struct HfemVariational {
    const HfemContext* ctx;
    Vec42 operator()(double t, const Vec42& y) const { return hfem_variational_rhs(y, t, *ctx); }
};

}  // namespace cislunar
