#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/integrate.hpp"
#include "cislunar/orbits.hpp"

namespace cislunar {

/// One manifold arc cut at the section through the Moon (x = 1 - mu).
struct SectionCrossing {
    int index = -1;   ///< seed index on the source orbit
    int sign = 0;     ///< branch sign
    double horizon = 0.0;  ///< TU from departure to the section (positive)
    Vec6 state = Vec6::Zero();
};

/// Unstable arc leaving the Halo paired with a stable arc reaching the Lyapunov orbit.
struct ManifoldPair {
    SectionCrossing unstable;
    SectionCrossing stable;
    double position_gap = 0.0;  ///< DU at the section
    double velocity_gap = 0.0;  ///< VU at the section
};

struct TransferOptions {
    int halo_revolutions = 10;
    int lyapunov_revolutions = 10;
    int seed_count = 100;            ///< manifold departure points per orbit
    double perturbation = 1e-6;      ///< DU
    double max_horizon = 12.0;       ///< TU searched for the section crossing
    double velocity_weight = 1.0;    ///< weight of the velocity gap in the pair cost
    /// Manual selection; any unset field is searched.
    std::optional<int> unstable_index, unstable_sign, stable_index, stable_sign;
    IntegratorConfig integrator{};
    double sample_step = 0.0;        ///< max step of the dense path in TU; 0 picks period / 400
};

namespace detail {

/**
 * @brief First crossing of coordinate `axis` through `value`, propagating from
 * x0 towards t_max (either sign); refined by Newton iteration in time.
 */
inline std::optional<std::pair<double, Vec6>> first_crossing(const Cr3bpSystem& sys, const Vec6& x0, double t_max,
                                                             int axis, double value, const IntegratorConfig& cfg) {
    const Cr3bpDynamics rhs{sys};
    double tp = 0.0, tc = 0.0;
    Vec6 xp = x0, xc = x0;
    bool found = false;
    propagate(rhs, x0, 0.0, t_max, cfg, [&](double t, const Vec6& x) {
        if (t == 0.0) return true;
        if ((xc(axis) - value) * (x(axis) - value) <= 0.0 && xc(axis) != value) {
            tp = tc;
            xp = xc;
            tc = t;
            xc = x;
            found = true;
            return false;
        }
        tc = t;
        xc = x;
        return true;
    });
    if (!found) return std::nullopt;
    double t = tp + (tc - tp) * (value - xp(axis)) / (xc(axis) - xp(axis));
    Vec6 x = xc;
    for (int it = 0; it < 30; ++it) {
        x = propagate(rhs, xp, tp, t, cfg);
        const double dt = (value - x(axis)) / cr3bp_rhs(x, sys)(axis);
        t += dt;
        if (std::abs(dt) < 1e-14 * std::max(1.0, std::abs(t))) break;
    }
    x = propagate(rhs, xp, tp, t, cfg);
    return std::make_pair(t, x);
}

inline std::vector<SectionCrossing> section_crossings(const ManifoldSeeds& seeds, const Cr3bpSystem& sys,
                                                      const TransferOptions& opt, std::optional<int> only_index,
                                                      std::optional<int> only_sign) {
    std::vector<SectionCrossing> out;
    const double section = 1.0 - sys.mu();
    const double dir = seeds.stability == Stability::Unstable ? 1.0 : -1.0;
    for (int i = 0; i < static_cast<int>(seeds.points.size()); ++i) {
        if (only_index && *only_index != i) continue;
        for (int sign : {1, -1}) {
            if (only_sign && *only_sign != sign) continue;
            const Vec6 x0 = seeds.points[i] + sign * opt.perturbation * seeds.directions[i];
            try {
                const auto c = first_crossing(sys, x0, dir * opt.max_horizon, 0, section, opt.integrator);
                if (c) out.push_back({i, sign, std::abs(c->first), c->second});
            } catch (const SingularityError&) {
                // Arc hits a primary before the section; not a candidate.
            } catch (const PropagationError&) {
            }
        }
    }
    return out;
}

inline void append(Trajectory& dst, const Trajectory& src, double shift, bool replace_last) {
    std::size_t start = 0;
    if (!dst.empty()) {
        if (replace_last) {
            dst.t.pop_back();
            dst.x.pop_back();
        } else {
            start = 1;  // src starts where dst ends
        }
    }
    for (std::size_t i = start; i < src.size(); ++i) dst.push_back(src.t[i] + shift, src.x[i]);
}

}  // namespace detail

/**
 * @brief Chooses the unstable Halo arc and stable Lyapunov arc whose section
 * crossings are closest, by |dr| + velocity_weight * |dv|.
 *
 * @throws ConvergenceError if no arc of either family reaches the section.
 */
inline ManifoldPair find_manifold_pair(const ManifoldSeeds& halo_unstable, const ManifoldSeeds& lyap_stable,
                                       const Cr3bpSystem& sys, const TransferOptions& opt = {}) {
    const auto us = detail::section_crossings(halo_unstable, sys, opt, opt.unstable_index, opt.unstable_sign);
    const auto ss = detail::section_crossings(lyap_stable, sys, opt, opt.stable_index, opt.stable_sign);
    if (us.empty() || ss.empty()) throw ConvergenceError("find_manifold_pair: no manifold arc reaches x = 1 - mu");
    ManifoldPair best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const auto& u : us) {
        for (const auto& s : ss) {
            const double dr = (u.state.head<3>() - s.state.head<3>()).norm();
            const double dv = (u.state.tail<3>() - s.state.tail<3>()).norm();
            const double cost = dr + opt.velocity_weight * dv;
            if (cost < best_cost) {
                best_cost = cost;
                best = {u, s, dr, dv};
            }
        }
    }
    return best;
}

/// Dense CR3BP transfer path and the pieces it was assembled from.
struct TransferPath {
    Trajectory trajectory;  ///< synodic, TU from the first Halo apolune
    ManifoldPair pair;
    PeriodicOrbit halo;
    PeriodicOrbit lyapunov;
    double junction_time = 0.0;  ///< TU where the unstable arc hands over to the stable arc
};

/**
 * @brief Halo revolutions from apolune, partial revolution to the unstable
 * departure point, unstable arc to the section, stable arc to the Lyapunov
 * orbit, partial revolution to its far crossing, then Lyapunov revolutions.
 *
 * Both orbits must start at their perpendicular crossing farthest from the
 * Moon. Whole revolutions reuse one propagated period, so the unstable orbits
 * are tiled without error growth.
 */
inline TransferPath build_transfer_path(const PeriodicOrbit& halo, const PeriodicOrbit& lyapunov,
                                        const Cr3bpSystem& sys, const TransferOptions& opt = {}) {
    if (opt.halo_revolutions < 0 || opt.lyapunov_revolutions < 0) {
        throw std::invalid_argument("build_transfer_path: revolution counts must be non-negative");
    }
    const auto useeds = manifold_seeds(halo, sys, Stability::Unstable, opt.seed_count, opt.integrator);
    const auto sseeds = manifold_seeds(lyapunov, sys, Stability::Stable, opt.seed_count, opt.integrator);
    const ManifoldPair pair = find_manifold_pair(useeds, sseeds, sys, opt);

    auto dense_cfg = [&](double period) {
        IntegratorConfig c = opt.integrator;
        c.max_step = opt.sample_step > 0.0 ? opt.sample_step : period / 400.0;
        return c;
    };
    const IntegratorConfig hcfg = dense_cfg(halo.period);
    const IntegratorConfig lcfg = dense_cfg(lyapunov.period);
    const Cr3bpDynamics rhs{sys};

    TransferPath path{{}, pair, halo, lyapunov, 0.0};
    Trajectory& out = path.trajectory;
    out.frame = Frame::Synodic;
    out.units = Units::Nondimensional;
    double t = 0.0;

    // (a) whole Halo revolutions.
    const Trajectory hrev = propagate_trajectory(rhs, halo.x0.vec(), 0.0, halo.period, hcfg, Frame::Synodic,
                                                 Units::Nondimensional);
    for (int r = 0; r < opt.halo_revolutions; ++r) {
        Trajectory rev = hrev;
        rev.x.back() = halo.x0.vec();  // exact periodic closure
        detail::append(out, rev, t, false);
        t += halo.period;
    }
    // (b) partial revolution to the departure point.
    const double tu = useeds.times[static_cast<std::size_t>(pair.unstable.index)];
    if (tu > 0.0) {
        detail::append(out, propagate_trajectory(rhs, halo.x0.vec(), 0.0, tu, hcfg, Frame::Synodic, Units::Nondimensional),
                       t, false);
        t += tu;
    } else if (out.empty()) {
        out.push_back(0.0, halo.x0.vec());
    }
    // (c) unstable arc up to the section.
    const Vec6 xu = useeds.points[static_cast<std::size_t>(pair.unstable.index)] +
                    pair.unstable.sign * opt.perturbation * useeds.directions[static_cast<std::size_t>(pair.unstable.index)];
    detail::append(out, propagate_trajectory(rhs, xu, 0.0, pair.unstable.horizon, hcfg, Frame::Synodic,
                                             Units::Nondimensional),
                   t, true);
    t += pair.unstable.horizon;
    path.junction_time = t;
    // (d) stable arc from the section to the Lyapunov orbit, in forward time.
    const Vec6 xs = sseeds.points[static_cast<std::size_t>(pair.stable.index)] +
                    pair.stable.sign * opt.perturbation * sseeds.directions[static_cast<std::size_t>(pair.stable.index)];
    const Trajectory back = propagate_trajectory(rhs, xs, 0.0, -pair.stable.horizon, lcfg, Frame::Synodic,
                                                 Units::Nondimensional);
    Trajectory fwd;
    for (std::size_t i = back.size(); i-- > 0;) fwd.push_back(back.t[i] + pair.stable.horizon, back.x[i]);
    detail::append(out, fwd, t, true);
    t += pair.stable.horizon;
    // (e) partial revolution from the arrival point to the far crossing.
    const double ts = sseeds.times[static_cast<std::size_t>(pair.stable.index)];
    const Vec6 arrival = sseeds.points[static_cast<std::size_t>(pair.stable.index)];
    if (ts > 0.0) {
        Trajectory part = propagate_trajectory(rhs, arrival, ts, lyapunov.period, lcfg, Frame::Synodic,
                                               Units::Nondimensional);
        part.x.back() = lyapunov.x0.vec();
        for (double& s : part.t) s -= ts;
        detail::append(out, part, t, true);
        t += lyapunov.period - ts;
    }
    // (f) whole Lyapunov revolutions.
    const Trajectory lrev = propagate_trajectory(rhs, lyapunov.x0.vec(), 0.0, lyapunov.period, lcfg, Frame::Synodic,
                                                 Units::Nondimensional);
    for (int r = 0; r < opt.lyapunov_revolutions; ++r) {
        Trajectory rev = lrev;
        rev.x.back() = lyapunov.x0.vec();
        detail::append(out, rev, t, r == 0 && ts == 0.0);
        t += lyapunov.period;
    }
    return path;
}

}  // namespace cislunar
