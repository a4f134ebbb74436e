#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "cislunar/core.hpp"
#include "cislunar/cr3bp.hpp"
#include "cislunar/frames.hpp"
#include "cislunar/hfem.hpp"
#include "cislunar/integrate.hpp"
#include "cislunar/orbits.hpp"

namespace cislunar {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Propagation failure on one shooting segment.
struct SegmentError : PropagationError {
    SegmentError(int segment, const std::string& what)
        : PropagationError("segment " + std::to_string(segment) + ": " + what), segment(segment) {}
    int segment;
};

/**
 * @brief Multiple-shooting node: inertial state (km, km/s), epoch (s) and the
 * duration (s) of the segment that starts here; the last node has none.
 */
struct PatchPoint {
    State6 x;
    double tau;
    std::optional<double> T;
};

/// CR3BP point used to seed a shooting problem: synodic state and relative time (TU).
struct GuessPoint {
    State6 x;
    double ttilde;
};

/// Conversion between the dimensional inertial states and the nondimensional design vector.
struct ShootingScales {
    double length;    ///< km per DU
    double velocity;  ///< km/s per VU

    static ShootingScales from(const Cr3bpSystem& sys) { return {sys.char_length(), sys.char_velocity()}; }

    Vec6 to_nondim(const Vec6& x) const {
        Vec6 y = x;
        y.head<3>() /= length;
        y.tail<3>() /= velocity;
        return y;
    }
    Vec6 to_dim(const Vec6& y) const {
        Vec6 x = y;
        x.head<3>() *= length;
        x.tail<3>() *= velocity;
        return x;
    }
    /// S^-1 Phi S for a dimensional STM Phi.
    Mat6 stm_to_nondim(const Mat6& phi) const {
        Vec6 s;
        s << length, length, length, velocity, velocity, velocity;
        return s.cwiseInverse().asDiagonal() * phi * s.asDiagonal();
    }
};

namespace detail {

/**
 * @brief Runs fn(i) for i in [0, count) on up to `threads` workers.
 *
 * Each index writes only its own output slot, so results do not depend on the
 * schedule. The exception from the lowest failing index is rethrown.
 */
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    auto run = [&](int i) {
        try {
            fn(i);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    };
    const int workers = std::min(std::max(threads, 1), count);
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) run(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int i = next++; i < count; i = next++) run(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline int default_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace detail

/// Residual and per-segment nondimensional STMs at one design vector.
struct ShootingEvaluation {
    VecX F;
    std::vector<Mat6> stm;  ///< empty unless requested
};

/**
 * @brief Fixed-time multiple-shooting problem in the HFEM.
 *
 * The design vector X stacks the nondimensional patch-point states; epochs and
 * durations are frozen data. F stacks (propagated x_i) - x_{i+1}. X_d is the
 * nondimensional initial guess and never changes after construction.
 */
class ShootingProblem {
public:
    ShootingProblem(std::vector<PatchPoint> points, std::shared_ptr<const HfemContext> ctx, ShootingScales scales,
                    IntegratorConfig integrator = {}, int threads = 0)
        : points_(std::move(points)), ctx_(std::move(ctx)), scales_(scales), integrator_(integrator),
          threads_(threads > 0 ? threads : detail::default_threads()) {
        if (points_.size() < 2) throw std::invalid_argument("ShootingProblem: at least two patch points are required");
        if (!ctx_) throw std::invalid_argument("ShootingProblem: missing HFEM context");
        ctx_->validate();
        integrator_.validate();
        if (!(scales_.length > 0.0 && scales_.velocity > 0.0)) throw std::invalid_argument("ShootingProblem: bad scales");
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const auto& p = points_[i];
            if (p.x.frame() != Frame::Inertial) throw std::invalid_argument("ShootingProblem: patch states must be inertial");
            if (i + 1 == points_.size()) continue;
            if (!p.T || !(*p.T > 0.0)) {
                throw std::invalid_argument("ShootingProblem: segment " + std::to_string(i) + " needs a positive duration");
            }
            if (std::abs(p.tau + *p.T - points_[i + 1].tau) > 1e-6) {
                throw std::invalid_argument("ShootingProblem: epoch of point " + std::to_string(i + 1) +
                                            " does not follow from the previous segment");
            }
        }
        desired_.resize(dim());
        for (int i = 0; i < size(); ++i) desired_.segment<6>(6 * i) = scales_.to_nondim(points_[i].x.vec());
    }

    int size() const { return static_cast<int>(points_.size()); }
    int segments() const { return size() - 1; }
    int dim() const { return 6 * size(); }
    int residual_dim() const { return 6 * segments(); }

    const std::vector<PatchPoint>& patch_points() const { return points_; }
    const VecX& desired() const { return desired_; }
    const ShootingScales& scales() const { return scales_; }
    const HfemContext& context() const { return *ctx_; }
    std::shared_ptr<const HfemContext> context_ptr() const { return ctx_; }
    const IntegratorConfig& integrator() const { return integrator_; }
    int threads() const { return threads_; }
    void set_threads(int n) { threads_ = n > 0 ? n : detail::default_threads(); }

    /// Dimensional inertial state of patch point i under design vector X.
    State6 state(const VecX& X, int i) const { return State6::inertial(scales_.to_dim(X.segment<6>(6 * i))); }

    ShootingEvaluation evaluate(const VecX& X, bool with_stm) const {
        check(X);
        ShootingEvaluation ev;
        ev.F.resize(residual_dim());
        if (with_stm) ev.stm.resize(static_cast<std::size_t>(segments()));
        detail::parallel_for(segments(), threads_, [&](int i) {
            const Vec6 xi = scales_.to_dim(X.segment<6>(6 * i));
            const double t0 = points_[i].tau;
            const double t1 = t0 + *points_[i].T;
            Vec6 end;
            try {
                if (with_stm) {
                    auto [xf, phi] = propagate_with_stm(HfemVariational{ctx_.get()}, xi, t0, t1, integrator_);
                    end = xf;
                    ev.stm[static_cast<std::size_t>(i)] = scales_.stm_to_nondim(phi);
                } else {
                    end = propagate(HfemDynamics{ctx_.get()}, xi, t0, t1, integrator_);
                }
            } catch (const std::exception& e) {
                throw SegmentError(i, e.what());
            }
            ev.F.segment<6>(6 * i) = scales_.to_nondim(end) - X.segment<6>(6 * (i + 1));
        });
        return ev;
    }

    VecX residual(const VecX& X) const { return evaluate(X, false).F; }

    /// Block bidiagonal Jacobian: Phi_i at column block i and -I at block i+1.
    MatX jacobian(const VecX& X) const { return assemble_jacobian(evaluate(X, true).stm); }

    MatX assemble_jacobian(const std::vector<Mat6>& stm) const {
        if (static_cast<int>(stm.size()) != segments()) throw std::invalid_argument("assemble_jacobian: STM count");
        MatX J = MatX::Zero(residual_dim(), dim());
        for (int i = 0; i < segments(); ++i) {
            J.block<6, 6>(6 * i, 6 * i) = stm[static_cast<std::size_t>(i)];
            J.block<6, 6>(6 * i, 6 * (i + 1)) = -Mat6::Identity();
        }
        return J;
    }

    /// Dense inertial trajectory of every segment under X, in epoch seconds.
    std::vector<Trajectory> segment_trajectories(const VecX& X) const {
        check(X);
        std::vector<Trajectory> out(static_cast<std::size_t>(segments()));
        detail::parallel_for(segments(), threads_, [&](int i) {
            const double t0 = points_[i].tau;
            try {
                out[static_cast<std::size_t>(i)] =
                    propagate_trajectory(HfemDynamics{ctx_.get()}, scales_.to_dim(X.segment<6>(6 * i)), t0,
                                         t0 + *points_[i].T, integrator_, Frame::Inertial, Units::Dimensional);
            } catch (const std::exception& e) {
                throw SegmentError(i, e.what());
            }
        });
        return out;
    }

private:
    void check(const VecX& X) const {
        if (X.size() != dim()) {
            throw std::invalid_argument("ShootingProblem: design vector has size " + std::to_string(X.size()) +
                                        ", expected " + std::to_string(dim()));
        }
        if (!X.allFinite()) throw std::invalid_argument("ShootingProblem: design vector is not finite");
    }

    std::vector<PatchPoint> points_;
    std::shared_ptr<const HfemContext> ctx_;
    ShootingScales scales_;
    IntegratorConfig integrator_;
    int threads_;
    VecX desired_;
};

/**
 * @brief Builds the shooting problem from CR3BP points.
 *
 * Relative CR3BP times are mapped to ephemeris time, epochs are tau_s plus the
 * mapped times, and states are rotated and scaled into the inertial frame with
 * the time-rate corrected velocity.
 */
inline ShootingProblem build_initial_guess(const std::vector<GuessPoint>& cr3bp_points, double tau_s,
                                           const Cr3bpSystem& sys, std::shared_ptr<const HfemContext> ctx,
                                           const IntegratorConfig& integrator = {}, int threads = 0,
                                           const FrameRateOptions& rates = {}) {
    if (cr3bp_points.size() < 2) throw std::invalid_argument("build_initial_guess: at least two points are required");
    if (!ctx) throw std::invalid_argument("build_initial_guess: missing HFEM context");
    std::vector<double> rel;
    rel.reserve(cr3bp_points.size());
    for (std::size_t i = 0; i < cr3bp_points.size(); ++i) {
        const auto& p = cr3bp_points[i];
        if (p.x.frame() != Frame::Synodic) throw std::invalid_argument("build_initial_guess: points must be synodic");
        if (i > 0 && !(p.ttilde > cr3bp_points[i - 1].ttilde)) {
            throw std::invalid_argument("build_initial_guess: times must be strictly increasing (point " +
                                        std::to_string(i) + ")");
        }
        rel.push_back(p.ttilde - cr3bp_points.front().ttilde);
    }
    const auto& provider = *ctx->provider;
    const std::vector<double> t = map_relative_times(rel, tau_s, provider, sys);
    std::vector<double> tau(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) tau[i] = tau_s + t[i] * sys.char_time();

    std::vector<PatchPoint> points;
    points.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const State6 xi = synodic_to_inertial(cr3bp_points[i].x, tau[i], sys, provider, rates);
        std::optional<double> T;
        if (i + 1 < t.size()) T = tau[i + 1] - tau[i];
        points.push_back({xi, tau[i], T});
    }
    return ShootingProblem(std::move(points), std::move(ctx), ShootingScales::from(sys), integrator, threads);
}

// ---------------------------------------------------------------------------
// Weights and error metrics
// ---------------------------------------------------------------------------

/**
 * @brief Proximity weights Q (diagonal, 6N) and metric masks.
 *
 * p selects the entries of the total position error (diagonal repeats
 * 1,1,1,0,0,0); p1 selects the first patch point's position.
 */
struct WeightSpec {
    VecX q;
    VecX p;
    VecX p1;

    void validate(int dim) const {
        auto check_size = [dim](const VecX& v, const char* name) {
            if (v.size() != dim) {
                throw std::invalid_argument(std::string("WeightSpec: ") + name + " has size " + std::to_string(v.size()) +
                                            ", expected " + std::to_string(dim));
            }
        };
        check_size(q, "Q");
        check_size(p, "P");
        check_size(p1, "P1");
        if ((q.array() < 0.0).any() || !q.allFinite()) throw std::invalid_argument("WeightSpec: Q entries must be non-negative");
        for (const VecX* m : {&p, &p1}) {
            if (((m->array() != 0.0) && (m->array() != 1.0)).any()) {
                throw std::invalid_argument("WeightSpec: mask entries must be 0 or 1");
            }
        }
    }
};

/// Mask with (1,1,1,0,0,0) on the listed patch points (all points when empty).
inline VecX position_mask(int points, const std::vector<int>& which = {}) {
    VecX m = VecX::Zero(6 * points);
    auto set = [&](int i) {
        if (i < 0 || i >= points) throw std::out_of_range("position_mask: patch point " + std::to_string(i));
        m.segment<3>(6 * i).setOnes();
    };
    if (which.empty()) {
        for (int i = 0; i < points; ++i) set(i);
    } else {
        for (int i : which) set(i);
    }
    return m;
}

/// Unweighted spec: Q = 0, P over all positions, P1 on the first point.
inline WeightSpec default_weights(int points) {
    return {VecX::Zero(6 * points), position_mask(points), position_mask(points, {0})};
}

struct ErrorMetrics {
    double ep;   ///< sqrt(E^T P E)
    double ep1;  ///< sqrt(E^T P1 E)
    double eq;   ///< error over the entries weighted by Q (0 when Q = 0)
};

inline ErrorMetrics error_metrics(const ShootingProblem& problem, const VecX& X, const WeightSpec& spec) {
    spec.validate(problem.dim());
    if (X.size() != problem.dim()) throw std::invalid_argument("error_metrics: design vector size mismatch");
    const VecX e = X - problem.desired();
    const VecX e2 = e.array().square();
    const VecX qmask = (spec.q.array() > 0.0).cast<double>();
    return {std::sqrt(spec.p.dot(e2)), std::sqrt(spec.p1.dot(e2)), std::sqrt(qmask.dot(e2))};
}

// ---------------------------------------------------------------------------
// Patch-point selection
// ---------------------------------------------------------------------------

/// State of a periodic orbit at any time, reduced modulo the period.
inline Vec6 orbit_state_at(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, double t,
                           const IntegratorConfig& cfg = {}) {
    const double s = t - std::floor(t / orbit.period) * orbit.period;
    if (s == 0.0) return orbit.x0.vec();
    return propagate(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, s, cfg);
}

/**
 * @brief Points equally spaced in time over whole revolutions of a periodic
 * orbit, including both ends: revolutions * per_rev + 1 points.
 *
 * Each state comes from at most one period of propagation, so unstable orbits
 * are reproduced without error growth across revolutions.
 */
inline std::vector<GuessPoint> equal_time_points(const PeriodicOrbit& orbit, const Cr3bpSystem& sys, int revolutions,
                                                 int per_rev, const IntegratorConfig& cfg = {}) {
    if (revolutions < 1 || per_rev < 1) throw std::invalid_argument("equal_time_points: counts must be positive");
    std::vector<double> times;
    for (int k = 1; k < per_rev; ++k) times.push_back(orbit.period * k / per_rev);
    std::vector<Vec6> one{orbit.x0.vec()};
    for (const auto& x : propagate_to_times(Cr3bpDynamics{sys}, orbit.x0.vec(), 0.0, times, cfg)) one.push_back(x);
    std::vector<GuessPoint> out;
    for (int r = 0; r < revolutions; ++r) {
        for (int k = 0; k < per_rev; ++k) {
            out.push_back({State6::synodic(one[static_cast<std::size_t>(k)]), orbit.period * (r + static_cast<double>(k) / per_rev)});
        }
    }
    out.push_back({orbit.x0, orbit.period * revolutions});
    return out;
}

/// n + 1 points splitting a dense CR3BP trajectory into n equal arc-length segments.
inline std::vector<GuessPoint> arclength_points(const Trajectory& traj, int segments) {
    if (traj.frame != Frame::Synodic) throw std::invalid_argument("arclength_points: trajectory must be synodic");
    std::vector<GuessPoint> out;
    for (const auto& s : resample_by_arclength(traj, segments + 1)) out.push_back({s.x, s.t});
    return out;
}

}  // namespace cislunar
