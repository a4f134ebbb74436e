#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cislunar/core.hpp"
#include "cislunar/shooting.hpp"

namespace cislunar {

enum class SolverMode { MN, LM, LMAnnealed };

inline const char* to_string(SolverMode m) {
    switch (m) {
        case SolverMode::MN: return "mn";
        case SolverMode::LM: return "lm";
        case SolverMode::LMAnnealed: return "lm-annealed";
    }
    return "?";
}

inline SolverMode solver_mode_from_string(const std::string& s) {
    if (s == "mn") return SolverMode::MN;
    if (s == "lm") return SolverMode::LM;
    if (s == "lm-annealed") return SolverMode::LMAnnealed;
    throw ConfigError("solver", "unknown solver '" + s + "' (expected mn, lm or lm-annealed)");
}

/**
 * @brief Solver tunables. MN mode ignores beta, Q and the annealing fields.
 */
struct SolverConfig {
    SolverMode mode = SolverMode::LM;
    double beta0 = 1e-5;
    double alpha = 0.7;             ///< damping shrink on acceptance
    double eta = 1.5;               ///< damping growth on rejection
    double sigma = 1e-12;           ///< convergence threshold on |F|
    int max_inner_iters = 200;      ///< iteration cap per optimization problem
    double rel_var_tol = 1e-4;      ///< inner stop on relative |F| decrease; 0 disables
    int l_max = 10;                 ///< maximum number of annealed problems
    int anneal_orders = 2;          ///< n: delta, epsilon sit n decades below |F|^2, |F|
    double xi0 = 1.0;
    int max_rejections = 60;        ///< consecutive rejections before giving up
    double divergence_factor = 1e3; ///< MN: |F| above this multiple of |F0| is divergence
    VecX q;                         ///< diagonal proximity weights; empty means zero

    void validate(int dim = -1) const {
        if (!(sigma > 0.0)) throw ConfigError("sigma", "must be positive");
        if (max_inner_iters < 1) throw ConfigError("max_inner_iters", "must be at least 1");
        if (!(divergence_factor > 1.0)) throw ConfigError("divergence_factor", "must exceed 1");
        if (mode == SolverMode::MN) return;
        if (!(beta0 > 0.0)) throw ConfigError("beta0", "must be positive");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
        if (!(eta > 1.0)) throw ConfigError("eta", "must exceed 1");
        if (!(rel_var_tol >= 0.0)) throw ConfigError("rel_var_tol", "must be non-negative");
        if (l_max < 1) throw ConfigError("l_max", "must be at least 1");
        if (anneal_orders < 0) throw ConfigError("anneal_orders", "must be non-negative");
        if (!(xi0 > 0.0)) throw ConfigError("xi0", "must be positive");
        if (max_rejections < 1) throw ConfigError("max_rejections", "must be at least 1");
        if (q.size() > 0) {
            if ((q.array() < 0.0).any() || !q.allFinite()) throw ConfigError("q", "weights must be non-negative");
            if (dim >= 0 && q.size() != dim) {
                throw ConfigError("q", "has " + std::to_string(q.size()) + " entries, expected " + std::to_string(dim));
            }
        }
    }
};

/// One solver event; rejected LM attempts are logged with accepted = false.
struct IterationRecord {
    int k = 0;            ///< iteration index (0 is the initial guess)
    int outer = 1;        ///< annealed problem index l
    double fnorm = 0.0;   ///< |F| at the logged point
    double ep = 0.0;      ///< |E|_P
    double ep1 = 0.0;     ///< |E|_P1
    double eq = 0.0;      ///< error over Q-weighted entries
    double beta = 0.0;    ///< damping used for this step
    double xi = 1.0;
    double step_norm = 0.0;
    bool accepted = true;
    int rejections = 0;   ///< rejected attempts before this record within iteration k
    double lin_residual = std::numeric_limits<double>::quiet_NaN();  ///< MN: |J dX + F|
};

enum class ConvergenceStatus { Converged, Diverged, Stalled };

inline const char* to_string(ConvergenceStatus s) {
    switch (s) {
        case ConvergenceStatus::Converged: return "Converged";
        case ConvergenceStatus::Diverged: return "Diverged";
        case ConvergenceStatus::Stalled: return "Stalled";
    }
    return "?";
}

/// Annealing parameters of the current outer problem.
struct AnnealState {
    double delta = 0.0;
    double epsilon = 0.0;
    double xi = 1.0;
    int l = 1;
};

struct ConvergenceReport {
    ConvergenceStatus status = ConvergenceStatus::Stalled;
    SolverMode mode = SolverMode::LM;
    std::vector<IterationRecord> records;
    VecX X;
    double final_fnorm = 0.0;
    std::vector<int> outer_starts;      ///< iteration index k at which each outer problem starts
    std::vector<AnnealState> anneal;    ///< state used by each outer problem
    std::string diagnostic;

    /// Number of accepted steps.
    int iterations() const {
        int n = 0;
        for (const auto& r : records) n += (r.k > 0 && r.accepted) ? 1 : 0;
        return n;
    }
};

using IterationObserver = std::function<void(const IterationRecord&)>;

// ---------------------------------------------------------------------------
// Update steps
// ---------------------------------------------------------------------------

/**
 * @brief Minimum-norm update dX = -J^T (J J^T)^-1 F via Cholesky of J J^T.
 * @throws RankDeficiencyError if J J^T is not positive definite.
 */
inline VecX mn_step(const MatX& J, const VecX& F) {
    if (J.rows() != F.size()) throw std::invalid_argument("mn_step: J and F sizes differ");
    const MatX jjt = J * J.transpose();
    const Eigen::LLT<MatX> llt(jjt);
    if (llt.info() != Eigen::Success) throw RankDeficiencyError("mn_step: J J^T is not positive definite (J rank deficient)");
    const double dmax = llt.matrixLLT().diagonal().cwiseAbs().maxCoeff();
    const double dmin = llt.matrixLLT().diagonal().cwiseAbs().minCoeff();
    if (!(dmin > 1e-10 * dmax)) throw RankDeficiencyError("mn_step: J J^T is numerically singular (J rank deficient)");
    return -J.transpose() * llt.solve(F);
}

/**
 * @brief Damped update dX = -(xi J^T J + Q + beta I)^-1 (xi J^T F + Q E); q holds the diagonal of Q
 * (empty for zero).
 *
 * Solved in the equivalent row-space form with D = Q + beta I:
 * dX = -D^-1 [Q E + xi J^T (I + xi J D^-1 J^T)^-1 (F - J D^-1 Q E)].
 * The inner matrix is SPD and 6(N-1) square, and it stays well conditioned when xi/beta is large,
 * which is where the column-space normal matrix loses accuracy or definiteness.
 */
inline VecX lm_step(const MatX& J, const VecX& F, const VecX& E, const VecX& q, double xi, double beta) {
    const Eigen::Index n = J.cols();
    if (J.rows() != F.size() || E.size() != n) throw std::invalid_argument("lm_step: size mismatch");
    if (q.size() != 0 && q.size() != n) throw std::invalid_argument("lm_step: Q size mismatch");
    if (!(beta > 0.0)) throw std::invalid_argument("lm_step: beta must be positive");
    if (!(xi >= 0.0)) throw std::invalid_argument("lm_step: xi must be non-negative");
    const VecX d = q.size() != 0 ? VecX(q.array() + beta) : VecX::Constant(n, beta);
    const VecX dinv = d.cwiseInverse();
    const VecX qe = q.size() != 0 ? VecX(q.cwiseProduct(E)) : VecX::Zero(n);
    MatX m = xi * (J * dinv.asDiagonal() * J.transpose());
    m.diagonal().array() += 1.0;
    const Eigen::LLT<MatX> llt(m);
    if (llt.info() != Eigen::Success) {
        throw RankDeficiencyError("lm_step: damped system lost positive definiteness (conditioning breakdown)");
    }
    const VecX r = F - J * dinv.cwiseProduct(qe);
    return -dinv.cwiseProduct(qe + xi * (J.transpose() * llt.solve(r)));
}

// ---------------------------------------------------------------------------
// Annealing
// ---------------------------------------------------------------------------

/// xi = G'(u) for G(u) = log(sqrt(u + delta) + epsilon).
inline double compute_xi(double fnorm_sq, double delta, double epsilon) {
    const double s = std::sqrt(fnorm_sq + delta);
    return 1.0 / (2.0 * s * (s + epsilon));
}

/// Parameters of the next outer problem after one that ended at |F(Xbar)| = fbar.
inline AnnealState anneal_update(double fbar, const AnnealState& state, int orders) {
    const double scale = std::pow(10.0, -orders);
    AnnealState next;
    next.delta = fbar * fbar * scale;
    next.epsilon = fbar * scale;
    next.xi = compute_xi(fbar * fbar, next.delta, next.epsilon);
    next.l = state.l + 1;
    return next;
}

inline AnnealState anneal_update(const ConvergenceReport& report, const AnnealState& state, int orders) {
    return anneal_update(report.final_fnorm, state, orders);
}

// ---------------------------------------------------------------------------
// Iterative solvers
// ---------------------------------------------------------------------------

namespace detail {

struct SolverLog {
    const ShootingProblem& problem;
    const WeightSpec& weights;
    ConvergenceReport& report;
    const IterationObserver& observer;

    void push(IterationRecord r, const VecX& X) {
        const auto m = error_metrics(problem, X, weights);
        r.ep = m.ep;
        r.ep1 = m.ep1;
        r.eq = m.eq;
        report.records.push_back(r);
        if (observer) observer(report.records.back());
    }
};

inline WeightSpec weights_for(const ShootingProblem& problem, const SolverConfig& cfg) {
    WeightSpec w = default_weights(problem.size());
    if (cfg.q.size() > 0) w.q = cfg.q;
    return w;
}

// Residual norm at X, or +inf if any segment fails to propagate.
inline double safe_fnorm(const ShootingProblem& problem, const VecX& X, VecX* F, std::string* why) {
    try {
        *F = problem.residual(X);
        const double n = F->norm();
        return std::isfinite(n) ? n : std::numeric_limits<double>::infinity();
    } catch (const PropagationError& e) {
        if (why) *why = e.what();
        return std::numeric_limits<double>::infinity();
    } catch (const SingularityError& e) {
        if (why) *why = e.what();
        return std::numeric_limits<double>::infinity();
    } catch (const CoverageError& e) {
        if (why) *why = e.what();
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/**
 * @brief Baseline minimum-norm iteration.
 *
 * Converged when |F| < sigma; Diverged when |F| is non-finite, exceeds
 * divergence_factor * |F0|, or a segment cannot be propagated; Stalled at the
 * iteration cap.
 */
inline ConvergenceReport solve_mn(const ShootingProblem& problem, const SolverConfig& cfg,
                                  const IterationObserver& observer = {}, const VecX* start = nullptr) {
    cfg.validate(problem.dim());
    ConvergenceReport report;
    report.mode = SolverMode::MN;
    report.outer_starts.push_back(0);
    report.anneal.push_back({});
    const WeightSpec weights = default_weights(problem.size());
    detail::SolverLog log{problem, weights, report, observer};

    VecX X = start ? *start : problem.desired();
    VecX F;
    std::string why;
    double fnorm = detail::safe_fnorm(problem, X, &F, &why);
    report.X = X;
    report.final_fnorm = fnorm;
    if (!std::isfinite(fnorm)) {
        report.status = ConvergenceStatus::Diverged;
        report.diagnostic = "initial residual could not be evaluated: " + why;
        return report;
    }
    const double f0 = fnorm;
    IterationRecord r0;
    r0.fnorm = fnorm;
    r0.beta = 0.0;
    log.push(r0, X);

    for (int k = 1; k <= cfg.max_inner_iters + 1; ++k) {
        if (fnorm < cfg.sigma) {
            report.status = ConvergenceStatus::Converged;
            return report;
        }
        if (k > cfg.max_inner_iters) break;
        MatX J;
        try {
            J = problem.jacobian(X);
        } catch (const std::exception& e) {
            report.status = ConvergenceStatus::Diverged;
            report.diagnostic = std::string("Jacobian evaluation failed: ") + e.what();
            return report;
        }
        VecX dX;
        try {
            dX = mn_step(J, F);
        } catch (const RankDeficiencyError& e) {
            report.status = ConvergenceStatus::Diverged;
            report.diagnostic = e.what();
            return report;
        }
        IterationRecord r;
        r.k = k;
        r.lin_residual = (J * dX + F).norm();
        r.step_norm = dX.norm();
        r.beta = 0.0;
        X += dX;
        fnorm = detail::safe_fnorm(problem, X, &F, &why);
        r.fnorm = fnorm;
        report.X = X;
        report.final_fnorm = fnorm;
        log.push(r, X);
        if (!std::isfinite(fnorm)) {
            report.status = ConvergenceStatus::Diverged;
            report.diagnostic = why.empty() ? "residual is not finite" : why;
            return report;
        }
        if (fnorm > cfg.divergence_factor * f0) {
            report.status = ConvergenceStatus::Diverged;
            std::ostringstream msg;
            msg << "|F| = " << fnorm << " exceeds " << cfg.divergence_factor << " times the initial " << f0;
            report.diagnostic = msg.str();
            return report;
        }
    }
    report.status = ConvergenceStatus::Stalled;
    report.diagnostic = "iteration cap reached";
    return report;
}

namespace detail {

enum class InnerExit { Converged, RelativeVariation, IterationCap, RejectionCap, Failure };

// One damped least-squares problem at fixed xi, starting from X with residual F.
inline InnerExit lm_inner(const ShootingProblem& problem, const SolverConfig& cfg, const VecX& q, double xi, VecX& X,
                          VecX& F, double& fnorm, int& k, int outer, SolverLog& log, std::string& diagnostic) {
    double beta = cfg.beta0;
    for (int it = 0; it < cfg.max_inner_iters; ++it) {
        if (fnorm < cfg.sigma) return InnerExit::Converged;
        MatX J;
        try {
            J = problem.jacobian(X);
        } catch (const std::exception& e) {
            diagnostic = std::string("Jacobian evaluation failed: ") + e.what();
            return InnerExit::Failure;
        }
        const VecX E = X - problem.desired();
        ++k;
        int rejections = 0;
        while (true) {
            VecX dX;
            try {
                dX = lm_step(J, F, E, q, xi, beta);
            } catch (const RankDeficiencyError& e) {
                diagnostic = e.what();
                return InnerExit::Failure;
            }
            VecX Xc = X + dX;
            VecX Fc;
            std::string why;
            const double fc = safe_fnorm(problem, Xc, &Fc, &why);
            IterationRecord r;
            r.k = k;
            r.outer = outer;
            r.fnorm = fc;
            r.beta = beta;
            r.xi = xi;
            r.step_norm = dX.norm();
            r.rejections = rejections;
            if (fc <= fnorm) {
                r.accepted = true;
                log.push(r, Xc);
                const double prev = fnorm;
                X = std::move(Xc);
                F = std::move(Fc);
                fnorm = fc;
                beta *= cfg.alpha;
                if (fnorm < cfg.sigma) return InnerExit::Converged;
                if (cfg.rel_var_tol > 0.0 && (prev - fnorm) <= cfg.rel_var_tol * prev) {
                    return InnerExit::RelativeVariation;
                }
                break;
            }
            r.accepted = false;
            log.push(r, Xc);
            beta *= cfg.eta;
            if (++rejections >= cfg.max_rejections) {
                std::ostringstream msg;
                msg << cfg.max_rejections << " consecutive rejections; beta grew to " << beta;
                diagnostic = msg.str();
                return InnerExit::RejectionCap;
            }
        }
    }
    return fnorm < cfg.sigma ? InnerExit::Converged : InnerExit::IterationCap;
}

}  // namespace detail

/**
 * @brief Levenberg-Marquardt iteration with optional adaptive weighting.
 *
 * Each step is accepted only when the true |F| does not increase (beta *=
 * alpha), otherwise it is recomputed with beta *= eta. In LMAnnealed mode an
 * unconverged problem is followed by another with xi from the annealing rule,
 * warm-started at its solution with beta reset to beta0, up to l_max problems.
 */
inline ConvergenceReport solve_lm(const ShootingProblem& problem, const SolverConfig& cfg, AnnealState anneal = {},
                                  const IterationObserver& observer = {}, const VecX* start = nullptr) {
    cfg.validate(problem.dim());
    ConvergenceReport report;
    report.mode = cfg.mode;
    const WeightSpec weights = detail::weights_for(problem, cfg);
    detail::SolverLog log{problem, weights, report, observer};
    const VecX q = cfg.q;

    VecX X = start ? *start : problem.desired();
    VecX F;
    std::string why;
    double fnorm = detail::safe_fnorm(problem, X, &F, &why);
    report.X = X;
    report.final_fnorm = fnorm;
    if (!std::isfinite(fnorm)) {
        report.status = ConvergenceStatus::Diverged;
        report.diagnostic = "initial residual could not be evaluated: " + why;
        return report;
    }
    IterationRecord r0;
    r0.fnorm = fnorm;
    r0.beta = cfg.beta0;
    r0.xi = anneal.xi;
    r0.outer = anneal.l;
    log.push(r0, X);

    int k = 0;
    while (true) {
        report.outer_starts.push_back(k);
        report.anneal.push_back(anneal);
        std::string diagnostic;
        const auto exit = detail::lm_inner(problem, cfg, q, anneal.xi, X, F, fnorm, k, anneal.l, log, diagnostic);
        report.X = X;
        report.final_fnorm = fnorm;
        if (exit == detail::InnerExit::Converged) {
            report.status = ConvergenceStatus::Converged;
            return report;
        }
        if (exit == detail::InnerExit::Failure || exit == detail::InnerExit::RejectionCap) {
            report.status = ConvergenceStatus::Stalled;
            report.diagnostic = diagnostic;
            return report;
        }
        if (cfg.mode != SolverMode::LMAnnealed) {
            report.status = ConvergenceStatus::Stalled;
            report.diagnostic = exit == detail::InnerExit::IterationCap ? "iteration cap reached"
                                                                         : "relative variation of |F| below rel_var_tol";
            return report;
        }
        if (anneal.l >= cfg.l_max) {
            report.status = ConvergenceStatus::Stalled;
            report.diagnostic = "no feasible solution found after l_max = " + std::to_string(cfg.l_max) +
                                " optimization problems";
            return report;
        }
        anneal = anneal_update(fnorm, anneal, cfg.anneal_orders);
    }
}

/// Dispatches on cfg.mode.
inline ConvergenceReport solve(const ShootingProblem& problem, const SolverConfig& cfg,
                               const IterationObserver& observer = {}) {
    if (cfg.mode == SolverMode::MN) return solve_mn(problem, cfg, observer);
    return solve_lm(problem, cfg, AnnealState{0.0, 0.0, cfg.xi0, 1}, observer);
}

}  // namespace cislunar
