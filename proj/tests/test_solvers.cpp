#include <gtest/gtest.h>

#include <random>

#include "cislunar/solvers.hpp"

using namespace cislunar;

namespace {

const Cr3bpSystem& earth_moon() {
    static const Cr3bpSystem sys = Cr3bpSystem::from_gm(gm::earth, gm::moon, 384400.0);
    return sys;
}

const PeriodicOrbit& halo() {
    static const PeriodicOrbit orbit = halo_with_amplitude(27900.0 / 384400.0, earth_moon());
    return orbit;
}

ShootingProblem halo_problem(bool eccentric, int revs) {
    std::shared_ptr<const EphemerisProvider> eph =
        eccentric ? std::make_shared<KeplerianEphemeris>(KeplerianEphemeris::standard())
                  : std::make_shared<KeplerianEphemeris>(KeplerianEphemeris::circular());
    std::vector<BodyId> bodies{BodyId::Moon};
    if (eccentric) bodies.push_back(BodyId::Sun);
    auto ctx = std::make_shared<const HfemContext>(eph, bodies);
    return build_initial_guess(equal_time_points(halo(), earth_moon(), revs, 4), 0.0, earth_moon(), ctx);
}

MatX random_matrix(int rows, int cols, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> d;
    MatX m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = d(gen);
    return m;
}

double cosine(const VecX& a, const VecX& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

// ---------------------------------------------------------------------------
// Update steps
// ---------------------------------------------------------------------------

TEST(MnStep, SingleRowExample) {
    MatX J(1, 2);
    J << 1, 0;
    VecX F(1);
    F << 2;
    const VecX dx = mn_step(J, F);
    EXPECT_NEAR(dx(0), -2.0, 1e-15);
    EXPECT_NEAR(dx(1), 0.0, 1e-15);
}

TEST(MnStep, IdentityJacobianNegatesResidual) {
    const VecX F = VecX::LinSpaced(6, -1.0, 2.0);
    EXPECT_LT((mn_step(MatX::Identity(6, 6), F) + F).norm(), 1e-15);
}

TEST(MnStep, IsTheSmallestFeasibleStep) {
    const MatX J = random_matrix(4, 9, 7);
    const VecX F = random_matrix(4, 1, 8).col(0);
    const VecX dx = mn_step(J, F);
    EXPECT_LT((J * dx + F).norm(), 1e-12);
    const Eigen::FullPivLU<MatX> lu(J);
    const MatX null = lu.kernel();
    std::mt19937 gen(3);
    std::normal_distribution<double> d;
    for (int trial = 0; trial < 20; ++trial) {
        VecX c(null.cols());
        for (int i = 0; i < c.size(); ++i) c(i) = d(gen);
        const VecX other = dx + 0.1 * null * c;
        EXPECT_LT((J * other + F).norm(), 1e-10);
        EXPECT_GT(other.norm(), dx.norm());
    }
}

TEST(MnStep, RejectsRankDeficientJacobian) {
    MatX J(2, 3);
    J << 1, 2, 3, 2, 4, 6;
    EXPECT_THROW(mn_step(J, VecX::Ones(2)), RankDeficiencyError);
}

TEST(LmStep, ScalarExample) {
    MatX J(1, 1);
    J << 1;
    VecX F(1), E(1);
    F << 1;
    E << 0;
    EXPECT_NEAR(lm_step(J, F, E, VecX(), 1.0, 1.0)(0), -0.5, 1e-15);
}

TEST(LmStep, MatchesNormalEquations) {
    const MatX J = random_matrix(6, 12, 11);
    const VecX F = random_matrix(6, 1, 12).col(0);
    const VecX E = random_matrix(12, 1, 13).col(0);
    VecX q = VecX::Zero(12);
    q.head<3>().setConstant(2.0);
    const double xi = 3.0, beta = 0.25;
    MatX a = xi * J.transpose() * J;
    a.diagonal() += q + VecX::Constant(12, beta);
    const VecX expected = -a.ldlt().solve(xi * J.transpose() * F + q.cwiseProduct(E));
    EXPECT_LT((lm_step(J, F, E, q, xi, beta) - expected).norm(), 1e-12 * expected.norm());
}

TEST(LmStep, SmallDampingRecoversMinimumNorm) {
    const MatX J = random_matrix(6, 12, 21);
    const VecX F = random_matrix(6, 1, 22).col(0);
    const VecX mn = mn_step(J, F);
    const VecX lm = lm_step(J, F, VecX::Zero(12), VecX(), 1.0, 1e-12);
    EXPECT_LT((lm - mn).norm(), 1e-6 * mn.norm());
}

TEST(LmStep, LargeDampingFollowsNegativeGradient) {
    const MatX J = random_matrix(6, 12, 31);
    const VecX F = random_matrix(6, 1, 32).col(0);
    const VecX E = random_matrix(12, 1, 33).col(0);
    const VecX q = VecX::Constant(12, 0.5);
    const double xi = 2.0;
    const VecX g = xi * J.transpose() * F + q.cwiseProduct(E);
    EXPECT_GT(cosine(lm_step(J, F, E, q, xi, 1e12), -g), 1.0 - 1e-9);
}

TEST(LmStep, ValidatesArguments) {
    const MatX J = MatX::Identity(2, 2);
    EXPECT_THROW(lm_step(J, VecX::Ones(3), VecX::Zero(2), VecX(), 1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(lm_step(J, VecX::Ones(2), VecX::Zero(2), VecX::Ones(3), 1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(lm_step(J, VecX::Ones(2), VecX::Zero(2), VecX(), 1.0, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Annealing
// ---------------------------------------------------------------------------

TEST(Anneal, XiFormula) {
    EXPECT_DOUBLE_EQ(compute_xi(1.0, 0.0, 0.0), 0.5);
    EXPECT_NEAR(compute_xi(0.0, 1e-4, 1e-2), 2500.0, 1e-9);
    // Central difference of G(u) = log(sqrt(u + delta) + epsilon).
    const double u = 0.3, delta = 0.01, eps = 0.05, h = 1e-6;
    auto G = [&](double x) { return std::log(std::sqrt(x + delta) + eps); };
    EXPECT_NEAR(compute_xi(u, delta, eps), (G(u + h) - G(u - h)) / (2 * h), 1e-7);
}

TEST(Anneal, UpdateSetsDeltaAndEpsilonTwoDecadesDown) {
    const AnnealState s = anneal_update(1e-2, AnnealState{}, 2);
    EXPECT_NEAR(s.delta, 1e-6, 1e-20);
    EXPECT_NEAR(s.epsilon, 1e-4, 1e-18);
    EXPECT_EQ(s.l, 2);
    EXPECT_DOUBLE_EQ(s.xi, compute_xi(1e-4, s.delta, s.epsilon));
}

TEST(Anneal, XiGrowsAsResidualShrinks) {
    double prev = 0.0;
    for (double f : {1.0, 1e-1, 1e-3, 1e-6, 1e-9}) {
        const double xi = anneal_update(f, AnnealState{}, 2).xi;
        EXPECT_GT(xi, prev);
        prev = xi;
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(SolverConfig, ValidationNamesTheField) {
    auto field_of = [](SolverConfig c) {
        try {
            c.validate(12);
        } catch (const ConfigError& e) {
            return e.field;
        }
        return std::string();
    };
    SolverConfig c;
    EXPECT_EQ(field_of(c), "");
    c.alpha = 1.0;
    EXPECT_EQ(field_of(c), "alpha");
    c = {};
    c.eta = 0.9;
    EXPECT_EQ(field_of(c), "eta");
    c = {};
    c.beta0 = 0.0;
    EXPECT_EQ(field_of(c), "beta0");
    c = {};
    c.q = VecX::Ones(5);
    EXPECT_EQ(field_of(c), "q");
    c = {};
    c.sigma = -1.0;
    EXPECT_EQ(field_of(c), "sigma");
    EXPECT_EQ(solver_mode_from_string("lm-annealed"), SolverMode::LMAnnealed);
    try {
        solver_mode_from_string("newton");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field, "solver");
    }
}

// ---------------------------------------------------------------------------
// Iterations
// ---------------------------------------------------------------------------

TEST(Solve, CircularGuessConvergesImmediately) {
    const auto prob = halo_problem(false, 10);
    for (auto mode : {SolverMode::MN, SolverMode::LM}) {
        SolverConfig cfg;
        cfg.mode = mode;
        const auto rep = solve(prob, cfg);
        EXPECT_EQ(rep.status, ConvergenceStatus::Converged) << to_string(mode);
        EXPECT_LE(rep.iterations(), 2);
        EXPECT_LT(rep.final_fnorm, 1e-12);
    }
}

TEST(Solve, MnStepsAreLinearlyFeasible) {
    const auto prob = halo_problem(true, 3);
    SolverConfig cfg;
    cfg.mode = SolverMode::MN;
    const auto rep = solve(prob, cfg);
    ASSERT_EQ(rep.status, ConvergenceStatus::Converged);
    for (const auto& r : rep.records) {
        if (r.k > 0) EXPECT_LT(r.lin_residual, 1e-10);
    }
    EXPECT_LT(prob.residual(rep.X).norm(), 1e-12);
}

TEST(Solve, LmAcceptedResidualsNeverIncrease) {
    const auto prob = halo_problem(true, 10);
    const auto rep = solve(prob, SolverConfig{});
    ASSERT_EQ(rep.status, ConvergenceStatus::Converged);
    double prev = std::numeric_limits<double>::infinity();
    int rejected = 0;
    for (const auto& r : rep.records) {
        if (!r.accepted) {
            EXPECT_GT(r.fnorm, prev);
            ++rejected;
            continue;
        }
        EXPECT_LE(r.fnorm, prev);
        prev = r.fnorm;
    }
    EXPECT_GT(rejected, 0);  // this guess needs damping on the first step
}

TEST(Solve, StartingAtASolutionTakesNoSteps) {
    const auto prob = halo_problem(true, 2);
    const auto first = solve(prob, SolverConfig{});
    ASSERT_EQ(first.status, ConvergenceStatus::Converged);
    const auto again = solve_lm(prob, SolverConfig{}, {}, {}, &first.X);
    EXPECT_EQ(again.status, ConvergenceStatus::Converged);
    EXPECT_EQ(again.iterations(), 0);
    EXPECT_EQ(again.X, first.X);
    const VecX dx = mn_step(prob.jacobian(first.X), prob.residual(first.X));
    EXPECT_LT(dx.norm(), 1e-10);
}

TEST(Solve, MnReportsDivergence) {
    const auto prob = halo_problem(true, 10);
    SolverConfig cfg;
    cfg.mode = SolverMode::MN;
    cfg.divergence_factor = 1.2;  // the first MN step on this guess raises |F| by ~1.8x
    const auto rep = solve(prob, cfg);
    EXPECT_EQ(rep.status, ConvergenceStatus::Diverged);
    EXPECT_FALSE(rep.diagnostic.empty());
}

TEST(Solve, IterationCapGivesStalled) {
    const auto prob = halo_problem(true, 3);
    SolverConfig cfg;
    cfg.mode = SolverMode::MN;
    cfg.max_inner_iters = 1;
    EXPECT_EQ(solve(prob, cfg).status, ConvergenceStatus::Stalled);
    cfg.mode = SolverMode::LM;
    EXPECT_EQ(solve(prob, cfg).status, ConvergenceStatus::Stalled);
}

TEST(Solve, AnnealingStopsAtLmax) {
    const auto prob = halo_problem(true, 3);
    SolverConfig cfg;
    cfg.mode = SolverMode::LMAnnealed;
    cfg.max_inner_iters = 1;
    cfg.l_max = 3;
    const auto rep = solve(prob, cfg);
    EXPECT_EQ(rep.status, ConvergenceStatus::Stalled);
    ASSERT_EQ(rep.anneal.size(), 3u);
    ASSERT_EQ(rep.outer_starts.size(), 3u);
    EXPECT_DOUBLE_EQ(rep.anneal[0].xi, cfg.xi0);
    for (std::size_t l = 1; l < rep.anneal.size(); ++l) {
        // The previous problem ended at the last accepted iterate before this problem's start.
        double fbar = 0.0;
        for (const auto& r : rep.records) {
            if (r.accepted && r.k <= rep.outer_starts[l]) fbar = r.fnorm;
        }
        EXPECT_NEAR(rep.anneal[l].delta, fbar * fbar * 1e-2, 1e-15 * fbar * fbar);
        EXPECT_NEAR(rep.anneal[l].epsilon, fbar * 1e-2, 1e-15 * fbar);
        EXPECT_DOUBLE_EQ(rep.anneal[l].xi, compute_xi(fbar * fbar, rep.anneal[l].delta, rep.anneal[l].epsilon));
        EXPECT_EQ(rep.anneal[l].l, static_cast<int>(l) + 1);
    }
}

TEST(Solve, RunsAreDeterministic) {
    const auto prob = halo_problem(true, 2);
    const auto a = solve(prob, SolverConfig{});
    const auto b = solve(prob, SolverConfig{});
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].fnorm, b.records[i].fnorm);
        EXPECT_EQ(a.records[i].beta, b.records[i].beta);
    }
    EXPECT_EQ(a.X, b.X);
}

TEST(Solve, ProximityWeightHoldsFirstPoint) {
    const auto prob = halo_problem(true, 3);
    SolverConfig plain;
    const auto free_run = solve(prob, plain);
    SolverConfig weighted;
    weighted.q = position_mask(prob.size(), {0});
    weighted.rel_var_tol = 0.0;
    weighted.max_inner_iters = 2000;
    const auto held = solve(prob, weighted);
    ASSERT_EQ(free_run.status, ConvergenceStatus::Converged);
    ASSERT_EQ(held.status, ConvergenceStatus::Converged);
    const auto w = default_weights(prob.size());
    EXPECT_LT(error_metrics(prob, held.X, w).ep1, 1e-3 * error_metrics(prob, free_run.X, w).ep1);
}
