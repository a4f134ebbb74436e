#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cislunar/cr3bp.hpp"
#include "cislunar/integrate.hpp"

using namespace cislunar;

namespace {

// Independent evaluation of the potential straight from its definition.
double oracle_potential(double x, double y, double z, double mu) {
    const double r1 = std::sqrt((x + mu) * (x + mu) + y * y + z * z);
    const double r2 = std::sqrt((x - 1 + mu) * (x - 1 + mu) + y * y + z * z);
    return 0.5 * (x * x + y * y) + (1 - mu) / r1 + mu / r2;
}

Cr3bpSystem sys_01215() { return Cr3bpSystem(0.01215, 384400.0, 375190.0); }

Vec3 random_point(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    return Vec3(u(rng), u(rng), 0.5 * u(rng));
}

}  // namespace

TEST(Cr3bpSystem, InvariantsAndDefaults) {
    EXPECT_THROW(Cr3bpSystem(0.0, 1.0, 1.0), ConfigError);
    EXPECT_THROW(Cr3bpSystem(0.5, 1.0, 1.0), ConfigError);
    const auto em = Cr3bpSystem::earth_moon();
    EXPECT_NEAR(em.mu(), 0.01215, 1e-4);
    EXPECT_NEAR(em.char_velocity() / (em.char_length() / em.char_time()), 1.0, 1e-12);
    EXPECT_NEAR(em.gm_sum() / (gm::earth + gm::moon), 1.0, 1e-12);
}

TEST(EffectivePotential, HandValueAtHalfDu) {
    EXPECT_NEAR(effective_potential(Vec3(0.5, 0, 0), sys_01215()), 2.07874, 1e-4);
    EXPECT_NEAR(effective_potential(Vec3(0.5, 0, 0), sys_01215()), oracle_potential(0.5, 0, 0, 0.01215), 1e-14);
}

TEST(EffectivePotential, MirrorSymmetryInY) {
    const auto sys = sys_01215();
    const double up = effective_potential(Vec3(0, 1, 0), sys);
    EXPECT_NEAR(up, oracle_potential(0, 1, 0, 0.01215), 1e-14);
    EXPECT_EQ(up, effective_potential(Vec3(0, -1, 0), sys));
}

TEST(EffectivePotential, SingularityGuard) {
    const auto sys = sys_01215();
    EXPECT_THROW(effective_potential(sys.primary1(), sys), SingularityError);
    EXPECT_THROW(grad_effective_potential(sys.primary2() + Vec3(1e-13, 0, 0), sys), SingularityError);
    EXPECT_NO_THROW(effective_potential(sys.primary2() + Vec3(1e-9, 0, 0), sys));
}

TEST(GradEffectivePotential, MatchesFiniteDifferenceAtHalfDu) {
    const auto sys = sys_01215();
    const Vec3 r(0.5, 0, 0);
    const double h = 1e-6;
    const double fd = (oracle_potential(0.5 + h, 0, 0, 0.01215) - oracle_potential(0.5 - h, 0, 0, 0.01215)) / (2 * h);
    const Vec3 g = grad_effective_potential(r, sys);
    EXPECT_NEAR(g.x() / fd, 1.0, 1e-7);
    EXPECT_EQ(g.y(), 0.0);
    EXPECT_EQ(g.z(), 0.0);
}

TEST(GradEffectivePotential, MirrorSymmetry) {
    const auto sys = sys_01215();
    const Vec3 a = grad_effective_potential(Vec3(0.5, 0.1, 0.1), sys);
    const Vec3 b = grad_effective_potential(Vec3(0.5, -0.1, 0.1), sys);
    EXPECT_EQ(a.x(), b.x());
    EXPECT_EQ(a.y(), -b.y());
    EXPECT_EQ(a.z(), b.z());
}

TEST(GradEffectivePotential, GradientAndHessianMatchFiniteDifferencesAtRandomPoints) {
    const auto sys = Cr3bpSystem::earth_moon();
    std::mt19937_64 rng(42);
    int checked = 0;
    while (checked < 100) {
        const Vec3 r = random_point(rng);
        if ((r - sys.primary1()).norm() < 0.05 || (r - sys.primary2()).norm() < 0.05) continue;
        ++checked;
        const double h = 1e-5;
        const Vec3 g = grad_effective_potential(r, sys);
        const Mat3 hess = hessian_effective_potential(r, sys);
        for (int k = 0; k < 3; ++k) {
            Vec3 dr = Vec3::Zero();
            dr(k) = h;
            const double fd = (effective_potential(r + dr, sys) - effective_potential(r - dr, sys)) / (2 * h);
            EXPECT_NEAR(g(k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
            const Vec3 fd_col = (grad_effective_potential(r + dr, sys) - grad_effective_potential(r - dr, sys)) / (2 * h);
            EXPECT_LT((hess.col(k) - fd_col).norm(), 1e-6 * std::max(1.0, fd_col.norm()));
        }
        EXPECT_LT((hess - hess.transpose()).norm(), 1e-14 * hess.norm());
    }
}

TEST(Cr3bpRhs, ZeroAtL2) {
    const auto sys = Cr3bpSystem::earth_moon();
    const auto pts = collinear_points(sys);
    for (const Vec3& p : pts) {
        Vec6 x = Vec6::Zero();
        x.head<3>() = p;
        EXPECT_LT(cr3bp_rhs(x, sys).norm(), 1e-11);
    }
}

TEST(Cr3bpRhs, AtRestAccelerationIsGradient) {
    const auto sys = sys_01215();
    Vec6 x = Vec6::Zero();
    x(0) = 0.5;
    const Vec6 dx = cr3bp_rhs(State6::synodic(x), sys);
    EXPECT_EQ(dx.head<3>(), Vec3::Zero());
    EXPECT_EQ(Vec3(dx.tail<3>()), grad_effective_potential(Vec3(0.5, 0, 0), sys));
}

TEST(Cr3bpRhs, CoriolisStructure) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 a, b;
    a << 0.8, 0.1, 0.05, 0.0, 0.0, 0.01;
    b = a;
    b(3) = 0.3;
    b(4) = -0.7;
    const Vec6 da = cr3bp_rhs(a, sys), db = cr3bp_rhs(b, sys);
    EXPECT_EQ(da(5), db(5));
    EXPECT_NEAR(db(3) - da(3), 2.0 * (b(4) - a(4)), 1e-15);
    EXPECT_NEAR(db(4) - da(4), -2.0 * (b(3) - a(3)), 1e-15);
    EXPECT_THROW(cr3bp_rhs(State6::inertial(a), sys), std::invalid_argument);
}

TEST(Cr3bpVariational, StmColumnsMatchFiniteDifferenceFlow) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 x0;
    x0 << 1.12, 0.0, 0.03, 0.0, 0.18, 0.0;
    const double tf = 1.3;
    const auto [xf, phi] = propagate_with_stm(Cr3bpVariational{sys}, x0, 0.0, tf);
    const Vec6 base = propagate(Cr3bpDynamics{sys}, x0, 0.0, tf);
    EXPECT_LT((xf - base).norm(), 1e-11);
    const double eps = 1e-8;
    for (int j = 0; j < 6; ++j) {
        Vec6 xp = x0;
        xp(j) += eps;
        const Vec6 col = (propagate(Cr3bpDynamics{sys}, xp, 0.0, tf) - base) / eps;
        EXPECT_LT((col - phi.col(j)).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, phi.col(j).norm())) << "column " << j;
    }
}

TEST(Cr3bpVariational, ZeroTimeIsIdentity) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 x0;
    x0 << 0.9, 0.1, 0.0, 0.0, 0.2, 0.0;
    const auto [xf, phi] = propagate_with_stm(Cr3bpVariational{sys}, x0, 0.0, 0.0);
    EXPECT_EQ(phi, Mat6::Identity());
}

TEST(JacobiIntegral, HandValueAndIdentity) {
    const auto sys = sys_01215();
    Vec6 x = Vec6::Zero();
    x(0) = 0.5;
    EXPECT_NEAR(jacobi_integral(State6::synodic(x), sys), 4.15748, 1e-4);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 0.3);
    for (int k = 0; k < 50; ++k) {
        Vec6 s;
        s << 0.3 + n(rng), n(rng), n(rng), n(rng), n(rng), n(rng);
        const double u = effective_potential(s.head<3>(), sys);
        EXPECT_NEAR(jacobi_integral(s, sys), 2.0 * u - s.tail<3>().squaredNorm(), 1e-13 * std::max(1.0, u));
    }
}

TEST(JacobiIntegral, ConservedAlongTrajectory) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 x0;
    x0 << 1.12, 0.0, 0.03, 0.0, 0.18, 0.0;
    const double j0 = jacobi_integral(x0, sys);
    double worst = 0.0;
    propagate(Cr3bpDynamics{sys}, x0, 0.0, 15.0, IntegratorConfig{},
              [&](double, const Vec6& x) { worst = std::max(worst, std::abs(jacobi_integral(x, sys) - j0)); });
    EXPECT_LT(worst, 1e-10);
}

TEST(Cr3bpSymmetry, MirrorTimeReversal) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 x0;
    x0 << 0.95, 0.04, 0.02, 0.05, 0.1, -0.03;
    auto mirror = [](const Vec6& s) {
        Vec6 m = s;
        m(1) = -m(1);
        m(3) = -m(3);
        m(5) = -m(5);
        return m;
    };
    const Vec6 fwd = propagate(Cr3bpDynamics{sys}, mirror(x0), 0.0, 2.0);
    const Vec6 bwd = propagate(Cr3bpDynamics{sys}, x0, 0.0, -2.0);
    EXPECT_LT((fwd - mirror(bwd)).norm(), 1e-9);
}

TEST(CollinearPoints, GradientVanishesAndOrdering) {
    const auto sys = Cr3bpSystem::earth_moon();
    const auto pts = collinear_points(sys);
    for (const Vec3& p : pts) EXPECT_LT(grad_effective_potential(p, sys).norm(), 1e-11);
    EXPECT_LT(pts[0].x(), 1.0 - sys.mu());
    EXPECT_GT(pts[1].x(), 1.0 - sys.mu());
    EXPECT_LT(pts[2].x(), -sys.mu());
    const auto pts2 = collinear_points(sys_01215());
    for (const Vec3& p : pts2) EXPECT_LT(grad_effective_potential(p, sys_01215()).norm(), 1e-11);
}

TEST(CollinearPoints, HillAsymptoticForSmallMassRatio) {
    const Cr3bpSystem sys(1e-8, 1.0, 1.0);
    const auto pts = collinear_points(sys);
    const double rh = std::cbrt(1e-8 / 3.0);
    EXPECT_NEAR(pts[0].x(), 1.0 - rh, 1e-3);
    EXPECT_NEAR(pts[1].x(), 1.0 + rh, 1e-3);
    // Sharper: the offsets from the secondary agree with the Hill radius to first order.
    EXPECT_NEAR((1.0 - sys.mu() - pts[0].x()) / rh, 1.0, 1e-2);
    EXPECT_NEAR((pts[1].x() - 1.0 + sys.mu()) / rh, 1.0, 1e-2);
}
