#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cislunar/hfem.hpp"
#include "cislunar/integrate.hpp"

using namespace cislunar;

namespace {

std::shared_ptr<const EphemerisProvider> standard_provider() {
    return std::make_shared<KeplerianEphemeris>(KeplerianEphemeris::standard(true));
}

}  // namespace

TEST(HfemContext, Validation) {
    HfemContext ctx(standard_provider());
    EXPECT_NO_THROW(ctx.validate());
    ctx.gm[BodyId::Sun] = -1.0;
    EXPECT_THROW(ctx.validate(), ConfigError);
    ctx.gm[BodyId::Sun] = 0.0;
    EXPECT_NO_THROW(ctx.validate());
    ctx.gm[BodyId::Earth] = 0.0;
    EXPECT_THROW(ctx.validate(), ConfigError);
    EXPECT_THROW(HfemContext(nullptr), ConfigError);
}

TEST(HfemRhs, KeplerLimitClosesCircularOrbit) {
    const HfemContext ctx(standard_provider(), {});
    const double r = 7000.0;
    const double v = std::sqrt(gm::earth / r);
    const double period = 2 * std::numbers::pi * std::sqrt(r * r * r / gm::earth);
    Vec6 x0;
    x0 << r, 0, 0, 0, v, 0;
    const Vec6 xf = propagate(HfemDynamics{&ctx}, x0, 0.0, period);
    EXPECT_LT((xf - x0).head<3>().norm() / r, 1e-9);
    EXPECT_LT((xf - x0).tail<3>().norm() / v, 1e-9);
}

TEST(HfemRhs, KeplerLimitConservesEnergyOverThirtyDays) {
    const HfemContext ctx(standard_provider(), {});
    Vec6 x0;
    x0 << 42164.0, 0, 0, 0, 3.2, 0.4;
    auto energy = [](const Vec6& x) { return 0.5 * x.tail<3>().squaredNorm() - gm::earth / x.head<3>().norm(); };
    const double e0 = energy(x0);
    double worst = 0.0;
    propagate(HfemDynamics{&ctx}, x0, 0.0, 30 * seconds_per_day, IntegratorConfig{},
              [&](double, const Vec6& x) { worst = std::max(worst, std::abs(energy(x) / e0 - 1.0)); });
    EXPECT_LT(worst, 1e-9);
}

TEST(HfemRhs, LeoPerturbationIsSmallerThanDirectTerm) {
    const HfemContext ctx(standard_provider());
    const double t = 3.0 * seconds_per_day;
    const Vec3 moon_dir = ctx.provider->body_state(BodyId::Moon, t).r().normalized();
    for (double radius : {6678.0, 7000.0, 8000.0}) {
        const Vec3 r = radius * moon_dir;
        const Vec3 total = hfem_acceleration(r, t, ctx);
        const Vec3 direct = -gm::earth * r / std::pow(radius, 3);
        EXPECT_LT((total - direct).norm(), 1e-5 * direct.norm());
    }
}

TEST(HfemRhs, IndirectTermMatchesDefinition) {
    const HfemContext ctx(standard_provider());
    const double t = 11.0 * seconds_per_day;
    const Vec3 r(300000.0, 50000.0, -20000.0);
    Vec3 expected = -gm::earth * r / std::pow(r.norm(), 3);
    for (BodyId b : {BodyId::Moon, BodyId::Sun}) {
        const Vec3 rj = ctx.provider->body_state(b, t).r();
        const Vec3 d = rj - r;
        expected += ctx.gm_of(b) * (d / std::pow(d.norm(), 3) - rj / std::pow(rj.norm(), 3));
    }
    EXPECT_LT((hfem_acceleration(r, t, ctx) - expected).norm(), 1e-15 * expected.norm() + 1e-20);
}

TEST(HfemRhs, SingularityAtMoonAndEarth) {
    const HfemContext ctx(standard_provider());
    const double t = 2.0 * seconds_per_day;
    Vec6 x = Vec6::Zero();
    x.head<3>() = ctx.provider->body_state(BodyId::Moon, t).r();
    EXPECT_THROW(hfem_rhs(x, t, ctx), SingularityError);
    EXPECT_THROW(hfem_rhs(Vec6::Zero(), t, ctx), SingularityError);
    EXPECT_THROW(hfem_rhs(State6::synodic(Vec6::Ones()), t, ctx), std::invalid_argument);
}

TEST(HfemVariational, GravityGradientIsSymmetricAndTraceless) {
    const HfemContext ctx(standard_provider());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-5e5, 5e5);
    for (int k = 0; k < 50; ++k) {
        const Vec3 r(u(rng), u(rng), 0.2 * u(rng));
        const Mat3 g = hfem_gravity_gradient(r, k * 3600.0, ctx);
        const double scale = g.cwiseAbs().maxCoeff();
        EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-9 * scale);
        EXPECT_LT(std::abs(g.trace()), 1e-9 * scale);
    }
}

TEST(HfemVariational, ZeroElapsedTimeIsIdentity) {
    const HfemContext ctx(standard_provider());
    Vec6 x0;
    x0 << 400000, 10000, 5000, 0.01, 1.0, 0.1;
    const auto [xf, phi] = propagate_with_stm(HfemVariational{&ctx}, x0, 100.0, 100.0);
    EXPECT_EQ(phi, Mat6::Identity());
}

TEST(HfemVariational, StmMatchesFiniteDifferenceFlowAtRandomStates) {
    const HfemContext ctx(standard_provider());
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ur(3e5, 4.5e5), ua(0.0, 2 * std::numbers::pi), uz(-3e4, 3e4),
        uv(-0.2, 0.2);
    const double t0 = 4.0 * seconds_per_day, t1 = t0 + seconds_per_day;
    int checked = 0;
    while (checked < 20) {
        const double rad = ur(rng), ang = ua(rng);
        Vec6 x0;
        x0 << rad * std::cos(ang), rad * std::sin(ang), uz(rng), uv(rng) - std::sin(ang), uv(rng) + std::cos(ang), uv(rng);
        // Keep clear of the Moon so the arc is well conditioned.
        if ((x0.head<3>() - ctx.provider->body_state(BodyId::Moon, t0).r()).norm() < 8e4) continue;
        ++checked;
        const auto [xf, phi] = propagate_with_stm(HfemVariational{&ctx}, x0, t0, t1);
        const Vec6 base = propagate(HfemDynamics{&ctx}, x0, t0, t1);
        EXPECT_LT((xf - base).head<3>().norm(), 1e-6);
        for (int j = 0; j < 6; ++j) {
            const double eps = j < 3 ? 1e-6 * 1e3 : 1e-6;  // km for position, km/s for velocity scale
            Vec6 xp = x0, xm = x0;
            xp(j) += eps;
            xm(j) -= eps;
            const Vec6 col = (propagate(HfemDynamics{&ctx}, xp, t0, t1) - propagate(HfemDynamics{&ctx}, xm, t0, t1)) / (2 * eps);
            EXPECT_LT((col - phi.col(j)).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, phi.col(j).cwiseAbs().maxCoeff()))
                << "column " << j;
        }
    }
}
