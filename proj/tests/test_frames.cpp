#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cislunar/frames.hpp"

using namespace cislunar;

namespace {

// Provider with a fixed Moon state and no Sun, for geometry checks.
class FixedMoon : public EphemerisProvider {
public:
    explicit FixedMoon(Vec6 x) : x_(x) {}
    std::string id() const override { return "fixed"; }

protected:
    State6 state_impl(BodyId, double) const override { return State6::inertial(x_); }

private:
    Vec6 x_;
};

double orthonormality_error(const Mat3& r) { return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(FrameSample, AlignedMoonGivesIdentityRotation) {
    Vec6 moon;
    moon << 384400, 0, 0, 0, 1.02, 0;
    const auto fs = frame_sample(0.0, FixedMoon(moon), Cr3bpSystem::earth_moon());
    EXPECT_LT((fs.R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(fs.d, 384400.0);
}

TEST(FrameSample, RectilinearMoonIsDegenerate) {
    Vec6 moon;
    moon << 384400, 0, 0, 1.0, 0, 0;
    EXPECT_THROW(frame_sample(0.0, FixedMoon(moon), Cr3bpSystem::earth_moon()), DegenerateFrameError);
}

TEST(FrameSample, RotationValidAtRandomEpochs) {
    const auto kep = KeplerianEphemeris::standard(true);
    const auto sys = Cr3bpSystem::earth_moon();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ut(0.0, 400 * seconds_per_day);
    for (int k = 0; k < 1000; ++k) {
        const auto fs = frame_sample(ut(rng), kep, sys);
        EXPECT_LT(orthonormality_error(fs.R), 1e-12);
        EXPECT_NEAR(fs.R.determinant(), 1.0, 1e-12);
        EXPECT_GT(fs.d, 0.0);
    }
}

TEST(FrameSample, CircularEphemerisRatesAreAnalytic) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    const double n = 1.0 / sys.char_time();
    Mat3 skew;
    skew << 0, -n, 0, n, 0, 0, 0, 0, 0;
    for (double t : {0.0, 1e5, 3e6, 1.3e7}) {
        const auto fs = frame_sample(t, kep, sys);
        EXPECT_NEAR(fs.d, sys.char_length(), 1e-9);
        EXPECT_NEAR(fs.ddot, 0.0, 1e-9);
        const Mat3 exact = skew * fs.R;  // d/dt of a rotation about z at rate n
        EXPECT_LT((fs.Rdot - exact).cwiseAbs().maxCoeff(), 5e-12 * n) << "t=" << t;
        EXPECT_LT((fs.vb - sys.mu() * kep.body_state(BodyId::Moon, t).v()).norm(), 1e-15);
    }
}

TEST(FrameSample, PlainCentralDifferenceIsSecondOrder) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    const double n = 1.0 / sys.char_time();
    FrameRateOptions plain{10.0, false};
    const auto fs = frame_sample(0.0, kep, sys, plain);
    // Central difference of cos(n t) has relative truncation error (n h)^2 / 6.
    const double expected_rel = std::pow(n * 10.0, 2) / 6.0;
    const double rel = std::abs(fs.Rdot(1, 0) / n - 1.0);
    EXPECT_NEAR(rel, expected_rel, 0.1 * expected_rel);
}

TEST(TimeRate, UnitAtCharacteristicDistanceAndMonotone) {
    const auto sys = Cr3bpSystem::earth_moon();
    Vec6 moon;
    moon << sys.char_length(), 0, 0, 0, 1.0, 0;
    EXPECT_NEAR(time_rate(0.0, FixedMoon(moon), sys), 1.0, 1e-12);
    moon(0) = 0.9 * sys.char_length();
    EXPECT_GT(time_rate(0.0, FixedMoon(moon), sys), 1.0);
    const auto kep = KeplerianEphemeris::circular();
    for (double t = 0; t < 30 * seconds_per_day; t += seconds_per_day / 3) {
        EXPECT_NEAR(time_rate(t, kep, sys), 1.0, 1e-10);
    }
}

TEST(Transform, SynodicOriginMapsToBarycenter) {
    const auto kep = KeplerianEphemeris::standard();
    const auto sys = Cr3bpSystem::earth_moon();
    const double t = 2e6;
    const auto fs = frame_sample(t, kep, sys);
    const State6 s = synodic_to_inertial(State6::synodic(Vec6::Zero()), t, sys, kep);
    EXPECT_LT((s.r() - fs.rb).norm(), 1e-9);
    EXPECT_LT((s.v() - fs.vb).norm(), 1e-15);
}

TEST(Transform, RoundTripAtRandomStatesAndEpochs) {
    const auto kep = KeplerianEphemeris::standard(true);
    const auto sys = Cr3bpSystem::earth_moon();
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ut(0.0, 200 * seconds_per_day), ux(-1.5, 1.5), uv(-1.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        Vec6 x;
        x << ux(rng), ux(rng), 0.3 * ux(rng), uv(rng), uv(rng), uv(rng);
        const double t = ut(rng);
        const State6 in = synodic_to_inertial(State6::synodic(x), t, sys, kep);
        const State6 back = inertial_to_synodic(in, t, sys, kep);
        worst = std::max(worst, (back.vec() - x).norm() / x.norm());
        const State6 again = synodic_to_inertial(back, t, sys, kep);
        worst = std::max(worst, (again.vec() - in.vec()).norm() / in.vec().norm());
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Transform, CircularL2RotatesUniformly) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    const Vec3 l2 = collinear_points(sys)[1];
    const double radius = (l2.x() + sys.mu()) * sys.char_length();  // distance from Earth
    const double omega = 1.0 / sys.char_time();
    for (double t : {0.0, 5e5, 2e6}) {
        const State6 s = synodic_to_inertial(State6::synodic(l2, Vec3::Zero()), t, sys, kep);
        EXPECT_NEAR(s.r().norm() / radius, 1.0, 1e-12);
        EXPECT_NEAR(s.v().norm(), omega * radius, 1e-9);
        EXPECT_NEAR(s.r().dot(s.v()) / (s.r().norm() * s.v().norm()), 0.0, 1e-11);
    }
}

TEST(Transform, MoonAndEarthArePinnedInSynodicFrame) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    for (double t : {0.0, 7e5, 9e6}) {
        const State6 moon = inertial_to_synodic(kep.body_state(BodyId::Moon, t), t, sys, kep);
        EXPECT_LT((moon.r() - Vec3(1 - sys.mu(), 0, 0)).norm(), 1e-9);
        EXPECT_LT(moon.v().norm(), 1e-9);
        const State6 earth = inertial_to_synodic(kep.body_state(BodyId::Earth, t), t, sys, kep);
        EXPECT_LT((earth.r() - Vec3(-sys.mu(), 0, 0)).norm(), 1e-9);
        EXPECT_LT(earth.v().norm(), 1e-9);
    }
    const auto ecc = KeplerianEphemeris::standard();
    const double t = 4e6;
    const State6 moon = inertial_to_synodic(ecc.body_state(BodyId::Moon, t), t, sys, ecc);
    EXPECT_LT((moon.r() - Vec3(1 - sys.mu(), 0, 0)).norm(), 1e-9);
}

TEST(Transform, FrameTagsAreChecked) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    EXPECT_THROW(synodic_to_inertial(State6::inertial(Vec6::Ones()), 0.0, sys, kep), std::invalid_argument);
    EXPECT_THROW(inertial_to_synodic(State6::synodic(Vec6::Ones()), 0.0, sys, kep), std::invalid_argument);
}

TEST(MapRelativeTime, ZeroAndCircularIdentity) {
    const auto kep = KeplerianEphemeris::circular();
    const auto sys = Cr3bpSystem::earth_moon();
    EXPECT_EQ(map_relative_time(0.0, 0.0, kep, sys), 0.0);
    for (double tt : {0.5, 3.0, 30.0}) EXPECT_NEAR(map_relative_time(tt, 1e6, kep, sys), tt, 1e-10);
}

TEST(MapRelativeTime, MonotoneUnderEccentricEphemeris) {
    const auto kep = KeplerianEphemeris::standard();
    const auto sys = Cr3bpSystem::earth_moon();
    std::vector<double> tts;
    for (int k = 1; k <= 40; ++k) tts.push_back(0.7 * k);
    const auto ts = map_relative_times(tts, 0.0, kep, sys);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if (i > 0) {
            EXPECT_GT(ts[i], ts[i - 1]);
        }
        EXPECT_NEAR(ts[i], map_relative_time(tts[i], 0.0, kep, sys), 1e-9);
    }
}

TEST(MapRelativeTime, MatchesQuadratureOracle) {
    // dt~/dt = rate, so integrating the rate over the mapped interval must
    // recover t~.
    const auto kep = KeplerianEphemeris::standard();
    const auto sys = Cr3bpSystem::earth_moon();
    const double tau_s = 1.5e6, tt = 6.0;
    const double t = map_relative_time(tt, tau_s, kep, sys);
    const int n = 20000;  // composite Simpson over [0, t]
    const double h = t / n;
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        acc += w * time_rate(tau_s + k * h * sys.char_time(), kep, sys);
    }
    EXPECT_NEAR(acc * h / 3.0, tt, 1e-10);
}
