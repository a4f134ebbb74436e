#include <gtest/gtest.h>

#include <limits>

#include "cislunar/core.hpp"

using namespace cislunar;

TEST(State6, SynodicStateCarriesNondimensionalUnits) {
    const State6 s = State6::synodic(Vec3(1, 2, 3), Vec3(4, 5, 6));
    EXPECT_EQ(s.frame(), Frame::Synodic);
    EXPECT_EQ(s.units(), Units::Nondimensional);
    EXPECT_EQ(s.r(), Vec3(1, 2, 3));
    EXPECT_EQ(s.v(), Vec3(4, 5, 6));
}

TEST(State6, MixingFrameAndUnitsIsRejected) {
    const Vec6 x = Vec6::Ones();
    EXPECT_THROW(State6(x, Frame::Synodic, Units::Dimensional), std::invalid_argument);
    EXPECT_THROW(State6(x, Frame::Inertial, Units::Nondimensional), std::invalid_argument);
    EXPECT_NO_THROW(State6(x, Frame::Inertial, Units::Dimensional));
}

TEST(State6, NonFiniteComponentsAreRejected) {
    Vec6 x = Vec6::Zero();
    x(4) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(State6::synodic(x), std::invalid_argument);
    x(4) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(State6::inertial(x), std::invalid_argument);
}

TEST(StmPacking, RoundTripIsRowMajor) {
    Mat6 phi;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) phi(i, j) = 10 * i + j;
    Vec6 x;
    x << 1, 2, 3, 4, 5, 6;
    const Vec42 y = pack_state_stm(x, phi);
    EXPECT_EQ(y.head<6>(), x);
    EXPECT_EQ(y(6 + 1), phi(0, 1));
    EXPECT_EQ(y(6 + 6), phi(1, 0));
    EXPECT_EQ(unpack_stm(y), phi);
}

TEST(StmPacking, VariationalDerivativeIsAPhi) {
    Mat6 a = Mat6::Random();
    Mat6 phi = Mat6::Random();
    Vec6 f = Vec6::Random();
    const Vec42 y = pack_state_stm(Vec6::Zero(), phi);
    const Vec42 dy = pack_variational(f, a, y);
    EXPECT_EQ(dy.head<6>(), f);
    EXPECT_TRUE(unpack_stm(dy).isApprox(a * phi, 1e-15));
}

TEST(Errors, ParseAndConfigErrorsCarryContext) {
    const ParseError pe("bad number", 7);
    EXPECT_EQ(pe.line, 7);
    EXPECT_NE(std::string(pe.what()).find("line 7"), std::string::npos);
    const ConfigError ce("alpha", "must lie in (0, 1)");
    EXPECT_EQ(ce.field, "alpha");
    EXPECT_NE(std::string(ce.what()).find("alpha"), std::string::npos);
}
