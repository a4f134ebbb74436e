#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace cislunar {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
/// State with a row-major 6x6 STM appended (6 + 36 entries).
using Vec42 = Eigen::Matrix<double, 42, 1>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Evaluation too close to a point mass.
struct SingularityError : Error {
    using Error::Error;
};

/// Epoch outside the range an ephemeris provider can serve.
struct CoverageError : Error {
    using Error::Error;
};

/// Integrator failure: step underflow, step budget exhausted or a failing right-hand side.
struct PropagationError : Error {
    using Error::Error;
};

/// Iterative procedure (root finder, corrector) did not converge.
struct ConvergenceError : Error {
    using Error::Error;
};

struct RankDeficiencyError : Error {
    using Error::Error;
};

struct DegenerateFrameError : Error {
    using Error::Error;
};

/// File cannot be opened, read or written.
struct IoError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
    int line;
};

/// Invalid configuration value; `field` names the offending key.
struct ConfigError : Error {
    ConfigError(std::string field_name, const std::string& what)
        : Error(field_name + ": " + what), field(std::move(field_name)) {}
    std::string field;
};

// ---------------------------------------------------------------------------
// State6
// ---------------------------------------------------------------------------

enum class Frame { Synodic, Inertial };
enum class Units { Nondimensional, Dimensional };

inline const char* to_string(Frame f) { return f == Frame::Synodic ? "synodic" : "inertial"; }
inline const char* to_string(Units u) { return u == Units::Nondimensional ? "DU,TU" : "km,s"; }

/**
 * @brief Spacecraft position/velocity tagged with its frame and unit system.
 *
 * The synodic frame is always nondimensional (DU, DU/TU) and the inertial
 * frame is always dimensional (km, km/s); any other pairing is rejected.
 */
class State6 {
public:
    State6(const Vec3& r, const Vec3& v, Frame frame, Units units) : frame_(frame), units_(units) {
        check_tags(frame, units);
        x_ << r, v;
        check_finite();
    }
    State6(const Vec6& x, Frame frame, Units units) : x_(x), frame_(frame), units_(units) {
        check_tags(frame, units);
        check_finite();
    }

    static State6 synodic(const Vec6& x) { return {x, Frame::Synodic, Units::Nondimensional}; }
    static State6 synodic(const Vec3& r, const Vec3& v) {
        return {r, v, Frame::Synodic, Units::Nondimensional};
    }
    static State6 inertial(const Vec6& x) { return {x, Frame::Inertial, Units::Dimensional}; }
    static State6 inertial(const Vec3& r, const Vec3& v) {
        return {r, v, Frame::Inertial, Units::Dimensional};
    }

    Vec3 r() const { return x_.head<3>(); }
    Vec3 v() const { return x_.tail<3>(); }
    const Vec6& vec() const { return x_; }
    Frame frame() const { return frame_; }
    Units units() const { return units_; }

private:
    static void check_tags(Frame f, Units u) {
        const bool ok = (f == Frame::Synodic && u == Units::Nondimensional) ||
                        (f == Frame::Inertial && u == Units::Dimensional);
        if (!ok) {
            throw std::invalid_argument(std::string("State6: frame '") + to_string(f) +
                                        "' cannot carry units '" + to_string(u) + "'");
        }
    }
    void check_finite() const {
        if (!x_.allFinite()) throw std::invalid_argument("State6: non-finite component");
    }

    Vec6 x_;
    Frame frame_;
    Units units_;
};

/// Time-tagged state sample.
struct Sample {
    double t;
    State6 x;
};

inline Mat6 unpack_stm(const Vec42& y) {
    return Eigen::Map<const Eigen::Matrix<double, 6, 6, Eigen::RowMajor>>(y.data() + 6);
}

inline Vec42 pack_state_stm(const Vec6& x, const Mat6& phi) {
    Vec42 y;
    y.head<6>() = x;
    Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>>(y.data() + 6) = phi;
    return y;
}

/// Derivative of the augmented state given the state derivative and the
/// Jacobian of the dynamics: (f, A*Phi).
inline Vec42 pack_variational(const Vec6& f, const Mat6& a, const Vec42& y) {
    Vec42 dy;
    dy.head<6>() = f;
    Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>>(dy.data() + 6) = a * unpack_stm(y);
    return dy;
}

}  // namespace cislunar
