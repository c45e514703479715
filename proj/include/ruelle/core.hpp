#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ruelle {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using IntMat2 = Eigen::Matrix<std::int64_t, 2, 2>;
using IntVec2 = Eigen::Matrix<std::int64_t, 2, 1>;
using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Error hierarchy. The three bases map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class NumericalFailure : public Error {
public:
    using Error::Error;
};
class CheckFailed : public Error {
public:
    using Error::Error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};

#define RUELLE_ERROR(Name, Base)       \
    class Name : public Base {         \
    public:                            \
        using Base::Base;              \
    };

RUELLE_ERROR(PreconditionViolated, ConfigError)
RUELLE_ERROR(PerturbationTooLarge, ConfigError)
RUELLE_ERROR(ConeViolation, CheckFailed)
RUELLE_ERROR(OrbitLeftDomain, NumericalFailure)
RUELLE_ERROR(DegenerateDirection, NumericalFailure)
RUELLE_ERROR(NonHyperbolicMatrix, ConfigError)
RUELLE_ERROR(NewtonDiverged, NumericalFailure)
RUELLE_ERROR(SingularLinearization, NumericalFailure)
RUELLE_ERROR(CollisionDetected, NumericalFailure)
RUELLE_ERROR(OrientationNotTrivial, CheckFailed)
RUELLE_ERROR(InequalityViolated, CheckFailed)
RUELLE_ERROR(BudgetExceeded, NumericalFailure)
RUELLE_ERROR(EmptyFixedSet, NumericalFailure)
RUELLE_ERROR(CrossCheckFailed, CheckFailed)
RUELLE_ERROR(EigenSolverFailure, NumericalFailure)
RUELLE_ERROR(SupportMarginViolated, NumericalFailure)
RUELLE_ERROR(EmptyConstraintSet, NumericalFailure)
RUELLE_ERROR(GridTooCoarse, ConfigError)
RUELLE_ERROR(SingularResolvent, NumericalFailure)
RUELLE_ERROR(MissingArtifacts, ConfigError)

#undef RUELLE_ERROR

inline void require(bool cond, const std::string& what) {
    if (!cond) throw PreconditionViolated(what);
}

// Neumaier compensated summation.
template <class T = double>
class CompensatedSum {
public:
    void add(T v) {
        T t = sum_ + v;
        if constexpr (std::is_same_v<T, double>) {
            if (std::abs(sum_) >= std::abs(v))
                comp_ += (sum_ - t) + v;
            else
                comp_ += (v - t) + sum_;
        } else {
            comp_ += (std::abs(sum_) >= std::abs(v)) ? (sum_ - t) + v : (v - t) + sum_;
        }
        sum_ = t;
    }
    T value() const { return sum_ + comp_; }

private:
    T sum_{};
    T comp_{};
};

inline double wrap01(double t) {
    double r = t - std::floor(t);
    return r >= 1.0 ? 0.0 : r;
}
inline Vec2 wrap01(const Vec2& x) { return {wrap01(x[0]), wrap01(x[1])}; }

// Representative of t mod 1 in [-1/2, 1/2).
inline double wrap_sym(double t) { return t - std::floor(t + 0.5); }
inline Vec2 wrap_sym(const Vec2& x) { return {wrap_sym(x[0]), wrap_sym(x[1])}; }

inline double torus_distance(const Vec2& a, const Vec2& b) { return wrap_sym(Vec2(a - b)).norm(); }

// Angle of a line direction, reduced to [0, pi).
// Flips v into the upper half plane first, so line_angle(-v) == line_angle(v) exactly.
inline double line_angle(const Vec2& v) {
    const bool flip = v[1] < 0 || (v[1] == 0 && v[0] < 0);
    const double a = flip ? std::atan2(-v[1], -v[0]) : std::atan2(v[1], v[0]);
    return a >= kPi ? 0.0 : a;
}

// Reduce an angle difference to (-pi/2, pi/2]; lines have period pi.
inline double line_angle_diff(double a) {
    a = std::fmod(a, kPi);
    if (a <= -kPi / 2) a += kPi;
    if (a > kPi / 2) a -= kPi;
    return a;
}

inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

// Sign-normalized unit vector: first nonzero component positive.
inline Vec2 canonical_direction(Vec2 v) {
    double n = v.norm();
    if (!(n > 0)) return v;
    v /= n;
    if (v[0] < 0 || (v[0] == 0 && v[1] < 0)) v = -v;
    return v;
}

using Rng = std::mt19937_64;

// Fibonacci lattice on [0,1)^2 with F_k points; shifted by `shift` mod 1.
inline std::vector<Vec2> fibonacci_lattice(int min_points, Vec2 shift = Vec2::Zero()) {
    std::int64_t a = 1, b = 1;
    while (b < min_points) {
        std::int64_t c = a + b;
        a = b;
        b = c;
    }
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        double u = (static_cast<double>(i) + 0.5) / static_cast<double>(b);
        double v = static_cast<double>((i * a) % b) / static_cast<double>(b) + 0.5 / static_cast<double>(b);
        pts.push_back(wrap01(Vec2(u + shift[0], v + shift[1])));
    }
    return pts;
}

// Additive recurrence with the plastic-number generator; unlike rational
// lattices it is not mapped into itself by integer toral automorphisms.
inline std::vector<Vec2> r2_sequence(int n, Vec2 shift = Vec2(0.5, 0.5)) {
    constexpr double g = 1.32471795724474602596;
    const Vec2 alpha(1.0 / g, 1.0 / (g * g));
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pts.push_back(wrap01(Vec2(shift + (i + 1.0) * alpha)));
    return pts;
}

// Least-squares line y = a + b x.
struct LineFit {
    double intercept = 0;
    double slope = 0;
    double rms_residual = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "fit_line needs at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.rms_residual = std::sqrt(ss / n);
    return f;
}

// Smooth step pieces: f(t) = exp(-1/t) for t > 0.
inline double smooth_edge(double t) { return t > 0 ? std::exp(-1.0 / t) : 0.0; }

// Compact C-infinity bump with value 1 at the center and support radius R.
struct Bump {
    Vec2 center = Vec2::Zero();
    double radius = 1.0;

    double operator()(const Vec2& x) const {
        double s = (x - center).squaredNorm() / (radius * radius);
        if (s >= 1.0) return 0.0;
        return std::exp(1.0 - 1.0 / (1.0 - s));
    }
    Vec2 gradient(const Vec2& x) const {
        Vec2 d = x - center;
        double s = d.squaredNorm() / (radius * radius);
        if (s >= 1.0) return Vec2::Zero();
        double v = std::exp(1.0 - 1.0 / (1.0 - s));
        return v * (-2.0 / (radius * radius * (1.0 - s) * (1.0 - s))) * d;
    }
};

}  // namespace ruelle
