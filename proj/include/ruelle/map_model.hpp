#pragma once

#include "ruelle/core.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <functional>
#include <optional>
#include <sstream>

namespace ruelle {

enum class DomainKind { Torus, Chart };

struct Box {
    Vec2 lo = Vec2::Zero();
    Vec2 hi = Vec2::Zero();
    bool contains(const Vec2& x) const {
        return x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1];
    }
};

struct Weight {
    std::string id = "one";
    std::function<double(const Vec2&)> fn = [](const Vec2&) { return 1.0; };
    bool vanishes_somewhere = false;  // set by constructors that can hit zero

    double operator()(const Vec2& x) const { return fn(x); }
};

inline Weight weight_one() { return {}; }

inline Weight weight_constant(double c) {
    std::ostringstream id;
    id.precision(17);
    id << "constant(" << c << ")";
    return {id.str(), [c](const Vec2&) { return c; }, c == 0.0};
}

// Torus weight c0 + sum of named trigonometric terms.
struct TrigTerm {
    std::string name;  // cos_x1 sin_x1 cos_x2 sin_x2 cos_x1px2 sin_x1px2
    double coeff = 0;
};

inline double trig_basis(const std::string& name, const Vec2& x) {
    if (name == "cos_x1") return std::cos(kTwoPi * x[0]);
    if (name == "sin_x1") return std::sin(kTwoPi * x[0]);
    if (name == "cos_x2") return std::cos(kTwoPi * x[1]);
    if (name == "sin_x2") return std::sin(kTwoPi * x[1]);
    if (name == "cos_x1px2") return std::cos(kTwoPi * (x[0] + x[1]));
    if (name == "sin_x1px2") return std::sin(kTwoPi * (x[0] + x[1]));
    throw ConfigError("unknown weight term '" + name + "'");
}

inline Weight weight_trig(double c0, std::vector<TrigTerm> terms) {
    std::ostringstream id;
    id.precision(17);
    id << "trig(" << c0;
    double amp = 0;
    for (const auto& t : terms) {
        trig_basis(t.name, Vec2::Zero());
        id << "," << t.name << ":" << t.coeff;
        amp += std::abs(t.coeff);
    }
    id << ")";
    return {id.str(),
            [c0, terms](const Vec2& x) {
                double v = c0;
                for (const auto& t : terms) v += t.coeff * trig_basis(t.name, x);
                return v;
            },
            amp >= std::abs(c0)};
}

inline Weight weight_bump(Vec2 center, double radius) {
    std::ostringstream id;
    id.precision(17);
    id << "bump(" << center[0] << "," << center[1] << "," << radius << ")";
    Bump b{center, radius};
    return {id.str(), [b](const Vec2& x) { return b(x); }, true};
}

// Torus bump: the chart bump evaluated at the nearest lift of x to the center.
inline Weight weight_torus_bump(Vec2 center, double radius) {
    require(radius <= 0.5, "torus bump radius must be at most 1/2");
    Weight w = weight_bump(center, radius);
    Bump b{center, radius};
    w.fn = [b](const Vec2& x) { return b(Vec2(b.center + wrap_sym(Vec2(x - b.center)))); };
    return w;
}

inline Weight weight_floor(const Weight& g, int n) {
    require(n >= 1, "weight_floor needs n >= 1");
    const double inv = 1.0 / n;
    return {"floor(" + g.id + "," + std::to_string(n) + ")",
            [g, inv](const Vec2& x) {
                double v = g(x);
                return std::sqrt(v * v + inv * inv);
            },
            false};
}

struct MapSystem {
    std::string id;
    int dim = 2;
    DomainKind domain = DomainKind::Torus;
    Box chart_box;       // V
    Box isolating_box;   // V', orbits must stay inside
    std::function<Vec2(const Vec2&)> forward;
    std::function<Vec2(const Vec2&)> inverse;
    std::function<Mat2(const Vec2&)> jacobian;
    Weight weight;
    double smoothness = std::numeric_limits<double>::infinity();
    int stable_dim = 1;
    int unstable_dim = 1;

    double eps = 0;
    std::uint64_t seed = 0;
    // Torus maps: integer matrix of the homotopy class and the lift R^2 -> R^2.
    std::optional<IntMat2> linear_part;
    std::function<Vec2(const Vec2&)> lift;
    // Same model at another perturbation size (used by continuation).
    std::function<MapSystem(double)> family;

    bool is_torus() const { return domain == DomainKind::Torus; }

    Vec2 iterate(Vec2 x, int m) const {
        for (int k = 0; k < m; ++k) {
            x = forward(x);
            check_in_domain(x);
        }
        return x;
    }

    void check_in_domain(const Vec2& x) const {
        if (!is_torus() && !isolating_box.contains(x)) {
            std::ostringstream os;
            os << id << ": orbit left the isolating box at (" << x[0] << ", " << x[1] << ")";
            throw OrbitLeftDomain(os.str());
        }
    }
};

inline MapSystem with_weight(MapSystem sys, Weight w) {
    sys.weight = std::move(w);
    if (sys.family) {
        auto fam = sys.family;
        auto wt = sys.weight;
        sys.family = [fam, wt](double e) {
            MapSystem s = fam(e);
            s.weight = wt;
            return s;
        };
    }
    return sys;
}

inline Mat2 to_double(const IntMat2& a) { return a.cast<double>(); }

inline MapSystem builtin_cat_map() {
    IntMat2 ai;
    ai << 2, 1, 1, 1;
    const Mat2 a = to_double(ai);
    const Mat2 ainv = a.inverse();
    MapSystem s;
    s.id = "cat";
    s.linear_part = ai;
    s.lift = [a](const Vec2& x) -> Vec2 { return a * x; };
    s.forward = [a](const Vec2& x) -> Vec2 { return wrap01(Vec2(a * x)); };
    s.inverse = [ainv](const Vec2& x) -> Vec2 { return wrap01(Vec2(ainv * x)); };
    s.jacobian = [a](const Vec2&) { return a; };
    s.family = [](double) { return builtin_cat_map(); };
    return s;
}

inline constexpr double kMaxTorusEps = 0.05;

// x -> A x + eps * (sin 2pi(x2 + a), sin 2pi(x1 + x2 + b)) - shift, with the
// phases (a, b) drawn from `seed` (seed 0 gives a = b = 0). The constant
// shift keeps the origin fixed for every seed.
inline MapSystem builtin_perturbed_cat(double eps, std::uint64_t seed = 0) {
    if (!(std::abs(eps) <= kMaxTorusEps)) {
        std::ostringstream os;
        os << "perturbation " << eps << " exceeds " << kMaxTorusEps;
        throw PerturbationTooLarge(os.str());
    }
    double pa = 0, pb = 0;
    if (seed != 0) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        pa = u(rng);
        pb = u(rng);
    }
    IntMat2 ai;
    ai << 2, 1, 1, 1;
    const Mat2 a = to_double(ai);
    const Mat2 ainv = a.inverse();
    const double sa = std::sin(kTwoPi * pa), sb = std::sin(kTwoPi * pb);

    auto lift = [a, eps, pa, pb, sa, sb](const Vec2& x) -> Vec2 {
        Vec2 p(std::sin(kTwoPi * (x[1] + pa)) - sa, std::sin(kTwoPi * (x[0] + x[1] + pb)) - sb);
        return a * x + eps * p;
    };
    auto jac = [a, eps, pa, pb](const Vec2& x) -> Mat2 {
        const double c1 = kTwoPi * std::cos(kTwoPi * (x[1] + pa));
        const double c2 = kTwoPi * std::cos(kTwoPi * (x[0] + x[1] + pb));
        Mat2 d;
        d << 0, c1, c2, c2;
        return a + eps * d;
    };

    MapSystem s;
    s.id = "perturbed_cat";
    s.eps = eps;
    s.seed = seed;
    s.linear_part = ai;
    s.lift = lift;
    s.forward = [lift](const Vec2& x) -> Vec2 { return wrap01(lift(x)); };
    s.jacobian = jac;
    s.inverse = [lift, jac, ainv](const Vec2& x) -> Vec2 {
        Vec2 y = ainv * x;
        for (int it = 0; it < 50; ++it) {
            Vec2 r = wrap_sym(Vec2(lift(y) - x));
            if (r.lpNorm<Eigen::Infinity>() < 1e-15) return wrap01(y);
            y -= jac(y).inverse() * r;
        }
        Vec2 r = wrap_sym(Vec2(lift(y) - x));
        if (r.lpNorm<Eigen::Infinity>() > 1e-13) throw NewtonDiverged("perturbed_cat inverse did not converge");
        return wrap01(y);
    };
    s.family = [seed](double e) { return builtin_perturbed_cat(e, seed); };
    return s;
}

// Closed double cone given by a sector of line directions.
struct Sector {
    double center = 0;      // radians, line direction (mod pi)
    double half_angle = 0;  // radians, in (0, pi/2)

    // Angular distance of a line direction beyond the sector edge; <= 0 inside.
    double excess(double angle) const { return std::abs(line_angle_diff(angle - center)) - half_angle; }
    bool contains(const Vec2& v) const { return excess(line_angle(v)) <= 0; }
};

class Polarization {
public:
    Polarization(Sector plus, Sector minus) : plus_(plus), minus_(minus) {
        if (!(plus.half_angle > 0 && minus.half_angle > 0 && plus.half_angle < kPi / 2 &&
              minus.half_angle < kPi / 2))
            throw ConeViolation("polarization sectors need half-angles in (0, pi/2)");
        if (gap() <= 0) throw ConeViolation("polarization cones overlap");
    }

    const Sector& plus() const { return plus_; }
    const Sector& minus() const { return minus_; }

    // Angular gap between the two cones.
    double gap() const {
        return std::abs(line_angle_diff(plus_.center - minus_.center)) - plus_.half_angle - minus_.half_angle;
    }

    // Smooth cutoffs on directions; phi_plus + phi_minus = 1.
    double phi_plus(const Vec2& xi) const { return phi_plus_angle(line_angle(xi)); }
    double phi_minus(const Vec2& xi) const { return 1.0 - phi_plus(xi); }
    double phi(int sigma, const Vec2& xi) const { return sigma > 0 ? phi_plus(xi) : phi_minus(xi); }

    double phi_plus_angle(double a) const {
        const double dp = std::max(0.0, plus_.excess(a));
        const double dm = std::max(0.0, minus_.excess(a));
        const double ep = smooth_edge(dm), em = smooth_edge(dp);
        if (dp <= 0) return 1.0;
        if (dm <= 0) return 0.0;
        return ep / (ep + em);
    }

    // Refined cones with half the angular margin, used by the widened cutoffs.
    Polarization refined() const {
        const double shrink = gap() / 2;
        return Polarization(Sector{plus_.center, plus_.half_angle - shrink},
                            Sector{minus_.center, minus_.half_angle - shrink}, Unchecked{});
    }

private:
    struct Unchecked {};
    Polarization(Sector plus, Sector minus, Unchecked) : plus_(plus), minus_(minus) {}

    Sector plus_;
    Sector minus_;
};

struct ChartModel {
    MapSystem sys;
    Polarization theta;
    Polarization theta_prime;
};

inline constexpr double kMaxChartEps = 0.05;
inline constexpr double kChartConeHalfAngle = 35.0 * kPi / 180.0;

inline Polarization standard_chart_polarization() {
    return Polarization(Sector{0.0, kChartConeHalfAngle}, Sector{kPi / 2, kChartConeHalfAngle});
}

// T(x, y) = (x/2 + eps p(x, y), 2y + eps q(x, y)) on R^2 with compact bumps p, q
// and weight a unit-height bump of radius `weight_radius` at the origin.
inline ChartModel builtin_chart_model(double eps, double weight_radius = 1.0, Vec2 weight_center = Vec2::Zero()) {
    if (!(std::abs(eps) <= kMaxChartEps)) {
        std::ostringstream os;
        os << "chart perturbation " << eps << " exceeds " << kMaxChartEps;
        throw PerturbationTooLarge(os.str());
    }
    const Bump bp{Vec2(0.4, -0.3), 1.2};
    const Bump bq{Vec2(-0.2, 0.5), 1.2};
    auto fwd = [eps, bp, bq](const Vec2& x) -> Vec2 { return {0.5 * x[0] + eps * bp(x), 2.0 * x[1] + eps * bq(x)}; };
    auto jac = [eps, bp, bq](const Vec2& x) -> Mat2 {
        Mat2 d;
        d << 0.5, 0.0, 0.0, 2.0;
        d.row(0) += eps * bp.gradient(x).transpose();
        d.row(1) += eps * bq.gradient(x).transpose();
        return d;
    };
    MapSystem s;
    s.id = "chart";
    s.domain = DomainKind::Chart;
    s.eps = eps;
    s.chart_box = Box{Vec2(-1.5, -1.5), Vec2(1.5, 1.5)};
    s.isolating_box = Box{Vec2(-6, -6), Vec2(6, 6)};
    s.forward = fwd;
    s.jacobian = jac;
    s.inverse = [fwd, jac](const Vec2& x) -> Vec2 {
        Vec2 y(2.0 * x[0], 0.5 * x[1]);
        for (int it = 0; it < 50; ++it) {
            Vec2 r = fwd(y) - x;
            if (r.lpNorm<Eigen::Infinity>() < 1e-15) return y;
            y -= jac(y).inverse() * r;
        }
        if ((fwd(y) - x).lpNorm<Eigen::Infinity>() > 1e-12) throw NewtonDiverged("chart inverse did not converge");
        return y;
    };
    s.weight = weight_bump(weight_center, weight_radius);
    s.family = [weight_radius, weight_center](double e) {
        return builtin_chart_model(e, weight_radius, weight_center).sys;
    };
    return {s, standard_chart_polarization(), standard_chart_polarization()};
}

// Chart system for T^m (forward, inverse and Jacobian composed).
inline MapSystem iterate_system(const MapSystem& base, int m) {
    require(m >= 1, "iterate_system needs m >= 1");
    MapSystem s = base;
    s.id = base.id + "^" + std::to_string(m);
    s.forward = [base, m](const Vec2& x) {
        Vec2 y = x;
        for (int k = 0; k < m; ++k) y = base.forward(y);
        return y;
    };
    s.inverse = [base, m](const Vec2& x) {
        Vec2 y = x;
        for (int k = 0; k < m; ++k) y = base.inverse(y);
        return y;
    };
    s.jacobian = [base, m](const Vec2& x) {
        Mat2 d = Mat2::Identity();
        Vec2 y = x;
        for (int k = 0; k < m; ++k) {
            d = base.jacobian(y) * d;
            y = base.forward(y);
        }
        return d;
    };
    s.lift = nullptr;
    s.linear_part.reset();
    s.family = nullptr;
    return s;
}

inline Mat2 jacobian_cocycle(const MapSystem& sys, Vec2 x, int m) {
    require(m >= 0, "jacobian_cocycle needs m >= 0");
    Mat2 d = Mat2::Identity();
    for (int k = 0; k < m; ++k) {
        sys.check_in_domain(x);
        d = sys.jacobian(x) * d;
        x = sys.forward(x);
    }
    if (m > 0) sys.check_in_domain(x);
    return d;
}

struct SplittingField {
    std::function<Vec2(const Vec2&)> stable;
    std::function<Vec2(const Vec2&)> unstable;
    int ref_iterations = 30;
    double angle_floor = 1e-3;
};

inline SplittingField splitting_power_iteration(const MapSystem& sys, int n_ref = 30, double angle_floor = 1e-3) {
    require(n_ref >= 8, "splitting_power_iteration needs N_ref >= 8");
    const Vec2 v0(1.0, 0.0);
    SplittingField f;
    f.ref_iterations = n_ref;
    f.angle_floor = angle_floor;
    f.unstable = [sys, n_ref, v0](const Vec2& x) {
        std::vector<Vec2> back(static_cast<std::size_t>(n_ref));
        Vec2 y = x;
        for (int k = n_ref - 1; k >= 0; --k) {
            y = sys.inverse(y);
            sys.check_in_domain(y);
            back[static_cast<std::size_t>(k)] = y;
        }
        Vec2 v = v0;
        for (int k = 0; k < n_ref; ++k) {
            v = sys.jacobian(back[static_cast<std::size_t>(k)]) * v;
            double n = v.norm();
            if (!(n > 0) || !std::isfinite(n)) throw DegenerateDirection("unstable power iteration collapsed");
            v /= n;
        }
        return canonical_direction(v);
    };
    f.stable = [sys, n_ref, v0](const Vec2& x) {
        std::vector<Vec2> fwd(static_cast<std::size_t>(n_ref));
        Vec2 y = x;
        for (int k = 0; k < n_ref; ++k) {
            fwd[static_cast<std::size_t>(k)] = y;
            y = sys.forward(y);
            sys.check_in_domain(y);
        }
        Vec2 v = v0;
        for (int k = n_ref - 1; k >= 0; --k) {
            v = sys.jacobian(fwd[static_cast<std::size_t>(k)]).inverse() * v;
            double n = v.norm();
            if (!(n > 0) || !std::isfinite(n)) throw DegenerateDirection("stable power iteration collapsed");
            v /= n;
        }
        return canonical_direction(v);
    };
    return f;
}

// Both directions at x, with the transversality floor enforced.
inline std::pair<Vec2, Vec2> splitting_at(const SplittingField& f, const Vec2& x) {
    Vec2 s = f.stable(x), u = f.unstable(x);
    double sine = std::abs(s[0] * u[1] - s[1] * u[0]);
    if (sine < std::sin(f.angle_floor)) throw DegenerateDirection("stable and unstable directions nearly parallel");
    return {s, u};
}

struct HyperbolicityExponents {
    double lambda = 0;  // contraction along the stable pullback
    double nu = 0;      // expansion along the unstable direction
};

// With d_s = 1 the stable line at T^m x is pulled back by DT^{-m}; this is exact.
inline HyperbolicityExponents hyperbolicity_exponents(const MapSystem& sys, const SplittingField& split, const Vec2& x,
                                                      int m) {
    require(m >= 1, "hyperbolicity_exponents needs m >= 1");
    const Mat2 d = jacobian_cocycle(sys, x, m);
    const Vec2 xm = sys.iterate(x, m);
    const Vec2 s = split.stable(xm);
    const Vec2 u = split.unstable(x);
    const double sine = std::abs(s[0] * u[1] - s[1] * u[0]);
    if (sine < std::sin(split.angle_floor)) throw DegenerateDirection("stable and unstable directions nearly parallel");
    const Vec2 pulled = d.inverse() * s;
    return {1.0 / pulled.norm(), (d * u).norm()};
}

inline double lambda_pqm_from(const HyperbolicityExponents& e, double p, double q) {
    return std::max(std::pow(e.lambda, p), std::pow(e.nu, q));
}

inline double lambda_pqm(const MapSystem& sys, const SplittingField& split, const Vec2& x, double p, double q, int m) {
    return lambda_pqm_from(hyperbolicity_exponents(sys, split, x, m), p, q);
}

inline double unstable_jacobian(const MapSystem& sys, const SplittingField& split, const Vec2& x, int m) {
    require(m >= 1, "unstable_jacobian needs m >= 1");
    return (jacobian_cocycle(sys, x, m) * split.unstable(x)).norm();
}

// Image of the open complement of `from` under M (line directions), tested
// against `into`. Returns the margin (radians) by which the closure of the
// image stays inside; negative margin means violation.
inline double sector_image_margin(const Mat2& m, const Sector& from, const Sector& into) {
    const double a0 = from.center + from.half_angle;
    const double a1 = from.center + kPi - from.half_angle;
    double r[3];
    const double angles[3] = {a0, 0.5 * (a0 + a1), a1};
    for (int i = 0; i < 3; ++i) r[i] = line_angle_diff(line_angle(Vec2(m * unit(angles[i]))) - into.center);
    const bool monotone = (r[0] < r[1] && r[1] < r[2]) || (r[0] > r[1] && r[1] > r[2]);
    if (!monotone) return -kPi / 2;
    return into.half_angle - std::max(std::abs(r[0]), std::abs(r[2]));
}

struct ConeCheckReport {
    bool pass = true;
    double min_point_margin = std::numeric_limits<double>::infinity();   // radians
    double min_secant_margin = std::numeric_limits<double>::infinity();  // radians
    std::vector<std::string> violations;
};

// Mean of DT along the segment from y to x, so secant * (x - y) = T(x) - T(y).
// Composite Gauss: one panel is too coarse where the segment crosses a bump's
// support edge, which is smooth but not analytic.
inline Mat2 secant_matrix(const MapSystem& sys, const Vec2& x, const Vec2& y, int panels = 16) {
    using boost::math::quadrature::gauss;
    Mat2 acc = Mat2::Zero();
    const auto& nodes = gauss<double, 16>::abscissa();
    const auto& weights = gauss<double, 16>::weights();
    // Boost stores nonnegative abscissae of the symmetric rule on [-1, 1].
    for (int p = 0; p < panels; ++p)
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (int sgn : {-1, 1}) {
                if (nodes[i] == 0 && sgn < 0) continue;
                const double t = (p + 0.5 * (1.0 + sgn * nodes[i])) / panels;
                acc += 0.5 * weights[i] / panels * sys.jacobian(Vec2(y + t * (x - y)));
            }
    return acc;
}

inline ConeCheckReport cone_hyperbolicity_report(const MapSystem& sys, const Polarization& theta,
                                                 const Polarization& theta_prime, int n_samples,
                                                 std::uint64_t seed = 1) {
    require(!sys.is_torus(), "cone check needs a chart model");
    Rng rng(seed);
    std::uniform_real_distribution<double> ux(sys.chart_box.lo[0], sys.chart_box.hi[0]);
    std::uniform_real_distribution<double> uy(sys.chart_box.lo[1], sys.chart_box.hi[1]);
    ConeCheckReport rep;
    auto record = [&](double margin, const std::string& what, double& slot) {
        slot = std::min(slot, margin);
        if (margin <= 0) {
            rep.pass = false;
            rep.violations.push_back(what);
        }
    };
    for (int i = 0; i < n_samples; ++i) {
        Vec2 x(ux(rng), uy(rng));
        double mg = sector_image_margin(sys.jacobian(x).transpose(), theta.plus(), theta_prime.minus());
        std::ostringstream os;
        os << "point (" << x[0] << ", " << x[1] << ")";
        record(mg, os.str(), rep.min_point_margin);
    }
    for (int i = 0; i < n_samples; ++i) {
        Vec2 x(ux(rng), uy(rng)), y(ux(rng), uy(rng));
        double mg = sector_image_margin(secant_matrix(sys, x, y).transpose(), theta.plus(), theta_prime.minus());
        std::ostringstream os;
        os << "pair (" << x[0] << ", " << x[1] << ") (" << y[0] << ", " << y[1] << ")";
        record(mg, os.str(), rep.min_secant_margin);
    }
    return rep;
}

inline ConeCheckReport check_cone_hyperbolic(const MapSystem& sys, const Polarization& theta,
                                             const Polarization& theta_prime, int n_samples,
                                             std::uint64_t seed = 1) {
    ConeCheckReport rep = cone_hyperbolicity_report(sys, theta, theta_prime, n_samples, seed);
    if (!rep.pass) throw ConeViolation("cone condition fails at " + rep.violations.front());
    return rep;
}

}  // namespace ruelle
