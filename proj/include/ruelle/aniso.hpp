#pragma once

#include "ruelle/fft.hpp"
#include "ruelle/map_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <optional>

namespace ruelle {

using CMatrix = Eigen::MatrixXcd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Dyadic cutoffs

// chi(s) = f(2 - s) / (f(2 - s) + f(s - 1)), f(t) = exp(-1/t) for t > 0.
// Equal to 1 on s <= 1, 0 on s >= 2, and chi(1.5) = 1/2.
inline double mollifier_chi(double s) {
    const double a = smooth_edge(2.0 - s), b = smooth_edge(s - 1.0);
    return a / (a + b);
}

// chi_n(r) = chi(2^-n r), chi_{-1} = 0.
inline double chi_level(int n, double r) { return n < 0 ? 0.0 : mollifier_chi(std::ldexp(r, -n)); }

inline double psi_level(int n, double r) { return chi_level(n, r) - chi_level(n - 1, r); }

// Widened annulus: 1 on supp psi_l.
inline double psi_tilde_level(int l, double r) {
    if (l == 0) return mollifier_chi(r / 2);
    return mollifier_chi(std::ldexp(r, -l - 1)) - mollifier_chi(std::ldexp(r, -l + 2));
}

struct DyadicIndex {
    int n = 0;
    int sigma = 1;  // +1 or -1

    int signed_level() const { return sigma * n; }
    std::string str() const { return "(" + std::to_string(n) + (sigma > 0 ? ",+)" : ",-)"); }
    friend bool operator==(const DyadicIndex&, const DyadicIndex&) = default;
};

// Band order used for every matrix: (0,+), (0,-), (1,+), (1,-), ...
inline std::vector<DyadicIndex> dyadic_indices(int n_max) {
    std::vector<DyadicIndex> out;
    for (int n = 0; n <= n_max; ++n) {
        out.push_back({n, 1});
        out.push_back({n, -1});
    }
    return out;
}

inline int dyadic_position(const DyadicIndex& z) { return 2 * z.n + (z.sigma > 0 ? 0 : 1); }

// psi_{Theta,n,sigma} and the widened psi~_{Theta,l,tau} for one polarization.
// phi~_+ is 0 on the refined minus cone and 1 outside the minus cone; phi~_-
// is 0 on the refined plus cone and 1 outside the plus cone.
class DyadicFamily {
public:
    explicit DyadicFamily(const Polarization& theta)
        : theta_(theta), fine_(theta.refined()), shrink_(theta.gap() / 2) {}

    const Polarization& theta() const { return theta_; }

    double phi(int sigma, const Vec2& xi) const { return theta_.phi(sigma, xi); }

    double phi_tilde(int tau, const Vec2& xi) const {
        const double a = line_angle(xi);
        const Sector& inner = tau > 0 ? fine_.minus() : fine_.plus();
        return step(inner.excess(a) / shrink_);
    }

    double psi(const DyadicIndex& z, const Vec2& xi) const {
        const double r = xi.norm();
        if (z.n == 0) return chi_level(0, r) / 2;
        const double radial = psi_level(z.n, r);
        return radial == 0.0 ? 0.0 : radial * phi(z.sigma, xi);
    }

    double psi_tilde(const DyadicIndex& z, const Vec2& xi) const {
        const double r = xi.norm();
        if (z.n == 0) return psi_tilde_level(0, r);
        const double radial = psi_tilde_level(z.n, r);
        return radial == 0.0 ? 0.0 : radial * phi_tilde(z.sigma, xi);
    }

private:
    // 0 for t <= 0, 1 for t >= 1, smooth in between.
    static double step(double t) {
        if (t <= 0) return 0.0;
        if (t >= 1) return 1.0;
        return 1.0 - mollifier_chi(1.0 + t);
    }

    Polarization theta_;
    Polarization fine_;
    double shrink_;
};

inline double dyadic_partition_eval(const Polarization& theta, int n, int sigma, const Vec2& xi) {
    return DyadicFamily(theta).psi({n, sigma}, xi);
}

inline double dyadic_partition_tilde_eval(const Polarization& theta, int l, int tau, const Vec2& xi) {
    return DyadicFamily(theta).psi_tilde({l, tau}, xi);
}

// Largest |sum_{n <= n_max, sigma} psi_{n,sigma}(xi) - 1| over a grid x grid
// sample of the square [-2^n_max, 2^n_max]^2 restricted to |xi| <= 2^n_max.
inline double partition_defect(const Polarization& theta, int n_max, int grid = 512) {
    const double R = std::ldexp(1.0, n_max);
    const DyadicFamily fam(theta);
    const auto idx = dyadic_indices(n_max);
    double worst = 0;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            const Vec2 xi(-R + 2 * R * i / (grid - 1), -R + 2 * R * j / (grid - 1));
            if (xi.norm() > R) continue;
            double s = 0;
            for (const auto& z : idx) s += fam.psi(z, xi);
            worst = std::max(worst, std::abs(s - 1));
        }
    return worst;
}

// ---------------------------------------------------------------------------
// Periodic lab box [-B, B)^2 with G points per axis. Frequencies live on the
// lattice xi = (pi / B) k, k in [-G/2, G/2); u(x) = sum_k u^_k e^{i xi_k . x}.

struct LabGrid {
    double B = 4.0;
    int G = 256;

    double h() const { return 2.0 * B / G; }
    double coord(int j) const { return -B + j * h(); }
    Vec2 point(int i0, int i1) const { return {coord(i0), coord(i1)}; }
    double dxi() const { return kPi / B; }
    Vec2 freq(int i0, int i1) const { return dxi() * Vec2(fft_freq(i0, G), fft_freq(i1, G)); }
    double max_freq() const { return dxi() * (G / 2); }
    std::size_t size() const { return static_cast<std::size_t>(G) * static_cast<std::size_t>(G); }
    std::size_t index(int i0, int i1) const {
        return static_cast<std::size_t>(i0) * static_cast<std::size_t>(G) + static_cast<std::size_t>(i1);
    }
};

struct GridFunction {
    LabGrid grid;
    std::vector<cplx> v;

    GridFunction() = default;
    explicit GridFunction(const LabGrid& g) : grid(g), v(g.size(), cplx(0, 0)) {}

    template <class F>
    static GridFunction sample(const LabGrid& g, F&& f) {
        GridFunction u(g);
        for (int i0 = 0; i0 < g.G; ++i0)
            for (int i1 = 0; i1 < g.G; ++i1) u.v[g.index(i0, i1)] = f(g.point(i0, i1));
        return u;
    }

    cplx& operator()(int i0, int i1) { return v[grid.index(i0, i1)]; }
    const cplx& operator()(int i0, int i1) const { return v[grid.index(i0, i1)]; }

    double max_abs() const {
        double m = 0;
        for (const auto& c : v) m = std::max(m, std::abs(c));
        return m;
    }
    // Trapezoid integral of |u|.
    double l1() const {
        CompensatedSum<> s;
        for (const auto& c : v) s.add(std::abs(c));
        return s.value() * grid.h() * grid.h();
    }
};

inline GridFunction operator+(GridFunction a, const GridFunction& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
    return a;
}
inline GridFunction operator*(cplx c, GridFunction a) {
    for (auto& x : a.v) x *= c;
    return a;
}

inline double max_diff(const GridFunction& a, const GridFunction& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

// FFT with the lab grid conventions; spectra are kept in FFT storage order
// and unnormalized (forward then backward multiplies by G^2).
class LabTransform {
public:
    explicit LabTransform(const LabGrid& g) : g_(g), fft_(g.G, g.G) {}

    const LabGrid& grid() const { return g_; }

    std::vector<cplx> forward(const GridFunction& u) {
        std::copy(u.v.begin(), u.v.end(), fft_.data());
        fft_.forward();
        return {fft_.data(), fft_.data() + fft_.size()};
    }

    GridFunction backward(const std::vector<cplx>& spec) {
        std::copy(spec.begin(), spec.end(), fft_.data());
        fft_.backward();
        GridFunction u(g_);
        const double s = 1.0 / static_cast<double>(g_.size());
        for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] = fft_.data()[i] * s;
        return u;
    }

    // m(D) u for a multiplier m(xi).
    template <class F>
    GridFunction apply(const GridFunction& u, F&& m) {
        auto s = forward(u);
        for (int i0 = 0; i0 < g_.G; ++i0)
            for (int i1 = 0; i1 < g_.G; ++i1) s[g_.index(i0, i1)] *= m(g_.freq(i0, i1));
        return backward(s);
    }

private:
    LabGrid g_;
    Fft2 fft_;
};

// Largest |u| on the outer frame |x|_inf > 3B/4, relative to max |u|.
inline double frame_fraction(const GridFunction& u) {
    const double lim = 0.75 * u.grid.B;
    double outer = 0;
    for (int i0 = 0; i0 < u.grid.G; ++i0)
        for (int i1 = 0; i1 < u.grid.G; ++i1) {
            const Vec2 x = u.grid.point(i0, i1);
            if (x.lpNorm<Eigen::Infinity>() > lim) outer = std::max(outer, std::abs(u(i0, i1)));
        }
    const double m = u.max_abs();
    return m > 0 ? outer / m : 0.0;
}

inline constexpr double kFrameTolerance = 1e-8;

enum class SupportPolicy { Compact, Periodic };

struct BandFunction {
    GridFunction u;
    DyadicIndex band;
    double outside_fraction = 0;  // spectral mass outside supp chi_{n+3}
};

// psi_{Theta,n,sigma}(D) u. Compact inputs must vanish on the outer frame;
// periodic inputs (plane waves on the box lattice) skip that check.
inline BandFunction band_project(const GridFunction& u, const Polarization& theta, int n, int sigma,
                                 SupportPolicy policy = SupportPolicy::Compact) {
    require(n >= 0 && (sigma == 1 || sigma == -1), "band_project needs n >= 0 and sigma = +-1");
    if (policy == SupportPolicy::Compact && frame_fraction(u) > kFrameTolerance)
        throw SupportMarginViolated("input does not vanish on the outer quarter of the box");
    const DyadicFamily fam(theta);
    LabTransform tr(u.grid);
    BandFunction out;
    out.band = {n, sigma};
    out.u = tr.apply(u, [&](const Vec2& xi) { return fam.psi({n, sigma}, xi); });
    auto spec = tr.forward(out.u);
    const double rmax = std::ldexp(2.0, n + 3);
    double inside = 0, outside = 0;
    for (int i0 = 0; i0 < u.grid.G; ++i0)
        for (int i1 = 0; i1 < u.grid.G; ++i1) {
            const double m = std::norm(spec[u.grid.index(i0, i1)]);
            (u.grid.freq(i0, i1).norm() >= rmax ? outside : inside) += m;
        }
    out.outside_fraction = inside + outside > 0 ? outside / (inside + outside) : 0.0;
    return out;
}

// Periodized inverse transform of psi_{Theta,n,sigma} on the lab grid:
// (2B)^-2 sum_k psi(xi_k) e^{i xi_k . x}.
inline GridFunction psi_hat_on_grid(const LabGrid& g, const Polarization& theta, const DyadicIndex& z) {
    const DyadicFamily fam(theta);
    std::vector<cplx> spec(g.size());
    for (int i0 = 0; i0 < g.G; ++i0)
        for (int i1 = 0; i1 < g.G; ++i1) {
            // x_j = -B + jh contributes e^{-i pi k}.
            const double sgn = ((fft_freq(i0, g.G) + fft_freq(i1, g.G)) & 1) ? -1.0 : 1.0;
            spec[g.index(i0, i1)] = sgn * fam.psi(z, g.freq(i0, i1));
        }
    LabTransform tr(g);
    GridFunction u = tr.backward(spec);
    const double s = static_cast<double>(g.size()) / (4.0 * g.B * g.B);
    for (auto& c : u.v) c *= s;
    return u;
}

// ---------------------------------------------------------------------------
// Mixed norm sup over straight admissible lines of the L1 norm along the line.

struct LineSampling {
    int directions = 17;
    int offsets = 129;
    double offset_range = -1;  // half-width of the offset range; < 0 means 3B/4
};

struct MixedNorm {
    double value = 0;
    double angle = 0;   // line direction of the maximizing line
    double offset = 0;  // signed distance of that line from the origin
};

namespace detail {

inline cplx cubic_interp(const cplx& p0, const cplx& p1, const cplx& p2, const cplx& p3, double t) {
    return 0.5 * (2.0 * p1 + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * (t * t) +
                  (3.0 * (p1 - p2) + p3 - p0) * (t * t * t));
}

// Trapezoid integral of |u| along {c n + t v}, v = (cos a, sin a), n = v
// rotated by +90 degrees. The line is parametrized by grid rows or columns
// (whichever axis it is closer to) with cubic interpolation across the other
// axis; values outside the box are zero. `stride` > 1 coarsens the rule.
inline double line_integral_abs(const GridFunction& u, double a, double c, int stride = 1) {
    const LabGrid& g = u.grid;
    const double ca = std::cos(a), sa = std::sin(a), h = g.h();
    const bool by_rows = std::abs(sa) >= std::abs(ca);
    auto sample = [&](int fixed, double pos) -> cplx {
        const double p = (pos + g.B) / h;
        const int j = static_cast<int>(std::floor(p));
        if (j < 1 || j + 2 >= g.G) return {0, 0};
        const double t = p - j;
        if (by_rows)
            return cubic_interp(u(j - 1, fixed), u(j, fixed), u(j + 1, fixed), u(j + 2, fixed), t);
        return cubic_interp(u(fixed, j - 1), u(fixed, j), u(fixed, j + 1), u(fixed, j + 2), t);
    };
    CompensatedSum<> s;
    for (int i = 0; i < g.G; i += stride) {
        const double w = g.coord(i);
        if (by_rows) {
            const double t = (w - c * ca) / sa;
            s.add(std::abs(sample(i, -c * sa + t * ca)));
        } else {
            const double t = (w + c * sa) / ca;
            s.add(std::abs(sample(i, c * ca + t * sa)));
        }
    }
    return s.value() * stride * h / (by_rows ? std::abs(sa) : std::abs(ca));
}

// Max of sampled values refined by the parabola through the best sample and
// its neighbours.
inline std::pair<double, int> refined_max(const std::vector<double>& y) {
    const auto it = std::max_element(y.begin(), y.end());
    const int k = static_cast<int>(it - y.begin());
    double best = *it;
    if (k > 0 && k + 1 < static_cast<int>(y.size())) {
        const double y0 = y[static_cast<std::size_t>(k - 1)], y1 = *it, y2 = y[static_cast<std::size_t>(k + 1)];
        const double den = y0 - 2 * y1 + y2;
        if (den < 0) {
            const double d = 0.5 * (y0 - y2) / den;
            best = std::max(best, y1 - 0.25 * (y0 - y2) * d);
        }
    }
    return {best, k};
}

inline std::vector<double> admissible_line_angles(const Polarization& theta, int n) {
    // A line is admissible when it is normal to a covector of the plus cone.
    const Sector& plus = theta.plus();
    std::vector<double> a;
    for (int i = 0; i < n; ++i) {
        const double f = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
        a.push_back(plus.center + kPi / 2 + plus.half_angle * (2 * f - 1));
    }
    return a;
}

}  // namespace detail

inline MixedNorm mixed_norm_L1F(const GridFunction& u, const Polarization& theta, const LineSampling& ls = {},
                                int stride = 1) {
    require(ls.directions >= 1 && ls.offsets >= 2, "mixed_norm_L1F needs directions >= 1 and offsets >= 2");
    const double R = ls.offset_range < 0 ? 0.75 * u.grid.B : ls.offset_range;
    MixedNorm best;
    std::vector<double> prof(static_cast<std::size_t>(ls.offsets));
    for (double a : detail::admissible_line_angles(theta, ls.directions)) {
        for (int k = 0; k < ls.offsets; ++k) {
            const double c = -R + 2 * R * k / (ls.offsets - 1);
            prof[static_cast<std::size_t>(k)] = detail::line_integral_abs(u, a, c, stride);
        }
        const auto [v, k] = detail::refined_max(prof);
        if (v > best.value) best = {v, a, -R + 2 * R * k / (ls.offsets - 1)};
    }
    return best;
}

struct YoungReport {
    double lhs = 0;       // ||A * u||_{L1(F)}
    double rhs = 0;       // ||A||_{L1} ||u||_{L1(F)}
    double a_l1 = 0;
    double u_norm = 0;
    double slack = 0;     // relative 1e-6 plus the step-halving quadrature estimate
    bool pass = false;
};

// Periodic convolution (A * u)(x) = int A(y) u(x - y) dy on the lab grid.
inline GridFunction lab_convolve(const GridFunction& A, const GridFunction& u) {
    const LabGrid& g = u.grid;
    LabTransform tr(g);
    auto a = tr.forward(A);
    auto b = tr.forward(u);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
    GridFunction c = tr.backward(a);
    // Index sums pick up an offset of G/2 because both grids start at -B.
    GridFunction out(g);
    const int half = g.G / 2;
    const double area = g.h() * g.h();
    for (int i0 = 0; i0 < g.G; ++i0)
        for (int i1 = 0; i1 < g.G; ++i1) out(i0, i1) = area * c((i0 + half) % g.G, (i1 + half) % g.G);
    return out;
}

inline YoungReport young_check(const GridFunction& A, const GridFunction& u, const Polarization& theta,
                               const LineSampling& ls = {}) {
    YoungReport r;
    const GridFunction conv = lab_convolve(A, u);
    r.a_l1 = A.l1();
    const double l1 = mixed_norm_L1F(conv, theta, ls).value;
    const double l2 = mixed_norm_L1F(conv, theta, ls, 2).value;
    const double n1 = mixed_norm_L1F(u, theta, ls).value;
    const double n2 = mixed_norm_L1F(u, theta, ls, 2).value;
    r.lhs = l1;
    r.u_norm = n1;
    r.rhs = r.a_l1 * n1;
    r.slack = 1e-6 * r.rhs + std::abs(l1 - l2) + r.a_l1 * std::abs(n1 - n2);
    r.pass = r.lhs <= r.rhs + r.slack;
    return r;
}

// ---------------------------------------------------------------------------
// h exponents and the linkage relation

struct HExponents {
    int h_plus = 0;
    int h_minus = 0;
    double sup_norm = 0;  // sup ||DT^tr xi|| over unit xi with DT^tr xi outside C'_-
    double inf_norm = 0;  // inf ||DT^tr xi|| over unit xi outside C_+
};

namespace detail {

// Points of supp(G) on a regular grid over the chart box.
inline std::vector<Vec2> weight_support_samples(const MapSystem& sys, int n) {
    std::vector<Vec2> pts;
    const Box& b = sys.chart_box;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Vec2 x(b.lo[0] + (b.hi[0] - b.lo[0]) * (i + 0.5) / n, b.lo[1] + (b.hi[1] - b.lo[1]) * (j + 0.5) / n);
            if (sys.weight(x) != 0.0) pts.push_back(x);
        }
    return pts;
}

}  // namespace detail

// Sampled sup / inf over unit covectors. The sector edges are added as limit
// points of the open constraint sets, so linear maps get the exact extrema.
inline HExponents h_exponents(const MapSystem& sys, const Polarization& theta, const Polarization& theta_prime,
                              int sphere_samples = 720, int point_grid = 21) {
    require(!sys.is_torus(), "h_exponents needs a chart model");
    const auto pts = detail::weight_support_samples(sys, point_grid);
    if (pts.empty()) throw EmptyConstraintSet("weight vanishes on every sampled point");
    double sup = 0, inf = std::numeric_limits<double>::infinity();
    bool any_sup = false, any_inf = false;
    const Sector& cm = theta_prime.minus();
    const Sector& cp = theta.plus();
    for (const Vec2& x : pts) {
        const Mat2 mt = sys.jacobian(x).transpose();
        for (int i = 0; i < sphere_samples; ++i) {
            const Vec2 xi = unit(kPi * i / sphere_samples);
            const Vec2 img = mt * xi;
            if (!cm.contains(img)) {
                any_sup = true;
                sup = std::max(sup, img.norm());
            }
            if (!cp.contains(xi)) {
                any_inf = true;
                inf = std::min(inf, img.norm());
            }
        }
        const Mat2 inv = mt.inverse();
        for (double e : {cm.center - cm.half_angle, cm.center + cm.half_angle}) {
            const Vec2 pre = (inv * unit(e)).normalized();
            sup = std::max(sup, (mt * pre).norm());
        }
        for (double e : {cp.center - cp.half_angle, cp.center + cp.half_angle})
            inf = std::min(inf, (mt * unit(e)).norm());
    }
    if (!any_sup || !any_inf) throw EmptyConstraintSet("no sampled covector meets the cone condition");
    HExponents h;
    h.sup_norm = sup;
    h.inf_norm = inf;
    h.h_plus = static_cast<int>(std::floor(std::log2(sup))) + 6;
    h.h_minus = static_cast<int>(std::floor(std::log2(inf))) - 6;
    return h;
}

// (l, tau) -> (n, sigma).
inline bool hook(const DyadicIndex& in, const DyadicIndex& out, int h_plus, int h_minus) {
    const int l = in.n, n = out.n;
    if (in.sigma > 0 && out.sigma > 0) return n <= l + h_plus;
    if (in.sigma < 0 && out.sigma < 0) return l + h_minus <= n;
    if (in.sigma > 0 && out.sigma < 0) return n >= h_minus || l >= -h_plus;
    return false;
}

// mask(out, in) = in -> out, over dyadic_indices(n_max).
inline BoolMatrix link_mask(int n_max, int h_plus, int h_minus) {
    const auto idx = dyadic_indices(n_max);
    const auto n = static_cast<Eigen::Index>(idx.size());
    BoolMatrix m(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c)
            m(r, c) = hook(idx[static_cast<std::size_t>(c)], idx[static_cast<std::size_t>(r)], h_plus, h_minus);
    return m;
}

struct BcSplit {
    BoolMatrix b;  // linked blocks
    BoolMatrix c;  // unlinked blocks
};

inline BcSplit split_masks(const BoolMatrix& linked) {
    BcSplit s;
    s.b = linked;
    s.c = linked.unaryExpr([](bool v) { return !v; });
    return s;
}

inline BoolMatrix bool_product(const BoolMatrix& a, const BoolMatrix& b) {
    require(a.cols() == b.rows(), "bool_product size mismatch");
    BoolMatrix p = BoolMatrix::Constant(a.rows(), b.cols(), false);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index k = 0; k < a.cols(); ++k)
            if (a(i, k))
                for (Eigen::Index j = 0; j < b.cols(); ++j) p(i, j) = p(i, j) || b(k, j);
    return p;
}

struct TriangularityReport {
    bool diagonal_empty = true;
    std::vector<int> diagonal_hits;  // positions in dyadic_indices order
    BoolMatrix product;
};

// Product P_J ... P_1 of linked masks; every diagonal block must vanish.
inline TriangularityReport triangularity_product_check(const std::vector<BoolMatrix>& masks) {
    require(!masks.empty(), "triangularity_product_check needs at least one factor");
    TriangularityReport r;
    r.product = masks.front();
    for (std::size_t j = 1; j < masks.size(); ++j) r.product = bool_product(masks[j], r.product);
    for (Eigen::Index i = 0; i < r.product.rows(); ++i)
        if (r.product(i, i)) {
            r.diagonal_empty = false;
            r.diagonal_hits.push_back(static_cast<int>(i));
        }
    return r;
}

// Bounding box of supp(G) sampled on the isolating box, padded by one cell;
// empty when G vanishes on every sample.
inline std::optional<Box> weight_support_box(const MapSystem& sys, int n = 401) {
    const Box& iso = sys.isolating_box;
    Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    Vec2 hi = -lo;
    const Vec2 cell = (iso.hi - iso.lo) / (n - 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Vec2 x = iso.lo + Vec2(i * cell[0], j * cell[1]);
            if (sys.weight(x) == 0.0) continue;
            lo = lo.cwiseMin(x);
            hi = hi.cwiseMax(x);
        }
    if (!(lo[0] <= hi[0])) return std::nullopt;
    return Box{lo - cell, hi + cell};
}

struct ChartFixedPoint {
    Vec2 x;
    double weight = 0;
    double det = 0;  // det(I - DT(x))
};

// Fixed points of T inside supp(G) by Newton from a seed grid over the
// support box; the flat-trace limit is sum G(x) / |det(I - DT(x))|.
inline std::vector<ChartFixedPoint> chart_fixed_points(const MapSystem& sys, int seeds = 25) {
    std::vector<ChartFixedPoint> out;
    const auto box = weight_support_box(sys);
    if (!box) return out;
    for (int i = 0; i < seeds; ++i)
        for (int j = 0; j < seeds; ++j) {
            Vec2 x = box->lo + Vec2((box->hi[0] - box->lo[0]) * (i + 0.5) / seeds, (box->hi[1] - box->lo[1]) * (j + 0.5) / seeds);
            bool converged = false;
            for (int it = 0; it < 60 && !converged; ++it) {
                const Vec2 r = sys.forward(x) - x;
                const Mat2 d = sys.jacobian(x) - Mat2::Identity();
                if (std::abs(d.determinant()) < 1e-12) break;
                const Vec2 step = d.inverse() * r;
                x -= step;
                if (!x.allFinite() || !box->contains(x)) break;
                converged = step.norm() <= 1e-14 * std::max(1.0, x.norm()) || (sys.forward(x) - x).norm() <= 1e-15;
            }
            if (!converged || sys.weight(x) == 0.0) continue;
            const bool seen = std::any_of(out.begin(), out.end(), [&](const ChartFixedPoint& f) { return (f.x - x).norm() < 1e-8; });
            if (!seen) out.push_back({x, sys.weight(x), (Mat2::Identity() - sys.jacobian(x)).determinant()});
        }
    std::sort(out.begin(), out.end(), [](const ChartFixedPoint& a, const ChartFixedPoint& b) {
        return a.x[0] != b.x[0] ? a.x[0] < b.x[0] : a.x[1] < b.x[1];
    });
    return out;
}

inline double fixed_point_trace(const std::vector<ChartFixedPoint>& fps) {
    double s = 0;
    for (const auto& f : fps) s += f.weight / std::abs(f.det);
    return s;
}

// ---------------------------------------------------------------------------
// Flat traces of diagonal blocks. With F(xi) = int G(x) e^{i xi.(T x - x)} dx,
//   tr(M_zz) = int psi^_z(T x - x) G(x) dx = (2B)^-2 sum_k psi_z(xi_k) F(xi_k)
// on the lattice xi_k = (pi / B) k. F is one type-1 NUFFT over quadrature
// nodes in supp(G), shared by every block.

struct FlatTraceOptions {
    double B = 4.0;
    int quad_points = 512;  // trapezoid nodes per axis over the support box
};

class FlatTraceTable {
public:
    FlatTraceTable(const MapSystem& sys, const Polarization& theta, int n0_max, FlatTraceOptions opt = {})
        : fam_(theta), n0_max_(n0_max), B_(opt.B) {
        require(!sys.is_torus(), "flat traces need a chart model");
        require(n0_max >= 0 && opt.quad_points >= 8, "flat traces need n0_max >= 0 and quad_points >= 8");
        const auto support = weight_support_box(sys);
        if (!support) return;  // G = 0: every trace vanishes
        const Box box = *support;
        const int q = opt.quad_points;
        const double hx = (box.hi[0] - box.lo[0]) / q, hy = (box.hi[1] - box.lo[1]) / q;
        std::vector<Vec2> theta_pts;
        std::vector<cplx> c;
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) {
                const Vec2 x(box.lo[0] + (i + 0.5) * hx, box.lo[1] + (j + 0.5) * hy);
                const double gx = sys.weight(x);
                if (gx == 0.0) continue;
                const Vec2 d = sys.forward(x) - x;
                max_displacement_ = std::max(max_displacement_, d.lpNorm<Eigen::Infinity>());
                theta_pts.push_back(-(kPi / B_) * d);
                c.emplace_back(gx * hx * hy, 0.0);
            }
        // Modes must cover supp chi_{n0_max} = |xi| < 2^{n0_max + 1}.
        const int kmax = static_cast<int>(std::ceil(std::ldexp(2.0, n0_max) * B_ / kPi)) + 1;
        K_ = fft_friendly_even(2 * kmax + 2);
        Nufft2d nu(K_);
        F_ = nu.type1(theta_pts, c);
    }

    int n0_max() const { return n0_max_; }
    int modes() const { return K_; }
    // Largest |T x - x| on supp(G); the lattice sum periodizes with period 2B.
    double max_displacement() const { return max_displacement_; }

    double block(const DyadicIndex& z) const {
        require(z.n <= n0_max_, "flat trace band above the table limit");
        if (F_.empty()) return 0.0;
        return lattice_sum(std::ldexp(2.0, z.n), [&](const Vec2& xi) { return fam_.psi(z, xi); });
    }

    double partial_sum(int n0) const {
        double s = 0;
        for (int n = 0; n <= n0; ++n) s += block({n, 1}) + block({n, -1});
        return s;
    }

    // int chi^_{n0}(T x - x) G(x) dx from the chi_{n0} multiplier directly.
    double chi_integral(int n0) const {
        require(n0 <= n0_max_, "chi integral above the table limit");
        if (F_.empty()) return 0.0;
        return lattice_sum(std::ldexp(2.0, n0), [&](const Vec2& xi) { return chi_level(n0, xi.norm()); });
    }

    static int fft_friendly_even(int n) {
        for (int m = n + (n & 1);; m += 2) {
            int r = m;
            for (int p : {2, 3, 5}) while (r % p == 0) r /= p;
            if (r == 1) return m;
        }
    }

private:
    // Sum over lattice points inside the multiplier support |xi| < radius.
    template <class F>
    double lattice_sum(double radius, F&& m) const {
        CompensatedSum<> s;
        const double dxi = kPi / B_;
        const int kr = std::min(K_ / 2 - 1, static_cast<int>(std::ceil(radius / dxi)));
        for (int k0 = -kr; k0 <= kr; ++k0)
            for (int k1 = -kr; k1 <= kr; ++k1) {
                const double w = m(Vec2(dxi * k0, dxi * k1));
                if (w != 0.0) s.add(w * F_[idx(k0, k1)].real());
            }
        return s.value() / (4.0 * B_ * B_);
    }

    std::size_t idx(int k0, int k1) const {
        return static_cast<std::size_t>(k0 + K_ / 2) * static_cast<std::size_t>(K_) + static_cast<std::size_t>(k1 + K_ / 2);
    }

    DyadicFamily fam_;
    int n0_max_;
    double B_;
    int K_ = 0;
    double max_displacement_ = 0;
    std::vector<cplx> F_;
};

// ---------------------------------------------------------------------------
// Block operators S^{l,tau}_{n,sigma} = psi_{Theta',n,sigma}(D) L psi~_{Theta,l,tau}(D)
// with L u = G (u o T), realized on the lab grid. Composition evaluates the
// trigonometric interpolant of u at T(x) exactly by a type-2 NUFFT; points
// mapped outside the box read zero.

struct CompressedOperator {
    std::vector<DyadicIndex> bands;  // band of each basis vector (rows and columns)
    int packets = 0;
    CMatrix M, Mb, Mc;
};

class BlockOperator {
public:
    BlockOperator(const ChartModel& model, int n_max, LabGrid grid = {4.0, 1024})
        : sys_(model.sys), in_(model.theta), out_(model.theta_prime), n_max_(n_max), grid_(grid) {
        require(n_max >= 0 && n_max <= 9, "assemble_blocks needs 0 <= n_max <= 9");
        if (grid.max_freq() < std::ldexp(2.0, n_max))
            throw GridTooCoarse("lab grid does not resolve frequency 2^(n_max+1)");
        idx_ = dyadic_indices(n_max);
    }

    int n_max() const { return n_max_; }
    const LabGrid& grid() const { return grid_; }
    const MapSystem& system() const { return sys_; }
    // Computed on first use, so a vanishing weight can still apply blocks.
    const HExponents& h() const {
        if (!h_) h_ = h_exponents(sys_, in_.theta(), out_.theta());
        return *h_;
    }
    const std::vector<DyadicIndex>& indices() const { return idx_; }
    BoolMatrix linked_mask() const { return link_mask(n_max_, h().h_plus, h().h_minus); }
    bool linked(const DyadicIndex& in, const DyadicIndex& out) const { return hook(in, out, h().h_plus, h().h_minus); }

    // True when G vanishes on every grid point, so every block is zero.
    bool vanishes() {
        ensure_points();
        return targets_.empty();
    }

    // True when images of the top input band can alias into retained output
    // bands (expansion of DT^tr beyond what the grid holds).
    bool aliasing_risk() {
        ensure_points();
        const double top_in = std::min(grid_.max_freq(), std::ldexp(4.0, n_max_));
        return expansion_ * top_in + std::ldexp(4.0, n_max_) > 2 * grid_.max_freq();
    }

    // L u = G (u o T).
    GridFunction apply_L(const GridFunction& u) {
        ensure_points();
        auto s = transform().forward(u);
        const int G = grid_.G;
        std::vector<cplx> F(grid_.size());
        const double norm = 1.0 / static_cast<double>(grid_.size());
        for (int k0 = -G / 2; k0 < G / 2; ++k0)
            for (int k1 = -G / 2; k1 < G / 2; ++k1) {
                const double sgn = ((k0 + k1) & 1) ? -1.0 : 1.0;
                F[nufft().idx(k0, k1)] = sgn * norm * s[grid_.index(fft_index(k0, G), fft_index(k1, G))];
            }
        const auto vals = nufft().type2(F, angles_);
        GridFunction out(grid_);
        for (std::size_t j = 0; j < targets_.size(); ++j) out.v[targets_[j]] = weights_[j] * vals[j];
        return out;
    }

    // FFT of L psi~_in(D) u (storage order, unnormalized).
    std::vector<cplx> column_spectrum(const DyadicIndex& in, const GridFunction& u) {
        return transform().forward(apply_L(transform().backward(restrict(transform().forward(u), input_table(in)))));
    }

    GridFunction output_band(const DyadicIndex& out, const std::vector<cplx>& spec) {
        return transform().backward(restrict(spec, output_table(out)));
    }

    GridFunction apply_block(const DyadicIndex& in, const DyadicIndex& out, const GridFunction& u) {
        return output_band(out, column_spectrum(in, u));
    }

    // Calls sink(out, S^{in}_{out} u) for every output band.
    template <class Sink>
    void apply_column(const DyadicIndex& in, const GridFunction& u, Sink&& sink) {
        const auto spec = column_spectrum(in, u);
        for (const auto& out : idx_) sink(out, output_band(out, spec));
    }

    // Galerkin compression on `packets` wave packets per band: psi_z(D) of
    // unit-mass grid deltas at fixed centres, orthonormalized within each
    // band in the spectral inner product. Entry (r, c) is <e'_r, S e_c>.
    CompressedOperator compress(int packets) {
        require(packets >= 1 && packets <= 5, "compress needs 1 to 5 packets per band");
        static const Vec2 centres[5] = {{0.0, 0.0}, {0.35, 0.2}, {-0.3, 0.3}, {0.2, -0.4}, {-0.4, -0.25}};
        std::vector<std::vector<cplx>> seeds;
        for (int i = 0; i < packets; ++i) {
            GridFunction d(grid_);
            d(static_cast<int>(std::lround((centres[i][0] + grid_.B) / grid_.h())),
              static_cast<int>(std::lround((centres[i][1] + grid_.B) / grid_.h()))) = 1.0;
            seeds.push_back(transform().forward(d));
        }
        const auto rows = packet_basis(seeds, [&](const DyadicIndex& z) -> const BandTable& { return output_table(z); });
        const auto cols = packet_basis(seeds, [&](const DyadicIndex& z) -> const BandTable& { return input_plain_table(z); });
        const auto dim = static_cast<Eigen::Index>(rows.size());
        CompressedOperator co;
        co.packets = packets;
        for (const auto& z : idx_)
            for (int i = 0; i < packets; ++i) co.bands.push_back(z);
        co.M = CMatrix::Zero(dim, dim);
        std::vector<cplx> full(grid_.size());
        for (Eigen::Index c = 0; c < dim; ++c) {
            const auto& col = cols[static_cast<std::size_t>(c)];
            std::fill(full.begin(), full.end(), cplx(0, 0));
            for (std::size_t k = 0; k < col.index.size(); ++k) full[col.index[k]] = col.value[k];
            // backward() divides by G^2, so FFT(e) reproduces the coefficients.
            const auto spec = column_spectrum(co.bands[static_cast<std::size_t>(c)], transform().backward(full));
            for (Eigen::Index r = 0; r < dim; ++r) {
                const auto& row = rows[static_cast<std::size_t>(r)];
                const BandTable& t = output_table(co.bands[static_cast<std::size_t>(r)]);
                cplx acc(0, 0);
                for (std::size_t k = 0; k < row.index.size(); ++k)
                    acc += std::conj(row.value[k]) * t.value[k] * spec[row.index[k]];
                co.M(r, c) = acc;
            }
        }
        co.Mb = CMatrix::Zero(dim, dim);
        co.Mc = CMatrix::Zero(dim, dim);
        if (vanishes()) return co;  // M = 0 and there is no linkage relation
        for (Eigen::Index r = 0; r < dim; ++r)
            for (Eigen::Index c = 0; c < dim; ++c)
                (linked(co.bands[static_cast<std::size_t>(c)], co.bands[static_cast<std::size_t>(r)]) ? co.Mb : co.Mc)(r, c) =
                    co.M(r, c);
        return co;
    }

    FlatTraceTable flat_traces(int n0_max, FlatTraceOptions opt = {}) const {
        return FlatTraceTable(sys_, in_.theta(), n0_max, opt);
    }

private:
    // Nonzero multiplier values of one band in FFT storage order.
    struct BandTable {
        std::vector<std::size_t> index;
        std::vector<cplx> value;
    };

    template <class F>
    BandTable make_table(double radius, F&& m) const {
        BandTable t;
        const int G = grid_.G;
        const int kr = std::min(G / 2 - 1, static_cast<int>(std::ceil(radius / grid_.dxi())));
        for (int k0 = -kr; k0 <= kr; ++k0)
            for (int k1 = -kr; k1 <= kr; ++k1) {
                const double w = m(grid_.dxi() * Vec2(k0, k1));
                if (w == 0.0) continue;
                t.index.push_back(grid_.index(fft_index(k0, G), fft_index(k1, G)));
                t.value.emplace_back(w, 0.0);
            }
        return t;
    }

    const BandTable& output_table(const DyadicIndex& z) {
        auto& t = out_tables_[dyadic_position(z)];
        if (t.index.empty()) t = make_table(std::ldexp(2.0, z.n), [&](const Vec2& xi) { return out_.psi(z, xi); });
        return t;
    }
    const BandTable& input_table(const DyadicIndex& z) {
        auto& t = in_tables_[dyadic_position(z)];
        if (t.index.empty())
            t = make_table(std::ldexp(4.0, z.n) + 4.0, [&](const Vec2& xi) { return in_.psi_tilde(z, xi); });
        return t;
    }
    const BandTable& input_plain_table(const DyadicIndex& z) {
        auto& t = in_plain_tables_[dyadic_position(z)];
        if (t.index.empty()) t = make_table(std::ldexp(2.0, z.n), [&](const Vec2& xi) { return in_.psi(z, xi); });
        return t;
    }

    static std::vector<cplx> restrict(const std::vector<cplx>& spec, const BandTable& t) {
        std::vector<cplx> out(spec.size(), cplx(0, 0));
        for (std::size_t k = 0; k < t.index.size(); ++k) out[t.index[k]] = spec[t.index[k]] * t.value[k];
        return out;
    }

    // Per band: psi_z times each seed spectrum, Gram-Schmidt within the band.
    template <class Table>
    std::vector<BandTable> packet_basis(const std::vector<std::vector<cplx>>& seeds, Table&& table) {
        std::vector<BandTable> out;
        for (const auto& z : idx_) {
            const BandTable& t = table(z);
            const std::size_t first = out.size();
            for (const auto& g : seeds) {
                BandTable e{t.index, std::vector<cplx>(t.index.size())};
                for (std::size_t k = 0; k < t.index.size(); ++k) e.value[k] = g[t.index[k]] * t.value[k];
                for (std::size_t b = first; b < out.size(); ++b) {
                    cplx d(0, 0);
                    for (std::size_t k = 0; k < e.value.size(); ++k) d += std::conj(out[b].value[k]) * e.value[k];
                    for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] -= d * out[b].value[k];
                }
                double nn = 0;
                for (const auto& x : e.value) nn += std::norm(x);
                if (!(nn > 0)) throw NumericalFailure("wave packet vanished in band " + z.str());
                const double inv = 1.0 / std::sqrt(nn);
                for (auto& x : e.value) x *= inv;
                out.push_back(std::move(e));
            }
        }
        return out;
    }

    LabTransform& transform() {
        if (!tr_) tr_ = std::make_unique<LabTransform>(grid_);
        return *tr_;
    }
    Nufft2d& nufft() {
        if (!nu_) nu_ = std::make_unique<Nufft2d>(grid_.G);
        return *nu_;
    }

    void ensure_points() {
        if (points_ready_) return;
        points_ready_ = true;
        for (int i0 = 0; i0 < grid_.G; ++i0)
            for (int i1 = 0; i1 < grid_.G; ++i1) {
                const Vec2 x = grid_.point(i0, i1);
                const double gx = sys_.weight(x);
                if (gx == 0.0) continue;
                expansion_ = std::max(expansion_, sys_.jacobian(x).norm());
                const Vec2 y = sys_.forward(x);
                if (y.lpNorm<Eigen::Infinity>() >= grid_.B) continue;
                targets_.push_back(grid_.index(i0, i1));
                weights_.push_back(gx);
                angles_.push_back(grid_.dxi() * y);
            }
    }

    MapSystem sys_;
    DyadicFamily in_;
    DyadicFamily out_;
    int n_max_;
    LabGrid grid_;
    mutable std::optional<HExponents> h_;
    std::vector<DyadicIndex> idx_;
    std::map<int, BandTable> out_tables_, in_tables_, in_plain_tables_;
    std::unique_ptr<LabTransform> tr_;
    std::unique_ptr<Nufft2d> nu_;
    bool points_ready_ = false;
    double expansion_ = 0;
    std::vector<std::size_t> targets_;
    std::vector<double> weights_;
    std::vector<Vec2> angles_;
};

inline BlockOperator assemble_blocks(const ChartModel& model, int n_max, LabGrid grid = {4.0, 1024}) {
    return BlockOperator(model, n_max, grid);
}

inline BcSplit split_bc(const BlockOperator& op) { return split_masks(op.linked_mask()); }

// Triangularity of linked masks over iterated operators; every factor needs
// h_plus < 0 < h_minus.
inline TriangularityReport triangularity_product_check(const std::vector<const BlockOperator*>& ops) {
    std::vector<BoolMatrix> masks;
    for (const auto* op : ops) {
        if (!(op->h().h_plus < 0 && op->h().h_minus > 0))
            throw PreconditionViolated("triangularity needs iterates with h_plus < 0 < h_minus");
        masks.push_back(op->linked_mask());
    }
    return triangularity_product_check(masks);
}

// ---------------------------------------------------------------------------
// Kernels of unlinked blocks: V(x, y) = S delta_y (x) for grid deltas of unit
// mass, fitted as log2 max|V| against max{n, l}.

struct KernelRow {
    DyadicIndex in, out;
    double max_abs = 0;
    double profile_ratio = 0;  // max_x |V(x, y)| / b_{min{n,l}}(x - y)
};

struct KernelDecayReport {
    std::vector<KernelRow> rows;
    std::vector<double> levels;         // max{n, l}
    std::vector<double> log2_max;       // log2 of the largest |V| at that level
    std::vector<double> log2_profile;   // log2 of the largest profile ratio at that level
    LineFit fit;          // log2_max against level
    LineFit profile_fit;  // log2_profile against level
    double slope = 0;
    double profile_slope = 0;
    bool aliasing_risk = false;  // top levels unreliable when set
};

// b(x) = 1 for |x| <= 1, |x|^-3 otherwise (d = 2); b_m(x) = 4^m b(2^m x).
inline double kernel_envelope(int m, const Vec2& x) {
    const double r = std::ldexp(x.norm(), m);
    return std::ldexp(r <= 1 ? 1.0 : 1.0 / (r * r * r), 2 * m);
}

inline KernelDecayReport kernel_decay_fit(BlockOperator& op, const std::vector<std::pair<DyadicIndex, DyadicIndex>>& pairs,
                                          const std::vector<Vec2>& y_points = {Vec2(0, 0), Vec2(0.25, -0.25)}) {
    require(!pairs.empty() && !y_points.empty(), "kernel_decay_fit needs pairs and sample points");
    // A vanishing weight has no linkage relation and only zero kernels.
    for (const auto& [in, out] : pairs)
        if (!op.vanishes() && op.linked(in, out)) throw PreconditionViolated("kernel_decay_fit takes unlinked pairs only: " + in.str() + " -> " + out.str());
    const LabGrid& g = op.grid();
    std::map<int, std::vector<std::size_t>> by_input;
    KernelDecayReport rep;
    rep.aliasing_risk = op.aliasing_risk();
    for (const auto& [in, out] : pairs) {
        by_input[dyadic_position(in)].push_back(rep.rows.size());
        rep.rows.push_back({in, out, 0.0, 0.0});
    }
    for (const auto& [pos, rows] : by_input) {
        const DyadicIndex in = rep.rows[rows.front()].in;
        for (const Vec2& y : y_points) {
            const int j0 = static_cast<int>(std::lround((y[0] + g.B) / g.h()));
            const int j1 = static_cast<int>(std::lround((y[1] + g.B) / g.h()));
            const Vec2 ys = g.point(j0, j1);
            GridFunction delta(g);
            delta(j0, j1) = 1.0 / (g.h() * g.h());
            const auto spec = op.column_spectrum(in, delta);
            for (std::size_t r : rows) {
                KernelRow& row = rep.rows[r];
                const GridFunction v = op.output_band(row.out, spec);
                const int m = std::min(row.in.n, row.out.n);
                for (int i0 = 0; i0 < g.G; ++i0)
                    for (int i1 = 0; i1 < g.G; ++i1) {
                        const double a = std::abs(v(i0, i1));
                        row.max_abs = std::max(row.max_abs, a);
                        row.profile_ratio = std::max(row.profile_ratio, a / kernel_envelope(m, g.point(i0, i1) - ys));
                    }
            }
        }
    }
    std::map<int, std::pair<double, double>> level_max;
    for (const auto& row : rep.rows) {
        auto& [m, p] = level_max[std::max(row.in.n, row.out.n)];
        m = std::max(m, row.max_abs);
        p = std::max(p, row.profile_ratio);
    }
    for (const auto& [lv, mp] : level_max) {
        rep.levels.push_back(lv);
        rep.log2_max.push_back(std::log2(std::max(mp.first, 1e-300)));
        rep.log2_profile.push_back(std::log2(std::max(mp.second, 1e-300)));
    }
    if (rep.levels.size() >= 2) {
        rep.fit = fit_line(rep.levels, rep.log2_max);
        rep.profile_fit = fit_line(rep.levels, rep.log2_profile);
        rep.slope = rep.fit.slope;
        rep.profile_slope = rep.profile_fit.slope;
    }
    return rep;
}

// All unlinked (in, out) pairs of an operator.
inline std::vector<std::pair<DyadicIndex, DyadicIndex>> unlinked_pairs(const BlockOperator& op) {
    std::vector<std::pair<DyadicIndex, DyadicIndex>> out;
    for (const auto& in : op.indices())
        for (const auto& o : op.indices())
            if (!op.linked(in, o)) out.emplace_back(in, o);
    return out;
}

// ---------------------------------------------------------------------------
// Kneading identity on finite matrices:
//   det(I - zM) = det(I - z Mc (I - z Mb)^-1) det(I - z Mb),  M = Mb + Mc.

inline constexpr double kResolventConditionLimit = 1e12;

struct KneadingRow {
    cplx z;
    cplx lhs, rhs;
    cplx det_b;
    double rel_err = 0;
    double condition = 0;
};

struct KneadingReport {
    std::vector<KneadingRow> rows;
    double max_rel_err = 0;
    double tol = 0;
    bool pass = true;
};

inline double condition_number(const CMatrix& a) {
    Eigen::JacobiSVD<CMatrix> svd(a);
    const auto& s = svd.singularValues();
    return s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
}

inline KneadingReport kneading_check(const CMatrix& Mb, const CMatrix& Mc, const std::vector<cplx>& zs,
                                     double tol = 1e-8) {
    require(Mb.rows() == Mb.cols() && Mb.rows() == Mc.rows() && Mc.rows() == Mc.cols(),
            "kneading_check needs square matrices of equal size");
    const auto n = Mb.rows();
    const CMatrix I = CMatrix::Identity(n, n);
    const CMatrix M = Mb + Mc;
    KneadingReport rep;
    rep.tol = tol;
    for (const cplx z : zs) {
        KneadingRow row;
        row.z = z;
        const CMatrix R = I - z * Mb;
        row.condition = condition_number(R);
        if (!(row.condition <= kResolventConditionLimit))
            throw SingularResolvent("I - z Mb is too ill-conditioned to invert");
        Eigen::PartialPivLU<CMatrix> lu(R);
        row.det_b = lu.determinant();
        const CMatrix D = z * Mc * lu.inverse();
        row.lhs = Eigen::PartialPivLU<CMatrix>(I - z * M).determinant();
        row.rhs = Eigen::PartialPivLU<CMatrix>(I - D).determinant() * row.det_b;
        row.rel_err = std::abs(row.lhs - row.rhs) / std::max(std::abs(row.lhs), 1e-300);
        rep.max_rel_err = std::max(rep.max_rel_err, row.rel_err);
        rep.pass = rep.pass && row.rel_err <= tol;
        rep.rows.push_back(row);
    }
    return rep;
}

inline std::vector<cplx> circle_samples(int n, double radius) {
    std::vector<cplx> z;
    for (int k = 0; k < n; ++k) z.push_back(std::polar(radius, kTwoPi * (k + 0.5) / n));
    return z;
}

// ---------------------------------------------------------------------------
// Singular-value proxy for approximation numbers (weighted l2, not the mixed
// norm): rows scaled by 2^{c(sigma) n}, columns by 2^{-c(tau) l}, c(+) = p,
// c(-) = q.

struct ApproxProxyReport {
    std::vector<double> singular_values;
    bool monotone = true;
    double power_exponent = 0;   // slope of log s_k against log k
    double geometric_rate = 0;   // slope of log s_k against k
    int k_lo = 1, k_hi = 1;
};

inline CMatrix pq_weighted(const CMatrix& m, const std::vector<DyadicIndex>& bands, double p, double q) {
    require(static_cast<Eigen::Index>(bands.size()) == m.rows() && m.rows() == m.cols(),
            "pq_weighted needs one band per row");
    CMatrix w = m;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const auto& zo = bands[static_cast<std::size_t>(r)];
            const auto& zi = bands[static_cast<std::size_t>(c)];
            const double co = zo.sigma > 0 ? p : q, ci = zi.sigma > 0 ? p : q;
            w(r, c) *= std::exp2(co * zo.n - ci * zi.n);
        }
    return w;
}

// Fits over k in [k_lo, k_hi] (1-based), skipping exact zeros.
inline ApproxProxyReport approx_number_proxy(const CMatrix& m, int k_lo = 1, int k_hi = -1) {
    ApproxProxyReport rep;
    Eigen::JacobiSVD<CMatrix> svd(m);
    const auto& s = svd.singularValues();
    for (Eigen::Index i = 0; i < s.size(); ++i) rep.singular_values.push_back(s(i));
    for (std::size_t i = 1; i < rep.singular_values.size(); ++i)
        rep.monotone = rep.monotone && rep.singular_values[i] <= rep.singular_values[i - 1];
    const int n = static_cast<int>(rep.singular_values.size());
    rep.k_lo = std::max(1, k_lo);
    rep.k_hi = k_hi < 0 ? n : std::min(k_hi, n);
    std::vector<double> lk, kk, ls;
    const double floor = rep.singular_values.empty() ? 0.0 : 1e-13 * rep.singular_values.front();
    for (int k = rep.k_lo; k <= rep.k_hi; ++k) {
        const double v = rep.singular_values[static_cast<std::size_t>(k - 1)];
        if (v <= floor) continue;
        lk.push_back(std::log(static_cast<double>(k)));
        kk.push_back(k);
        ls.push_back(std::log(v));
    }
    if (ls.size() >= 2) {
        rep.power_exponent = fit_line(lk, ls).slope;
        rep.geometric_rate = fit_line(kk, ls).slope;
    }
    return rep;
}

}  // namespace ruelle
