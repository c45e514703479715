#pragma once

#include "ruelle/periodic_orbits.hpp"

#include <unsupported/Eigen/Polynomials>

namespace ruelle {

struct TraceSeries {
    std::vector<double> traces;  // traces[m-1] = tr(L^m)
    int N = 0;
    std::string map_id;
    std::string weight_id;

    double operator[](int m) const { return traces.at(static_cast<std::size_t>(m - 1)); }
};

struct DeterminantZero {
    cplx z;
    int multiplicity = 1;
    double backward_error = 0;
    bool ill_conditioned = false;  // backward error above 1e-6
    bool near_boundary = false;    // within 10% of the validity radius
};

struct DeterminantPoly {
    std::vector<double> coeffs;  // c_0 .. c_N
    double validity_radius = std::numeric_limits<double>::infinity();
    std::vector<DeterminantZero> zeros;
};

inline constexpr double kIllConditionedRoot = 1e-6;

inline double dynamical_trace(const PeriodicPointSet& pts) {
    CompensatedSum<> s;
    for (const auto& p : pts.points) {
        const double det = (Mat2::Identity() - p.dtm).determinant();
        if (std::abs(det) < 1e-300) throw SingularLinearization("Id - DT^m singular in trace");
        s.add(p.gm / std::abs(det));
    }
    return s.value();
}

inline TraceSeries trace_series(OrbitProvider& orbits, int N) {
    require(N >= 1, "trace_series needs N >= 1");
    TraceSeries ts;
    ts.N = N;
    ts.map_id = orbits.system().id;
    ts.weight_id = orbits.system().weight.id;
    for (int m = 1; m <= N; ++m) ts.traces.push_back(dynamical_trace(orbits.points(m)));
    return ts;
}

inline TraceSeries trace_series(const MapSystem& sys, int N) {
    OrbitProvider orbits(sys);
    return trace_series(orbits, N);
}

// exp(sign * sum_m a_m z^m / m) as a power series truncated at degree N.
inline std::vector<double> exp_series_from_power_sums(const std::vector<double>& a, int sign) {
    const int n = static_cast<int>(a.size());
    std::vector<double> c(static_cast<std::size_t>(n + 1), 0.0);
    c[0] = 1.0;
    for (int k = 1; k <= n; ++k) {
        CompensatedSum<> s;
        for (int j = 1; j <= k; ++j) s.add(a[static_cast<std::size_t>(j - 1)] * c[static_cast<std::size_t>(k - j)]);
        c[static_cast<std::size_t>(k)] = sign * s.value() / k;
    }
    return c;
}

inline DeterminantPoly det_coeffs_from_traces(const TraceSeries& ts) {
    DeterminantPoly dp;
    dp.coeffs = exp_series_from_power_sums(ts.traces, -1);
    return dp;
}

// Inverse of det_coeffs_from_traces: the power sums of a series with c_0 = 1.
inline std::vector<double> traces_from_coeffs(const std::vector<double>& c) {
    require(!c.empty() && c[0] == 1.0, "coefficient series must start with 1");
    const int n = static_cast<int>(c.size()) - 1;
    std::vector<double> tr(static_cast<std::size_t>(n), 0.0);
    for (int k = 1; k <= n; ++k) {
        CompensatedSum<> s;
        s.add(-k * c[static_cast<std::size_t>(k)]);
        for (int j = 1; j < k; ++j) s.add(-tr[static_cast<std::size_t>(j - 1)] * c[static_cast<std::size_t>(k - j)]);
        tr[static_cast<std::size_t>(k - 1)] = s.value();
    }
    return tr;
}

inline cplx poly_eval(const std::vector<double>& c, cplx z) {
    cplx v = 0;
    for (std::size_t k = c.size(); k-- > 0;) v = v * z + c[k];
    return v;
}

inline double poly_abs_eval(const std::vector<double>& c, double r) {
    double v = 0;
    for (std::size_t k = c.size(); k-- > 0;) v = v * r + std::abs(c[k]);
    return v;
}

inline double backward_error(const std::vector<double>& c, cplx z) {
    const double denom = poly_abs_eval(c, std::abs(z));
    return denom > 0 ? std::abs(poly_eval(c, z)) / denom : 0.0;
}

// Roots of the truncated series inside |z| < radius. Trailing coefficients
// that are negligible on the disc of interest are dropped before forming the
// (balanced) companion matrix; backward errors use the full series.
inline std::vector<DeterminantZero> det_zeros(const DeterminantPoly& dp, double radius) {
    const auto& c = dp.coeffs;
    const double r = std::max(radius, 1.0);
    const double scale = poly_abs_eval(c, r);
    std::size_t deg = c.size() - 1;
    while (deg > 0 && std::abs(c[deg]) * std::pow(r, static_cast<double>(deg)) <= 1e-15 * scale) --deg;
    std::vector<DeterminantZero> out;
    if (deg == 0) return out;

    Eigen::VectorXd coeffs(static_cast<Eigen::Index>(deg + 1));
    for (std::size_t k = 0; k <= deg; ++k) coeffs[static_cast<Eigen::Index>(k)] = c[k];
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(coeffs);
    std::vector<cplx> roots;
    for (Eigen::Index i = 0; i < solver.roots().size(); ++i) {
        cplx z = solver.roots()[i];
        // Newton polish on the full series, accepted only if it helps.
        for (int it = 0; it < 3; ++it) {
            cplx f = poly_eval(c, z), df = 0;
            for (std::size_t k = c.size(); k-- > 1;) df = df * z + static_cast<double>(k) * c[k];
            if (df == cplx(0)) break;
            cplx zn = z - f / df;
            if (std::abs(poly_eval(c, zn)) < std::abs(f))
                z = zn;
            else
                break;
        }
        if (std::abs(z) < radius) roots.push_back(z);
    }
    std::sort(roots.begin(), roots.end(), [](cplx a, cplx b) {
        return std::abs(a) != std::abs(b) ? std::abs(a) < std::abs(b) : std::arg(a) < std::arg(b);
    });
    std::vector<bool> used(roots.size(), false);
    for (std::size_t i = 0; i < roots.size(); ++i) {
        if (used[i]) continue;
        used[i] = true;
        cplx sum = roots[i];
        int mult = 1;
        for (std::size_t j = i + 1; j < roots.size(); ++j) {
            if (used[j]) continue;
            if (std::abs(roots[j] - roots[i]) <= 1e-6 * std::max(std::abs(roots[i]), std::abs(roots[j]))) {
                used[j] = true;
                sum += roots[j];
                ++mult;
            }
        }
        DeterminantZero dz;
        dz.z = sum / static_cast<double>(mult);
        dz.multiplicity = mult;
        dz.backward_error = backward_error(c, dz.z);
        dz.ill_conditioned = dz.backward_error > kIllConditionedRoot;
        dz.near_boundary = std::isfinite(dp.validity_radius) && std::abs(dz.z) >= 0.9 * dp.validity_radius;
        out.push_back(dz);
    }
    return out;
}

inline std::vector<double> series_mul(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    std::vector<double> c(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        CompensatedSum<> s;
        for (std::size_t j = 0; j <= k; ++j) s.add(a[j] * b[k - j]);
        c[k] = s.value();
    }
    return c;
}

inline std::vector<double> series_div(const std::vector<double>& a, const std::vector<double>& b) {
    require(!b.empty() && b[0] != 0.0, "series division needs b_0 != 0");
    const std::size_t n = std::min(a.size(), b.size());
    std::vector<double> c(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        CompensatedSum<> s;
        s.add(a[k]);
        for (std::size_t j = 1; j <= k; ++j) s.add(-b[j] * c[k - j]);
        c[k] = s.value() / b[0];
    }
    return c;
}

// Coefficients of exp(+sum_m z^m/m sum_{T^m x = x} g^(m)(x)).
inline std::vector<double> zeta_direct(OrbitProvider& orbits, int N) {
    require(N >= 1, "zeta_direct needs N >= 1");
    std::vector<double> sums;
    for (int m = 1; m <= N; ++m) {
        CompensatedSum<> s;
        for (const auto& p : orbits.points(m).points) s.add(p.gm);
        sums.push_back(s.value());
    }
    return exp_series_from_power_sums(sums, +1);
}

inline std::vector<double> zeta_direct(const MapSystem& sys, int N) {
    OrbitProvider orbits(sys);
    return zeta_direct(orbits, N);
}

// Zeta function as d_0 d_2 / d_1 from determinants over exterior powers of
// the transposed derivative. Needs the unstable action to preserve orientation.
inline std::vector<double> zeta_product(OrbitProvider& orbits, int N, const SplittingField& split) {
    require(N >= 1, "zeta_product needs N >= 1");
    require(orbits.system().dim == 2 && orbits.system().unstable_dim == 1, "zeta_product is implemented for d = 2");
    std::vector<double> tr[3];
    for (int m = 1; m <= N; ++m) {
        CompensatedSum<> s0, s1, s2;
        for (const auto& p : orbits.points(m).points) {
            const Vec2 u = split.unstable(p.x);
            if (u.dot(p.dtm * u) < 0) throw OrientationNotTrivial("unstable eigenvalue negative at a periodic point");
            const double det = std::abs((Mat2::Identity() - p.dtm).determinant());
            s0.add(p.gm / det);
            s1.add(p.gm * p.dtm.trace() / det);
            s2.add(p.gm * p.dtm.determinant() / det);
        }
        tr[0].push_back(s0.value());
        tr[1].push_back(s1.value());
        tr[2].push_back(s2.value());
    }
    const auto d0 = exp_series_from_power_sums(tr[0], -1);
    const auto d1 = exp_series_from_power_sums(tr[1], -1);
    const auto d2 = exp_series_from_power_sums(tr[2], -1);
    // Exponents (-1)^{k + d_u + 1} with d_u = 1: +1, -1, +1.
    return series_div(series_mul(d0, d2), d1);
}

inline std::vector<double> zeta_product(const MapSystem& sys, int N, const SplittingField& split) {
    OrbitProvider orbits(sys);
    return zeta_product(orbits, N, split);
}

}  // namespace ruelle
