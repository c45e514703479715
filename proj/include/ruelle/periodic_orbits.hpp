#pragma once

#include "ruelle/map_model.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

namespace ruelle {

enum class OrbitMethod { LatticeExact, NewtonContinued };

inline const char* to_string(OrbitMethod m) {
    return m == OrbitMethod::LatticeExact ? "lattice-exact" : "newton-continued";
}

struct PeriodicPoint {
    Vec2 x;
    Mat2 dtm;       // DT^m(x)
    double gm = 1;  // g^(m)(x) = prod g(T^k x)
};

struct PeriodicPointSet {
    int period = 1;
    std::vector<PeriodicPoint> points;
    OrbitMethod method = OrbitMethod::LatticeExact;
    std::string map_id;
    double eps = 0;

    std::size_t size() const { return points.size(); }
};

inline constexpr double kDedupeRadius = 1e-6;

inline IntMat2 int_power(const IntMat2& a, int m) {
    IntMat2 r = IntMat2::Identity();
    for (int k = 0; k < m; ++k) r = a * r;
    return r;
}

inline std::int64_t int_det(const IntMat2& a) { return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0); }

// U * M * V = diag(d1, d2), U and V unimodular, d1 | d2, d1, d2 >= 0.
struct SmithForm {
    IntMat2 u, v;
    std::int64_t d1 = 0, d2 = 0;
};

inline SmithForm smith_normal_form(const IntMat2& m) {
    IntMat2 a = m, u = IntMat2::Identity(), v = IntMat2::Identity();
    auto swap_rows = [&](int i, int j) {
        a.row(i).swap(a.row(j));
        u.row(i).swap(u.row(j));
    };
    auto swap_cols = [&](int i, int j) {
        a.col(i).swap(a.col(j));
        v.col(i).swap(v.col(j));
    };
    for (;;) {
        // Pivot: smallest nonzero magnitude moved to (0,0).
        int pi = -1, pj = -1;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                if (a(i, j) != 0 && (pi < 0 || std::abs(a(i, j)) < std::abs(a(pi, pj)))) {
                    pi = i;
                    pj = j;
                }
        if (pi < 0) break;
        if (pi != 0) swap_rows(0, pi);
        if (pj != 0) swap_cols(0, pj);
        bool clean = true;
        {
            std::int64_t q = a(1, 0) / a(0, 0);
            a.row(1) -= q * a.row(0);
            u.row(1) -= q * u.row(0);
            if (a(1, 0) != 0) clean = false;
        }
        {
            std::int64_t q = a(0, 1) / a(0, 0);
            a.col(1) -= q * a.col(0);
            v.col(1) -= q * v.col(0);
            if (a(0, 1) != 0) clean = false;
        }
        if (!clean) continue;
        if (a(1, 1) % a(0, 0) != 0) {
            a.row(0) += a.row(1);
            u.row(0) += u.row(1);
            continue;
        }
        break;
    }
    if (a(0, 0) < 0) {
        a.row(0) *= -1;
        u.row(0) *= -1;
    }
    if (a(1, 1) < 0) {
        a.row(1) *= -1;
        u.row(1) *= -1;
    }
    return {u, v, a(0, 0), a(1, 1)};
}

inline bool is_hyperbolic(const IntMat2& a) {
    Eigen::EigenSolver<Mat2> es(to_double(a));
    for (int i = 0; i < 2; ++i)
        if (std::abs(std::abs(es.eigenvalues()[i]) - 1.0) < 1e-9) return false;
    return true;
}

inline void sort_points(std::vector<PeriodicPoint>& pts) {
    std::sort(pts.begin(), pts.end(), [](const PeriodicPoint& a, const PeriodicPoint& b) {
        return a.x[0] != b.x[0] ? a.x[0] < b.x[0] : a.x[1] < b.x[1];
    });
}

inline std::int64_t floor_mod(std::int64_t a, std::int64_t n) {
    std::int64_t r = a % n;
    return r < 0 ? r + n : r;
}

// Fixed points of x -> A^m x mod 1, exact rational coordinates.
inline PeriodicPointSet fixed_points_linear_toral(const IntMat2& a, int m, const Weight& g = weight_one()) {
    require(m >= 1, "period must be >= 1");
    if (!is_hyperbolic(a)) throw NonHyperbolicMatrix("matrix has an eigenvalue on the unit circle");
    const IntMat2 am = int_power(a, m);
    const IntMat2 mm = am - IntMat2::Identity();
    if (int_det(mm) == 0) throw NonHyperbolicMatrix("A^m - I is singular");
    const SmithForm snf = smith_normal_form(mm);
    const std::int64_t d1 = snf.d1, d2 = snf.d2;
    const Mat2 dtm = to_double(am);

    PeriodicPointSet set;
    set.period = m;
    set.method = OrbitMethod::LatticeExact;
    set.points.reserve(static_cast<std::size_t>(d1 * d2));
    // x = V (k1/d1, k2/d2); numerators over the common denominator d2.
    for (std::int64_t k1 = 0; k1 < d1; ++k1) {
        for (std::int64_t k2 = 0; k2 < d2; ++k2) {
            IntVec2 y(k1 * (d2 / d1), k2);
            IntVec2 num = snf.v * y;
            num[0] = floor_mod(num[0], d2);
            num[1] = floor_mod(num[1], d2);
            double gm = 1.0;
            IntVec2 orbit = num;
            for (int k = 0; k < m; ++k) {
                gm *= g(Vec2(static_cast<double>(orbit[0]) / d2, static_cast<double>(orbit[1]) / d2));
                orbit = a * orbit;
                orbit[0] = floor_mod(orbit[0], d2);
                orbit[1] = floor_mod(orbit[1], d2);
            }
            set.points.push_back({Vec2(static_cast<double>(num[0]) / d2, static_cast<double>(num[1]) / d2), dtm, gm});
        }
    }
    sort_points(set.points);
    return set;
}

inline double weight_product(const MapSystem& sys, Vec2 x, int m) {
    double gm = 1.0;
    for (int k = 0; k < m; ++k) {
        gm *= sys.weight(x);
        x = sys.forward(x);
    }
    return gm;
}

inline PeriodicPointSet lattice_points_for(const MapSystem& sys, int m) {
    require(sys.is_torus() && sys.linear_part.has_value(), "lattice enumeration needs a torus map with linear part");
    PeriodicPointSet s = fixed_points_linear_toral(*sys.linear_part, m, sys.weight);
    s.map_id = sys.id;
    s.eps = sys.eps;
    return s;
}

inline double max_unit_circle_proximity_violation(const Mat2& d) {
    Eigen::EigenSolver<Mat2> es(d);
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 2; ++i) worst = std::min(worst, std::abs(std::abs(es.eigenvalues()[i]) - 1.0));
    return worst;
}

inline void check_collisions(const std::vector<PeriodicPoint>& pts, double radius) {
    // Points are sorted by x[0]; compare neighbours within the radius window,
    // including the wraparound at 1.
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (pts[j].x[0] - pts[i].x[0] > radius) break;
            if (torus_distance(pts[i].x, pts[j].x) < radius)
                throw CollisionDetected("two periodic points merged within the dedupe radius");
        }
    }
    for (std::size_t i = 0; i < n && pts[i].x[0] < radius; ++i)
        for (std::size_t j = n; j-- > i + 1 && pts[j].x[0] > 1.0 - radius;)
            if (torus_distance(pts[i].x, pts[j].x) < radius)
                throw CollisionDetected("two periodic points merged across the seam");
}

inline std::vector<double> default_eps_path(double eps, double max_step = 0.0025) {
    const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(eps) / max_step - 1e-12)));
    std::vector<double> path;
    for (int i = 1; i <= steps; ++i) path.push_back(eps * i / steps);
    return path;
}

// Newton on the closed-orbit equations x_{k+1} = T(x_k), k mod d. The
// condensed linear system is (Id - DT^d) dx_0 = s; the basin does not shrink
// with d, unlike Newton on T^d(x) = x.
inline std::vector<Vec2> newton_orbit(const MapSystem& sys, std::vector<Vec2> orbit) {
    const std::size_t d = orbit.size();
    std::vector<Mat2> jac(d);
    std::vector<Vec2> r(d);
    double best = std::numeric_limits<double>::infinity();
    for (int it = 0; it <= 50; ++it) {
        double res = 0;
        for (std::size_t k = 0; k < d; ++k) {
            jac[k] = sys.jacobian(orbit[k]);
            r[k] = wrap_sym(Vec2(sys.forward(orbit[k]) - orbit[(k + 1) % d]));
            const double rk = r[k].lpNorm<Eigen::Infinity>();
            if (!(rk <= res)) res = std::isnan(rk) ? std::numeric_limits<double>::infinity() : rk;
        }
        if (!(res < 1e300)) break;
        if (res <= 4 * std::numeric_limits<double>::epsilon() || (it > 3 && res >= 0.5 * best)) return orbit;
        best = std::min(best, res);
        Mat2 phi = Mat2::Identity();
        Vec2 s = Vec2::Zero();
        for (std::size_t k = 0; k < d; ++k) {
            phi = jac[k] * phi;
            s = jac[k] * s + r[k];
        }
        Vec2 delta = (Mat2::Identity() - phi).inverse() * s;
        for (std::size_t k = 0; k < d; ++k) {
            const Vec2 next = jac[k] * delta + r[k];
            orbit[k] = wrap01(Vec2(orbit[k] + delta));
            delta = next;
        }
    }
    std::ostringstream os;
    os << "orbit Newton did not converge for period " << d << " near (" << orbit[0][0] << ", " << orbit[0][1] << ")";
    throw NewtonDiverged(os.str());
}

namespace detail {

// Spatial hash of torus points on cells of side 2^-24; lookups probe the
// 3x3 neighbourhood, so radii up to one cell are exact.
class PointIndex {
public:
    explicit PointIndex(const std::vector<PeriodicPoint>& pts) : pts_(pts) {
        cells_.reserve(pts.size() * 2);
        for (std::size_t i = 0; i < pts.size(); ++i) cells_.emplace(key(cell(pts[i].x[0]), cell(pts[i].x[1])), i);
    }

    std::size_t find(const Vec2& y, double radius) const {
        const std::int64_t cx = cell(y[0]), cy = cell(y[1]);
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                auto range = cells_.equal_range(key(cx + dx, cy + dy));
                for (auto it = range.first; it != range.second; ++it)
                    if (torus_distance(pts_[it->second].x, y) < radius) return it->second;
            }
        return std::string::npos;
    }

private:
    static constexpr std::int64_t kCells = std::int64_t{1} << 24;
    static std::int64_t cell(double t) { return static_cast<std::int64_t>(std::floor(wrap01(t) * kCells)); }
    static std::uint64_t key(std::int64_t cx, std::int64_t cy) {
        return static_cast<std::uint64_t>(floor_mod(cx, kCells)) << 32 | static_cast<std::uint64_t>(floor_mod(cy, kCells));
    }

    const std::vector<PeriodicPoint>& pts_;
    std::unordered_multimap<std::uint64_t, std::size_t> cells_;
};

}  // namespace detail

// Continues every reference point along eps_path. Points are grouped into
// orbits of the reference map and each orbit is continued as a whole.
inline PeriodicPointSet continue_periodic_points(const MapSystem& sys, const PeriodicPointSet& ref,
                                                 const std::vector<double>& eps_path, double tol = 1e-12) {
    require(sys.family != nullptr, "continuation needs a map family");
    require(!eps_path.empty(), "eps path must be nonempty");
    const int m = ref.period;
    const MapSystem base = sys.family(ref.eps);
    std::vector<MapSystem> stages;
    for (double e : eps_path) stages.push_back(sys.family(e));
    const MapSystem& target = stages.back();

    std::vector<PeriodicPoint> sorted = ref.points;
    sort_points(sorted);
    const std::size_t n = sorted.size();
    std::vector<Vec2> cont(n);
    std::vector<bool> done(n, false);
    const detail::PointIndex index(sorted);
    for (std::size_t i = 0; i < n; ++i) {
        if (done[i]) continue;
        std::vector<std::size_t> members{i};
        std::vector<Vec2> orbit{sorted[i].x};
        for (int k = 1; k <= m; ++k) {
            const Vec2 y = base.forward(orbit.back());
            if (torus_distance(y, sorted[i].x) < 1e-9) break;
            const std::size_t j = index.find(y, 1e-9);
            if (j == std::string::npos || k == m)
                throw CollisionDetected("reference set is not a union of closed orbits");
            members.push_back(j);
            orbit.push_back(sorted[j].x);
        }
        for (std::size_t s = 0; s < stages.size(); ++s) {
            try {
                orbit = newton_orbit(stages[s], orbit);
            } catch (const NewtonDiverged& e) {
                std::ostringstream os;
                os << e.what() << " (homotopy step " << s << ", eps " << eps_path[s] << ")";
                throw NewtonDiverged(os.str());
            }
        }
        for (std::size_t k = 0; k < members.size(); ++k) {
            cont[members[k]] = orbit[k];
            done[members[k]] = true;
        }
    }

    PeriodicPointSet out;
    out.period = m;
    out.method = OrbitMethod::NewtonContinued;
    out.map_id = target.id;
    out.eps = eps_path.back();
    out.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 x = cont[i];
        const Mat2 d = jacobian_cocycle(target, x, m);
        const Vec2 f = wrap_sym(Vec2(target.iterate(x, m) - x));
        const double floor = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, d.norm());
        if (!(f.lpNorm<Eigen::Infinity>() <= std::max(tol, floor))) {
            std::ostringstream os;
            os << "continued point (" << x[0] << ", " << x[1] << ") has residual " << f.lpNorm<Eigen::Infinity>();
            throw NewtonDiverged(os.str());
        }
        const Mat2 j = Mat2::Identity() - d;
        if (j.determinant() == 0 || !(j.inverse().norm() <= 1e10))
            throw SingularLinearization("Id - DT^m is nearly singular at a continued point");
        out.points.push_back({x, d, weight_product(target, x, m)});
    }
    sort_points(out.points);
    check_collisions(out.points, kDedupeRadius);
    return out;
}

struct CountReport {
    bool ok = false;
    std::int64_t expected = 0;
    std::int64_t found = 0;
};

inline CountReport verify_count(const PeriodicPointSet& s, const IntMat2& a) {
    CountReport r;
    r.expected = std::abs(int_det(int_power(a, s.period) - IntMat2::Identity()));
    r.found = static_cast<std::int64_t>(s.points.size());
    r.ok = r.expected == r.found;
    return r;
}

// Plain-text cache of continued points. Layout:
//   ruelle-periodic-cache 1
//   map <id>
//   eps <hexfloat>
//   seed <integer>
//   period <m>
//   tol <hexfloat>
//   count <n>
//   then n lines "x0 x1" in hexfloat.
// DT^m and g^(m) are recomputed on load.
struct CacheKey {
    std::string map_id;
    double eps = 0;
    std::uint64_t seed = 0;
    int period = 0;
    double tol = 0;
};

inline std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline std::filesystem::path cache_file_name(const std::filesystem::path& dir, const CacheKey& k) {
    std::ostringstream os;
    os << k.map_id << "_eps" << hexfloat(k.eps) << "_s" << k.seed << "_m" << k.period << "_tol" << hexfloat(k.tol)
       << ".txt";
    return dir / os.str();
}

inline void save_cache(const std::filesystem::path& file, const CacheKey& k, const PeriodicPointSet& s) {
    std::ofstream out(file);
    out << "ruelle-periodic-cache 1\n"
        << "map " << k.map_id << "\n"
        << "eps " << hexfloat(k.eps) << "\n"
        << "seed " << k.seed << "\n"
        << "period " << k.period << "\n"
        << "tol " << hexfloat(k.tol) << "\n"
        << "count " << s.points.size() << "\n";
    for (const auto& p : s.points) out << hexfloat(p.x[0]) << " " << hexfloat(p.x[1]) << "\n";
}

inline std::optional<std::vector<Vec2>> load_cache(const std::filesystem::path& file, const CacheKey& k) {
    std::ifstream in(file);
    if (!in) return std::nullopt;
    std::string tag, map_id, eps_s, tol_s;
    int version = 0, period = 0;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string key;
    in >> tag >> version;
    if (tag != "ruelle-periodic-cache" || version != 1) return std::nullopt;
    in >> key >> map_id >> key >> eps_s >> key >> seed >> key >> period >> key >> tol_s >> key >> count;
    if (!in || map_id != k.map_id || std::strtod(eps_s.c_str(), nullptr) != k.eps || seed != k.seed ||
        period != k.period || std::strtod(tol_s.c_str(), nullptr) != k.tol)
        return std::nullopt;
    std::vector<Vec2> pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::string a, b;
        if (!(in >> a >> b)) return std::nullopt;
        pts.emplace_back(std::strtod(a.c_str(), nullptr), std::strtod(b.c_str(), nullptr));
    }
    return pts;
}

// Memoized periodic-point sets for one torus map, by period.
class OrbitProvider {
public:
    explicit OrbitProvider(MapSystem sys, double tol = 1e-12, std::filesystem::path cache_dir = {})
        : sys_(std::move(sys)), tol_(tol), cache_dir_(std::move(cache_dir)) {
        require(sys_.is_torus() && sys_.linear_part.has_value(), "OrbitProvider needs a torus map with linear part");
    }

    const MapSystem& system() const { return sys_; }

    const PeriodicPointSet& points(int m) {
        auto it = sets_.find(m);
        if (it != sets_.end()) return it->second;
        return sets_.emplace(m, compute(m)).first->second;
    }

private:
    PeriodicPointSet compute(int m) {
        if (sys_.eps == 0.0) return lattice_points_for(sys_, m);
        const CacheKey key{sys_.id, sys_.eps, sys_.seed, m, tol_};
        if (!cache_dir_.empty()) {
            if (auto cached = load_cache(cache_file_name(cache_dir_, key), key)) return rebuild(m, *cached);
        }
        MapSystem base = sys_.family(0.0);
        base.weight = sys_.weight;
        PeriodicPointSet ref = lattice_points_for(base, m);
        PeriodicPointSet out = continue_periodic_points(sys_, ref, default_eps_path(sys_.eps), tol_);
        for (auto& p : out.points) p.gm = weight_product(sys_, p.x, m);
        if (!cache_dir_.empty()) {
            std::filesystem::create_directories(cache_dir_);
            save_cache(cache_file_name(cache_dir_, key), key, out);
        }
        return out;
    }

    PeriodicPointSet rebuild(int m, const std::vector<Vec2>& xs) {
        PeriodicPointSet out;
        out.period = m;
        out.method = OrbitMethod::NewtonContinued;
        out.map_id = sys_.id;
        out.eps = sys_.eps;
        for (const auto& x : xs) out.points.push_back({x, jacobian_cocycle(sys_, x, m), weight_product(sys_, x, m)});
        return out;
    }

    MapSystem sys_;
    double tol_;
    std::filesystem::path cache_dir_;
    std::map<int, PeriodicPointSet> sets_;
};

}  // namespace ruelle
