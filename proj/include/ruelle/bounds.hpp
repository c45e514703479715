#pragma once

#include "ruelle/periodic_orbits.hpp"

#include <map>
#include <queue>
#include <unordered_map>

namespace ruelle {

inline constexpr double kPoorFitResidual = 0.1;
inline constexpr double kPartitionPrune = 1e-14;
inline constexpr int kSupEvaluations = 4;

struct McEstimate {
    double value = 0;
    double std_error = 0;
    int n = 0;
};

// m-th-root limit from a log-linear fit over the largest `tail` values of m.
struct Extrapolation {
    double estimate = 0;  // exp(slope)
    double slope = 0;
    double residual = 0;
    bool poor_fit = false;
    std::vector<int> ms;
    std::vector<double> values;  // recorded verbatim
};

inline Extrapolation extrapolate_growth(const std::vector<int>& ms, const std::vector<double>& values, int tail = 4) {
    require(ms.size() == values.size(), "extrapolate_growth: size mismatch");
    require(static_cast<int>(ms.size()) >= tail && tail >= 2, "extrapolate_growth needs at least `tail` values of m");
    Extrapolation e;
    e.ms = ms;
    e.values = values;
    std::vector<double> x, y;
    for (std::size_t i = ms.size() - static_cast<std::size_t>(tail); i < ms.size(); ++i) {
        if (!(values[i] > 0)) throw NumericalFailure("extrapolate_growth: nonpositive value");
        x.push_back(ms[i]);
        y.push_back(std::log(values[i]));
    }
    LineFit f = fit_line(x, y);
    e.slope = f.slope;
    e.estimate = std::exp(f.slope);
    e.residual = f.rms_residual;
    e.poor_fit = e.residual > kPoorFitResidual;
    return e;
}

namespace detail {

// Uniform sample in V (torus: the unit square).
inline Vec2 sample_domain(const MapSystem& sys, const Vec2& unit01) {
    if (sys.is_torus()) return unit01;
    const Box& b = sys.chart_box;
    return {b.lo[0] + unit01[0] * (b.hi[0] - b.lo[0]), b.lo[1] + unit01[1] * (b.hi[1] - b.lo[1])};
}

struct PointFactors {
    double gm = 0;          // |g^(m)|
    double lam = 0;         // lambda^(p,q,m)
    double det_full = 1;    // |det DT^m|
    double det_u = 1;       // |det DT^m|_{E^u}|
};

// All pointwise factors at x; gm = 0 when the orbit leaves the domain.
inline PointFactors point_factors(const MapSystem& sys, const SplittingField& split, const Vec2& x, double p,
                                  double q, int m) {
    PointFactors f;
    try {
        double g = 1;
        Vec2 y = x;
        Mat2 d = Mat2::Identity();
        for (int k = 0; k < m; ++k) {
            sys.check_in_domain(y);
            g *= sys.weight(y);
            d = sys.jacobian(y) * d;
            y = sys.forward(y);
        }
        f.gm = std::abs(g);
        if (f.gm == 0) return f;
        const Vec2 s = split.stable(y);
        const Vec2 u = split.unstable(x);
        const double lam_s = 1.0 / (d.inverse() * s).norm();
        const double nu = (d * u).norm();
        f.lam = std::max(std::pow(lam_s, p), std::pow(nu, q));
        f.det_full = std::abs(d.determinant());
        f.det_u = nu;
    } catch (const OrbitLeftDomain&) {
        f = PointFactors{};
    }
    return f;
}

inline std::vector<Vec2> mc_points(const MapSystem& sys, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double a = u(rng);
        const double b = u(rng);
        pts.push_back(sample_domain(sys, Vec2(a, b)));
    }
    return pts;
}

}  // namespace detail

// Monte Carlo estimate of the integral of |g^(m)| lambda^(p,q,m) over normalized V.
inline McEstimate rho_pq_m(const MapSystem& sys, const SplittingField& split, double p, double q, int m,
                           int n_samples, std::uint64_t seed) {
    require(q <= 0 && 0 <= p, "rho_pq_m needs q <= 0 <= p");
    require(m >= 1 && n_samples >= 2, "rho_pq_m needs m >= 1 and at least two samples");
    CompensatedSum<> s, s2;
    for (const Vec2& x : detail::mc_points(sys, n_samples, seed)) {
        const auto f = detail::point_factors(sys, split, x, p, q, m);
        const double v = f.gm * f.lam;
        s.add(v);
        s2.add(v * v);
    }
    const double n = n_samples;
    McEstimate e;
    e.n = n_samples;
    e.value = s.value() / n;
    const double var = std::max(0.0, s2.value() / n - e.value * e.value) * n / (n - 1);
    e.std_error = std::sqrt(var / n);
    return e;
}

struct SeriesRow {
    int m = 0;
    double value = 0;
};

inline Extrapolation rho_pq_estimate(const std::vector<SeriesRow>& rows) {
    require(rows.size() >= 4, "rho_pq_estimate needs at least four values of m");
    std::vector<int> ms;
    std::vector<double> vs;
    for (const auto& r : rows) {
        ms.push_back(r.m);
        vs.push_back(r.value);
    }
    return extrapolate_growth(ms, vs);
}

// Sampled sup of |det DT^m|^{-1/t} |g^(m)| lambda^(p,q,m); t = infinity drops the determinant.
inline double R_pqt_m(const MapSystem& sys, const SplittingField& split, double p, double q, double t, int m,
                      int n_samples, std::uint64_t seed) {
    require(t >= 1, "R_pqt_m needs t in [1, inf]");
    require(q <= 0 && 0 <= p, "R_pqt_m needs q <= 0 <= p");
    const double expo = std::isinf(t) ? 0.0 : -1.0 / t;
    double best = 0;
    auto visit = [&](const Vec2& x) {
        const auto f = detail::point_factors(sys, split, x, p, q, m);
        if (f.gm == 0) return;
        best = std::max(best, std::pow(f.det_full, expo) * f.gm * f.lam);
    };
    for (const Vec2& u : r2_sequence(n_samples)) visit(detail::sample_domain(sys, u));
    for (const Vec2& x : detail::mc_points(sys, n_samples, seed)) visit(x);
    return best;
}

struct InequalityRow {
    int m = 0;
    McEstimate rho;
    std::vector<double> R;  // one per t
    double min_R = 0;
    bool ok = true;
};

struct InequalityReport {
    std::vector<double> t_grid;
    std::vector<InequalityRow> rows;
    bool pass = true;
};

inline InequalityReport inequality_report(const MapSystem& sys, const SplittingField& split, double p, double q,
                                        const std::vector<int>& ms, const std::vector<double>& t_grid, int n_samples,
                                        std::uint64_t seed) {
    require(sys.is_torus(), "the rho versus R comparison needs a volume-one torus domain");
    require(!t_grid.empty(), "inequality needs a nonempty t grid");
    InequalityReport rep;
    rep.t_grid = t_grid;
    for (int m : ms) {
        InequalityRow row;
        row.m = m;
        row.rho = rho_pq_m(sys, split, p, q, m, n_samples, seed);
        row.min_R = std::numeric_limits<double>::infinity();
        for (double t : t_grid) {
            row.R.push_back(R_pqt_m(sys, split, p, q, t, m, n_samples, seed));
            row.min_R = std::min(row.min_R, row.R.back());
        }
        row.ok = row.rho.value <= row.min_R + 3 * row.rho.std_error;
        rep.pass = rep.pass && row.ok;
        rep.rows.push_back(row);
    }
    return rep;
}

inline InequalityReport inequality_check(const MapSystem& sys, const SplittingField& split, double p, double q,
                                       const std::vector<int>& ms, const std::vector<double>& t_grid, int n_samples,
                                       std::uint64_t seed) {
    InequalityReport rep = inequality_report(sys, split, p, q, ms, t_grid, n_samples, seed);
    for (const auto& r : rep.rows)
        if (!r.ok) {
            std::ostringstream os;
            os.precision(17);
            os << "rho(" << r.m << ") = " << r.rho.value << " +- " << r.rho.std_error << " exceeds min_t R = " << r.min_R;
            throw InequalityViolated(os.str());
        }
    return rep;
}

// Finite cover of V by axis-parallel boxes (torus boxes are taken mod 1).
struct CoverSpec {
    std::vector<Box> elements;
    int generating_depth = 0;
};

inline bool cover_contains(const MapSystem& sys, const Box& b, const Vec2& x) {
    if (!sys.is_torus()) return b.contains(x);
    for (int i = 0; i < 2; ++i) {
        const double w = b.hi[i] - b.lo[i];
        if (w >= 1) continue;
        if (wrap01(x[i] - b.lo[i]) >= w) return false;
    }
    return true;
}

// k x k grid of boxes over V, each widened by `margin` on every side.
inline CoverSpec grid_cover(const MapSystem& sys, int k, double margin = 0.0) {
    require(k >= 1 && margin >= 0, "grid_cover needs k >= 1 and margin >= 0");
    const Box v = sys.is_torus() ? Box{Vec2(0, 0), Vec2(1, 1)} : sys.chart_box;
    CoverSpec c;
    const Vec2 step = (v.hi - v.lo) / k;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            Vec2 lo(v.lo[0] + i * step[0] - margin, v.lo[1] + j * step[1] - margin);
            Vec2 hi(v.lo[0] + (i + 1) * step[0] + margin, v.lo[1] + (j + 1) * step[1] + margin);
            c.elements.push_back(Box{lo, hi});
        }
    // Cat-type maps stretch by at least a factor 2 per step, so W^m_{-m} shrinks by 2^-m.
    c.generating_depth = static_cast<int>(std::ceil(std::log2(k))) + 1;
    return c;
}

inline void validate_cover(const MapSystem& sys, const CoverSpec& cover, int grid = 64) {
    require(!cover.elements.empty(), "cover has no elements");
    for (const Box& b : cover.elements)
        if (!sys.is_torus() && !(sys.isolating_box.contains(b.lo) && sys.isolating_box.contains(b.hi)))
            throw PreconditionViolated("cover element leaves the isolating box");
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            Vec2 x = detail::sample_domain(sys, Vec2((i + 0.5) / grid, (j + 0.5) / grid));
            bool hit = false;
            for (const Box& b : cover.elements) hit = hit || cover_contains(sys, b, x);
            if (!hit) throw PreconditionViolated("cover misses part of V");
        }
}

struct QStarReport {
    int m = 0;
    double greedy = 0;    // greedy subcover sum, an upper bound on the minimum
    double full_sum = 0;  // sum over every witnessed itinerary
    int itineraries = 0;
    int chosen = 0;
    int thin_witness = 0;  // itineraries seen by a single witness
};

namespace detail {

// Greedy weighted set cover over a finite universe; returns chosen set ids.
inline std::vector<std::size_t> greedy_set_cover(const std::vector<double>& cost,
                                                 const std::vector<std::vector<std::size_t>>& members,
                                                 std::size_t universe) {
    std::vector<bool> covered(universe, false);
    std::vector<std::size_t> fresh(members.size());
    for (std::size_t s = 0; s < members.size(); ++s) fresh[s] = members[s].size();
    using Entry = std::tuple<double, std::size_t, std::size_t>;  // ratio, set, fresh count when pushed
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (std::size_t s = 0; s < members.size(); ++s)
        if (fresh[s] > 0) heap.emplace(cost[s] / static_cast<double>(fresh[s]), s, fresh[s]);
    std::size_t left = universe;
    std::vector<std::size_t> chosen;
    while (left > 0 && !heap.empty()) {
        auto [ratio, s, stamp] = heap.top();
        heap.pop();
        std::size_t now = 0;
        for (std::size_t e : members[s]) now += covered[e] ? 0 : 1;
        if (now == 0) continue;
        if (now != stamp) {
            heap.emplace(cost[s] / static_cast<double>(now), s, now);
            continue;
        }
        chosen.push_back(s);
        for (std::size_t e : members[s])
            if (!covered[e]) {
                covered[e] = true;
                --left;
            }
    }
    return chosen;
}

}  // namespace detail

// Q_* for m = 1..m_max via witnessed itineraries of the cover and a greedy
// subcover. One forward pass per witness serves every m (itineraries of
// length m are prefixes).
inline std::vector<QStarReport> q_star_cover_series(const MapSystem& sys, const SplittingField& split, double p,
                                                    double q, const CoverSpec& cover, int m_max,
                                                    int witnesses_per_element,
                                                    std::size_t itinerary_budget = 2000000) {
    require(m_max >= 1 && witnesses_per_element >= 1, "q_star_cover needs m >= 1 and witnesses");
    validate_cover(sys, cover);
    const std::size_t n_el = cover.elements.size();
    if (static_cast<double>(m_max) * static_cast<double>(n_el) > static_cast<double>(itinerary_budget))
        throw BudgetExceeded("q_star_cover: m * |cover| exceeds the itinerary budget");
    require(std::log2(static_cast<double>(n_el)) * m_max < 62, "q_star_cover: itinerary code overflow");

    struct Level {
        std::unordered_map<std::uint64_t, std::size_t> index;
        std::vector<double> sup;
        std::vector<std::vector<std::size_t>> members;
        std::vector<int> hits;
        std::size_t witnesses = 0;
    };
    std::vector<Level> levels(static_cast<std::size_t>(m_max));
    const auto lattice = r2_sequence(witnesses_per_element);
    std::vector<std::vector<int>> memb(static_cast<std::size_t>(m_max));
    for (std::size_t el = 0; el < n_el; ++el) {
        const Box& b = cover.elements[el];
        for (const Vec2& u : lattice) {
            Vec2 x(b.lo[0] + u[0] * (b.hi[0] - b.lo[0]), b.lo[1] + u[1] * (b.hi[1] - b.lo[1]));
            if (sys.is_torus()) x = wrap01(x);
            // Memberships of T^k x; `alive` counts the steps that stay covered.
            int alive = 0;
            Vec2 y = x;
            for (int k = 0; k < m_max; ++k) {
                auto& mk = memb[static_cast<std::size_t>(k)];
                mk.clear();
                for (std::size_t j = 0; j < n_el; ++j)
                    if (cover_contains(sys, cover.elements[j], y)) mk.push_back(static_cast<int>(j));
                if (mk.empty()) break;
                alive = k + 1;
                if (k + 1 < m_max) {
                    y = sys.forward(y);
                    if (!sys.is_torus() && !sys.isolating_box.contains(y)) break;
                }
            }
            for (int m = 1; m <= alive; ++m) {
                Level& lv = levels[static_cast<std::size_t>(m - 1)];
                // The integrand is evaluated only for the first few witnesses of
                // each itinerary; cylinders are small, so the sup is stable.
                std::optional<double> val;
                auto value = [&]() {
                    if (!val) {
                        const auto f = detail::point_factors(sys, split, x, p, q, m);
                        val = f.gm == 0 ? 0.0 : f.gm * f.lam / f.det_u;
                    }
                    return *val;
                };
                const std::size_t wid = lv.witnesses++;
                std::function<void(int, std::uint64_t)> rec = [&](int k, std::uint64_t code) {
                    if (k == m) {
                        auto [pos, fresh] = lv.index.emplace(code, lv.sup.size());
                        if (fresh) {
                            if (lv.sup.size() >= itinerary_budget)
                                throw BudgetExceeded("q_star_cover: itinerary budget exhausted");
                            lv.sup.push_back(0);
                            lv.members.emplace_back();
                            lv.hits.push_back(0);
                        }
                        const std::size_t s = pos->second;
                        if (lv.hits[s] < kSupEvaluations) lv.sup[s] = std::max(lv.sup[s], value());
                        lv.members[s].push_back(wid);
                        ++lv.hits[s];
                        return;
                    }
                    for (int j : memb[static_cast<std::size_t>(k)]) rec(k + 1, code * n_el + static_cast<std::uint64_t>(j));
                };
                rec(0, 0);
            }
        }
    }
    std::vector<QStarReport> out;
    for (int m = 1; m <= m_max; ++m) {
        const Level& lv = levels[static_cast<std::size_t>(m - 1)];
        QStarReport rep;
        rep.m = m;
        rep.itineraries = static_cast<int>(lv.sup.size());
        CompensatedSum<> full;
        for (std::size_t s = 0; s < lv.sup.size(); ++s) {
            full.add(lv.sup[s]);
            if (lv.hits[s] == 1) ++rep.thin_witness;
        }
        rep.full_sum = full.value();
        auto chosen = detail::greedy_set_cover(lv.sup, lv.members, lv.witnesses);
        std::sort(chosen.begin(), chosen.end());
        CompensatedSum<> g;
        for (std::size_t s : chosen) g.add(lv.sup[s]);
        rep.greedy = g.value();
        rep.chosen = static_cast<int>(chosen.size());
        out.push_back(rep);
    }
    return out;
}

inline QStarReport q_star_cover(const MapSystem& sys, const SplittingField& split, double p, double q,
                                const CoverSpec& cover, int m, int witnesses_per_element,
                                std::size_t itinerary_budget = 2000000) {
    return q_star_cover_series(sys, split, p, q, cover, m, witnesses_per_element, itinerary_budget).back();
}

// Smooth periodic partition of unity on the torus: k x k products of 1D
// windows of width 1/k + delta, normalized to sum to one.
class TorusPartition {
public:
    TorusPartition(int k, double delta) : k_(k), delta_(delta) {
        require(k >= 1, "partition needs k >= 1");
        require(k == 1 || (delta > 0 && delta < 1.0 / k), "partition overlap must lie in (0, 1/k)");
    }

    int per_axis() const { return k_; }
    int size() const { return k_ * k_; }

    // Nonzero 1D windows at t: (index, value) pairs.
    std::vector<std::pair<int, double>> windows(double t) const {
        if (k_ == 1) return {{0, 1.0}};
        std::vector<std::pair<int, double>> out;
        double total = 0;
        for (int i = 0; i < k_; ++i) {
            const double v = raw(i, t);
            if (v > 0) {
                out.emplace_back(i, v);
                total += v;
            }
        }
        for (auto& w : out) w.second /= total;
        return out;
    }

    double operator()(int omega, const Vec2& x) const {
        double a = 0, b = 0;
        for (auto [i, v] : windows(x[0]))
            if (i == omega / k_) a = v;
        for (auto [i, v] : windows(x[1]))
            if (i == omega % k_) b = v;
        return a * b;
    }

private:
    double raw(int i, double t) const {
        const double d = std::abs(wrap_sym(t - (i + 0.5) / k_));
        const double s = (0.5 / k_ + 0.5 * delta_ - d) / delta_;
        if (s <= 0) return 0;
        if (s >= 1) return 1;
        const double a = smooth_edge(s), b = smooth_edge(1 - s);
        return a / (a + b);
    }

    int k_;
    double delta_;
};

inline double partition_sum_defect(const TorusPartition& phi, int grid = 257) {
    double worst = 0;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            Vec2 x((i + 0.25) / grid, (j + 0.75) / grid);
            double s = 0;
            for (int w = 0; w < phi.size(); ++w) s += phi(w, x);
            worst = std::max(worst, std::abs(s - 1));
        }
    return worst;
}

struct RhoStarReport {
    int m = 0;
    double value = 0;
    int terms = 0;
};

// rho_* sum of sampled sup norms over the itinerary products of the partition.
inline RhoStarReport rho_star_partition(const MapSystem& sys, const SplittingField& split, double p, double q,
                                        const TorusPartition& phi, int m, int n_points,
                                        std::size_t term_budget = 4000000) {
    require(sys.is_torus(), "rho_star_partition is implemented for torus maps");
    require(m >= 1, "rho_star_partition needs m >= 1");
    if (partition_sum_defect(phi, 65) > 1e-10) throw PreconditionViolated("partition does not sum to one");
    const double digits = std::log2(static_cast<double>(phi.size())) * m;
    require(digits < 62, "rho_star_partition: itinerary code overflow");
    const std::uint64_t base = static_cast<std::uint64_t>(phi.size());
    std::unordered_map<std::uint64_t, double> sup;
    for (const Vec2& x0 : r2_sequence(n_points)) {
        const auto f = detail::point_factors(sys, split, x0, p, q, m);
        if (f.gm == 0) continue;
        const double val = f.gm * f.lam / f.det_u;
        std::vector<std::vector<std::pair<int, double>>> level(static_cast<std::size_t>(m));
        Vec2 y = x0;
        for (int k = 0; k < m; ++k) {
            auto wa = phi.windows(y[0]), wb = phi.windows(y[1]);
            for (auto [i, a] : wa)
                for (auto [j, b] : wb) level[static_cast<std::size_t>(k)].emplace_back(i * phi.per_axis() + j, a * b);
            y = sys.forward(y);
        }
        std::function<void(int, std::uint64_t, double)> rec = [&](int k, std::uint64_t code, double prod) {
            if (prod < kPartitionPrune) return;
            if (k == m) {
                double& s = sup[code];
                s = std::max(s, prod * val);
                if (sup.size() > term_budget) throw BudgetExceeded("rho_star_partition: term budget exhausted");
                return;
            }
            for (auto [w, v] : level[static_cast<std::size_t>(k)]) rec(k + 1, code * base + static_cast<std::uint64_t>(w), prod * v);
        };
        rec(0, 0, 1.0);
    }
    // Fixed summation order for determinism.
    std::vector<std::pair<std::uint64_t, double>> terms(sup.begin(), sup.end());
    std::sort(terms.begin(), terms.end());
    CompensatedSum<> s;
    for (const auto& t : terms) s.add(t.second);
    return {m, s.value(), static_cast<int>(terms.size())};
}

struct PressureRow {
    int m = 0;
    double log_sum = 0;  // log sum_x exp(S_m phi(x))
    double P = 0;        // log_sum / m
    int points = 0;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double hi = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(hi)) return hi;
    CompensatedSum<> s;
    for (double x : v) s.add(std::exp(x - hi));
    return hi + std::log(s.value());
}

}  // namespace detail

// P_m = (1/m) log sum over Fix(T^m) of exp(Birkhoff sum of phi).
inline std::vector<PressureRow> pressure_periodic(OrbitProvider& orbits, const std::function<double(const Vec2&)>& phi,
                                                  const std::vector<int>& ms) {
    std::vector<PressureRow> out;
    const MapSystem& sys = orbits.system();
    for (int m : ms) {
        const auto& pts = orbits.points(m);
        if (pts.points.empty()) throw EmptyFixedSet("no periodic points of period " + std::to_string(m));
        std::vector<double> terms;
        terms.reserve(pts.size());
        for (const auto& pp : pts.points) {
            CompensatedSum<> s;
            Vec2 y = pp.x;
            for (int k = 0; k < m; ++k) {
                s.add(phi(y));
                y = sys.forward(y);
            }
            terms.push_back(s.value());
        }
        PressureRow r;
        r.m = m;
        r.points = static_cast<int>(pts.size());
        r.log_sum = detail::log_sum_exp(terms);
        r.P = r.log_sum / m;
        out.push_back(r);
    }
    return out;
}

// Stable and unstable multipliers of DT^m at a periodic point.
inline std::pair<double, double> periodic_multipliers(const Mat2& dtm) {
    const double tr = dtm.trace(), det = dtm.determinant();
    const double disc = tr * tr / 4 - det;
    if (disc <= 0) throw NumericalFailure("periodic point without real hyperbolic multipliers");
    // Larger root without cancellation, the smaller one from the determinant.
    const double big = tr / 2 + std::copysign(std::sqrt(disc), tr);
    const double a = std::abs(big), b = std::abs(det / big);
    if (!(b < 1 && a > 1)) throw NumericalFailure("periodic point is not saddle type");
    return {b, a};
}

struct QVariational {
    double p = 0, q = 0;
    std::vector<PressureRow> rows;  // pressure of the T^m potential
    Extrapolation fit;
    double estimate = 0;
    int floor_level = 0;  // weight_floor(n) used when g vanishes, 0 otherwise
};

// Pressure route: sum over Fix(T^m) of |g^(m)| lambda^(p,q,m) / |det DT^m|_{E^u}|,
// with the invariant splitting read off DT^m at each periodic point.
inline QVariational q_variational(OrbitProvider& orbits, double p, double q, const std::vector<int>& ms,
                                  int floor_level = 1000) {
    require(q <= 0 && 0 <= p, "q_variational needs q <= 0 <= p");
    const MapSystem& sys = orbits.system();
    QVariational out;
    out.p = p;
    out.q = q;
    std::optional<MapSystem> floored;
    if (sys.weight.vanishes_somewhere) {
        floored = with_weight(sys, weight_floor(sys.weight, floor_level));
        out.floor_level = floor_level;
    }
    for (int m : ms) {
        const auto& pts = orbits.points(m);
        if (pts.points.empty()) throw EmptyFixedSet("no periodic points of period " + std::to_string(m));
        std::vector<double> terms;
        terms.reserve(pts.size());
        for (const auto& pp : pts.points) {
            const double gm = std::abs(floored ? weight_product(*floored, pp.x, m) : pp.gm);
            auto [mu_s, mu_u] = periodic_multipliers(pp.dtm);
            const double lam = std::max(std::pow(mu_s, p), std::pow(mu_u, q));
            terms.push_back(std::log(gm) + std::log(lam) - std::log(mu_u));
        }
        PressureRow r;
        r.m = m;
        r.points = static_cast<int>(pts.size());
        r.log_sum = detail::log_sum_exp(terms);
        r.P = r.log_sum / m;
        out.rows.push_back(r);
    }
    std::vector<double> vals;
    for (const auto& r : out.rows) vals.push_back(std::exp(r.log_sum));
    out.fit = extrapolate_growth(ms, vals);
    out.estimate = out.fit.estimate;
    return out;
}

struct KitaevReport {
    double rho_estimate = 0;
    double q_estimate = 0;
    double log_gap = 0;
    double tol = 0;
    bool pass = false;
};

inline KitaevReport kitaev_crosscheck(const Extrapolation& rho, const QVariational& qv, double tol = 0.05) {
    KitaevReport rep;
    rep.rho_estimate = rho.estimate;
    rep.q_estimate = qv.estimate;
    rep.log_gap = std::abs(std::log(rho.estimate) - std::log(qv.estimate));
    rep.tol = tol;
    rep.pass = rep.log_gap <= tol;
    if (!rep.pass) {
        std::ostringstream os;
        os.precision(10);
        os << "rho route " << rho.estimate << " vs pressure route " << qv.estimate << ": log gap " << rep.log_gap
           << " > " << tol;
        throw CrossCheckFailed(os.str());
    }
    return rep;
}

struct ValidityRadius {
    double radius = 0;  // 1 / Q^{p,q}
    double coarse = 0;  // 1 / Q^{0,0}
    int floor_level = 0;
};

inline ValidityRadius validity_radius(OrbitProvider& orbits, double p, double q, const std::vector<int>& ms) {
    const QVariational qpq = q_variational(orbits, p, q, ms);
    const QVariational q00 = q_variational(orbits, 0, 0, ms);
    return {1.0 / qpq.estimate, 1.0 / q00.estimate, qpq.floor_level};
}

// Knobs for the full bound report.
struct BoundsConfig {
    double p = 1;
    double q = -1;
    std::vector<double> t_grid{1.0, 2.0, std::numeric_limits<double>::infinity()};
    int m_orbit_max = 10;  // orbit and integral routes
    int m_cover_max = 8;   // cover and partition routes
    int n_samples = 4000;
    int cover_k = 4;
    int witnesses_per_element = 4096;
    int partition_k = 4;
    double partition_delta = 0.05;
    int partition_points = 1 << 16;
    double tol_cross = 0.05;
    std::uint64_t seed = 1;
};

struct BoundRow {
    int m = 0;
    McEstimate rho;
    std::vector<double> R;
    std::optional<QStarReport> q_star;
    std::optional<double> rho_star;
    double pressure = 0;  // log sum of the pressure-route potential
};

struct BoundReport {
    BoundsConfig cfg;
    std::string map_id;
    std::string weight_id;
    std::vector<BoundRow> rows;
    Extrapolation rho_fit;
    QVariational q_var;
    std::optional<Extrapolation> q_star_fit;
    std::optional<Extrapolation> rho_star_fit;
    std::vector<double> R_fit;  // m-th-root limit per t
    InequalityReport inequality;
    KitaevReport kitaev;
    bool kitaev_pass = false;
    std::string kitaev_message;
    ValidityRadius radius;
};

inline BoundReport compute_bound_report(OrbitProvider& orbits, const BoundsConfig& cfg) {
    const MapSystem& sys = orbits.system();
    const SplittingField split = splitting_power_iteration(sys);
    BoundReport rep;
    rep.cfg = cfg;
    rep.map_id = sys.id;
    rep.weight_id = sys.weight.id;
    std::vector<int> ms;
    for (int m = 1; m <= cfg.m_orbit_max; ++m) ms.push_back(m);
    rep.q_var = q_variational(orbits, cfg.p, cfg.q, ms);
    const auto q_star = q_star_cover_series(sys, split, cfg.p, cfg.q, grid_cover(sys, cfg.cover_k),
                                            std::min(cfg.m_cover_max, cfg.m_orbit_max), cfg.witnesses_per_element);
    const TorusPartition part(cfg.partition_k, cfg.partition_delta);
    std::vector<SeriesRow> rho_rows;
    std::vector<int> cover_ms;
    std::vector<double> qs, rs;
    std::vector<std::vector<double>> r_by_t(cfg.t_grid.size());
    for (int m : ms) {
        BoundRow row;
        row.m = m;
        row.rho = rho_pq_m(sys, split, cfg.p, cfg.q, m, cfg.n_samples, cfg.seed);
        for (std::size_t i = 0; i < cfg.t_grid.size(); ++i) {
            row.R.push_back(R_pqt_m(sys, split, cfg.p, cfg.q, cfg.t_grid[i], m, cfg.n_samples, cfg.seed));
            r_by_t[i].push_back(row.R.back());
        }
        if (m <= cfg.m_cover_max) {
            row.q_star = q_star[static_cast<std::size_t>(m - 1)];
            row.rho_star = rho_star_partition(sys, split, cfg.p, cfg.q, part, m, cfg.partition_points).value;
            cover_ms.push_back(m);
            qs.push_back(row.q_star->greedy);
            rs.push_back(*row.rho_star);
        }
        row.pressure = rep.q_var.rows[static_cast<std::size_t>(m - 1)].log_sum;
        rho_rows.push_back({m, row.rho.value});
        rep.rows.push_back(row);
    }
    rep.rho_fit = rho_pq_estimate(rho_rows);
    if (cover_ms.size() >= 4) {
        rep.q_star_fit = extrapolate_growth(cover_ms, qs);
        rep.rho_star_fit = extrapolate_growth(cover_ms, rs);
    }
    for (const auto& v : r_by_t) rep.R_fit.push_back(extrapolate_growth(ms, v).estimate);
    std::vector<int> bms;
    for (int m = 1; m <= std::min(6, cfg.m_orbit_max); ++m) bms.push_back(m);
    rep.inequality = inequality_report(sys, split, cfg.p, cfg.q, bms, cfg.t_grid, cfg.n_samples, cfg.seed);
    try {
        rep.kitaev = kitaev_crosscheck(rep.rho_fit, rep.q_var, cfg.tol_cross);
        rep.kitaev_pass = true;
    } catch (const CrossCheckFailed& e) {
        rep.kitaev_message = e.what();
        rep.kitaev.rho_estimate = rep.rho_fit.estimate;
        rep.kitaev.q_estimate = rep.q_var.estimate;
        rep.kitaev.log_gap = std::abs(std::log(rep.rho_fit.estimate) - std::log(rep.q_var.estimate));
        rep.kitaev.tol = cfg.tol_cross;
    }
    const QVariational q00 = q_variational(orbits, 0, 0, ms);
    rep.radius = {1.0 / rep.q_var.estimate, 1.0 / q00.estimate, rep.q_var.floor_level};
    return rep;
}

}  // namespace ruelle
