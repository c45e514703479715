#pragma once

#include "ruelle/determinant.hpp"
#include "ruelle/fft.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <map>

namespace ruelle {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using SparseC = Eigen::SparseMatrix<cplx>;

inline constexpr int kDenseEigenLimit = 700;
inline constexpr double kEntryDrop = 1e-15;
inline constexpr double kColumnTail = 1e-14;

// Fourier matrix of L u = g (u o T) on modes k in [-N, N]^2 (column k holds
// the coefficients of g e_k o T).
struct TransferMatrix {
    int N = 0;
    int grid_factor = 4;
    bool aliasing_risk = false;
    int max_column_grid = 0;  // largest per-column FFT grid used
    SparseC entries;

    int side() const { return 2 * N + 1; }
    int dim() const { return side() * side(); }
    int index(int k0, int k1) const { return (k0 + N) * side() + (k1 + N); }
    IntVec2 mode(int i) const { return IntVec2(i / side() - N, i % side() - N); }
    bool in_range(std::int64_t k0, std::int64_t k1) const { return std::abs(k0) <= N && std::abs(k1) <= N; }
};

namespace detail {

// Samples of g and P = lift - A x on the M x M grid x = (i, j) / M.
struct GridSamples {
    std::vector<double> g;
    std::vector<Vec2> p;
};

class SampleCache {
public:
    SampleCache(const MapSystem& sys, Mat2 a) : sys_(sys), a_(std::move(a)) {}

    const GridSamples& at(int M) {
        auto it = cache_.find(M);
        if (it != cache_.end()) return it->second;
        GridSamples s;
        s.g.resize(static_cast<std::size_t>(M) * M);
        s.p.resize(s.g.size());
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
                const Vec2 x(static_cast<double>(i) / M, static_cast<double>(j) / M);
                const std::size_t n = static_cast<std::size_t>(i) * M + j;
                s.g[n] = sys_.weight(x) / (static_cast<double>(M) * M);
                s.p[n] = sys_.lift(x) - a_ * x;
            }
        return cache_.emplace(M, std::move(s)).first->second;
    }

private:
    const MapSystem& sys_;
    Mat2 a_;
    std::map<int, GridSamples> cache_;
};

// Coefficients of h(x) = g(x) exp(2 pi i k.P(x)) on an M x M grid, M >= m0;
// M doubles until the outer quarter of the spectrum sits at the roundoff floor.
inline int column_spectrum(SampleCache& samples, const IntVec2& k, int m0, std::map<int, Fft2>& ffts,
                           Fft2*& used) {
    const Vec2 kd = k.cast<double>();
    for (int M = m0;; M *= 2) {
        if (M > 4096) throw NumericalFailure("collocation column needs an FFT grid above 4096");
        const GridSamples& s = samples.at(M);
        Fft2& fft = ffts.try_emplace(M, M, M).first->second;
        cplx* d = fft.data();
        for (std::size_t n = 0; n < s.g.size(); ++n) d[n] = s.g[n] * std::polar(1.0, kTwoPi * kd.dot(s.p[n]));
        fft.forward();
        double peak = 0, outer = 0;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
                const double v = std::abs(fft.at(i, j));
                peak = std::max(peak, v);
                if (std::abs(fft_freq(i, M)) > 3 * M / 8 || std::abs(fft_freq(j, M)) > 3 * M / 8) outer = std::max(outer, v);
            }
        if (outer <= kColumnTail * peak) {
            used = &fft;
            return M;
        }
    }
}

}  // namespace detail

inline TransferMatrix build_transfer_matrix(const MapSystem& sys, int N, int grid_factor = 4) {
    require(sys.is_torus() && sys.linear_part && sys.lift, "collocation needs a torus map with a lift");
    require(N >= 1 && grid_factor >= 1, "collocation needs N >= 1 and grid_factor >= 1");
    TransferMatrix tm;
    tm.N = N;
    tm.grid_factor = grid_factor;
    tm.aliasing_risk = grid_factor < 4;
    const IntMat2 A = *sys.linear_part;
    const Mat2 a = to_double(A);
    const IntMat2 At = A.transpose();
    std::vector<Eigen::Triplet<cplx>> trip;
    detail::SampleCache samples(sys, a);
    std::map<int, Fft2> ffts;
    // Start from 4 * grid_factor points per axis; neighbouring columns need
    // similar grids, so each column starts one level below the previous one.
    const int m0 = 4 * grid_factor;
    int prev = m0;
    for (int col = 0; col < tm.dim(); ++col) {
        const IntVec2 k = tm.mode(col);
        Fft2* fft = nullptr;
        const int M = detail::column_spectrum(samples, k, std::max(m0, prev / 2), ffts, fft);
        prev = M;
        tm.max_column_grid = std::max(tm.max_column_grid, M);
        const IntVec2 shift = At * k;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
                const cplx v = fft->at(i, j);
                if (std::abs(v) <= kEntryDrop) continue;
                const std::int64_t r0 = shift[0] + fft_freq(i, M), r1 = shift[1] + fft_freq(j, M);
                if (!tm.in_range(r0, r1)) continue;
                trip.emplace_back(tm.index(static_cast<int>(r0), static_cast<int>(r1)), col, v);
            }
    }
    tm.entries.resize(tm.dim(), tm.dim());
    tm.entries.setFromTriplets(trip.begin(), trip.end());
    tm.entries.makeCompressed();
    return tm;
}

struct Resonance {
    cplx mu;
    double residual = 0;  // ||M v - mu v|| / ||v||
};

inline void sort_by_modulus(std::vector<Resonance>& r) {
    std::sort(r.begin(), r.end(), [](const Resonance& a, const Resonance& b) {
        const double ma = std::abs(a.mu), mb = std::abs(b.mu);
        if (ma != mb) return ma > mb;
        if (a.mu.real() != b.mu.real()) return a.mu.real() < b.mu.real();
        return a.mu.imag() < b.mu.imag();
    });
}

inline std::vector<Resonance> dense_eigenpairs(const CMatrix& m) {
    if (!m.allFinite()) throw EigenSolverFailure("matrix has non-finite entries");
    Eigen::ComplexEigenSolver<CMatrix> es(m, true);
    if (es.info() != Eigen::Success) throw EigenSolverFailure("dense eigensolver did not converge");
    std::vector<Resonance> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const CVector v = es.eigenvectors().col(i);
        const cplx mu = es.eigenvalues()[i];
        out.push_back({mu, (m * v - mu * v).norm() / v.norm()});
    }
    sort_by_modulus(out);
    return out;
}

struct ArnoldiOptions {
    double min_modulus = 0.0;  // eigenvalues wanted: |mu| >= min_modulus
    int krylov_start = 60;
    int krylov_max = 600;
    double tol = 1e-12;  // relative Ritz residual for acceptance
    std::uint64_t seed = 1;
};

// Arnoldi with full reorthogonalization. The Krylov dimension grows until
// every Ritz value with |mu| >= min_modulus has a small residual and the
// count of such values is unchanged by the last growth step.
inline std::vector<Resonance> arnoldi_eigenpairs(const SparseC& a, const ArnoldiOptions& opt) {
    const Eigen::Index n = a.rows();
    Rng rng(opt.seed);
    std::normal_distribution<double> g;
    CVector v0(n);
    for (Eigen::Index i = 0; i < n; ++i) v0[i] = cplx(g(rng), g(rng));
    v0.normalize();
    const int kmax = static_cast<int>(std::min<Eigen::Index>(opt.krylov_max, n));
    CMatrix V(n, kmax + 1);
    CMatrix H = CMatrix::Zero(kmax + 1, kmax);
    V.col(0) = v0;
    int built = 0;
    int prev_count = -1;
    for (int k = std::min(opt.krylov_start, kmax);; k = std::min(2 * k, kmax)) {
        bool breakdown = false;
        for (; built < k; ++built) {
            CVector w = a * V.col(built);
            for (int pass = 0; pass < 2; ++pass) {
                const CVector h = V.leftCols(built + 1).adjoint() * w;
                w -= V.leftCols(built + 1) * h;
                H.col(built).head(built + 1) += h;
            }
            const double beta = w.norm();
            H(built + 1, built) = beta;
            if (beta < 1e-14) {
                ++built;
                breakdown = true;
                break;
            }
            V.col(built + 1) = w / beta;
        }
        const int kk = built;
        Eigen::ComplexEigenSolver<CMatrix> es(H.topLeftCorner(kk, kk), true);
        if (es.info() != Eigen::Success) throw EigenSolverFailure("Hessenberg eigensolve failed");
        std::vector<Resonance> ritz;
        bool converged = true;
        int count = 0;
        for (int i = 0; i < kk; ++i) {
            const cplx mu = es.eigenvalues()[i];
            const CVector y = es.eigenvectors().col(i);
            const double res = breakdown ? 0.0 : std::abs(H(kk, kk - 1) * y[kk - 1]) / y.norm();
            ritz.push_back({mu, res});
            if (std::abs(mu) >= opt.min_modulus) {
                ++count;
                if (res > opt.tol * std::max(std::abs(mu), 1e-300)) converged = false;
            }
        }
        if (breakdown || kk >= kmax || (converged && count == prev_count)) {
            if (!converged && !breakdown)
                throw EigenSolverFailure("Arnoldi did not converge within the Krylov limit");
            sort_by_modulus(ritz);
            return ritz;
        }
        prev_count = count;
    }
}

// Eigenvalues of the transfer matrix with |mu| >= min_modulus, largest first.
inline std::vector<Resonance> eigen_resonances(const TransferMatrix& tm, double min_modulus = 0.0) {
    std::vector<Resonance> all;
    if (tm.dim() <= kDenseEigenLimit) {
        all = dense_eigenpairs(CMatrix(tm.entries));
    } else {
        ArnoldiOptions opt;
        opt.min_modulus = min_modulus;
        all = arnoldi_eigenpairs(tm.entries, opt);
    }
    std::vector<Resonance> out;
    for (const auto& r : all)
        if (std::abs(r.mu) >= min_modulus) out.push_back(r);
    return out;
}

// Greedy nearest-neighbour pairing; each partner is used once. Keeps the
// eigenvalues of `a` with a partner in `b` within rel_tol * max(|mu|, 1).
inline std::vector<Resonance> stability_filter(const std::vector<Resonance>& a, const std::vector<Resonance>& b,
                                               double rel_tol = 1e-6) {
    struct Pair {
        double d;
        std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) pairs.push_back({std::abs(a[i].mu - b[j].mu), i, j});
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        return x.d != y.d ? x.d < y.d : (x.i != y.i ? x.i < y.i : x.j < y.j);
    });
    std::vector<bool> ua(a.size(), false), ub(b.size(), false);
    std::vector<Resonance> kept;
    for (const auto& p : pairs) {
        if (ua[p.i] || ub[p.j]) continue;
        if (p.d > rel_tol * std::max(std::abs(a[p.i].mu), 1.0)) continue;
        ua[p.i] = ub[p.j] = true;
        kept.push_back(a[p.i]);
    }
    sort_by_modulus(kept);
    return kept;
}

struct MatchPair {
    cplx zero;
    cplx inverse;  // 1 / zero
    cplx eigenvalue;
    double gap = 0;
    int zero_multiplicity = 1;
    int eigen_multiplicity = 1;
};

struct MatchReport {
    double radius = 0;
    double tol = 0;
    std::vector<MatchPair> pairs;
    std::vector<cplx> unmatched_zeros;
    std::vector<cplx> unmatched_eigenvalues;
    bool multiplicities_agree = true;
    bool bijective() const { return unmatched_zeros.empty() && unmatched_eigenvalues.empty(); }
};

// Clusters of eigenvalues at relative distance 1e-6 (multiplicity surrogate).
inline std::vector<std::pair<cplx, int>> cluster_eigenvalues(const std::vector<Resonance>& eigs, double rel = 1e-6) {
    std::vector<std::pair<cplx, int>> out;
    for (const auto& r : eigs) {
        bool merged = false;
        for (auto& c : out)
            if (std::abs(c.first - r.mu) <= rel * std::max(std::abs(c.first), 1.0)) {
                ++c.second;
                merged = true;
                break;
            }
        if (!merged) out.emplace_back(r.mu, 1);
    }
    return out;
}

inline MatchReport match_resonances_to_zeros(const std::vector<Resonance>& stable,
                                             const std::vector<DeterminantZero>& zeros, double radius, double tol) {
    MatchReport rep;
    rep.radius = radius;
    rep.tol = tol;
    std::vector<DeterminantZero> zin;
    for (const auto& z : zeros)
        if (std::abs(z.z) < radius) zin.push_back(z);
    std::vector<std::pair<cplx, int>> ein;
    for (const auto& c : cluster_eigenvalues(stable))
        if (std::abs(c.first) > 0 && 1.0 / std::abs(c.first) < radius) ein.push_back(c);
    struct Cand {
        double d;
        std::size_t i, j;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < zin.size(); ++i)
        for (std::size_t j = 0; j < ein.size(); ++j) cands.push_back({std::abs(ein[j].first - 1.0 / zin[i].z), i, j});
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        return x.d != y.d ? x.d < y.d : (x.i != y.i ? x.i < y.i : x.j < y.j);
    });
    std::vector<bool> uz(zin.size(), false), ue(ein.size(), false);
    for (const auto& c : cands) {
        if (uz[c.i] || ue[c.j] || c.d > tol) continue;
        uz[c.i] = ue[c.j] = true;
        MatchPair p;
        p.zero = zin[c.i].z;
        p.inverse = 1.0 / zin[c.i].z;
        p.eigenvalue = ein[c.j].first;
        p.gap = c.d;
        p.zero_multiplicity = zin[c.i].multiplicity;
        p.eigen_multiplicity = ein[c.j].second;
        rep.multiplicities_agree = rep.multiplicities_agree && p.zero_multiplicity == p.eigen_multiplicity;
        rep.pairs.push_back(p);
    }
    for (std::size_t i = 0; i < zin.size(); ++i)
        if (!uz[i]) rep.unmatched_zeros.push_back(zin[i].z);
    for (std::size_t j = 0; j < ein.size(); ++j)
        if (!ue[j]) rep.unmatched_eigenvalues.push_back(ein[j].first);
    return rep;
}

}  // namespace ruelle
