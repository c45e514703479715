#include "ruelle/aniso.hpp"

#include <gtest/gtest.h>

using namespace ruelle;

namespace {

const Polarization kTheta = standard_chart_polarization();
constexpr double kDeg = kPi / 180.0;

// Polarization whose admissible lines include the horizontal one.
Polarization vertical_plus() { return Polarization(Sector{kPi / 2, 35 * kDeg}, Sector{0.0, 35 * kDeg}); }

ChartModel zero_weight_model() {
    ChartModel m = builtin_chart_model(0.0);
    m.sys = with_weight(m.sys, weight_constant(0.0));
    return m;
}

ChartModel iterated(const ChartModel& base, int m) { return {iterate_system(base.sys, m), base.theta, base.theta_prime}; }

GridFunction gaussian(const LabGrid& g, Vec2 c, double width, cplx amp = 1.0) {
    return GridFunction::sample(g, [&](const Vec2& x) { return amp * std::exp(-(x - c).squaredNorm() / (2 * width * width)); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Cutoffs

TEST(Mollifier, PlateausAndMidpoint) {
    EXPECT_EQ(mollifier_chi(0.5), 1.0);
    EXPECT_EQ(mollifier_chi(1.0), 1.0);
    EXPECT_NEAR(mollifier_chi(1.5), 0.5, 1e-15);
    EXPECT_EQ(mollifier_chi(2.0), 0.0);
    EXPECT_EQ(mollifier_chi(2.3), 0.0);
    for (double s = 1.0; s < 2.0; s += 0.01) EXPECT_GE(mollifier_chi(s), mollifier_chi(s + 0.01));
}

TEST(DyadicPartition, OriginSplitsEvenly) {
    EXPECT_EQ(dyadic_partition_eval(kTheta, 0, 1, Vec2::Zero()), 0.5);
    EXPECT_EQ(dyadic_partition_eval(kTheta, 0, -1, Vec2::Zero()), 0.5);
    for (int n = 1; n <= 4; ++n) EXPECT_EQ(dyadic_partition_eval(kTheta, n, 1, Vec2::Zero()), 0.0);
}

TEST(DyadicPartition, SumsToOneOnFrequencyGrid) {
    const int n_max = 8, G = 512;
    const double R = std::ldexp(1.0, n_max);
    const DyadicFamily fam(kTheta);
    double worst = 0;
    int checked = 0;
    for (int i = 0; i < G; ++i)
        for (int j = 0; j < G; ++j) {
            const Vec2 xi(-R + 2 * R * i / (G - 1), -R + 2 * R * j / (G - 1));
            if (xi.norm() > R) continue;
            double s = 0;
            for (const auto& z : dyadic_indices(n_max)) s += fam.psi(z, xi);
            worst = std::max(worst, std::abs(s - 1));
            ++checked;
        }
    EXPECT_GT(checked, 200000);
    EXPECT_LE(worst, 1e-12);
}

TEST(DyadicPartition, WidenedCutoffIsOneOnSupport) {
    const DyadicFamily fam(kTheta);
    int hits = 0;
    for (const auto& z : dyadic_indices(5))
        for (int i = 0; i < 240; ++i)
            for (int k = 0; k < 360; ++k) {
                const double r = std::ldexp(2.2, z.n) * (i + 0.5) / 240;
                const Vec2 xi = r * unit(k * kDeg);
                if (fam.psi(z, xi) == 0.0) continue;
                ++hits;
                EXPECT_NEAR(fam.psi_tilde(z, xi), 1.0, 1e-15) << z.str() << " r=" << r << " a=" << k;
            }
    EXPECT_GT(hits, 10000);
}

TEST(DyadicPartition, ConeFactorsSelectDirections) {
    const DyadicFamily fam(kTheta);
    EXPECT_EQ(fam.psi({3, 1}, Vec2(8, 0)), 1.0);
    EXPECT_EQ(fam.psi({3, -1}, Vec2(8, 0)), 0.0);
    EXPECT_EQ(fam.psi({3, -1}, Vec2(0, 8)), 1.0);
    // Within the refined plus cone the widened minus cutoff vanishes.
    EXPECT_EQ(fam.psi_tilde({3, -1}, 8 * unit(10 * kDeg)), 0.0);
}

TEST(DyadicPartition, ScalingLawOnGrid) {
    // psi^_n(x) = 4^{n-1} psi^_1(2^{n-1} x); a box scaled by 2^{n-1} puts
    // psi^_1 on the same index grid.
    const int G = 256;
    for (int n : {3, 5}) {
        const LabGrid fine{2.0, G};
        const LabGrid wide{2.0 * std::ldexp(1.0, n - 1), G};
        for (int sigma : {1, -1}) {
            const GridFunction a = psi_hat_on_grid(fine, kTheta, {n, sigma});
            const GridFunction b = psi_hat_on_grid(wide, kTheta, {1, sigma});
            const double scale = std::ldexp(1.0, 2 * (n - 1));
            const double peak = a.max_abs();
            double worst = 0;
            for (std::size_t i = 0; i < a.v.size(); ++i)
                if (std::abs(a.v[i]) > 1e-3 * peak) worst = std::max(worst, std::abs(a.v[i] - scale * b.v[i]) / std::abs(a.v[i]));
            EXPECT_LE(worst, 1e-6) << n << " " << sigma;
        }
    }
}

// ---------------------------------------------------------------------------
// Band projection

TEST(BandProject, PlaneWaveInsideBandIsKept) {
    // B = pi makes the frequency lattice integral, so |xi| = 8 sits on ring 3.
    const LabGrid g{kPi, 64};
    const auto u = GridFunction::sample(g, [](const Vec2& x) { return std::polar(1.0, 8 * x[0]); });
    const auto kept = band_project(u, kTheta, 3, 1, SupportPolicy::Periodic);
    EXPECT_LE(max_diff(kept.u, u), 1e-10);
    const auto dropped = band_project(u, kTheta, 3, -1, SupportPolicy::Periodic);
    EXPECT_LE(dropped.u.max_abs(), 1e-10);
}

TEST(BandProject, PlaneWaveNeedsPeriodicPolicy) {
    const LabGrid g{kPi, 64};
    const auto u = GridFunction::sample(g, [](const Vec2& x) { return std::polar(1.0, 8 * x[1]); });
    EXPECT_THROW(band_project(u, kTheta, 3, -1), SupportMarginViolated);
}

TEST(BandProject, BandsReassembleBandLimitedInput) {
    const LabGrid g{4.0, 256};
    const auto u = gaussian(g, Vec2(0.3, -0.2), 0.3) + gaussian(g, Vec2(-0.5, 0.4), 0.2, cplx(0, 0.7));
    GridFunction sum(g);
    for (const auto& z : dyadic_indices(6)) {
        const auto b = band_project(u, kTheta, z.n, z.sigma);
        EXPECT_LE(b.outside_fraction, 1e-8) << z.str();
        sum = sum + b.u;
    }
    EXPECT_LE(max_diff(sum, u), 1e-10);
}

// ---------------------------------------------------------------------------
// Mixed norm and Young inequality

TEST(MixedNorm, GaussianLineIntegral) {
    const LabGrid g{4.0, 256};
    const auto u = GridFunction::sample(g, [](const Vec2& x) { return cplx(std::exp(-x.squaredNorm()), 0); });
    const auto m = mixed_norm_L1F(u, vertical_plus());
    EXPECT_NEAR(m.value, std::sqrt(kPi), 1e-3);
    EXPECT_NEAR(m.offset, 0.0, 1e-12);
}

TEST(MixedNorm, ZeroAndHomogeneity) {
    const LabGrid g{4.0, 128};
    EXPECT_EQ(mixed_norm_L1F(GridFunction(g), kTheta).value, 0.0);
    const auto u = gaussian(g, Vec2(0.2, 0.1), 0.4) + gaussian(g, Vec2(-0.6, 0.3), 0.15, cplx(0.3, -0.8));
    const double base = mixed_norm_L1F(u, kTheta).value;
    for (double c : {2.0, -0.5, 0.125}) EXPECT_DOUBLE_EQ(mixed_norm_L1F(cplx(c, 0) * u, kTheta).value, std::abs(c) * base);
}

TEST(MixedNorm, LinesFollowThePlusCone) {
    // A thin horizontal ridge has a large integral along horizontal lines,
    // which are admissible only when the plus cone is vertical.
    const LabGrid g{4.0, 256};
    const auto ridge = GridFunction::sample(g, [](const Vec2& x) {
        return cplx(std::exp(-x[1] * x[1] / 0.005 - x[0] * x[0] / 2), 0);
    });
    EXPECT_GT(mixed_norm_L1F(ridge, vertical_plus()).value, 5 * mixed_norm_L1F(ridge, kTheta).value);
}

TEST(Young, RandomDrawsPass) {
    const LabGrid g{4.0, 256};
    Rng rng(11);
    std::uniform_real_distribution<double> pos(-0.6, 0.6), width(0.08, 0.35), amp(-1, 1);
    auto blob = [&](int terms, double spread) {
        GridFunction f(g);
        for (int t = 0; t < terms; ++t) {
            const Vec2 c(spread * pos(rng), spread * pos(rng));
            const double wx = width(rng), wy = width(rng);
            const cplx a(amp(rng), amp(rng));
            f = f + GridFunction::sample(g, [&](const Vec2& x) {
                    const Vec2 d = x - c;
                    return a * std::exp(-d[0] * d[0] / (2 * wx * wx) - d[1] * d[1] / (2 * wy * wy));
                });
        }
        return f;
    };
    int passed = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto A = blob(2, 0.5);
        const auto u = blob(3, 1.5);
        const auto r = young_check(A, u, kTheta);
        passed += r.pass;
        EXPECT_TRUE(r.pass) << trial << " lhs=" << r.lhs << " rhs=" << r.rhs << " slack=" << r.slack;
    }
    EXPECT_EQ(passed, 100);
}

TEST(Young, GaussianKernelHasStrictGap) {
    const LabGrid g{4.0, 256};
    auto A = gaussian(g, Vec2::Zero(), 0.25);
    A = cplx(1.0 / A.l1(), 0) * A;
    const auto r = young_check(A, gaussian(g, Vec2(0.3, 0), 0.3), kTheta);
    EXPECT_TRUE(r.pass);
    EXPECT_LT(r.lhs, 0.99 * r.rhs);
}

TEST(Young, NearDeltaIsAlmostSharp) {
    const LabGrid g{4.0, 256};
    auto A = gaussian(g, Vec2::Zero(), 0.01);
    A = cplx(1.0 / A.l1(), 0) * A;
    const auto r = young_check(A, gaussian(g, Vec2(0.3, -0.2), 0.3) + gaussian(g, Vec2(-0.4, 0.2), 0.2), kTheta);
    EXPECT_TRUE(r.pass);
    EXPECT_GE(r.lhs / r.rhs, 0.95);
}

TEST(Young, ZeroInput) {
    const LabGrid g{4.0, 128};
    const auto r = young_check(gaussian(g, Vec2::Zero(), 0.2), GridFunction(g), kTheta);
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);
    EXPECT_TRUE(r.pass);
}

// ---------------------------------------------------------------------------
// h exponents and linkage

namespace {

// For DT^tr = diag(a, b) the extrema sit on sector edges: the largest image
// outside C'_- has its image on the edge of C'_-, the smallest image of a
// covector outside C_+ comes from the edge of C_+.
std::pair<double, double> diagonal_extrema(double a, double b, const Polarization& th, const Polarization& thp) {
    const double em = std::abs(line_angle_diff(thp.minus().center)) - thp.minus().half_angle;  // image angle from x-axis
    const double sup = 1.0 / std::hypot(std::cos(em) / a, std::sin(em) / b);
    const double ep = th.plus().half_angle;
    const double inf = std::hypot(a * std::cos(ep), b * std::sin(ep));
    return {sup, inf};
}

}  // namespace

TEST(HExponents, LinearChartMatchesSectorGeometry) {
    const auto m = builtin_chart_model(0.0);
    const auto h = h_exponents(m.sys, m.theta, m.theta_prime);
    const auto [sup, inf] = diagonal_extrema(0.5, 2.0, m.theta, m.theta_prime);
    EXPECT_NEAR(h.sup_norm, sup, 1e-12);
    EXPECT_NEAR(h.inf_norm, inf, 1e-12);
    EXPECT_EQ(h.h_plus, static_cast<int>(std::floor(std::log2(sup))) + 6);
    EXPECT_EQ(h.h_minus, static_cast<int>(std::floor(std::log2(inf))) - 6);
    EXPECT_EQ(h.h_plus, 5);
    EXPECT_EQ(h.h_minus, -6);
}

TEST(HExponents, ScalingShiftsBothByK) {
    const auto m = builtin_chart_model(0.03);
    const auto h0 = h_exponents(m.sys, m.theta, m.theta_prime);
    for (int k : {-3, 2, 5}) {
        MapSystem s = m.sys;
        const auto jac = m.sys.jacobian;
        const double f = std::ldexp(1.0, k);
        s.jacobian = [jac, f](const Vec2& x) { return Mat2(f * jac(x)); };
        const auto h = h_exponents(s, m.theta, m.theta_prime);
        EXPECT_EQ(h.h_plus, h0.h_plus + k);
        EXPECT_EQ(h.h_minus, h0.h_minus + k);
    }
}

TEST(HExponents, LongIteratesSeparateSigns) {
    const auto base = builtin_chart_model(0.02);
    for (int m : {9, 10, 12}) {
        const auto it = iterated(base, m);
        const auto h = h_exponents(it.sys, it.theta, it.theta_prime);
        EXPECT_LT(h.h_plus, 0) << m;
        EXPECT_GT(h.h_minus, 0) << m;
    }
}

TEST(HExponents, VanishingWeightHasNoConstraintSet) {
    const auto m = zero_weight_model();
    EXPECT_THROW(h_exponents(m.sys, m.theta, m.theta_prime), EmptyConstraintSet);
}

TEST(Hook, WorkedCases) {
    EXPECT_TRUE(hook({10, 1}, {6, 1}, -4, 5));
    EXPECT_FALSE(hook({3, -1}, {7, -1}, -4, 5));
    EXPECT_TRUE(hook({2, 1}, {6, -1}, -4, 5));
    EXPECT_FALSE(hook({2, -1}, {6, 1}, 100, -100));
}

TEST(Hook, TableMatchesBruteForce) {
    // Independent restatement: the allowed output levels for each sign pair.
    auto allowed = [](int tau, int l, int sigma, int n, int hp, int hm) {
        switch ((tau > 0 ? 2 : 0) + (sigma > 0 ? 1 : 0)) {
            case 3: return n - l <= hp;
            case 0: return n - l >= hm;
            case 2: return !(n < hm && l < -hp);
            default: return false;
        }
    };
    for (int hp : {-5, -1, 0, 3, 5})
        for (int hm : {-6, 0, 2, 5}) {
            const BoolMatrix mask = link_mask(6, hp, hm);
            const auto idx = dyadic_indices(6);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < idx.size(); ++c)
                    EXPECT_EQ(mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)),
                              allowed(idx[c].sigma, idx[c].n, idx[r].sigma, idx[r].n, hp, hm));
        }
}

TEST(Split, MasksAreComplementary) {
    const BoolMatrix linked = link_mask(6, 5, -6);
    const auto s = split_masks(linked);
    for (Eigen::Index i = 0; i < linked.rows(); ++i)
        for (Eigen::Index j = 0; j < linked.cols(); ++j) EXPECT_NE(s.b(i, j), s.c(i, j));
    // With huge exponents only the never-linked (-,+) blocks stay unlinked.
    const auto all = split_masks(link_mask(6, 1000, -1000));
    const auto idx = dyadic_indices(6);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c)
            EXPECT_EQ(all.c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), idx[c].sigma < 0 && idx[r].sigma > 0);
}

TEST(Split, IteratedLinksStrictlyLowerSignedLevel) {
    const auto it = iterated(builtin_chart_model(0.02), 10);
    const BlockOperator op(it, 6, {4.0, 512});
    ASSERT_LT(op.h().h_plus, 0);
    ASSERT_GT(op.h().h_minus, 0);
    int links = 0;
    for (const auto& in : op.indices())
        for (const auto& out : op.indices())
            if (op.linked(in, out)) {
                ++links;
                EXPECT_LT(out.signed_level(), in.signed_level()) << in.str() << " -> " << out.str();
            }
    EXPECT_GT(links, 0);
}

TEST(Triangularity, IterateProductsHaveEmptyDiagonal) {
    const auto base = builtin_chart_model(0.02);
    const BlockOperator a(iterated(base, 10), 6, {4.0, 512});
    const BlockOperator b(iterated(base, 12), 6, {4.0, 512});
    EXPECT_TRUE(triangularity_product_check({&a}).diagonal_empty);
    EXPECT_TRUE(triangularity_product_check({&a, &b, &a}).diagonal_empty);
}

TEST(Triangularity, UnlinkedBlockIsDetected) {
    const auto base = builtin_chart_model(0.02);
    const BlockOperator a(iterated(base, 10), 6, {4.0, 512});
    BoolMatrix bad = a.linked_mask();
    bad(4, 4) = true;
    const auto r = triangularity_product_check(std::vector<BoolMatrix>{bad});
    EXPECT_FALSE(r.diagonal_empty);
    ASSERT_EQ(r.diagonal_hits.size(), 1u);
    EXPECT_EQ(r.diagonal_hits[0], 4);
}

TEST(Triangularity, OneStepOperatorIsRejected) {
    const BlockOperator op(builtin_chart_model(0.02), 6, {4.0, 512});
    EXPECT_THROW(triangularity_product_check({&op}), PreconditionViolated);
}

// ---------------------------------------------------------------------------
// Block operators

TEST(Blocks, CompositionMatchesDirectEvaluation) {
    const auto m = builtin_chart_model(0.04);
    BlockOperator op(m, 4, {4.0, 256});
    const auto u = gaussian(op.grid(), Vec2(0.1, 0.2), 0.35, cplx(1, 0.5));
    const auto Lu = op.apply_L(u);
    double worst = 0;
    for (int i0 = 0; i0 < 256; ++i0)
        for (int i1 = 0; i1 < 256; ++i1) {
            const Vec2 x = op.grid().point(i0, i1);
            const Vec2 y = m.sys.forward(x);
            const cplx ex = m.sys.weight(x) * cplx(1, 0.5) * std::exp(-(y - Vec2(0.1, 0.2)).squaredNorm() / (2 * 0.35 * 0.35));
            worst = std::max(worst, std::abs(ex - Lu(i0, i1)));
        }
    EXPECT_LE(worst, 1e-10);
}

TEST(Blocks, BlocksAreLinear) {
    BlockOperator op(builtin_chart_model(0.02), 4, {4.0, 256});
    const auto u = gaussian(op.grid(), Vec2(0.2, 0), 0.3);
    const auto v = gaussian(op.grid(), Vec2(-0.3, 0.1), 0.2, cplx(0, 1));
    const cplx a(0.7, -1.2), b(-0.4, 0.3);
    for (const auto& [in, out] : {std::pair<DyadicIndex, DyadicIndex>{{1, 1}, {1, 1}}, {{2, -1}, {3, -1}}, {{3, 1}, {0, 1}}}) {
        const auto lhs = op.apply_block(in, out, a * u + b * v);
        const auto rhs = a * op.apply_block(in, out, u) + b * op.apply_block(in, out, v);
        EXPECT_LE(max_diff(lhs, rhs), 1e-10 * std::max(1.0, rhs.max_abs()));
    }
}

TEST(Blocks, ColumnSumIsBandLimitedImage) {
    BlockOperator op(builtin_chart_model(0.02), 4, {4.0, 256});
    const auto u = gaussian(op.grid(), Vec2(0.1, -0.1), 0.25);
    LabTransform tr(op.grid());
    for (const DyadicIndex in : {DyadicIndex{2, 1}, DyadicIndex{3, -1}}) {
        GridFunction sum(op.grid());
        op.apply_column(in, u, [&](const DyadicIndex&, const GridFunction& part) { sum = sum + part; });
        const auto wide = tr.apply(u, [&](const Vec2& xi) { return DyadicFamily(kTheta).psi_tilde(in, xi); });
        const auto image = tr.apply(op.apply_L(wide), [](const Vec2& xi) { return chi_level(4, xi.norm()); });
        EXPECT_LE(max_diff(sum, image), 1e-8 * std::max(1.0, image.max_abs()));
    }
}

TEST(Blocks, VanishingWeightGivesZeroBlocks) {
    BlockOperator op(zero_weight_model(), 3, {4.0, 256});
    const auto u = gaussian(op.grid(), Vec2::Zero(), 0.3);
    for (const auto& in : op.indices())
        op.apply_column(in, u, [](const DyadicIndex&, const GridFunction& part) { EXPECT_EQ(part.max_abs(), 0.0); });
}

TEST(Blocks, GridMustResolveTopBand) {
    EXPECT_THROW(BlockOperator(builtin_chart_model(0.0), 7, {4.0, 256}), GridTooCoarse);
    EXPECT_THROW(BlockOperator(builtin_chart_model(0.0), 10, {4.0, 4096}), PreconditionViolated);
}

TEST(Blocks, AliasingFlagTracksGridSize) {
    BlockOperator coarse(builtin_chart_model(0.0), 6, {4.0, 512});
    BlockOperator fine(builtin_chart_model(0.0), 6, {4.0, 1024});
    EXPECT_TRUE(coarse.aliasing_risk());
    EXPECT_FALSE(fine.aliasing_risk());
}

TEST(Blocks, CompressionSplitsExactly) {
    BlockOperator op(builtin_chart_model(0.02), 3, {4.0, 256});
    const auto co = op.compress(2);
    ASSERT_EQ(co.M.rows(), 16);
    EXPECT_EQ((co.M - co.Mb - co.Mc).cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index r = 0; r < co.M.rows(); ++r)
        for (Eigen::Index c = 0; c < co.M.cols(); ++c) {
            const bool l = op.linked(co.bands[static_cast<std::size_t>(c)], co.bands[static_cast<std::size_t>(r)]);
            EXPECT_EQ(co.Mc(r, c) == cplx(0, 0) || !l, true);
            EXPECT_EQ(co.Mb(r, c) == cplx(0, 0) || l, true);
        }
    // Superposition through the matrix.
    Rng rng(5);
    std::normal_distribution<double> g;
    Eigen::VectorXcd x(co.M.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = cplx(g(rng), g(rng));
    EXPECT_LE((co.M * x - co.Mb * x - co.Mc * x).norm(), 1e-10 * (co.M * x).norm());
}

// ---------------------------------------------------------------------------
// Flat traces

TEST(FlatTrace, TelescopesToChiIntegral) {
    const auto m = builtin_chart_model(0.03);
    const FlatTraceTable t(m.sys, m.theta, 6);
    for (int n0 = 0; n0 <= 6; ++n0) EXPECT_NEAR(t.partial_sum(n0), t.chi_integral(n0), 1e-8) << n0;
}

TEST(FlatTrace, MatchesDirectLatticeSum) {
    // Plain trapezoid with a different node count and a direct exponential sum.
    const auto m = builtin_chart_model(0.03);
    const FlatTraceTable t(m.sys, m.theta, 2);
    const DyadicFamily fam(m.theta);
    const double B = 4.0, dxi = kPi / B;
    const int Q = 200;
    std::vector<Vec2> d;
    std::vector<double> w;
    const double h = 2.4 / Q;
    for (int i = 0; i < Q; ++i)
        for (int j = 0; j < Q; ++j) {
            const Vec2 x(-1.2 + (i + 0.5) * h, -1.2 + (j + 0.5) * h);
            const double gx = m.sys.weight(x);
            if (gx == 0.0) continue;
            d.push_back(m.sys.forward(x) - x);
            w.push_back(gx * h * h);
        }
    for (const DyadicIndex z : {DyadicIndex{0, 1}, DyadicIndex{1, 1}, DyadicIndex{1, -1}, DyadicIndex{2, -1}}) {
        double s = 0;
        for (int k0 = -12; k0 <= 12; ++k0)
            for (int k1 = -12; k1 <= 12; ++k1) {
                const Vec2 xi = dxi * Vec2(k0, k1);
                const double p = fam.psi(z, xi);
                if (p == 0.0) continue;
                double f = 0;
                for (std::size_t q = 0; q < d.size(); ++q) f += w[q] * std::cos(xi.dot(d[q]));
                s += p * f;
            }
        EXPECT_NEAR(t.block(z), s / (4 * B * B), 1e-8) << z.str();
    }
}

TEST(FlatTrace, LinearChartConvergesToFixedPointTerm) {
    const auto m = builtin_chart_model(0.0);
    const FlatTraceTable t(m.sys, m.theta, 8);
    // |det(I - diag(1/2, 2))| = 1/2.
    EXPECT_NEAR(t.partial_sum(8), 2.0 * m.sys.weight(Vec2::Zero()), 1e-3);
}

TEST(FlatTrace, NoFixedPointInSupportGivesZero) {
    const auto m = builtin_chart_model(0.0, 1.0, Vec2(0.0, 1.6));
    const FlatTraceTable t(m.sys, m.theta, 8);
    EXPECT_LT(t.max_displacement(), 4.0);
    EXPECT_NEAR(t.partial_sum(8), 0.0, 1e-3);
}

TEST(FlatTrace, VanishingWeight) {
    const auto m = zero_weight_model();
    const FlatTraceTable t(m.sys, m.theta, 4);
    EXPECT_EQ(t.partial_sum(4), 0.0);
    EXPECT_EQ(t.block({2, -1}), 0.0);
    EXPECT_TRUE(chart_fixed_points(m.sys).empty() || fixed_point_trace(chart_fixed_points(m.sys)) == 0.0);
}

TEST(FlatTrace, LinearChartFixedPoint) {
    const auto m = builtin_chart_model(0.0);
    const auto fps = chart_fixed_points(m.sys);
    ASSERT_EQ(fps.size(), 1u);
    EXPECT_LT(fps[0].x.norm(), 1e-12);
    EXPECT_NEAR(fps[0].det, -0.5, 1e-12);
    EXPECT_NEAR(fixed_point_trace(fps), 2.0 * m.sys.weight(Vec2::Zero()), 1e-12);
}

TEST(FlatTrace, PerturbedChartMatchesFixedPointSum) {
    const auto m = builtin_chart_model(0.02);
    const auto fps = chart_fixed_points(m.sys);
    ASSERT_FALSE(fps.empty());
    for (const auto& f : fps) {
        EXPECT_LT((m.sys.forward(f.x) - f.x).norm(), 1e-12);
        EXPECT_NEAR(f.det, (Mat2::Identity() - m.sys.jacobian(f.x)).determinant(), 1e-12);
    }
    const FlatTraceTable t(m.sys, m.theta, 8);
    EXPECT_NEAR(t.partial_sum(8), fixed_point_trace(fps), 1e-3);
}

TEST(DyadicPartition, DefectOnGridAtDepthEight) {
    EXPECT_LE(partition_defect(standard_chart_polarization(), 8), 1e-12);
}

// ---------------------------------------------------------------------------
// Kernel decay

TEST(KernelDecay, RejectsLinkedPairs) {
    BlockOperator op(builtin_chart_model(0.02), 3, {4.0, 256});
    EXPECT_THROW(kernel_decay_fit(op, {{{1, 1}, {1, 1}}}), PreconditionViolated);
}

TEST(KernelDecay, VanishingWeightGivesZeroKernels) {
    BlockOperator op(zero_weight_model(), 3, {4.0, 256});
    // All (-,+) pairs are unlinked for any h.
    const auto r = kernel_decay_fit(op, {{{1, -1}, {2, 1}}, {{3, -1}, {0, 1}}}, {Vec2::Zero()});
    for (const auto& row : r.rows) EXPECT_EQ(row.max_abs, 0.0);
}

TEST(KernelDecay, UnlinkedKernelsDecayAtHighLevels) {
    BlockOperator op(builtin_chart_model(0.02), 6, {4.0, 1024});
    const auto r = kernel_decay_fit(op, unlinked_pairs(op), {Vec2::Zero()});
    EXPECT_FALSE(r.aliasing_risk);
    ASSERT_EQ(r.levels.size(), 7u);
    // The bump weight leaks across the cone gap through its slowly decaying
    // transform, so decay sets in from level 4 and then steepens.
    for (std::size_t i = 4; i + 1 < r.levels.size(); ++i) EXPECT_LT(r.log2_max[i + 1], r.log2_max[i]);
    EXPECT_LT(r.log2_max[6] - r.log2_max[5], r.log2_max[5] - r.log2_max[4]);
    EXPECT_LT(r.slope, 0.0);
}

// ---------------------------------------------------------------------------
// Kneading identity

namespace {

CMatrix random_matrix(Eigen::Index n, Rng& rng, double scale) {
    std::normal_distribution<double> g;
    CMatrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = scale * cplx(g(rng), g(rng));
    return m;
}

}  // namespace

TEST(Kneading, ZeroIsTrivial) {
    Rng rng(1);
    const auto r = kneading_check(random_matrix(6, rng, 0.3), random_matrix(6, rng, 0.3), {cplx(0, 0)});
    EXPECT_EQ(r.rows[0].lhs, cplx(1, 0));
    EXPECT_EQ(r.rows[0].rhs, cplx(1, 0));
}

TEST(Kneading, NilpotentLinkedPartHasUnitDeterminant) {
    Rng rng(2);
    CMatrix mb = random_matrix(12, rng, 0.3);
    mb.triangularView<Eigen::Upper>().setZero();
    const auto r = kneading_check(mb, random_matrix(12, rng, 0.3), circle_samples(8, 0.1));
    EXPECT_TRUE(r.pass);
    for (const auto& row : r.rows) EXPECT_EQ(row.det_b, cplx(1, 0));
}

TEST(Kneading, RandomTruncationPasses) {
    Rng rng(3);
    const CMatrix m = random_matrix(40, rng, 1.0 / std::sqrt(40.0));
    CMatrix mb = CMatrix::Zero(40, 40), mc = CMatrix::Zero(40, 40);
    const BoolMatrix mask = link_mask(19, 5, -6);
    for (Eigen::Index i = 0; i < 40; ++i)
        for (Eigen::Index j = 0; j < 40; ++j) (mask(i, j) ? mb : mc)(i, j) = m(i, j);
    const auto r = kneading_check(mb, mc, circle_samples(8, 0.1));
    EXPECT_TRUE(r.pass) << r.max_rel_err;
    EXPECT_LE(r.max_rel_err, 1e-8);
}

TEST(Kneading, SingularResolventIsReported) {
    const CMatrix mb = 10.0 * CMatrix::Identity(4, 4);
    EXPECT_THROW(kneading_check(mb, CMatrix::Zero(4, 4), {cplx(0.1, 0)}), SingularResolvent);
}

// ---------------------------------------------------------------------------
// Approximation-number proxy

TEST(ApproxProxy, RankOneHasOneSingularValue) {
    Eigen::VectorXcd a = Eigen::VectorXcd::LinSpaced(8, cplx(1, 0), cplx(2, 1));
    const auto r = approx_number_proxy(a * a.adjoint());
    EXPECT_GT(r.singular_values[0], 1.0);
    for (std::size_t k = 1; k < r.singular_values.size(); ++k) EXPECT_LE(r.singular_values[k], 1e-14 * r.singular_values[0]);
}

TEST(ApproxProxy, GeometricDiagonalRate) {
    CMatrix d = CMatrix::Zero(20, 20);
    for (int j = 0; j < 20; ++j) d(j, j) = std::ldexp(1.0, -j);
    const auto r = approx_number_proxy(d);
    EXPECT_TRUE(r.monotone);
    EXPECT_NEAR(r.geometric_rate, -std::log(2.0), 1e-12);
}

TEST(ApproxProxy, WeightsFollowBandSigns) {
    const std::vector<DyadicIndex> bands{{0, 1}, {2, 1}, {3, -1}};
    const CMatrix w = pq_weighted(CMatrix::Ones(3, 3), bands, 1.0, -1.0);
    // Row (2,+) gains 2^{2}, column (3,-) gains 2^{-(-1)(3)} = 2^3.
    EXPECT_DOUBLE_EQ(w(1, 2).real(), std::ldexp(1.0, 2 + 3));
    EXPECT_DOUBLE_EQ(w(2, 1).real(), std::ldexp(1.0, -3 - 2));
}
