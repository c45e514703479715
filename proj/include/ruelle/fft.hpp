#pragma once

#include "ruelle/core.hpp"

#include <fftw3.h>

#include <complex>
#include <memory>

namespace ruelle {

// Signed frequency k in [-n/2, n/2) to FFT storage index and back.
inline int fft_index(int k, int n) { return k >= 0 ? k : k + n; }
inline int fft_freq(int i, int n) { return i < (n + 1) / 2 ? i : i - n; }

// FFTW-owned complex buffer.
class FftwBuffer {
public:
    explicit FftwBuffer(std::size_t n) : n_(n), p_(static_cast<cplx*>(fftw_malloc(sizeof(cplx) * n))) {
        if (!p_) throw NumericalFailure("fftw_malloc failed");
        std::fill(p_, p_ + n, cplx(0, 0));
    }
    ~FftwBuffer() { fftw_free(p_); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    cplx* data() { return p_; }
    const cplx* data() const { return p_; }
    std::size_t size() const { return n_; }
    cplx& operator[](std::size_t i) { return p_[i]; }
    const cplx& operator[](std::size_t i) const { return p_[i]; }
    fftw_complex* raw() { return reinterpret_cast<fftw_complex*>(p_); }

private:
    std::size_t n_;
    cplx* p_;
};

// In-place 2D complex FFT on an n0 x n1 row-major buffer. Unnormalized in both
// directions: forward(x)_k = sum_j x_j e^{-2 pi i k.j/n}. Plans use
// FFTW_ESTIMATE so results do not depend on timing measurements.
class Fft2 {
public:
    Fft2(int n0, int n1) : n0_(n0), n1_(n1), buf_(static_cast<std::size_t>(n0) * static_cast<std::size_t>(n1)) {
        require(n0 >= 1 && n1 >= 1, "Fft2 needs positive sizes");
        fwd_ = fftw_plan_dft_2d(n0, n1, buf_.raw(), buf_.raw(), FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_2d(n0, n1, buf_.raw(), buf_.raw(), FFTW_BACKWARD, FFTW_ESTIMATE);
        if (!fwd_ || !bwd_) throw NumericalFailure("FFTW planning failed");
    }
    ~Fft2() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }
    Fft2(const Fft2&) = delete;
    Fft2& operator=(const Fft2&) = delete;

    int n0() const { return n0_; }
    int n1() const { return n1_; }
    std::size_t size() const { return buf_.size(); }
    cplx* data() { return buf_.data(); }
    const cplx* data() const { return buf_.data(); }
    cplx& at(int i, int j) { return buf_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n1_) + static_cast<std::size_t>(j)]; }
    const cplx& at(int i, int j) const {
        return buf_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n1_) + static_cast<std::size_t>(j)];
    }
    // Access by signed frequency.
    cplx& freq(int k0, int k1) { return at(fft_index(k0, n0_), fft_index(k1, n1_)); }

    void forward() { fftw_execute(fwd_); }
    void backward() { fftw_execute(bwd_); }

private:
    int n0_, n1_;
    FftwBuffer buf_;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

// 2D nonuniform FFTs on [0, 2pi)^2 by Gaussian gridding, for a square mode
// set k in [-K/2, K/2)^2 (K even):
//   type 1: F(k) = sum_j c_j e^{-i k.x_j}
//   type 2: f_j  = sum_k F(k) e^{+i k.x_j}
// Spreading width `spread` grid points per side on a grid oversampled by 2;
// windows wider than the grid wrap, which sums the periodic images.
class Nufft2d {
public:
    explicit Nufft2d(int K, int spread = 12)
        : K_(K), M_(2 * K), sp_(spread), fft_(2 * K, 2 * K) {
        require(K >= 2 && K % 2 == 0, "Nufft2d needs an even mode count");
        require(spread >= 2, "Nufft2d needs a spreading width of at least 2");
        const double R = 2.0;
        tau_ = kPi * sp_ / (static_cast<double>(K) * K * R * (R - 0.5));
        deconv_.resize(static_cast<std::size_t>(K));
        for (int k = -K / 2; k < K / 2; ++k)
            deconv_[static_cast<std::size_t>(k + K / 2)] = std::sqrt(kPi / tau_) * std::exp(k * k * tau_);
    }

    int modes() const { return K_; }
    double tau() const { return tau_; }

    // F has K*K entries indexed [(k0 + K/2) * K + (k1 + K/2)].
    std::vector<cplx> type1(const std::vector<Vec2>& x, const std::vector<cplx>& c) {
        require(x.size() == c.size(), "Nufft2d::type1 size mismatch");
        std::fill(fft_.data(), fft_.data() + fft_.size(), cplx(0, 0));
        Weights w0, w1;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const int b0 = kernel(x[j][0], w0), b1 = kernel(x[j][1], w1);
            for (int a = 0; a < 2 * sp_; ++a) {
                const int i0 = wrap(b0 + a);
                const cplx ca = c[j] * w0[static_cast<std::size_t>(a)];
                for (int b = 0; b < 2 * sp_; ++b) fft_.at(i0, wrap(b1 + b)) += ca * w1[static_cast<std::size_t>(b)];
            }
        }
        fft_.forward();
        std::vector<cplx> F(static_cast<std::size_t>(K_) * static_cast<std::size_t>(K_));
        const double scale = 1.0 / (static_cast<double>(M_) * M_);
        for (int k0 = -K_ / 2; k0 < K_ / 2; ++k0)
            for (int k1 = -K_ / 2; k1 < K_ / 2; ++k1)
                F[idx(k0, k1)] = fft_.freq(k0, k1) * scale * deconv_[static_cast<std::size_t>(k0 + K_ / 2)] *
                                 deconv_[static_cast<std::size_t>(k1 + K_ / 2)];
        return F;
    }

    std::vector<cplx> type2(const std::vector<cplx>& F, const std::vector<Vec2>& x) {
        require(F.size() == static_cast<std::size_t>(K_) * static_cast<std::size_t>(K_), "Nufft2d::type2 size mismatch");
        std::fill(fft_.data(), fft_.data() + fft_.size(), cplx(0, 0));
        for (int k0 = -K_ / 2; k0 < K_ / 2; ++k0)
            for (int k1 = -K_ / 2; k1 < K_ / 2; ++k1)
                fft_.freq(k0, k1) = F[idx(k0, k1)] * deconv_[static_cast<std::size_t>(k0 + K_ / 2)] *
                                    deconv_[static_cast<std::size_t>(k1 + K_ / 2)];
        fft_.backward();
        std::vector<cplx> out(x.size());
        const double scale = 1.0 / (static_cast<double>(M_) * M_);
        Weights w0, w1;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const int b0 = kernel(x[j][0], w0), b1 = kernel(x[j][1], w1);
            cplx acc(0, 0);
            for (int a = 0; a < 2 * sp_; ++a) {
                const int i0 = wrap(b0 + a);
                cplx row(0, 0);
                for (int b = 0; b < 2 * sp_; ++b) row += fft_.at(i0, wrap(b1 + b)) * w1[static_cast<std::size_t>(b)];
                acc += row * w0[static_cast<std::size_t>(a)];
            }
            out[j] = acc * scale;
        }
        return out;
    }

    std::size_t idx(int k0, int k1) const {
        return static_cast<std::size_t>(k0 + K_ / 2) * static_cast<std::size_t>(K_) + static_cast<std::size_t>(k1 + K_ / 2);
    }

private:
    using Weights = std::vector<double>;

    int wrap(int i) const { return ((i % M_) + M_) % M_; }

    // Gaussian weights exp(-(x_m - x)^2 / (4 tau)) for the 2*sp grid points
    // nearest x; returns the first grid index.
    int kernel(double x, Weights& w) const {
        const double h = kTwoPi / M_;
        const double t = wrap_angle(x) / h;
        const int base = static_cast<int>(std::floor(t)) - sp_ + 1;
        w.resize(static_cast<std::size_t>(2 * sp_));
        for (int a = 0; a < 2 * sp_; ++a) {
            const double d = (base + a - t) * h;
            w[static_cast<std::size_t>(a)] = std::exp(-d * d / (4 * tau_));
        }
        return base;
    }

    static double wrap_angle(double x) {
        double r = std::fmod(x, kTwoPi);
        return r < 0 ? r + kTwoPi : r;
    }

    int K_, M_, sp_;
    double tau_ = 0;
    std::vector<double> deconv_;
    Fft2 fft_;
};

}  // namespace ruelle
