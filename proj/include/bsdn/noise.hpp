#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bsdn/autodiff.hpp"
#include "bsdn/network.hpp"

namespace bsdn {

/// Floor added to the reconstructed prior covariance: Σ = L·Lᵀ + εI.
inline constexpr double kCovarianceFloor = 1e-6;
/// Floor on the pixel value in the signal-dependent Poisson variance.
inline constexpr double kPoissonFloor = 1e-3;

enum class NoiseKind { GaussianKnown, GaussianVariable, Poisson };

/// Corruption process. Sigmas are in 0-255 photometric units; images are in [0, 1].
struct NoiseModel {
    NoiseKind kind = NoiseKind::GaussianKnown;
    double sigma = 25.0;
    double sigma_lo = 5.0;
    double sigma_hi = 50.0;
    double lambda = 30.0;

    static NoiseModel gaussian(double sigma);
    static NoiseModel gaussian_range(double lo, double hi);
    static NoiseModel poisson(double lambda);

    /// Parses "gaussian:<σ>", "gaussian-range:<lo>,<hi>" or "poisson:<λ>".
    static NoiseModel parse(std::string_view spec);
    /// Canonical text, inverse of parse.
    std::string str() const;
    void validate() const;

    friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

inline constexpr std::string_view kNoiseGrammar = "gaussian:<sigma> | gaussian-range:<lo>,<hi> | poisson:<lambda>";

struct Corrupted {
    Tensor noisy;
    /// Per-image σ in [0, 1] units. Zero for Poisson (see noise_variance).
    std::vector<double> sigma;
    /// Per-pixel, per-channel noise variance [N, c, H, W] used by the loss and the posterior.
    Tensor noise_variance;
};

/// Deterministic given `seed`. Gaussian noise is not clipped.
Corrupted corrupt(const Tensor& clean, const NoiseModel& model, std::uint64_t seed);

/// Signal-dependent Gaussian stand-in for Poisson noise: max(y, 1e-3) / λ.
Tensor poisson_as_gaussian(const Tensor& noisy, double lambda);

/// Isotropic variance map (σ in [0, 1] units) shaped like `like`.
Tensor constant_variance(const Shape& like, double sigma);

/// Mean over pixels of the negative log-likelihood of the noisy observation
/// under N(μ, Σ + diag(noise_variance)). Differentiable w.r.t. both prediction maps.
Var gaussian_nll(const GaussianPredictionMap& pred, const Tensor& noisy, const Tensor& noise_variance);

/// Per-pixel Gaussian (c = 1 or 3). Covariance stored row-major in the top-left c×c block.
struct PixelGaussian {
    int c = 1;
    std::array<double, 3> mean{};
    std::array<double, 9> cov{};

    double cov_at(int i, int j) const { return cov[static_cast<std::size_t>(i * 3 + j)]; }
};

using PixelPosterior = PixelGaussian;

/// Prior covariance Σ = L·Lᵀ + εI from raw head outputs.
/// c = 1: params = {log-variance}. c = 3: params = {log L00, log L11, log L22, L10, L20, L21}.
std::array<double, 9> covariance_from_params(int c, std::span<const double> params);

/// Prior at pixel (n, y, x) of a prediction map.
PixelGaussian pixel_prior(const Tensor& mean, const Tensor& cov_params, int n, int y, int x);

/// Product of the prior and the noise likelihood centered at the noisy value:
/// P = (Σ⁻¹ + σ⁻²I)⁻¹, m = P(Σ⁻¹μ + σ⁻²y). σ = 0 gives m = y, P = 0.
PixelPosterior posterior(const PixelGaussian& prior, std::span<const double> noisy, double sigma);

/// Same with a diagonal noise covariance.
PixelPosterior posterior_diag(const PixelGaussian& prior, std::span<const double> noisy,
                              std::span<const double> noise_variance);

/// Posterior mean at every pixel.
Tensor posterior_mean_map(const Tensor& mean, const Tensor& cov_params, const Tensor& noisy,
                          const Tensor& noise_variance);

/// μ clamped to [0, 1].
Tensor mean_only(const Tensor& mean);

Tensor clamp01(Tensor t);

}  // namespace bsdn
