#include "bsdn/noise.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>

#include "bsdn/errors.hpp"

namespace bsdn {

namespace {

using Mat3 = std::array<double, 9>;

inline double& at(Mat3& m, int i, int j) { return m[static_cast<std::size_t>(i * 3 + j)]; }
inline double at(const Mat3& m, int i, int j) { return m[static_cast<std::size_t>(i * 3 + j)]; }

// In-place lower Cholesky factor of the leading c×c block; false if not positive-definite.
bool cholesky(Mat3& a, int c) {
    for (int j = 0; j < c; ++j) {
        double d = at(a, j, j);
        for (int k = 0; k < j; ++k) d -= at(a, j, k) * at(a, j, k);
        if (!(d > 0.0)) return false;
        const double l = std::sqrt(d);
        at(a, j, j) = l;
        for (int i = j + 1; i < c; ++i) {
            double s = at(a, i, j);
            for (int k = 0; k < j; ++k) s -= at(a, i, k) * at(a, j, k);
            at(a, i, j) = s / l;
        }
        for (int k = j + 1; k < c; ++k) at(a, j, k) = 0.0;
    }
    return true;
}

// Solve (L Lᵀ) x = b given the Cholesky factor.
std::array<double, 3> chol_solve(const Mat3& l, int c, std::array<double, 3> b) {
    for (int i = 0; i < c; ++i) {
        for (int k = 0; k < i; ++k) b[i] -= at(l, i, k) * b[k];
        b[i] /= at(l, i, i);
    }
    for (int i = c - 1; i >= 0; --i) {
        for (int k = i + 1; k < c; ++k) b[i] -= at(l, k, i) * b[k];
        b[i] /= at(l, i, i);
    }
    return b;
}

Mat3 chol_inverse(const Mat3& l, int c) {
    Mat3 inv{};
    for (int j = 0; j < c; ++j) {
        std::array<double, 3> e{};
        e[j] = 1.0;
        const auto col = chol_solve(l, c, e);
        for (int i = 0; i < c; ++i) at(inv, i, j) = col[i];
    }
    return inv;
}

// Lower-triangular factor from the six raw color parameters.
Mat3 factor_from_params(std::span<const double> p) {
    Mat3 l{};
    at(l, 0, 0) = std::exp(p[0]);
    at(l, 1, 1) = std::exp(p[1]);
    at(l, 2, 2) = std::exp(p[2]);
    at(l, 1, 0) = p[3];
    at(l, 2, 0) = p[4];
    at(l, 2, 1) = p[5];
    return l;
}

double parse_number(std::string_view text, std::string_view spec) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw UsageError("bad number '" + std::string(text) + "' in noise spec '" + std::string(spec) +
                         "'; expected " + std::string(kNoiseGrammar));
    }
    return v;
}

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void check_unit_range(const Tensor& clean) {
    for (float v : clean.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw InputError("corrupt: clean values must lie in [0, 1], found " + std::to_string(v));
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// NoiseModel

NoiseModel NoiseModel::gaussian(double sigma) {
    NoiseModel m;
    m.kind = NoiseKind::GaussianKnown;
    m.sigma = sigma;
    m.validate();
    return m;
}

NoiseModel NoiseModel::gaussian_range(double lo, double hi) {
    NoiseModel m;
    m.kind = NoiseKind::GaussianVariable;
    m.sigma_lo = lo;
    m.sigma_hi = hi;
    m.validate();
    return m;
}

NoiseModel NoiseModel::poisson(double lambda) {
    NoiseModel m;
    m.kind = NoiseKind::Poisson;
    m.lambda = lambda;
    m.validate();
    return m;
}

void NoiseModel::validate() const {
    switch (kind) {
        case NoiseKind::GaussianKnown:
            if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("noise: sigma must be >= 0");
            break;
        case NoiseKind::GaussianVariable:
            if (!(sigma_lo >= 0.0) || !(sigma_lo <= sigma_hi) || !std::isfinite(sigma_hi)) {
                throw ParameterError("noise: need 0 <= sigma_lo <= sigma_hi");
            }
            break;
        case NoiseKind::Poisson:
            if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("noise: lambda must be > 0");
            break;
    }
}

NoiseModel NoiseModel::parse(std::string_view spec) {
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos) {
        throw UsageError("unknown noise spec '" + std::string(spec) + "'; expected " + std::string(kNoiseGrammar));
    }
    const std::string_view name = spec.substr(0, colon);
    const std::string_view args = spec.substr(colon + 1);
    try {
        if (name == "gaussian") {
            return gaussian(parse_number(args, spec));
        }
        if (name == "gaussian-range") {
            const auto comma = args.find(',');
            if (comma == std::string_view::npos) {
                throw UsageError("gaussian-range needs two values in '" + std::string(spec) + "'; expected " +
                                 std::string(kNoiseGrammar));
            }
            return gaussian_range(parse_number(args.substr(0, comma), spec),
                                  parse_number(args.substr(comma + 1), spec));
        }
        if (name == "poisson") {
            return poisson(parse_number(args, spec));
        }
    } catch (const ParameterError& e) {
        throw UsageError(std::string(e.what()) + " in '" + std::string(spec) + "'");
    }
    throw UsageError("unknown noise spec '" + std::string(spec) + "'; expected " + std::string(kNoiseGrammar));
}

std::string NoiseModel::str() const {
    switch (kind) {
        case NoiseKind::GaussianKnown:
            return "gaussian:" + format_number(sigma);
        case NoiseKind::GaussianVariable:
            return "gaussian-range:" + format_number(sigma_lo) + "," + format_number(sigma_hi);
        case NoiseKind::Poisson:
            return "poisson:" + format_number(lambda);
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Corruption

Tensor constant_variance(const Shape& like, double sigma) {
    return Tensor(like, static_cast<float>(sigma * sigma));
}

Tensor poisson_as_gaussian(const Tensor& noisy, double lambda) {
    if (!(lambda > 0.0)) {
        throw ParameterError("poisson_as_gaussian: lambda must be > 0");
    }
    Tensor out(noisy.shape());
    const auto y = noisy.data();
    auto v = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        v[i] = static_cast<float>(std::max(static_cast<double>(y[i]), kPoissonFloor) / lambda);
    }
    return out;
}

Corrupted corrupt(const Tensor& clean, const NoiseModel& model, std::uint64_t seed) {
    model.validate();
    check_unit_range(clean);
    std::mt19937_64 rng(seed);
    const Shape& s = clean.shape();
    const std::size_t per_image = static_cast<std::size_t>(s.c) * s.plane();

    Corrupted out{clean, std::vector<double>(static_cast<std::size_t>(s.n), 0.0), Tensor(s)};
    if (model.kind == NoiseKind::Poisson) {
        for (float& v : out.noisy.data()) {
            const double rate = model.lambda * static_cast<double>(v);
            if (rate > 0.0) {
                std::poisson_distribution<long long> dist(rate);
                v = static_cast<float>(static_cast<double>(dist(rng)) / model.lambda);
            } else {
                v = 0.0f;
            }
        }
        out.noise_variance = poisson_as_gaussian(out.noisy, model.lambda);
        return out;
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    for (int n = 0; n < s.n; ++n) {
        double sigma255 = model.sigma;
        if (model.kind == NoiseKind::GaussianVariable) {
            sigma255 = std::uniform_real_distribution<double>(model.sigma_lo, model.sigma_hi)(rng);
        }
        const double sigma = sigma255 / 255.0;
        out.sigma[static_cast<std::size_t>(n)] = sigma;
        float* img = out.noisy.plane(n, 0);
        float* var = out.noise_variance.plane(n, 0);
        std::fill_n(var, per_image, static_cast<float>(sigma * sigma));
        if (sigma == 0.0) {
            continue;
        }
        for (std::size_t i = 0; i < per_image; ++i) {
            img[i] = static_cast<float>(static_cast<double>(img[i]) + sigma * normal(rng));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Likelihood

std::array<double, 9> covariance_from_params(int c, std::span<const double> params) {
    Mat3 s{};
    if (c == 1) {
        at(s, 0, 0) = std::exp(params[0]) + kCovarianceFloor;
        return s;
    }
    if (c != 3 || params.size() < 6) {
        throw DimensionError("covariance_from_params: unsupported channel count " + std::to_string(c));
    }
    const Mat3 l = factor_from_params(params);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += at(l, i, k) * at(l, j, k);
            at(s, i, j) = v + (i == j ? kCovarianceFloor : 0.0);
        }
    }
    return s;
}

Var gaussian_nll(const GaussianPredictionMap& pred, const Tensor& noisy, const Tensor& noise_variance) {
    const Tensor& mu = pred.mean.value();
    const Tensor& cp = pred.cov_params.value();
    const Shape& s = mu.shape();
    const int c = s.c;
    if (c != 1 && c != 3) {
        throw DimensionError("gaussian_nll: mean must have 1 or 3 channels, got " + s.str());
    }
    const int p = c == 1 ? 1 : 6;
    if (cp.shape() != Shape{s.n, p, s.h, s.w}) {
        throw DimensionError("gaussian_nll: covariance parameters " + cp.shape().str() + " for mean " + s.str());
    }
    if (noisy.shape() != s || noise_variance.shape() != s) {
        throw DimensionError("gaussian_nll: noisy " + noisy.shape().str() + " / variance " +
                             noise_variance.shape().str() + " vs mean " + s.str());
    }

    const double npix = static_cast<double>(s.n) * s.plane();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    Tensor grad_mu(s);
    Tensor grad_cp(cp.shape());
    double total = 0.0;

    for (int n = 0; n < s.n; ++n) {
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                if (c == 1) {
                    const double var = std::exp(static_cast<double>(cp.at(n, 0, y, x)));
                    const double a = var + kCovarianceFloor + noise_variance.at(n, 0, y, x);
                    const double r = static_cast<double>(noisy.at(n, 0, y, x)) - mu.at(n, 0, y, x);
                    total += 0.5 * std::log(a) + 0.5 * r * r / a + 0.5 * log2pi;
                    grad_mu.at(n, 0, y, x) = static_cast<float>(-r / a / npix);
                    grad_cp.at(n, 0, y, x) = static_cast<float>(0.5 * (1.0 / a - r * r / (a * a)) * var / npix);
                    continue;
                }
                std::array<double, 6> raw{};
                for (int k = 0; k < 6; ++k) raw[k] = cp.at(n, k, y, x);
                const Mat3 l = factor_from_params(raw);
                Mat3 a = covariance_from_params(3, raw);
                std::array<double, 3> r{};
                for (int i = 0; i < 3; ++i) {
                    at(a, i, i) += noise_variance.at(n, i, y, x);
                    r[i] = static_cast<double>(noisy.at(n, i, y, x)) - mu.at(n, i, y, x);
                }
                Mat3 chol = a;
                if (!cholesky(chol, 3)) {
                    throw NumericalError("gaussian_nll: covariance is not positive-definite");
                }
                double logdet = 0.0;
                for (int i = 0; i < 3; ++i) logdet += 2.0 * std::log(at(chol, i, i));
                const auto sol = chol_solve(chol, 3, r);
                const double quad = r[0] * sol[0] + r[1] * sol[1] + r[2] * sol[2];
                total += 0.5 * logdet + 0.5 * quad + 1.5 * log2pi;

                // dℓ/dA = ½(A⁻¹ − s sᵀ), dℓ/dL = 2 (dℓ/dA) L.
                const Mat3 inv = chol_inverse(chol, 3);
                Mat3 g{};
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) at(g, i, j) = 0.5 * (at(inv, i, j) - sol[i] * sol[j]);
                }
                Mat3 gl{};
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        double v = 0.0;
                        for (int k = 0; k < 3; ++k) v += at(g, i, k) * at(l, k, j);
                        at(gl, i, j) = 2.0 * v;
                    }
                }
                for (int i = 0; i < 3; ++i) {
                    grad_mu.at(n, i, y, x) = static_cast<float>(-sol[i] / npix);
                    grad_cp.at(n, i, y, x) = static_cast<float>(at(gl, i, i) * at(l, i, i) / npix);
                }
                grad_cp.at(n, 3, y, x) = static_cast<float>(at(gl, 1, 0) / npix);
                grad_cp.at(n, 4, y, x) = static_cast<float>(at(gl, 2, 0) / npix);
                grad_cp.at(n, 5, y, x) = static_cast<float>(at(gl, 2, 1) / npix);
            }
        }
    }

    return Var::op("gaussian_nll", Tensor::scalar(static_cast<float>(total / npix)), {pred.mean, pred.cov_params},
                   [grad_mu = std::move(grad_mu), grad_cp = std::move(grad_cp)](const Tensor& g,
                                                                                 std::span<const Var> in) {
                       const float scale = g.item();
                       const Tensor* local[] = {&grad_mu, &grad_cp};
                       for (std::size_t k = 0; k < 2; ++k) {
                           if (!in[k].requires_grad()) continue;
                           auto dst = in[k].grad_buffer().data();
                           const auto src = local[k]->data();
                           for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Posterior

PixelGaussian pixel_prior(const Tensor& mean, const Tensor& cov_params, int n, int y, int x) {
    PixelGaussian g;
    g.c = mean.shape().c;
    std::array<double, 6> raw{};
    for (int k = 0; k < cov_params.shape().c; ++k) raw[k] = cov_params.at(n, k, y, x);
    for (int k = 0; k < g.c; ++k) g.mean[k] = mean.at(n, k, y, x);
    g.cov = covariance_from_params(g.c, std::span<const double>(raw.data(), static_cast<std::size_t>(
                                                                                 cov_params.shape().c)));
    return g;
}

PixelPosterior posterior_diag(const PixelGaussian& prior, std::span<const double> noisy,
                              std::span<const double> noise_variance) {
    const int c = prior.c;
    if (noisy.size() < static_cast<std::size_t>(c) || noise_variance.size() < static_cast<std::size_t>(c)) {
        throw DimensionError("posterior: expected " + std::to_string(c) + " channels");
    }
    bool degenerate = true;
    for (int i = 0; i < c; ++i) {
        if (!(noise_variance[i] >= 0.0)) throw ParameterError("posterior: noise variance must be >= 0");
        degenerate = degenerate && noise_variance[i] == 0.0;
    }
    PixelPosterior post;
    post.c = c;
    if (degenerate) {
        for (int i = 0; i < c; ++i) post.mean[i] = noisy[i];
        return post;
    }

    // Gain form: K = Σ(Σ + D)⁻¹, m = μ + K(y − μ), P = Σ − KΣ.
    Mat3 b = prior.cov;
    for (int i = 0; i < c; ++i) at(b, i, i) += noise_variance[i];
    if (!cholesky(b, c)) {
        throw NumericalError("posterior: prior covariance is not positive-definite");
    }
    Mat3 k{};
    for (int col = 0; col < c; ++col) {
        std::array<double, 3> rhs{};
        for (int i = 0; i < c; ++i) rhs[i] = at(prior.cov, i, col);
        const auto x = chol_solve(b, c, rhs);  // column of (Σ + D)⁻¹Σ = Kᵀ
        for (int i = 0; i < c; ++i) at(k, col, i) = x[i];
    }
    for (int i = 0; i < c; ++i) {
        double m = prior.mean[i];
        for (int j = 0; j < c; ++j) m += at(k, i, j) * (noisy[j] - prior.mean[j]);
        post.mean[i] = m;
    }
    Mat3 p{};
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
            double v = at(prior.cov, i, j);
            for (int q = 0; q < c; ++q) v -= at(k, i, q) * at(prior.cov, q, j);
            at(p, i, j) = v;
        }
    }
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) at(post.cov, i, j) = 0.5 * (at(p, i, j) + at(p, j, i));
    }
    return post;
}

PixelPosterior posterior(const PixelGaussian& prior, std::span<const double> noisy, double sigma) {
    if (!(sigma >= 0.0)) {
        throw ParameterError("posterior: sigma must be >= 0, got " + std::to_string(sigma));
    }
    const std::array<double, 3> var{sigma * sigma, sigma * sigma, sigma * sigma};
    return posterior_diag(prior, noisy, var);
}

Tensor posterior_mean_map(const Tensor& mean, const Tensor& cov_params, const Tensor& noisy,
                          const Tensor& noise_variance) {
    const Shape& s = mean.shape();
    if (noisy.shape() != s || noise_variance.shape() != s) {
        throw DimensionError("posterior_mean_map: noisy " + noisy.shape().str() + " vs mean " + s.str());
    }
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                const PixelGaussian prior = pixel_prior(mean, cov_params, n, y, x);
                std::array<double, 3> obs{};
                std::array<double, 3> var{};
                for (int k = 0; k < s.c; ++k) {
                    obs[k] = noisy.at(n, k, y, x);
                    var[k] = noise_variance.at(n, k, y, x);
                }
                const PixelPosterior post = posterior_diag(prior, {obs.data(), 3}, {var.data(), 3});
                for (int k = 0; k < s.c; ++k) out.at(n, k, y, x) = static_cast<float>(post.mean[k]);
            }
        }
    }
    return out;
}

Tensor clamp01(Tensor t) {
    for (float& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
    return t;
}

Tensor mean_only(const Tensor& mean) { return clamp01(mean); }

}  // namespace bsdn
