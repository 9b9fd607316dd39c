#pragma once

// Test-only helpers: random tensors, synthetic textures and the
// finite-difference oracle used by the gradient checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "bsdn/autodiff.hpp"
#include "bsdn/network.hpp"
#include "bsdn/tensor.hpp"

namespace bsdn::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(s);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.data()) v = dist(rng);
    return t;
}

/// Synthetic texture in [0.1, 0.9]: random oriented gratings, a soft blob and
/// two hard-edged disks.
inline Tensor texture_image(std::uint64_t seed, int h, int w, int c = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor img(Shape{1, c, h, w});
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 4; ++k) {
        const double period = 6.0 + 18.0 * u(rng);
        const double angle = std::numbers::pi * u(rng);
        waves.push_back({std::cos(angle) / period, std::sin(angle) / period, 2.0 * std::numbers::pi * u(rng),
                         0.5 + 0.5 * u(rng)});
    }
    const double bx = w * u(rng), by = h * u(rng), br = 6.0 + 10.0 * u(rng);
    struct Disk {
        double x, y, r, level;
    };
    std::vector<Disk> disks;
    for (int k = 0; k < 2; ++k) {
        disks.push_back({w * u(rng), h * u(rng), 4.0 + 10.0 * u(rng), u(rng) < 0.5 ? -0.8 : 0.8});
    }
    std::vector<double> tint(static_cast<std::size_t>(c));
    for (auto& t : tint) t = 0.7 + 0.3 * u(rng);
    double amp_total = 1.0;
    for (const auto& wv : waves) amp_total += wv.amp;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (const auto& wv : waves) {
                v += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase);
            }
            v += std::exp(-((x - bx) * (x - bx) + (y - by) * (y - by)) / (2.0 * br * br));
            for (const auto& d : disks) {
                if ((x - d.x) * (x - d.x) + (y - d.y) * (y - d.y) < d.r * d.r) v += d.level * amp_total * 0.5;
            }
            const double base = 0.5 + 0.4 * v / amp_total;
            for (int ch = 0; ch < c; ++ch) {
                img.at(0, ch, y, x) = static_cast<float>(std::clamp(0.5 + (base - 0.5) * tint[ch], 0.1, 0.9));
            }
        }
    }
    return img;
}

struct GradCheck {
    /// Norm-wise relative error ||analytic - numeric|| / ||numeric|| per input.
    std::vector<double> rel_error;

    double worst() const {
        double w = 0.0;
        for (double e : rel_error) w = std::max(w, e);
        return w;
    }
};

/// Central finite differences of L = Σ weights · f(inputs), evaluated in double
/// from the float32 op outputs. Inputs that do not require grad are skipped.
inline GradCheck finite_difference_check(const std::function<Var(const std::vector<Var>&)>& f,
                                         std::vector<Var> inputs, std::uint64_t weight_seed, float step = 1e-3f) {
    const Var out = f(inputs);
    const Tensor weights = random_tensor(out.shape(), weight_seed, 0.5f, 1.5f);
    auto loss_of = [&](const std::vector<Var>& in) {
        const Tensor v = f(in).value();
        double total = 0.0;
        for (std::size_t i = 0; i < v.numel(); ++i) {
            total += static_cast<double>(v.data()[i]) * static_cast<double>(weights.data()[i]);
        }
        return total;
    };
    for (const Var& in : inputs) in.zero_grad();
    backward(weighted_sum(out, weights));

    GradCheck result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        const Tensor analytic = inputs[k].grad();
        Tensor& value = inputs[k].mutable_value();
        double diff2 = 0.0;
        double ref2 = 0.0;
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const float orig = value.data()[i];
            const float plus = orig + step;
            const float minus = orig - step;
            value.data()[i] = plus;
            const double lp = loss_of(inputs);
            value.data()[i] = minus;
            const double lm = loss_of(inputs);
            value.data()[i] = orig;
            const double numeric = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
            const double a = analytic.empty() ? 0.0 : analytic.data()[i];
            diff2 += (a - numeric) * (a - numeric);
            ref2 += numeric * numeric;
        }
        result.rel_error.push_back(std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12));
    }
    return result;
}

/// Keeps values at least `gap` away from zero (finite differences across the
/// leaky-rectifier kink are meaningless).
inline Tensor away_from_zero(Tensor t, float gap = 0.02f) {
    for (float& v : t.data()) {
        if (std::fabs(v) < gap) v = v < 0.0f ? v - gap : v + gap;
    }
    return t;
}

/// Small network for structural checks (receptive field and blind spot do not
/// depend on channel widths).
inline NetworkConfig slim_config(int depth, int image_channels = 1) {
    NetworkConfig c;
    c.depth = depth;
    c.forward_channels = 4;
    c.branch_channels = 4;
    c.head_widths = {8, 8};
    c.image_channels = image_channels;
    return c;
}

/// Perturbs every input pixel in turn (one batch entry per pixel) and returns
/// the largest change of any output channel at the perturbed pixel itself.
inline double self_perturbation_response(const Network& net, int h, int w, std::uint64_t seed, float delta = 0.37f) {
    NoGradGuard no_grad;
    const int c = net.config.image_channels;
    const Tensor base = random_tensor(Shape{1, c, h, w}, seed, 0.0f, 1.0f);
    Tensor batch(Shape{h * w + 1, c, h, w});
    for (int n = 0; n < h * w + 1; ++n) {
        std::copy(base.data().begin(), base.data().end(), batch.plane(n, 0));
        if (n > 0) {
            for (int ch = 0; ch < c; ++ch) batch.at(n, ch, (n - 1) / w, (n - 1) % w) += delta;
        }
    }
    const GaussianPredictionMap pred = forward(net, Var::leaf(std::move(batch)));
    double worst = 0.0;
    for (const Var& out : {pred.mean, pred.cov_params}) {
        const Tensor& v = out.value();
        for (int n = 1; n < h * w + 1; ++n) {
            const int y = (n - 1) / w;
            const int x = (n - 1) % w;
            for (int oc = 0; oc < v.shape().c; ++oc) {
                worst = std::max(worst, static_cast<double>(std::fabs(v.at(n, oc, y, x) - v.at(0, oc, y, x))));
            }
        }
    }
    return worst;
}

/// Per-pixel perturbation footprint: |Δ output(center)| for a unit change of each input pixel.
inline Tensor perturbation_footprint(const Network& net, int side, std::uint64_t seed) {
    NoGradGuard no_grad;
    const int c = net.config.image_channels;
    const Tensor base = random_tensor(Shape{1, c, side, side}, seed, 0.0f, 1.0f);
    Tensor batch(Shape{side * side + 1, c, side, side});
    for (int n = 0; n < side * side + 1; ++n) {
        std::copy(base.data().begin(), base.data().end(), batch.plane(n, 0));
        if (n > 0) batch.at(n, 0, (n - 1) / side, (n - 1) % side) += 0.25f;
    }
    const Tensor mean = forward(net, Var::leaf(std::move(batch))).mean.value();
    Tensor out(Shape{1, 1, side, side}, 0.0f);
    const int mid = side / 2;
    for (int n = 1; n < side * side + 1; ++n) {
        out.at(0, 0, (n - 1) / side, (n - 1) % side) = std::fabs(mean.at(n, 0, mid, mid) - mean.at(0, 0, mid, mid));
    }
    return out;
}

}  // namespace bsdn::testing
