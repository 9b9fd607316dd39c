#pragma once

// Blind-spot denoising network built from dilated convolutions.
//
// Layout for depth D:
//
//   image ──► fwd1 ──► fwd2 (+skip) ──► ... ──► fwdD
//     │         │        │                     │
//   branch0  branch1   branch2     ...       branchD     (masked center tap,
//     │         │        │                     │          dilation 1 + rf_half(i))
//     └─────────┴────────┴──── concat ─────────┘
//                               │
//                          1x1 head stack ──► mean, covariance parameters
//
// branch i taps the stream after i convolutions, whose receptive radius is
// rf_half(i). Its non-center taps sit at least 1 + rf_half(i) pixels away, so
// no branch (and hence no output) can read the pixel it predicts.

#include <cstdint>
#include <string>
#include <vector>

#include "bsdn/autodiff.hpp"

namespace bsdn {

inline constexpr float kLeakySlope = 0.1f;

enum class LayerKind { ForwardConv, BranchConv, HeadConv };

std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::ForwardConv;
    int kernel_size = 3;
    int dilation = 1;
    int in_channels = 0;
    int out_channels = 0;
    bool blind_spot = false;
};

struct NetworkConfig {
    int depth = 10;
    int kernel_size = 3;
    int forward_channels = 64;
    int branch_channels = 32;
    /// Hidden 1x1 widths; the final layer's width follows from image_channels.
    std::vector<int> head_widths{96, 96};
    /// 1 = grayscale, 3 = color.
    int image_channels = 1;
    /// Skip every residual_period forward convs; 0 disables residuals.
    int residual_period = 2;

    int mean_channels() const noexcept { return image_channels; }
    /// 1 (log-variance) for grayscale, 6 (lower-triangular Cholesky factor) for color.
    int cov_channels() const noexcept { return image_channels == 1 ? 1 : 6; }
    int output_channels() const noexcept { return mean_channels() + cov_channels(); }

    /// Throws ConfigError naming the offending field.
    void validate() const;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Receptive radius of the forward stream after `depth` convolutions of size k.
int rf_half(int depth, int kernel_size);

/// Dilation of the blind-spot branch tapping the stream at `depth`.
inline int branch_dilation(int depth, int kernel_size) { return 1 + rf_half(depth, kernel_size); }

struct ReceptiveFieldInfo {
    /// rf_half(i) for i = 0..D.
    std::vector<int> radius;
    /// Side length of the whole network's receptive field.
    int side = 0;
};

ReceptiveFieldInfo receptive_field(const NetworkConfig& config);

struct Layer {
    std::string name;
    LayerSpec spec;
    Var weight;  // [out, in, k, k]
    Var bias;    // [1, out, 1, 1]
};

struct Network {
    NetworkConfig config;
    std::vector<Layer> forward;   // D layers
    std::vector<Layer> branches;  // D + 1 layers
    std::vector<Layer> head;      // hidden widths + final

    std::vector<Layer*> layers();
    std::vector<const Layer*> layers() const;
    /// All trainable tensors in a fixed order: weight then bias per layer.
    std::vector<std::pair<std::string, Var>> named_parameters() const;
    std::size_t parameter_count() const;
};

/// Fan-in scaled uniform initialization from `seed`; masked taps start at 0.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

/// Copy of `net` whose parameters do not require gradients (for input probes).
Network frozen_copy(const Network& net);

struct GaussianPredictionMap {
    Var mean;        // [N, c, H, W]
    Var cov_params;  // [N, 1 | 6, H, W]
};

/// image: [N, image_channels, H, W].
GaussianPredictionMap forward(const Network& net, const Var& image);

struct BlindSpotReport {
    bool passed = true;
    int positions_checked = 0;
    std::vector<std::string> failures;
};

/// Gradient probe: d output(y, x) / d input(y, x) must be exactly zero for
/// every output channel at corners, edge midpoints and interior positions.
BlindSpotReport assert_blind_spot(const Network& net, int height = 24, int width = 24, std::uint64_t seed = 7);

}  // namespace bsdn
