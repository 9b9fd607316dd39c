#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bsdn/network.hpp"
#include "bsdn/noise.hpp"
#include "bsdn/training.hpp"

namespace bsdn {

/// 10·log10(peak² / MSE) over all channels and pixels; +inf when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct Denoised {
    Tensor posterior;  // clamped to [0, 1]
    Tensor mean_only;  // clamped to [0, 1]
};

/// Runs the network without recording a tape and fuses its prior with the noise.
Denoised denoise(const Network& net, const Tensor& noisy, const Tensor& noise_variance);

// ---------------------------------------------------------------------------
// Receptive-field probe

struct DiracProbeResult {
    /// Mean |d mean(center) / d input| over probes, summed over channels: [1, 1, S, S].
    Tensor footprint;
    int top = 0;
    int left = 0;
    int bottom = -1;  // inclusive
    int right = -1;   // inclusive
    double center_value = 0.0;

    int box_height() const { return bottom - top + 1; }
    int box_width() const { return right - left + 1; }
};

/// Smallest probe side that keeps the footprint off the borders.
int min_probe_side(const NetworkConfig& config);

/// Averages over `seeds` freshly initialized networks (each with its own random input).
DiracProbeResult dirac_probe(const NetworkConfig& config, int probe_side, int seeds = 8, std::uint64_t base_seed = 0);

/// Probe of a fixed network, averaged over `inputs` random probe images.
DiracProbeResult dirac_probe(const Network& net, int probe_side, int inputs = 8, std::uint64_t base_seed = 0);

// ---------------------------------------------------------------------------
// Cross-sigma evaluation

struct EvalRecord {
    std::string image;
    std::string noise;
    double sigma_test = 0.0;  // 0-255 units
    double psnr_posterior = 0.0;
    double psnr_mean_only = 0.0;
    double psnr_noisy = 0.0;
};

struct LabeledImage {
    std::string id;
    Tensor clean;  // [1, c, H, W]
};

/// Seed of the corruption applied to image `index` at test sigma `sigma`.
std::uint64_t record_seed(std::uint64_t base, std::size_t index, double sigma);

struct EvalOutcome {
    EvalRecord record;
    Corrupted corrupted;
    Denoised denoised;
};

/// Gaussian corruption, then the posterior (using the test sigma) and the mean-only prediction.
EvalOutcome evaluate_image_detailed(const Network& net, const LabeledImage& image, std::size_t index,
                                    double sigma_test, std::uint64_t base_seed);

EvalRecord evaluate_image(const Network& net, const LabeledImage& image, std::size_t index, double sigma_test,
                          std::uint64_t base_seed);

std::vector<EvalRecord> cross_sigma_eval(const Network& net, std::span<const LabeledImage> images,
                                         std::span<const double> sigmas_test, std::uint64_t base_seed = 0);

/// Rejects checkpoints not trained under known-sigma Gaussian noise.
std::vector<EvalRecord> cross_sigma_eval(const Checkpoint& ckpt, std::span<const LabeledImage> images,
                                         std::span<const double> sigmas_test, std::uint64_t base_seed = 0);

// ---------------------------------------------------------------------------
// Reports

inline constexpr std::string_view kEvalCsvHeader = "image,sigma_test,psnr_posterior,psnr_mean_only,psnr_noisy";

std::string format_records_csv(std::span<const EvalRecord> records);
void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);

/// Log-scale 16-bit rendering: log(1 + 1e6·x/max) normalized to the full code range.
Tensor footprint_heatmap(const DiracProbeResult& probe);
void write_footprint_png(const std::filesystem::path& path, const DiracProbeResult& probe);

struct NamedFootprint {
    std::string name;
    DiracProbeResult probe;
};

/// Writes <out_dir>/eval.csv and <out_dir>/footprint_<name>.png for each footprint.
void emit_reports(std::span<const EvalRecord> records, std::span<const NamedFootprint> footprints,
                  const std::filesystem::path& out_dir);

}  // namespace bsdn
