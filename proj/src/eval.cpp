#include "bsdn/eval.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "bsdn/config.hpp"
#include "bsdn/errors.hpp"
#include "bsdn/image_io.hpp"
#include "bsdn/rng.hpp"

namespace bsdn {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) {
        throw DimensionError("psnr: " + a.shape().str() + " vs " + b.shape().str());
    }
    if (a.numel() == 0) {
        throw DimensionError("psnr: empty images");
    }
    double sse = 0.0;
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(x.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

Denoised denoise(const Network& net, const Tensor& noisy, const Tensor& noise_variance) {
    NoGradGuard no_grad;
    const GaussianPredictionMap pred = forward(net, Var::leaf(noisy));
    return Denoised{
        clamp01(posterior_mean_map(pred.mean.value(), pred.cov_params.value(), noisy, noise_variance)),
        mean_only(pred.mean.value()),
    };
}

// ---------------------------------------------------------------------------
// Dirac probe

namespace {

void check_probe_side(const NetworkConfig& config, int side) {
    if (side < min_probe_side(config)) {
        throw ParameterError("dirac_probe: probe image side " + std::to_string(side) + " is below the minimum " +
                             std::to_string(min_probe_side(config)) + " for depth " + std::to_string(config.depth));
    }
}

// Accumulates |d mean(center) / d input| of one network on one random input.
void accumulate_probe(const Network& net, int side, std::uint64_t input_seed, Tensor& footprint) {
    const Network frozen = frozen_copy(net);
    const int c = net.config.image_channels;
    Tensor input(Shape{1, c, side, side});
    std::mt19937_64 rng(input_seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (float& v : input.data()) v = dist(rng);
    const Var x = Var::leaf(std::move(input), true);
    const GaussianPredictionMap pred = forward(frozen, x);
    const int center = side / 2;
    for (int oc = 0; oc < pred.mean.shape().c; ++oc) {
        Tensor pick(pred.mean.shape(), 0.0f);
        pick.at(0, oc, center, center) = 1.0f;
        x.zero_grad();
        backward(weighted_sum(pred.mean, pick));
        if (x.grad().empty()) continue;
        for (int ic = 0; ic < c; ++ic) {
            for (int y = 0; y < side; ++y) {
                for (int xx = 0; xx < side; ++xx) {
                    footprint.at(0, 0, y, xx) += std::fabs(x.grad().at(0, ic, y, xx));
                }
            }
        }
    }
}

DiracProbeResult finish_probe(Tensor footprint, int probes) {
    const Shape s = footprint.shape();
    for (float& v : footprint.data()) v /= static_cast<float>(probes);
    DiracProbeResult r;
    r.top = s.h;
    r.left = s.w;
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            if (footprint.at(0, 0, y, x) != 0.0f) {
                r.top = std::min(r.top, y);
                r.left = std::min(r.left, x);
                r.bottom = std::max(r.bottom, y);
                r.right = std::max(r.right, x);
            }
        }
    }
    if (r.bottom < 0) {
        r.top = r.left = 0;
    }
    r.center_value = footprint.at(0, 0, s.h / 2, s.w / 2);
    r.footprint = std::move(footprint);
    return r;
}

}  // namespace

int min_probe_side(const NetworkConfig& config) { return 2 * receptive_field(config).side; }

DiracProbeResult dirac_probe(const NetworkConfig& config, int probe_side, int seeds, std::uint64_t base_seed) {
    config.validate();
    check_probe_side(config, probe_side);
    if (seeds < 1) {
        throw ParameterError("dirac_probe: need at least one seed");
    }
    Tensor footprint(Shape{1, 1, probe_side, probe_side}, 0.0f);
    for (int k = 0; k < seeds; ++k) {
        const Network net = build_network(config, derive_seed(base_seed, {static_cast<std::uint64_t>(k), 0}));
        accumulate_probe(net, probe_side, derive_seed(base_seed, {static_cast<std::uint64_t>(k), 1}), footprint);
    }
    return finish_probe(std::move(footprint), seeds);
}

DiracProbeResult dirac_probe(const Network& net, int probe_side, int inputs, std::uint64_t base_seed) {
    check_probe_side(net.config, probe_side);
    if (inputs < 1) {
        throw ParameterError("dirac_probe: need at least one probe input");
    }
    Tensor footprint(Shape{1, 1, probe_side, probe_side}, 0.0f);
    for (int k = 0; k < inputs; ++k) {
        accumulate_probe(net, probe_side, derive_seed(base_seed, {static_cast<std::uint64_t>(k), 1}), footprint);
    }
    return finish_probe(std::move(footprint), inputs);
}

// ---------------------------------------------------------------------------
// Cross-sigma evaluation

std::uint64_t record_seed(std::uint64_t base, std::size_t index, double sigma) {
    return derive_seed(base, {static_cast<std::uint64_t>(index), std::bit_cast<std::uint64_t>(sigma)});
}

EvalOutcome evaluate_image_detailed(const Network& net, const LabeledImage& image, std::size_t index,
                                    double sigma_test, std::uint64_t base_seed) {
    if (!(sigma_test >= 0.0)) {
        throw ParameterError("cross_sigma_eval: test sigma must be >= 0, got " + std::to_string(sigma_test));
    }
    const NoiseModel model = NoiseModel::gaussian(sigma_test);
    Corrupted c = corrupt(image.clean, model, record_seed(base_seed, index, sigma_test));
    Denoised d = denoise(net, c.noisy, c.noise_variance);
    EvalRecord r{image.id,
                 model.str(),
                 sigma_test,
                 psnr(image.clean, d.posterior),
                 psnr(image.clean, d.mean_only),
                 psnr(image.clean, c.noisy)};
    return EvalOutcome{std::move(r), std::move(c), std::move(d)};
}

EvalRecord evaluate_image(const Network& net, const LabeledImage& image, std::size_t index, double sigma_test,
                          std::uint64_t base_seed) {
    return evaluate_image_detailed(net, image, index, sigma_test, base_seed).record;
}

std::vector<EvalRecord> cross_sigma_eval(const Network& net, std::span<const LabeledImage> images,
                                         std::span<const double> sigmas_test, std::uint64_t base_seed) {
    for (double s : sigmas_test) {
        if (!(s >= 0.0)) {
            throw ParameterError("cross_sigma_eval: test sigma must be >= 0, got " + std::to_string(s));
        }
    }
    std::vector<EvalRecord> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (double s : sigmas_test) {
            out.push_back(evaluate_image(net, images[i], i, s, base_seed));
        }
    }
    return out;
}

std::vector<EvalRecord> cross_sigma_eval(const Checkpoint& ckpt, std::span<const LabeledImage> images,
                                         std::span<const double> sigmas_test, std::uint64_t base_seed) {
    if (ckpt.train.noise.kind != NoiseKind::GaussianKnown) {
        throw ParameterError("cross_sigma_eval: checkpoint was trained with " + ckpt.train.noise.str() +
                             ", expected gaussian:<sigma>");
    }
    return cross_sigma_eval(restore_network(ckpt), images, sigmas_test, base_seed);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string format_db(double v) { return std::isinf(v) ? std::string("inf") : format_double(v); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace

std::string format_records_csv(std::span<const EvalRecord> records) {
    std::string out(kEvalCsvHeader);
    out += '\n';
    for (const auto& r : records) {
        out += r.image + "," + format_double(r.sigma_test) + "," + format_db(r.psnr_posterior) + "," +
               format_db(r.psnr_mean_only) + "," + format_db(r.psnr_noisy) + "\n";
    }
    return out;
}

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
    write_text(path, format_records_csv(records));
}

Tensor footprint_heatmap(const DiracProbeResult& probe) {
    Tensor out = probe.footprint;
    float peak = 0.0f;
    for (float v : out.data()) peak = std::max(peak, v);
    const double norm = std::log1p(1e6);
    for (float& v : out.data()) {
        v = peak > 0.0f ? static_cast<float>(std::log1p(1e6 * static_cast<double>(v) / peak) / norm) : 0.0f;
    }
    return out;
}

void write_footprint_png(const std::filesystem::path& path, const DiracProbeResult& probe) {
    write_png(path, footprint_heatmap(probe), 16);
}

void emit_reports(std::span<const EvalRecord> records, std::span<const NamedFootprint> footprints,
                  const std::filesystem::path& out_dir) {
    if (records.empty()) {
        throw UsageError("emit_reports: no records");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw IoError("cannot create output directory " + out_dir.string());
    }
    write_records_csv(out_dir / "eval.csv", records);
    for (const auto& f : footprints) {
        write_footprint_png(out_dir / ("footprint_" + f.name + ".png"), f.probe);
    }
}

}  // namespace bsdn
