#include "bsdn/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bsdn/errors.hpp"

namespace bsdn {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::ForwardConv:
            return "forward_conv";
        case LayerKind::BranchConv:
            return "branch_conv";
        case LayerKind::HeadConv:
            return "head_conv";
    }
    return "unknown";
}

void NetworkConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("network config: " + field + " " + why);
    };
    if (depth < 1) fail("depth", "must be >= 1, got " + std::to_string(depth));
    if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size", "must be odd and >= 1");
    if (forward_channels < 1) fail("forward_channels", "must be >= 1");
    if (branch_channels < 1) fail("branch_channels", "must be >= 1");
    for (int w : head_widths) {
        if (w < 1) fail("head_widths", "entries must be >= 1");
    }
    if (image_channels != 1 && image_channels != 3) fail("image_channels", "must be 1 or 3");
    if (residual_period < 0) fail("residual_period", "must be >= 0");
    if (residual_period > 0 && forward_channels < image_channels) {
        fail("forward_channels", "must be >= image_channels when residuals are enabled");
    }
}

int rf_half(int depth, int kernel_size) {
    if (depth < 0) {
        throw ParameterError("rf_half: negative depth");
    }
    if (kernel_size % 2 == 0) {
        throw ParameterError("rf_half: kernel size must be odd");
    }
    return depth * (kernel_size - 1) / 2;
}

ReceptiveFieldInfo receptive_field(const NetworkConfig& config) {
    ReceptiveFieldInfo info;
    int reach = 0;
    for (int i = 0; i <= config.depth; ++i) {
        const int r = rf_half(i, config.kernel_size);
        info.radius.push_back(r);
        reach = std::max(reach, r + branch_dilation(i, config.kernel_size) * (config.kernel_size - 1) / 2);
    }
    info.side = 2 * reach + 1;
    return info;
}

std::vector<Layer*> Network::layers() {
    std::vector<Layer*> out;
    for (auto* group : {&forward, &branches, &head}) {
        for (auto& l : *group) out.push_back(&l);
    }
    return out;
}

std::vector<const Layer*> Network::layers() const {
    std::vector<const Layer*> out;
    for (const auto* group : {&forward, &branches, &head}) {
        for (const auto& l : *group) out.push_back(&l);
    }
    return out;
}

std::vector<std::pair<std::string, Var>> Network::named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    for (const Layer* l : layers()) {
        out.emplace_back(l->name + ".weight", l->weight);
        out.emplace_back(l->name + ".bias", l->bias);
    }
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, v] : named_parameters()) total += v.value().numel();
    return total;
}

namespace {

Layer make_layer(std::string name, const LayerSpec& spec, std::mt19937_64& rng) {
    const int k = spec.kernel_size;
    const KernelMask mask = spec.blind_spot ? KernelMask::blind_spot(k, k) : KernelMask::full(k, k);
    const int active = static_cast<int>(std::count(mask.active.begin(), mask.active.end(), 1));
    const double fan_in = static_cast<double>(spec.in_channels) * active;
    const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);

    Tensor w(Shape{spec.out_channels, spec.in_channels, k, k});
    for (int o = 0; o < spec.out_channels; ++o) {
        for (int c = 0; c < spec.in_channels; ++c) {
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < k; ++j) {
                    const float v = dist(rng);
                    w.at(o, c, i, j) = mask(i, j) ? v : 0.0f;
                }
            }
        }
    }
    Tensor b(Shape{1, spec.out_channels, 1, 1}, 0.0f);
    return Layer{std::move(name), spec, Var::leaf(std::move(w), true), Var::leaf(std::move(b), true)};
}

Var run_layer(const Layer& layer, const Var& x) {
    const LayerSpec& s = layer.spec;
    std::optional<KernelMask> mask;
    if (s.blind_spot) {
        mask = KernelMask::blind_spot(s.kernel_size, s.kernel_size);
    }
    return conv2d(x, layer.weight, layer.bias, s.dilation, mask);
}

// Zero-extend `x` along channels so it can be added to a wider tensor.
Var widen_channels(const Var& x, int channels) {
    if (x.shape().c == channels) {
        return x;
    }
    Shape pad = x.shape();
    pad.c = channels - pad.c;
    const Var parts[] = {x, Var::leaf(Tensor(pad, 0.0f))};
    return concat_channels(parts);
}

}  // namespace

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    Network net;
    net.config = config;
    const int k = config.kernel_size;

    for (int i = 1; i <= config.depth; ++i) {
        LayerSpec s{LayerKind::ForwardConv, k, 1, i == 1 ? config.image_channels : config.forward_channels,
                    config.forward_channels, false};
        net.forward.push_back(make_layer("forward." + std::to_string(i), s, rng));
    }
    for (int i = 0; i <= config.depth; ++i) {
        LayerSpec s{LayerKind::BranchConv, k, branch_dilation(i, k),
                    i == 0 ? config.image_channels : config.forward_channels, config.branch_channels, true};
        net.branches.push_back(make_layer("branch." + std::to_string(i), s, rng));
    }
    int in = config.branch_channels * (config.depth + 1);
    std::vector<int> widths = config.head_widths;
    widths.push_back(config.output_channels());
    for (std::size_t i = 0; i < widths.size(); ++i) {
        LayerSpec s{LayerKind::HeadConv, 1, 1, in, widths[i], false};
        net.head.push_back(make_layer("head." + std::to_string(i), s, rng));
        in = widths[i];
    }
    return net;
}

Network frozen_copy(const Network& net) {
    Network out = net;
    for (Layer* l : out.layers()) {
        l->weight = Var::leaf(l->weight.value(), false);
        l->bias = Var::leaf(l->bias.value(), false);
    }
    return out;
}

GaussianPredictionMap forward(const Network& net, const Var& image) {
    const NetworkConfig& cfg = net.config;
    if (image.shape().c != cfg.image_channels) {
        throw DimensionError("forward: network expects " + std::to_string(cfg.image_channels) +
                             " image channels, got " + std::to_string(image.shape().c));
    }
    const int period = cfg.residual_period;
    std::vector<Var> branch_out;
    branch_out.reserve(net.branches.size());
    branch_out.push_back(leaky_relu(run_layer(net.branches[0], image), kLeakySlope));

    Var h = image;
    Var skip;
    for (std::size_t idx = 0; idx < net.forward.size(); ++idx) {
        const int i = static_cast<int>(idx) + 1;  // 1-based depth
        if (period > 0 && (i - 1) % period == 0) {
            skip = h;
        }
        h = leaky_relu(run_layer(net.forward[idx], h), kLeakySlope);
        if (period > 0 && i % period == 0) {
            h = add(h, widen_channels(skip, h.shape().c));
        }
        branch_out.push_back(leaky_relu(run_layer(net.branches[idx + 1], h), kLeakySlope));
    }

    Var z = concat_channels(branch_out);
    for (std::size_t idx = 0; idx < net.head.size(); ++idx) {
        z = run_layer(net.head[idx], z);
        if (idx + 1 < net.head.size()) {
            z = leaky_relu(z, kLeakySlope);
        }
    }
    return GaussianPredictionMap{slice_channels(z, 0, cfg.mean_channels()),
                                 slice_channels(z, cfg.mean_channels(), cfg.cov_channels())};
}

BlindSpotReport assert_blind_spot(const Network& net, int height, int width, std::uint64_t seed) {
    if (height < 3 || width < 3) {
        throw ParameterError("assert_blind_spot: probe image must be at least 3x3");
    }
    const Network frozen = frozen_copy(net);
    const int c = net.config.image_channels;
    Tensor input(Shape{1, c, height, width});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (float& v : input.data()) v = dist(rng);
    Var x = Var::leaf(std::move(input), true);
    const GaussianPredictionMap pred = forward(frozen, x);
    const Var outputs[] = {pred.mean, pred.cov_params};

    const int ys[] = {0, 0, height - 1, height - 1, 0, height / 2, height - 1, height / 2, height / 3, 1};
    const int xs[] = {0, width - 1, 0, width - 1, width / 2, 0, width / 2, width - 1, width / 3, 1};

    BlindSpotReport report;
    for (std::size_t p = 0; p < std::size(ys); ++p) {
        const int y = ys[p];
        const int xx = xs[p];
        ++report.positions_checked;
        for (const Var& out : outputs) {
            for (int oc = 0; oc < out.shape().c; ++oc) {
                Tensor pick(out.shape(), 0.0f);
                pick.at(0, oc, y, xx) = 1.0f;
                x.zero_grad();
                backward(weighted_sum(out, pick));
                for (int ic = 0; ic < c; ++ic) {
                    const float g = x.grad().empty() ? 0.0f : x.grad().at(0, ic, y, xx);
                    if (g != 0.0f) {
                        report.passed = false;
                        report.failures.push_back("position (" + std::to_string(y) + "," + std::to_string(xx) +
                                                  ") output channel " + std::to_string(oc) + " input channel " +
                                                  std::to_string(ic) + ": d out/d in = " + std::to_string(g));
                    }
                }
            }
        }
    }
    return report;
}

}  // namespace bsdn
