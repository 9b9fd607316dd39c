#include "bsdn/training.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "bsdn/errors.hpp"
#include "bsdn/noise.hpp"
#include "bsdn/rng.hpp"

namespace bsdn {

// ---------------------------------------------------------------------------
// Patches

Tensor extract_patches(std::span<const Tensor> images, int patch_size, int count, std::uint64_t seed,
                       const Augmentation& augment) {
    if (images.empty()) {
        throw InputError("extract_patches: no source images");
    }
    if (patch_size < 1 || count < 0) {
        throw ParameterError("extract_patches: patch size must be >= 1 and count >= 0");
    }
    const int c = images.front().shape().c;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Shape& s = images[i].shape();
        if (s.n != 1 || s.c != c) {
            throw DimensionError("extract_patches: image " + std::to_string(i) + " has shape " + s.str());
        }
        if (s.h < patch_size || s.w < patch_size) {
            throw InputError("extract_patches: image " + std::to_string(i) + " (" + std::to_string(s.h) + "x" +
                             std::to_string(s.w) + ") is smaller than the " + std::to_string(patch_size) +
                             " pixel patch");
        }
    }

    const int p = patch_size;
    Tensor out(Shape{count, c, p, p});
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_image(0, images.size() - 1);
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> quarter(0, 3);

    for (int k = 0; k < count; ++k) {
        const Tensor& src = images[pick_image(rng)];
        const int y0 = std::uniform_int_distribution<int>(0, src.shape().h - p)(rng);
        const int x0 = std::uniform_int_distribution<int>(0, src.shape().w - p)(rng);
        const bool fh = augment.flip_horizontal && coin(rng);
        const bool fv = augment.flip_vertical && coin(rng);
        const int rot = augment.rotate ? quarter(rng) : 0;
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    int sy = fv ? p - 1 - y : y;
                    int sx = fh ? p - 1 - x : x;
                    for (int r = 0; r < rot; ++r) {
                        const int t = sy;
                        sy = sx;
                        sx = p - 1 - t;
                    }
                    out.at(k, ch, y, x) = src.at(0, ch, y0 + sy, x0 + sx);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::zeros_like(std::span<const Var> params) {
    AdamState s;
    for (const Var& p : params) {
        s.first_moment.emplace_back(p.shape(), 0.0f);
        s.second_moment.emplace_back(p.shape(), 0.0f);
    }
    return s;
}

void adam_step(std::span<Var> params, AdamState& state, double learning_rate, const AdamHyper& hyper) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state has " + std::to_string(state.first_moment.size()) +
                             " slots for " + std::to_string(params.size()) + " parameters");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(hyper.beta1, t);
    const double correct2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Var& p = params[i];
        const Tensor& g = p.grad();
        if (g.empty()) {
            continue;
        }
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        if (m.shape() != p.shape() || v.shape() != p.shape() || g.shape() != p.shape()) {
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
        auto w = p.mutable_value().data();
        auto md = m.data();
        auto vd = v.data();
        const auto gd = g.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = gd[k];
            const double mk = hyper.beta1 * md[k] + (1.0 - hyper.beta1) * gk;
            const double vk = hyper.beta2 * vd[k] + (1.0 - hyper.beta2) * gk * gk;
            md[k] = static_cast<float>(mk);
            vd[k] = static_cast<float>(vk);
            const double update = learning_rate * (mk / correct1) / (std::sqrt(vk / correct2) + hyper.epsilon);
            w[k] = static_cast<float>(static_cast<double>(w[k]) - update);
        }
    }
}

double learning_rate_at(const TrainConfig& config, std::int64_t step) {
    const double total = static_cast<double>(config.steps);
    const double ramp = config.rampdown_fraction * total;
    const double start = total - ramp;
    const double s = static_cast<double>(step);
    if (ramp <= 0.0 || s < start) {
        return config.learning_rate;
    }
    const double progress = std::min(1.0, (s - start) / ramp);
    return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<Var> parameter_list(const Network& net) {
    std::vector<Var> out;
    for (const auto& [name, v] : net.named_parameters()) out.push_back(v);
    return out;
}

}  // namespace

std::uint64_t network_init_seed(std::uint64_t seed) { return derive_seed(seed, {0x1417}); }

TrainResult train(const NetworkConfig& net_config, const TrainConfig& config, std::span<const Tensor> dataset,
                  const TrainOptions& options) {
    net_config.validate();
    config.validate(net_config);
    if (dataset.empty() && !options.fixed_batch) {
        throw InputError("train: dataset is empty");
    }
    if (options.fixed_batch && options.fixed_batch->shape().c != net_config.image_channels) {
        throw DimensionError("train: fixed batch has " + std::to_string(options.fixed_batch->shape().c) +
                             " channels, network expects " + std::to_string(net_config.image_channels));
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].shape().c != net_config.image_channels) {
            throw DimensionError("train: image " + std::to_string(i) + " has " +
                                 std::to_string(dataset[i].shape().c) + " channels, network expects " +
                                 std::to_string(net_config.image_channels));
        }
    }

    Network net;
    AdamState adam;
    if (options.resume) {
        const Checkpoint& ck = *options.resume;
        if (ck.network != net_config) {
            throw ConfigError("train: resume checkpoint was written for a different network config");
        }
        net = restore_network(ck);
        adam = restore_optimizer(ck);
    } else {
        net = build_network(net_config, network_init_seed(config.seed));
    }
    std::vector<Var> params = parameter_list(net);
    if (!options.resume) {
        adam = AdamState::zeros_like(params);
    }

    const Augmentation augment{config.flip_horizontal, config.flip_vertical, config.rotate};
    const std::int64_t stop = options.stop_at >= 0 ? std::min<std::int64_t>(options.stop_at, config.steps)
                                                   : config.steps;
    TrainResult result;
    for (std::int64_t step = adam.step; step < stop; ++step) {
        const std::uint64_t step_seed = derive_seed(config.seed, {static_cast<std::uint64_t>(step)});
        const Corrupted batch =
            options.fixed_batch
                ? corrupt(*options.fixed_batch, config.noise, derive_seed(config.seed, {0xF1ED}))
                : corrupt(extract_patches(dataset, config.patch_size, config.batch_size, derive_seed(step_seed, {1}),
                                          augment),
                          config.noise, derive_seed(step_seed, {2}));

        const GaussianPredictionMap pred = forward(net, Var::leaf(batch.noisy));
        const Var loss = gaussian_nll(pred, batch.noisy, batch.noise_variance);
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
            throw NumericalError("train: non-finite loss " + std::to_string(value) + " at step " +
                                 std::to_string(step));
        }
        for (Var& p : params) p.zero_grad();
        backward(loss);
        adam_step(params, adam, learning_rate_at(config, step));

        result.losses.push_back(value);
        if (options.on_step) options.on_step(step, value);
        if (options.on_checkpoint && config.checkpoint_interval > 0 && adam.step % config.checkpoint_interval == 0) {
            options.on_checkpoint(make_checkpoint(net, config, adam));
        }
    }
    result.checkpoint = make_checkpoint(net, config, adam);
    return result;
}

}  // namespace bsdn
