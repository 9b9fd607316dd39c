#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdn/config.hpp"
#include "bsdn/network.hpp"

namespace bsdn {

// ---------------------------------------------------------------------------
// Data pipeline

struct Augmentation {
    bool flip_horizontal = false;
    bool flip_vertical = false;
    /// Random multiples of 90 degrees.
    bool rotate = false;
};

/// `count` random square crops from single-image tensors ([1, c, H, W] each).
/// The source image and the top-left corner are drawn uniformly.
Tensor extract_patches(std::span<const Tensor> images, int patch_size, int count, std::uint64_t seed,
                       const Augmentation& augment = {});

// ---------------------------------------------------------------------------
// Optimizer

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::int64_t step = 0;

    static AdamState zeros_like(std::span<const Var> params);
};

/// One bias-corrected Adam update using each parameter's accumulated gradient.
void adam_step(std::span<Var> params, AdamState& state, double learning_rate, const AdamHyper& hyper = {});

/// Constant, then a cosine ramp to zero over the final `rampdown_fraction` of the run.
double learning_rate_at(const TrainConfig& config, std::int64_t step);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
    NetworkConfig network;
    TrainConfig train;
    std::int64_t step = 0;
    std::vector<NamedTensor> parameters;
    std::vector<NamedTensor> first_moment;
    std::vector<NamedTensor> second_moment;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(const Network& net, const TrainConfig& train, const AdamState& adam);
/// Network with the checkpoint's parameters (fresh leaves).
Network restore_network(const Checkpoint& ckpt);
AdamState restore_optimizer(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a, 64 bit.
std::uint64_t checksum64(std::string_view bytes) noexcept;

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
    /// Continue from this state instead of a fresh network.
    std::optional<Checkpoint> resume;
    /// Stop once this global step is reached (< 0: run to config.steps).
    std::int64_t stop_at = -1;
    /// Train on this clean batch with one fixed noise draw instead of fresh crops.
    std::optional<Tensor> fixed_batch;
    std::function<void(std::int64_t step, double loss)> on_step;
    /// Called every checkpoint_interval steps.
    std::function<void(const Checkpoint&)> on_checkpoint;
};

struct TrainResult {
    Checkpoint checkpoint;
    /// One entry per step executed in this call.
    std::vector<double> losses;
};

/// Seed of the freshly initialized network of a run with base seed `seed`.
std::uint64_t network_init_seed(std::uint64_t seed);

/// Self-supervised loop: crop, corrupt, forward, NLL, backward, Adam.
/// The noisy batch is both input and target. Every step's randomness is keyed
/// on (seed, step), so a resumed run replays the uninterrupted one exactly.
TrainResult train(const NetworkConfig& net_config, const TrainConfig& config, std::span<const Tensor> dataset,
                  const TrainOptions& options = {});

}  // namespace bsdn
