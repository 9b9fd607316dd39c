#pragma once

// Flat "key = value" configuration text shared by config files, checkpoints
// and run manifests. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bsdn/network.hpp"
#include "bsdn/noise.hpp"

namespace bsdn {

struct TrainConfig {
    double learning_rate = 3e-4;
    int steps = 1000;
    int batch_size = 4;
    int patch_size = 64;
    NoiseModel noise = NoiseModel::gaussian(25.0);
    std::uint64_t seed = 0;
    bool flip_horizontal = true;
    bool flip_vertical = true;
    bool rotate = false;
    /// Steps between checkpoints; 0 writes only the final one.
    int checkpoint_interval = 0;
    /// Fraction of the run over which the learning rate ramps down (cosine).
    double rampdown_fraction = 0.3;

    void validate(const NetworkConfig& net) const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Ordered key/value pairs; parse rejects duplicates and malformed lines.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries);

std::string to_text(const NetworkConfig& config);
std::string to_text(const TrainConfig& config);

/// Consume the network keys from `kv` (defaults for absent ones).
NetworkConfig take_network_config(KeyValues& kv);
TrainConfig take_train_config(KeyValues& kv);
/// Throws ConfigError if anything is left in `kv`.
void reject_unknown(const KeyValues& kv, std::string_view context);

struct ExperimentConfig {
    NetworkConfig network;
    TrainConfig train;
};

ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace bsdn
