#include "bsdn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "bsdn/errors.hpp"

namespace bsdn {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
    T v{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc() || ptr != end || value.empty()) {
        throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
    }
    return v;
}

double parse_real(const std::string& key, const std::string& value) {
    double v = 0.0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc() || ptr != end || value.empty()) {
        throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_integer<int>(key, std::string(trim(item))));
    }
    return out;
}

// Pops `key` from kv and applies `fn` to its value if present.
template <typename Fn>
void take(KeyValues& kv, const std::string& key, Fn&& fn) {
    const auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(key, it->second);
    kv.erase(it);
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return kv;
}

std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string out;
    for (const auto& [k, v] : entries) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

std::string to_text(const NetworkConfig& c) {
    std::string widths;
    for (std::size_t i = 0; i < c.head_widths.size(); ++i) {
        if (i) widths += ',';
        widths += std::to_string(c.head_widths[i]);
    }
    return format_key_values({
        {"depth", std::to_string(c.depth)},
        {"kernel_size", std::to_string(c.kernel_size)},
        {"forward_channels", std::to_string(c.forward_channels)},
        {"branch_channels", std::to_string(c.branch_channels)},
        {"head_widths", widths},
        {"image_channels", std::to_string(c.image_channels)},
        {"residual_period", std::to_string(c.residual_period)},
    });
}

std::string to_text(const TrainConfig& c) {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return format_key_values({
        {"learning_rate", format_double(c.learning_rate)},
        {"steps", std::to_string(c.steps)},
        {"batch_size", std::to_string(c.batch_size)},
        {"patch_size", std::to_string(c.patch_size)},
        {"noise", c.noise.str()},
        {"seed", std::to_string(c.seed)},
        {"flip_horizontal", b(c.flip_horizontal)},
        {"flip_vertical", b(c.flip_vertical)},
        {"rotate", b(c.rotate)},
        {"checkpoint_interval", std::to_string(c.checkpoint_interval)},
        {"rampdown_fraction", format_double(c.rampdown_fraction)},
    });
}

NetworkConfig take_network_config(KeyValues& kv) {
    NetworkConfig c;
    take(kv, "depth", [&](auto& k, auto& v) { c.depth = parse_integer<int>(k, v); });
    take(kv, "kernel_size", [&](auto& k, auto& v) { c.kernel_size = parse_integer<int>(k, v); });
    take(kv, "forward_channels", [&](auto& k, auto& v) { c.forward_channels = parse_integer<int>(k, v); });
    take(kv, "branch_channels", [&](auto& k, auto& v) { c.branch_channels = parse_integer<int>(k, v); });
    take(kv, "head_widths", [&](auto& k, auto& v) { c.head_widths = parse_int_list(k, v); });
    take(kv, "image_channels", [&](auto& k, auto& v) { c.image_channels = parse_integer<int>(k, v); });
    take(kv, "residual_period", [&](auto& k, auto& v) { c.residual_period = parse_integer<int>(k, v); });
    return c;
}

TrainConfig take_train_config(KeyValues& kv) {
    TrainConfig c;
    take(kv, "learning_rate", [&](auto& k, auto& v) { c.learning_rate = parse_real(k, v); });
    take(kv, "steps", [&](auto& k, auto& v) { c.steps = parse_integer<int>(k, v); });
    take(kv, "batch_size", [&](auto& k, auto& v) { c.batch_size = parse_integer<int>(k, v); });
    take(kv, "patch_size", [&](auto& k, auto& v) { c.patch_size = parse_integer<int>(k, v); });
    take(kv, "noise", [&](auto& k, auto& v) {
        try {
            c.noise = NoiseModel::parse(v);
        } catch (const UsageError& e) {
            throw ConfigError("config: " + k + ": " + e.what());
        }
    });
    take(kv, "seed", [&](auto& k, auto& v) { c.seed = parse_integer<std::uint64_t>(k, v); });
    take(kv, "flip_horizontal", [&](auto& k, auto& v) { c.flip_horizontal = parse_bool(k, v); });
    take(kv, "flip_vertical", [&](auto& k, auto& v) { c.flip_vertical = parse_bool(k, v); });
    take(kv, "rotate", [&](auto& k, auto& v) { c.rotate = parse_bool(k, v); });
    take(kv, "checkpoint_interval", [&](auto& k, auto& v) { c.checkpoint_interval = parse_integer<int>(k, v); });
    take(kv, "rampdown_fraction", [&](auto& k, auto& v) { c.rampdown_fraction = parse_real(k, v); });
    return c;
}

void reject_unknown(const KeyValues& kv, std::string_view context) {
    if (kv.empty()) return;
    std::string keys;
    for (const auto& [k, v] : kv) {
        if (!keys.empty()) keys += ", ";
        keys += k;
    }
    throw ConfigError(std::string(context) + ": unknown key(s) " + keys);
}

void TrainConfig::validate(const NetworkConfig& net) const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train config: " + field + " " + why);
    };
    if (!(learning_rate >= 0.0)) fail("learning_rate", "must be >= 0");
    if (steps < 0) fail("steps", "must be >= 0");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    const int max_dilation = branch_dilation(net.depth, net.kernel_size);
    if (patch_size < 2 * max_dilation + 1) {
        fail("patch_size", "must be >= 2 * max branch dilation + 1 = " + std::to_string(2 * max_dilation + 1));
    }
    if (checkpoint_interval < 0) fail("checkpoint_interval", "must be >= 0");
    if (!(rampdown_fraction >= 0.0 && rampdown_fraction <= 1.0)) fail("rampdown_fraction", "must be in [0, 1]");
    try {
        noise.validate();
    } catch (const ParameterError& e) {
        fail("noise", e.what());
    }
}

ExperimentConfig parse_experiment_config(std::string_view text) {
    KeyValues kv = parse_key_values(text);
    ExperimentConfig cfg{take_network_config(kv), take_train_config(kv)};
    reject_unknown(kv, "config");
    cfg.network.validate();
    cfg.train.validate(cfg.network);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

}  // namespace bsdn
