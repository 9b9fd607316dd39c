// Checkpoint file layout (all integers little-endian):
//
//   "BSDN" | u32 version | u32 len + network config text | u32 len + train config text
//   | records... | u64 FNV-1a checksum of every preceding byte
//
// record: u32 name length | name bytes | 4 x u32 shape (N, C, H, W) | raw f32 values
// Optimizer moments are stored as records named "adam.m.<param>" / "adam.v.<param>".

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "bsdn/errors.hpp"
#include "bsdn/training.hpp"

namespace bsdn {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'D', 'N'};
constexpr std::string_view kFirstMomentPrefix = "adam.m.";
constexpr std::string_view kSecondMomentPrefix = "adam.v.";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_blob(std::string& out, std::string_view text) {
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.append(text);
}

void put_tensor(std::string& out, std::string_view name, const Tensor& t) {
    put_blob(out, name);
    for (int d : t.shape().dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct TruncatedInput {};

// Bounds-checked little-endian reader; throws TruncatedInput past `end`.
class Reader {
public:
    Reader(std::string_view bytes, std::size_t pos, std::size_t end) : bytes_(bytes), pos_(pos), end_(end) {}

    bool done() const { return pos_ == end_; }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string_view blob() {
        const std::uint32_t len = u32();
        need(len);
        const auto out = bytes_.substr(pos_, len);
        pos_ += len;
        return out;
    }

    NamedTensor tensor() {
        NamedTensor t;
        t.name = std::string(blob());
        std::array<std::uint32_t, 4> d{};
        for (auto& v : d) v = u32();
        const std::uint64_t count = static_cast<std::uint64_t>(d[0]) * d[1] * d[2] * d[3];
        if (count > (end_ - pos_) / 4) throw TruncatedInput{};
        std::vector<float> data(count);
        for (auto& v : data) v = std::bit_cast<float>(u32());
        t.value = Tensor(Shape{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
                               static_cast<int>(d[3])},
                         std::move(data));
        return t;
    }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw TruncatedInput{};
    }

    std::string_view bytes_;
    std::size_t pos_;
    std::size_t end_;
};

struct RawCheckpoint {
    std::string network_text;
    std::string train_text;
    std::vector<NamedTensor> tensors;
};

RawCheckpoint parse_structure(std::string_view bytes) {
    Reader r(bytes, 8, bytes.size() - 8);
    RawCheckpoint raw;
    raw.network_text = std::string(r.blob());
    raw.train_text = std::string(r.blob());
    while (!r.done()) raw.tensors.push_back(r.tensor());
    return raw;
}

std::uint64_t read_u64(std::string_view bytes, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    return v;
}

}  // namespace

std::uint64_t checksum64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

Checkpoint make_checkpoint(const Network& net, const TrainConfig& train, const AdamState& adam) {
    Checkpoint ck;
    ck.network = net.config;
    ck.train = train;
    ck.step = adam.step;
    const auto params = net.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, var] = params[i];
        ck.parameters.push_back({name, var.value()});
        if (i < adam.first_moment.size()) {
            ck.first_moment.push_back({name, adam.first_moment[i]});
            ck.second_moment.push_back({name, adam.second_moment[i]});
        }
    }
    return ck;
}

Network restore_network(const Checkpoint& ckpt) {
    Network net = build_network(ckpt.network, 0);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& t : ckpt.parameters) by_name[t.name] = &t.value;
    for (Layer* l : net.layers()) {
        for (auto [suffix, var] : {std::pair{".weight", &l->weight}, std::pair{".bias", &l->bias}}) {
            const std::string name = l->name + suffix;
            const auto it = by_name.find(name);
            if (it == by_name.end() || it->second->shape() != var->shape()) {
                throw CheckpointError(CheckpointError::Kind::Malformed,
                                      "checkpoint: missing or mis-shaped parameter " + name);
            }
            *var = Var::leaf(*it->second, true);
        }
    }
    return net;
}

AdamState restore_optimizer(const Checkpoint& ckpt) {
    if (ckpt.first_moment.size() != ckpt.parameters.size() || ckpt.second_moment.size() != ckpt.parameters.size()) {
        throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint: optimizer state incomplete");
    }
    AdamState s;
    s.step = ckpt.step;
    for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
        const auto& p = ckpt.parameters[i];
        if (ckpt.first_moment[i].name != p.name || ckpt.second_moment[i].name != p.name ||
            ckpt.first_moment[i].value.shape() != p.value.shape() ||
            ckpt.second_moment[i].value.shape() != p.value.shape()) {
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "checkpoint: optimizer state does not match parameter " + p.name);
        }
        s.first_moment.push_back(ckpt.first_moment[i].value);
        s.second_moment.push_back(ckpt.second_moment[i].value);
    }
    return s;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    static_assert(sizeof(float) == 4);
    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, kCheckpointVersion);
    put_blob(out, to_text(ckpt.network));
    put_blob(out, to_text(ckpt.train) + format_key_values({{"step", std::to_string(ckpt.step)}}));
    for (const auto& t : ckpt.parameters) put_tensor(out, t.name, t.value);
    for (const auto& t : ckpt.first_moment) put_tensor(out, std::string(kFirstMomentPrefix) + t.name, t.value);
    for (const auto& t : ckpt.second_moment) put_tensor(out, std::string(kSecondMomentPrefix) + t.name, t.value);
    put_u64(out, checksum64(out));
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() < 4) {
        throw CheckpointError(Kind::Truncated, "checkpoint: file too short for header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError(Kind::BadMagic, "checkpoint: bad magic bytes (not a BSDN file)");
    }
    if (bytes.size() < 16) {
        throw CheckpointError(Kind::Truncated, "checkpoint: file too short for header");
    }
    const std::uint32_t version = Reader(bytes, 4, 8).u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::BadVersion, "checkpoint: unsupported format version " + std::to_string(version) +
                                                    " (expected " + std::to_string(kCheckpointVersion) + ")");
    }

    const std::size_t body = bytes.size() - 8;
    RawCheckpoint raw;
    bool structured = true;
    try {
        raw = parse_structure(bytes);
    } catch (const TruncatedInput&) {
        structured = false;
    }
    if (checksum64(bytes.substr(0, body)) != read_u64(bytes, body)) {
        if (!structured) {
            throw CheckpointError(Kind::Truncated, "checkpoint: file is truncated");
        }
        throw CheckpointError(Kind::BadChecksum, "checkpoint: checksum mismatch (file corrupted)");
    }
    if (!structured) {
        throw CheckpointError(Kind::Malformed, "checkpoint: record layout is inconsistent");
    }

    Checkpoint ck;
    try {
        KeyValues net_kv = parse_key_values(raw.network_text);
        ck.network = take_network_config(net_kv);
        reject_unknown(net_kv, "checkpoint network config");
        ck.network.validate();

        KeyValues train_kv = parse_key_values(raw.train_text);
        const auto step_it = train_kv.find("step");
        if (step_it == train_kv.end()) {
            throw ConfigError("checkpoint train config: missing step");
        }
        ck.step = std::stoll(step_it->second);
        train_kv.erase(step_it);
        ck.train = take_train_config(train_kv);
        reject_unknown(train_kv, "checkpoint train config");
    } catch (const Error& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint: ") + e.what());
    } catch (const std::exception& e) {
        throw CheckpointError(Kind::Malformed, std::string("checkpoint: bad step counter: ") + e.what());
    }

    for (auto& t : raw.tensors) {
        const std::string_view name = t.name;
        if (name.starts_with(kFirstMomentPrefix)) {
            t.name.erase(0, kFirstMomentPrefix.size());
            ck.first_moment.push_back(std::move(t));
        } else if (name.starts_with(kSecondMomentPrefix)) {
            t.name.erase(0, kSecondMomentPrefix.size());
            ck.second_moment.push_back(std::move(t));
        } else {
            ck.parameters.push_back(std::move(t));
        }
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read checkpoint " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace bsdn
