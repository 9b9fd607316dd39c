#include "bsdn/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "bsdn/config.hpp"
#include "bsdn/errors.hpp"
#include "bsdn/eval.hpp"
#include "bsdn/image_io.hpp"
#include "bsdn/rng.hpp"
#include "bsdn/training.hpp"

namespace bsdn {

namespace {

namespace fs = std::filesystem;

using Entries = std::vector<std::pair<std::string, std::string>>;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create output directory " + dir.string());
    }
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) ensure_directory(file.parent_path());
}

// Manifest: command, version and every resolved setting, one key per line.
void write_manifest(const fs::path& path, const std::string& command, Entries entries,
                    const std::string& extra = {}) {
    entries.insert(entries.begin(), {{"command", command}, {"tool_version", std::string(kToolVersion)}});
    write_text(path, format_key_values(entries) + extra);
}

std::vector<LabeledImage> load_dir(const fs::path& dir) {
    std::vector<LabeledImage> out;
    for (const auto& p : list_images(dir)) out.push_back({p.stem().string(), read_png(p)});
    if (out.empty()) {
        throw InputError("no .png images in " + dir.string());
    }
    return out;
}

void require_channels(const Tensor& image, int channels, const std::string& id) {
    if (image.shape().c != channels) {
        throw DimensionError("image " + id + " has " + std::to_string(image.shape().c) +
                             " channels, checkpoint expects " + std::to_string(channels));
    }
}

std::string seed_text(std::uint64_t s) { return std::to_string(s); }

// ---------------------------------------------------------------------------

struct CorruptArgs {
    std::string in;
    std::string out;
    std::string noise;
    std::uint64_t seed = 0;
};

void cmd_corrupt(const CorruptArgs& a, std::ostream& out) {
    const NoiseModel model = NoiseModel::parse(a.noise);
    const auto images = load_dir(a.in);
    ensure_directory(a.out);
    std::string sidecar = "image,noise,sigma\n";
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Corrupted c = corrupt(images[i].clean, model, derive_seed(a.seed, {i}));
        write_png(fs::path(a.out) / (images[i].id + ".png"), c.noisy, 16);
        sidecar += images[i].id + "," + model.str() + "," + format_double(c.sigma.front() * 255.0) + "\n";
    }
    write_text(fs::path(a.out) / "sigmas.csv", sidecar);
    write_manifest(fs::path(a.out) / "manifest.txt", "corrupt",
                   {{"in", a.in}, {"out", a.out}, {"noise", model.str()}, {"seed", seed_text(a.seed)}});
    out << "corrupted " << images.size() << " images with " << model.str() << "\n";
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
    ExperimentConfig cfg;
    if (!a.config.empty()) cfg = load_experiment_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.steps) cfg.train.steps = *a.steps;
    cfg.network.validate();
    cfg.train.validate(cfg.network);

    std::vector<Tensor> data;
    for (auto& img : load_dir(a.data)) {
        require_channels(img.clean, cfg.network.image_channels, img.id);
        data.push_back(std::move(img.clean));
    }
    const fs::path ckpt_path(a.out);
    ensure_parent(ckpt_path);

    std::string losses = "step,loss\n";
    TrainOptions opt;
    opt.on_step = [&](std::int64_t step, double loss) {
        losses += std::to_string(step) + "," + format_double(loss) + "\n";
        if ((step + 1) % 100 == 0) out << "step " << step + 1 << " loss " << format_double(loss) << "\n";
    };
    opt.on_checkpoint = [&](const Checkpoint& c) { save_checkpoint(ckpt_path, c); };
    const TrainResult r = train(cfg.network, cfg.train, data, opt);

    save_checkpoint(ckpt_path, r.checkpoint);
    write_text(ckpt_path.string() + ".loss.csv", losses);
    write_manifest(ckpt_path.string() + ".manifest.txt", "train",
                   {{"data", a.data}, {"config", a.config}, {"out", a.out}},
                   to_text(cfg.network) + to_text(cfg.train));
    out << "trained " << r.checkpoint.step << " steps, checkpoint " << a.out << "\n";
}

struct DenoiseArgs {
    std::string ckpt;
    std::string in;
    std::string out;
    double sigma = 0.0;
    bool mean_only = false;
    std::string clean;
    std::uint64_t seed = 0;
};

void cmd_denoise(const DenoiseArgs& a, std::ostream& out) {
    if (!(a.sigma >= 0.0)) {
        throw ParameterError("--sigma must be >= 0");
    }
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Network net = restore_network(ckpt);
    const int channels = net.config.image_channels;
    ensure_directory(a.out);
    Entries manifest{{"ckpt", a.ckpt}, {"sigma", format_double(a.sigma)}, {"mean_only", a.mean_only ? "true" : "false"},
                     {"out", a.out}};

    if (!a.clean.empty()) {
        // Synthetic-noise mode: corrupt clean images exactly as the evaluator does.
        const auto images = load_dir(a.clean);
        std::vector<EvalRecord> records;
        for (std::size_t i = 0; i < images.size(); ++i) {
            require_channels(images[i].clean, channels, images[i].id);
            const EvalOutcome o = evaluate_image_detailed(net, images[i], i, a.sigma, a.seed);
            const Tensor& result = a.mean_only ? o.denoised.mean_only : o.denoised.posterior;
            write_png(fs::path(a.out) / (images[i].id + ".png"), result, 16);
            out << images[i].id << " psnr_noisy " << format_double(o.record.psnr_noisy) << " psnr_out "
                << format_double(a.mean_only ? o.record.psnr_mean_only : o.record.psnr_posterior) << "\n";
            records.push_back(o.record);
        }
        write_records_csv(fs::path(a.out) / "psnr.csv", records);
        manifest.push_back({"clean", a.clean});
        manifest.push_back({"seed", seed_text(a.seed)});
    } else {
        const auto images = load_dir(a.in);
        for (const auto& img : images) {
            require_channels(img.clean, channels, img.id);
            const Denoised d = denoise(net, img.clean, constant_variance(img.clean.shape(), a.sigma / 255.0));
            write_png(fs::path(a.out) / (img.id + ".png"), a.mean_only ? d.mean_only : d.posterior, 16);
        }
        manifest.push_back({"in", a.in});
        out << "denoised " << images.size() << " images\n";
    }
    write_manifest(fs::path(a.out) / "manifest.txt", "denoise", manifest);
}

struct ProbeArgs {
    std::string ckpt;
    std::string config;
    std::string out;
    int probes = 8;
    std::uint64_t seed = 0;
};

void cmd_probe(const ProbeArgs& a, std::ostream& out) {
    if (a.ckpt.empty() == a.config.empty()) {
        throw UsageError("probe-rf: give exactly one of --ckpt or --config");
    }
    NetworkConfig config;
    DiracProbeResult r;
    if (!a.ckpt.empty()) {
        const Network net = restore_network(load_checkpoint(a.ckpt));
        config = net.config;
        r = dirac_probe(net, min_probe_side(config), a.probes, a.seed);
    } else {
        config = load_experiment_config(a.config).network;
        r = dirac_probe(config, min_probe_side(config), a.probes, a.seed);
    }
    ensure_directory(a.out);
    write_footprint_png(fs::path(a.out) / "footprint.png", r);
    write_manifest(fs::path(a.out) / "manifest.txt", "probe-rf",
                   {{"ckpt", a.ckpt},
                    {"config", a.config},
                    {"out", a.out},
                    {"probes", std::to_string(a.probes)},
                    {"seed", seed_text(a.seed)},
                    {"box_height", std::to_string(r.box_height())},
                    {"box_width", std::to_string(r.box_width())}},
                   to_text(config));
    out << "footprint " << r.box_height() << "×" << r.box_width() << ", center "
        << format_double(r.center_value) << "\n";
}

struct EvalArgs {
    std::string ckpt;
    std::string clean;
    std::vector<double> sigmas;
    std::string out;
    std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const auto images = load_dir(a.clean);
    for (const auto& img : images) require_channels(img.clean, ckpt.network.image_channels, img.id);
    const auto records = cross_sigma_eval(ckpt, images, a.sigmas, a.seed);
    const fs::path csv(a.out);
    ensure_parent(csv);
    write_records_csv(csv, records);
    std::string sigmas;
    for (double s : a.sigmas) sigmas += (sigmas.empty() ? "" : ",") + format_double(s);
    write_manifest(csv.string() + ".manifest.txt", "eval",
                   {{"ckpt", a.ckpt}, {"clean", a.clean}, {"sigmas", sigmas}, {"out", a.out},
                    {"seed", seed_text(a.seed)}});
    out << "wrote " << records.size() << " rows to " << a.out << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Blind-spot self-supervised denoiser", "bsdn"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    CorruptArgs corrupt_args;
    auto* corrupt_cmd = app.add_subcommand("corrupt", "Add synthetic noise to a directory of images");
    corrupt_cmd->add_option("--in", corrupt_args.in, "Clean image directory")->required();
    corrupt_cmd->add_option("--out", corrupt_args.out, "Output directory")->required();
    corrupt_cmd->add_option("--noise", corrupt_args.noise, std::string(kNoiseGrammar))->required();
    corrupt_cmd->add_option("--seed", corrupt_args.seed, "Random seed");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train on noisy-only patches");
    train_cmd->add_option("--data", train_args.data, "Training image directory")->required();
    train_cmd->add_option("--config", train_args.config, "key = value config file");
    train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
    train_cmd->add_option("--seed", train_args.seed, "Override the config seed");
    train_cmd->add_option("--steps", train_args.steps, "Override the config step count");

    DenoiseArgs denoise_args;
    auto* denoise_cmd = app.add_subcommand("denoise", "Denoise a directory of images");
    denoise_cmd->add_option("--ckpt", denoise_args.ckpt, "Checkpoint")->required();
    auto* in_opt = denoise_cmd->add_option("--in", denoise_args.in, "Noisy image directory");
    auto* clean_opt =
        denoise_cmd->add_option("--clean", denoise_args.clean, "Clean images to corrupt with --sigma before denoising");
    in_opt->excludes(clean_opt);
    denoise_cmd->add_option("--sigma", denoise_args.sigma, "Noise level in 0-255 units")->required();
    denoise_cmd->add_option("--out", denoise_args.out, "Output directory")->required();
    denoise_cmd->add_flag("--mean-only", denoise_args.mean_only, "Output the prior mean, ignoring the noisy pixel");
    denoise_cmd->add_option("--seed", denoise_args.seed, "Corruption seed for --clean");

    ProbeArgs probe_args;
    auto* probe_cmd = app.add_subcommand("probe-rf", "Measure the receptive field with a Dirac probe");
    probe_cmd->add_option("--ckpt", probe_args.ckpt, "Checkpoint");
    probe_cmd->add_option("--config", probe_args.config, "Config file (random initializations)");
    probe_cmd->add_option("--out", probe_args.out, "Output directory")->required();
    probe_cmd->add_option("--probes", probe_args.probes, "Networks or inputs averaged")->check(CLI::PositiveNumber);
    probe_cmd->add_option("--seed", probe_args.seed, "Random seed");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR over test noise levels");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
    eval_cmd->add_option("--clean", eval_args.clean, "Clean image directory")->required();
    eval_cmd->add_option("--sigmas", eval_args.sigmas, "Comma-separated test sigmas")->required()->delimiter(',');
    eval_cmd->add_option("--out", eval_args.out, "CSV path")->required();
    eval_cmd->add_option("--seed", eval_args.seed, "Corruption seed");

    std::vector<const char*> raw;
    raw.reserve(argv.size());
    for (const auto& a : argv) raw.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*corrupt_cmd) cmd_corrupt(corrupt_args, out);
        if (*train_cmd) cmd_train(train_args, out);
        if (*denoise_cmd) {
            if (denoise_args.in.empty() && denoise_args.clean.empty()) {
                throw UsageError("denoise: give --in or --clean");
            }
            cmd_denoise(denoise_args, out);
        }
        if (*probe_cmd) cmd_probe(probe_args, out);
        if (*eval_cmd) cmd_eval(eval_args, out);
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParameterError& e) {
        err << "parameter error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace bsdn
