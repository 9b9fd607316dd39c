#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bsdn/cli.hpp"
#include "bsdn/config.hpp"
#include "bsdn/image_io.hpp"
#include "bsdn/training.hpp"
#include "support.hpp"

using namespace bsdn;
using bsdn::testing::texture_image;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "bsdn");
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workspace {
    fs::path root;

    explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("bsdn_cli_" + name)) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path images(const std::string& name, int count, int size, int channels = 1, std::uint64_t seed = 0,
                    int bits = 8) const {
        const fs::path dir = root / name;
        fs::create_directories(dir);
        for (int i = 0; i < count; ++i) {
            char file[32];
            std::snprintf(file, sizeof(file), "img%03d.png", i);
            write_png(dir / file, texture_image(seed + static_cast<std::uint64_t>(i), size, size, channels), bits);
        }
        return dir;
    }

    fs::path file(const std::string& name, const std::string& text) const {
        std::ofstream(root / name) << text;
        return root / name;
    }
};

const char* kToyConfig =
    "depth = 1\nforward_channels = 4\nbranch_channels = 4\nhead_widths = 8\n"
    "steps = 6\nbatch_size = 2\npatch_size = 12\nlearning_rate = 0.001\nnoise = gaussian:25\n";

// Kolmogorov-Smirnov distance of `values` from Uniform[lo, hi].
double ks_uniform(std::vector<double> values, double lo, double hi) {
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    double d = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double f = (values[i] - lo) / (hi - lo);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

}  // namespace

TEST_CASE("cli usage errors") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"--version"}).code == kExitOk);
    CHECK(cli({"corrupt", "--help"}).code == kExitOk);

    Workspace ws("usage");
    const fs::path in = ws.images("in", 1, 8);
    const Run bad = cli({"corrupt", "--in", in.string(), "--out", (ws.root / "o").string(), "--noise", "laplace:3"});
    CHECK(bad.code == kExitUsage);
    CHECK(bad.err.find(kNoiseGrammar) != std::string::npos);
    CHECK_FALSE(fs::exists(ws.root / "o"));

    const fs::path cfg = ws.file("typo.cfg", "depht = 3\n");
    const Run typo = cli({"train", "--data", in.string(), "--config", cfg.string(), "--out", (ws.root / "c").string()});
    CHECK(typo.code == kExitUsage);
    CHECK(typo.err.find("depht") != std::string::npos);
}

TEST_CASE("cli data errors") {
    Workspace ws("data");
    CHECK(cli({"corrupt", "--in", (ws.root / "missing").string(), "--out", (ws.root / "o").string(), "--noise",
               "gaussian:5"})
              .code == kExitData);
    fs::create_directories(ws.root / "empty");
    CHECK(cli({"train", "--data", (ws.root / "empty").string(), "--out", (ws.root / "c").string()}).code ==
          kExitData);
    const fs::path junk = ws.file("junk.ckpt", "garbage");
    CHECK(cli({"eval", "--ckpt", junk.string(), "--clean", ws.images("in", 1, 8).string(), "--sigmas", "5", "--out",
               (ws.root / "e.csv").string()})
              .code == kExitData);
}

TEST_CASE("cli corrupt") {
    Workspace ws("corrupt");
    const fs::path in = ws.images("in", 3, 16, 3);
    const fs::path zero = ws.root / "zero";
    REQUIRE(cli({"corrupt", "--in", in.string(), "--out", zero.string(), "--noise", "gaussian:0"}).code == kExitOk);
    for (const auto& p : list_images(in)) {
        CHECK(read_png(zero / p.filename()) == read_png(p));
    }
    CHECK(fs::exists(zero / "manifest.txt"));
    CHECK(slurp(zero / "sigmas.csv").rfind("image,noise,sigma\n", 0) == 0);

    const fs::path a = ws.root / "a";
    const fs::path b = ws.root / "b";
    REQUIRE(cli({"corrupt", "--in", in.string(), "--out", a.string(), "--noise", "gaussian:25", "--seed", "3"}).code ==
            kExitOk);
    REQUIRE(cli({"corrupt", "--in", in.string(), "--out", b.string(), "--noise", "gaussian:25", "--seed", "3"}).code ==
            kExitOk);
    for (const auto& p : list_images(a)) CHECK(slurp(p) == slurp(b / p.filename()));
    CHECK(slurp(a / "manifest.txt") != "");
    CHECK(slurp(a / "sigmas.csv") == slurp(b / "sigmas.csv"));
    const KeyValues manifest = parse_key_values(slurp(a / "manifest.txt"));
    CHECK(manifest.at("command") == "corrupt");
    CHECK(manifest.at("noise") == "gaussian:25");
    CHECK(manifest.at("seed") == "3");
}

TEST_CASE("cli corrupt records uniform sigmas over a range") {
    Workspace ws("range");
    const fs::path in = ws.images("in", 200, 4);
    const fs::path out = ws.root / "out";
    REQUIRE(cli({"corrupt", "--in", in.string(), "--out", out.string(), "--noise", "gaussian-range:5,50", "--seed",
                 "1"})
                .code == kExitOk);
    std::istringstream lines(slurp(out / "sigmas.csv"));
    std::string line;
    std::getline(lines, line);
    std::vector<double> sigmas;
    while (std::getline(lines, line)) sigmas.push_back(std::stod(line.substr(line.rfind(',') + 1)));
    REQUIRE(sigmas.size() == 200);
    // Asymptotic 1% critical value 1.628 / sqrt(n).
    CHECK(ks_uniform(sigmas, 5.0, 50.0) < 1.628 / std::sqrt(200.0));
}

TEST_CASE("cli train, denoise, probe and eval") {
    Workspace ws("pipeline");
    const fs::path data = ws.images("data", 2, 16);
    const fs::path cfg = ws.file("toy.cfg", kToyConfig);
    const fs::path ckpt = ws.root / "model.ckpt";
    const Run tr = cli({"train", "--data", data.string(), "--config", cfg.string(), "--out", ckpt.string(), "--seed",
                        "4"});
    REQUIRE(tr.code == kExitOk);
    CHECK(fs::exists(ckpt.string() + ".loss.csv"));
    const KeyValues manifest = parse_key_values(slurp(ckpt.string() + ".manifest.txt"));
    CHECK(manifest.at("command") == "train");
    CHECK(manifest.at("seed") == "4");
    CHECK(manifest.at("depth") == "1");
    CHECK(manifest.at("rampdown_fraction") == "0.3");

    SUBCASE("rerun gives identical bytes") {
        const fs::path again = ws.root / "again.ckpt";
        REQUIRE(cli({"train", "--data", data.string(), "--config", cfg.string(), "--out", again.string(), "--seed",
                     "4"})
                    .code == kExitOk);
        CHECK(slurp(again) == slurp(ckpt));
        CHECK(slurp(again.string() + ".loss.csv") == slurp(ckpt.string() + ".loss.csv"));
    }
    SUBCASE("zero steps stores the initialized network") {
        const fs::path init = ws.root / "init.ckpt";
        REQUIRE(cli({"train", "--data", data.string(), "--config", cfg.string(), "--out", init.string(), "--seed",
                     "4", "--steps", "0"})
                    .code == kExitOk);
        const Checkpoint c = load_checkpoint(init);
        CHECK(c.step == 0);
        const auto fresh = build_network(c.network, network_init_seed(4)).named_parameters();
        REQUIRE(fresh.size() == c.parameters.size());
        for (std::size_t i = 0; i < fresh.size(); ++i) CHECK(fresh[i].second.value() == c.parameters[i].value);
    }
    SUBCASE("denoise limits") {
        const fs::path noisy = ws.root / "noisy";
        REQUIRE(cli({"corrupt", "--in", data.string(), "--out", noisy.string(), "--noise", "gaussian:25"}).code ==
                kExitOk);
        const fs::path exact = ws.root / "exact";
        REQUIRE(cli({"denoise", "--ckpt", ckpt.string(), "--in", noisy.string(), "--sigma", "0", "--out",
                     exact.string()})
                    .code == kExitOk);
        for (const auto& p : list_images(noisy)) CHECK(read_png(exact / p.filename()) == read_png(p));

        const fs::path wide = ws.root / "wide";
        const fs::path mean = ws.root / "mean";
        REQUIRE(cli({"denoise", "--ckpt", ckpt.string(), "--in", noisy.string(), "--sigma", "1e6", "--out",
                     wide.string()})
                    .code == kExitOk);
        REQUIRE(cli({"denoise", "--ckpt", ckpt.string(), "--in", noisy.string(), "--sigma", "25", "--out",
                     mean.string(), "--mean-only"})
                    .code == kExitOk);
        for (const auto& p : list_images(noisy)) {
            const Tensor w = read_png(wide / p.filename());
            const Tensor m = read_png(mean / p.filename());
            for (std::size_t i = 0; i < w.numel(); ++i) CHECK(std::fabs(w.data()[i] - m.data()[i]) <= 1e-3f);
        }
        CHECK(fs::exists(wide / "manifest.txt"));

        const fs::path color = ws.images("color", 1, 16, 3);
        CHECK(cli({"denoise", "--ckpt", ckpt.string(), "--in", color.string(), "--sigma", "25", "--out",
                   (ws.root / "c").string()})
                  .code == kExitData);
        CHECK(cli({"denoise", "--ckpt", ckpt.string(), "--in", noisy.string(), "--sigma", "-1", "--out",
                   (ws.root / "neg").string()})
                  .code == kExitUsage);
    }
    SUBCASE("eval rows and agreement with denoise") {
        const fs::path held = ws.images("held", 2, 16, 1, 50, 16);
        const fs::path csv = ws.root / "eval.csv";
        REQUIRE(cli({"eval", "--ckpt", ckpt.string(), "--clean", held.string(), "--sigmas", "5,15,25,35,50", "--out",
                     csv.string(), "--seed", "8"})
                    .code == kExitOk);
        const std::string text = slurp(csv);
        CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 5);
        CHECK(fs::exists(csv.string() + ".manifest.txt"));

        const fs::path one = ws.root / "one.csv";
        REQUIRE(cli({"eval", "--ckpt", ckpt.string(), "--clean", held.string(), "--sigmas", "25", "--out",
                     one.string(), "--seed", "8"})
                    .code == kExitOk);
        const fs::path den = ws.root / "den";
        REQUIRE(cli({"denoise", "--ckpt", ckpt.string(), "--clean", held.string(), "--sigma", "25", "--out",
                     den.string(), "--seed", "8"})
                    .code == kExitOk);
        CHECK(slurp(den / "psnr.csv") == slurp(one));
    }
    SUBCASE("probe from a checkpoint") {
        const Run pr = cli({"probe-rf", "--ckpt", ckpt.string(), "--out", (ws.root / "probe").string()});
        REQUIRE(pr.code == kExitOk);
        CHECK(pr.out == "footprint 7×7, center 0\n");
        CHECK(fs::exists(ws.root / "probe" / "footprint.png"));
        CHECK(cli({"probe-rf", "--ckpt", ckpt.string(), "--config", cfg.string(), "--out", (ws.root / "p2").string()})
                  .code == kExitUsage);
    }
}

TEST_CASE("cli probe of a depth-10 configuration") {
    Workspace ws("probe10");
    const fs::path cfg = ws.file("d10.cfg", "depth = 10\nforward_channels = 4\nbranch_channels = 4\nhead_widths = 8\n");
    const Run r = cli({"probe-rf", "--config", cfg.string(), "--out", (ws.root / "out").string(), "--probes", "1"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out == "footprint 43×43, center 0\n");
    const Tensor heat = read_png(ws.root / "out" / "footprint.png");
    CHECK(heat.shape() == Shape{1, 1, 86, 86});
}

TEST_CASE("cli reports divergence as a numerical error") {
    Workspace ws("diverge");
    const fs::path data = ws.images("data", 2, 16);
    const fs::path cfg = ws.file("hot.cfg", std::string(kToyConfig) + "rampdown_fraction = 0\n");
    std::string text = slurp(cfg);
    text.replace(text.find("learning_rate = 0.001"), 21, "learning_rate = 1e9");
    text.replace(text.find("steps = 6"), 9, "steps = 60");
    const fs::path hot = ws.file("hot2.cfg", text);
    const Run r = cli({"train", "--data", data.string(), "--config", hot.string(), "--out", (ws.root / "c").string()});
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("step") != std::string::npos);
}
