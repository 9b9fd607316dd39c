#include <doctest.h>

#include "bsdn/config.hpp"
#include "bsdn/errors.hpp"

using namespace bsdn;

TEST_CASE("key-value text") {
    const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=two words # trailing\r\n");
    CHECK(kv.size() == 2);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values(" = 3\n"), ConfigError);
    CHECK(format_key_values({{"x", "1"}, {"y", "z"}}) == "x = 1\ny = z\n");
}

TEST_CASE("experiment config defaults and round trip") {
    const ExperimentConfig defaults = parse_experiment_config("");
    CHECK(defaults.network == NetworkConfig{});
    CHECK(defaults.train == TrainConfig{});

    ExperimentConfig c;
    c.network.depth = 4;
    c.network.head_widths = {32, 16, 8};
    c.network.image_channels = 3;
    c.network.residual_period = 0;
    c.train.learning_rate = 1.5e-4;
    c.train.noise = NoiseModel::gaussian_range(5, 50);
    c.train.seed = 18446744073709551615ull;
    c.train.rotate = true;
    c.train.rampdown_fraction = 0.25;
    const ExperimentConfig back = parse_experiment_config(to_text(c.network) + to_text(c.train));
    CHECK(back.network == c.network);
    CHECK(back.train == c.train);
}

TEST_CASE("experiment config errors name the key") {
    auto expect = [](const std::string& text, const std::string& key) {
        try {
            parse_experiment_config(text);
            FAIL("expected ConfigError for " << text);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(key) != std::string::npos);
        }
    };
    expect("depht = 3\n", "depht");
    expect("depth = three\n", "depth");
    expect("depth = 3.5\n", "depth");
    expect("learning_rate = fast\n", "learning_rate");
    expect("rotate = maybe\n", "rotate");
    expect("head_widths = 8,x\n", "head_widths");
    expect("noise = laplace:2\n", "noise");
    expect("depth = 10\npatch_size = 20\n", "patch_size");
    expect("steps = -1\n", "steps");
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/bsdn.cfg"), IoError);
}

TEST_CASE("shortest round-trip number formatting") {
    CHECK(format_double(0.3) == "0.3");
    CHECK(format_double(25.0) == "25");
    CHECK(format_double(1e-6) == "1e-06");
    CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}
