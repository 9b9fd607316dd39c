#include <doctest.h>

#include <cstring>

#include "bsdn/errors.hpp"
#include "bsdn/network.hpp"
#include "support.hpp"

using namespace bsdn;
using bsdn::testing::perturbation_footprint;
using bsdn::testing::random_tensor;
using bsdn::testing::self_perturbation_response;
using bsdn::testing::slim_config;

namespace {

// Bounding box side of the nonzero entries of a square footprint.
int box_side(const Tensor& f) {
    const int s = f.shape().h;
    int lo = s;
    int hi = -1;
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            if (f.at(0, 0, y, x) != 0.0f) {
                lo = std::min(lo, std::min(y, x));
                hi = std::max(hi, std::max(y, x));
            }
        }
    }
    return hi - lo + 1;
}

}  // namespace

TEST_CASE("branch dilations and receptive field") {
    NetworkConfig c;
    const Network net = build_network(slim_config(10), 1);
    REQUIRE(net.branches.size() == 11);
    for (int i = 0; i <= 10; ++i) CHECK(net.branches[i].spec.dilation == i + 1);
    CHECK(receptive_field(c).side == 43);

    const Network shallow = build_network(slim_config(1), 1);
    REQUIRE(shallow.branches.size() == 2);
    CHECK(shallow.branches[0].spec.dilation == 1);
    CHECK(shallow.branches[1].spec.dilation == 2);
    for (int d = 1; d <= 10; ++d) CHECK(receptive_field(slim_config(d)).side == 4 * d + 3);
}

TEST_CASE("layer inventory and parameter names") {
    const NetworkConfig c = slim_config(3, 3);
    const Network net = build_network(c, 5);
    CHECK(net.forward.size() == 3);
    CHECK(net.head.size() == 3);
    CHECK(net.head.back().spec.out_channels == 9);
    const auto params = net.named_parameters();
    REQUIRE(params.size() == 2 * (3 + 4 + 3));
    CHECK(params.front().first == "forward.1.weight");
    CHECK(params.back().first == "head.2.bias");
    std::size_t total = 0;
    for (const auto& [name, v] : params) total += v.value().numel();
    CHECK(net.parameter_count() == total);
    for (const Layer& b : net.branches) {
        CHECK(b.spec.blind_spot);
        for (int o = 0; o < b.spec.out_channels; ++o) {
            for (int i = 0; i < b.spec.in_channels; ++i) CHECK(b.weight.value().at(o, i, 1, 1) == 0.0f);
        }
    }
}

TEST_CASE("initialization is a pure function of the seed") {
    const NetworkConfig c = slim_config(4);
    const auto a = build_network(c, 42).named_parameters();
    const auto b = build_network(c, 42).named_parameters();
    const auto d = build_network(c, 43).named_parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].second.value() == b[i].second.value());
        any_diff = any_diff || !(a[i].second.value() == d[i].second.value());
    }
    CHECK(any_diff);
}

TEST_CASE("perturbing a pixel never changes the prediction at that pixel") {
    for (int image_channels : {1, 3}) {
        for (int depth : {1, 2, 3}) {
            for (std::uint64_t seed = 0; seed < 2; ++seed) {
                CAPTURE(image_channels);
                CAPTURE(depth);
                const Network net = build_network(slim_config(depth, image_channels), seed);
                CHECK(self_perturbation_response(net, 9, 10, seed + 100) == 0.0);
            }
        }
    }
}

TEST_CASE("gradient blind-spot probe") {
    const Network net = build_network(slim_config(3), 3);
    const BlindSpotReport ok = assert_blind_spot(net);
    CHECK(ok.passed);
    CHECK(ok.positions_checked == 10);
    CHECK(ok.failures.empty());
    CHECK(assert_blind_spot(build_network(slim_config(2, 3), 4)).passed);

    SUBCASE("a branch whose dilation equals the stream radius leaks") {
        for (int i = 1; i <= 3; ++i) {
            CAPTURE(i);
            Network bad = build_network(slim_config(3), 3);
            bad.branches[static_cast<std::size_t>(i)].spec.dilation = rf_half(i, 3);
            const BlindSpotReport r = assert_blind_spot(bad);
            CHECK_FALSE(r.passed);
            CHECK_FALSE(r.failures.empty());
            CHECK(self_perturbation_response(bad, 9, 9, 1) > 0.0);
        }
    }
    SUBCASE("removing the mask leaks") {
        Network bad = build_network(slim_config(3), 3);
        Layer& b0 = bad.branches[0];
        b0.spec.blind_spot = false;
        Tensor w = b0.weight.value();
        for (int o = 0; o < b0.spec.out_channels; ++o) w.at(o, 0, 1, 1) = 0.5f;
        b0.weight = Var::leaf(std::move(w), true);
        CHECK_FALSE(assert_blind_spot(bad).passed);
    }
}

TEST_CASE("zero final head layer predicts its bias everywhere") {
    Network net = build_network(slim_config(2, 3), 8);
    Layer& last = net.head.back();
    last.weight = Var::leaf(Tensor(last.weight.shape(), 0.0f), true);
    Tensor bias(last.bias.shape());
    for (int k = 0; k < bias.shape().c; ++k) bias.at(0, k, 0, 0) = 0.1f * static_cast<float>(k + 1);
    last.bias = Var::leaf(bias, true);
    const GaussianPredictionMap p = forward(net, Var::leaf(random_tensor(Shape{2, 3, 6, 7}, 2, 0.0f, 1.0f)));
    for (int n = 0; n < 2; ++n) {
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 7; ++x) {
                for (int k = 0; k < 3; ++k) CHECK(p.mean.value().at(n, k, y, x) == bias.at(0, k, 0, 0));
                for (int k = 0; k < 6; ++k) CHECK(p.cov_params.value().at(n, k, y, x) == bias.at(0, 3 + k, 0, 0));
            }
        }
    }
}

TEST_CASE("predictions are translation equivariant away from the borders") {
    const Network net = build_network(slim_config(2), 6);
    const int r = receptive_field(net.config).side / 2;
    const int size = 32;
    const int shift = 3;
    const Tensor big = random_tensor(Shape{1, 1, size + shift, size + shift}, 9, 0.0f, 1.0f);
    Tensor a(Shape{1, 1, size, size});
    Tensor b(Shape{1, 1, size, size});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            a.at(0, 0, y, x) = big.at(0, 0, y, x);
            b.at(0, 0, y, x) = big.at(0, 0, y + shift, x + shift);
        }
    }
    const Tensor ma = forward(net, Var::leaf(a)).mean.value();
    const Tensor mb = forward(net, Var::leaf(b)).mean.value();
    for (int y = r + shift; y < size - r; ++y) {
        for (int x = r + shift; x < size - r; ++x) {
            CHECK(ma.at(0, 0, y, x) == mb.at(0, 0, y - shift, x - shift));
        }
    }
}

TEST_CASE("receptive field matches exhaustive perturbation, with and without residuals") {
    for (int period : {2, 0}) {
        for (int depth : {1, 2, 3}) {
            CAPTURE(period);
            CAPTURE(depth);
            NetworkConfig c = slim_config(depth);
            c.residual_period = period;
            const Network net = build_network(c, 11);
            const int side = 2 * receptive_field(c).side + 1;
            const Tensor f = perturbation_footprint(net, side, 12);
            CHECK(box_side(f) == 4 * depth + 3);
            CHECK(f.at(0, 0, side / 2, side / 2) == 0.0f);
        }
    }
}

TEST_CASE("forward rejects mismatched channels") {
    const Network net = build_network(slim_config(1), 0);
    CHECK_THROWS_AS(forward(net, Var::leaf(Tensor(Shape{1, 3, 8, 8}))), DimensionError);
}

TEST_CASE("configuration validation names the field") {
    auto expect_field = [](NetworkConfig c, const std::string& field) {
        try {
            c.validate();
            FAIL("expected ConfigError for " << field);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(field) != std::string::npos);
        }
    };
    NetworkConfig c = slim_config(2);
    c.depth = 0;
    expect_field(c, "depth");
    c = slim_config(2);
    c.kernel_size = 4;
    expect_field(c, "kernel_size");
    c = slim_config(2);
    c.image_channels = 2;
    expect_field(c, "image_channels");
    c = slim_config(2);
    c.head_widths = {8, 0};
    expect_field(c, "head_widths");
    c = slim_config(2, 3);
    c.forward_channels = 2;
    expect_field(c, "forward_channels");
    c.residual_period = 0;
    CHECK_NOTHROW(c.validate());
    CHECK_THROWS_AS(build_network(slim_config(0), 0), ConfigError);
}
