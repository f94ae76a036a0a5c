#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fullgrad/baselines.hpp"
#include "fullgrad/presets.hpp"
#include "fullgrad/random.hpp"

using namespace fullgrad;

namespace {

Tensor point2(double a, double b) {
    Tensor x({1, 1, 1, 2});
    x[0] = a;
    x[1] = b;
    return x;
}

// flatten -> linear(4->1) with fixed weights: f(x) = w.x + b
Model tiny_linear_model(double bias = 0.25) {
    Model m;
    m.spec.input_shape = {1, 2, 2};
    m.spec.num_classes = 1;
    m.spec.layers = {LayerSpec::flatten(), LayerSpec::linear(4, 1)};
    m.params = init_params(m.spec, 0);
    const double w[4] = {0.5, -1.5, 2.0, 0.75};
    for (int i = 0; i < 4; ++i) m.params.layers[1].weight[i] = w[i];
    m.params.layers[1].bias[0] = bias;
    return m;
}

Tensor random_input(const NetworkSpec& spec, Rng& rng) {
    Tensor x({1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    return x;
}

}  // namespace

TEST_CASE("path-integral attribution on the two-region toy", "[baselines]") {
    const Model m = two_region_model();
    const Tensor zero({1, 1, 1, 2});
    const int steps = 576;  // divisible by 4, 2, and 3: every kink lands on a step edge

    struct Case {
        double x1, x2, a1, a2;
    };
    for (const Case& c : {Case{4.0, 4.0, 10.0, 6.0},
                          Case{2.0, 2.0, 4.0, 4.0},
                          Case{1.5, 1.5, 2.5, 3.5}}) {
        const SaliencyMap ig =
            integrated_gradients(m.spec, m.params, point2(c.x1, c.x2), zero, 0, steps);
        INFO("x = (" << c.x1 << ", " << c.x2 << ")");
        REQUIRE(ig.values.at(0, 0) == Catch::Approx(c.a1).margin(1e-3));
        REQUIRE(ig.values.at(0, 1) == Catch::Approx(c.a2).margin(1e-3));
        // path attributions account for the whole change in f
        const double f = forward(m.spec, m.params, point2(c.x1, c.x2)).at(0, 0);
        const double f0 = forward(m.spec, m.params, zero).at(0, 0);
        REQUIRE(sum(ig.values) == Catch::Approx(f - f0).margin(1e-9));
    }

    // degenerate path: x == baseline attributes nothing
    const SaliencyMap none = integrated_gradients(m.spec, m.params, zero, zero, 0, 64);
    REQUIRE(max_abs(none.values) == 0.0);
}

TEST_CASE("input-gradient map basics", "[baselines]") {
    const Model lin = tiny_linear_model();
    Rng rng(40);
    const Tensor x = random_input(lin.spec, rng);

    // linear model: the map is |w| no matter where it is evaluated
    const SaliencyMap g = input_gradient_map(lin.spec, lin.params, x, 0);
    REQUIRE(g.values.at(0, 0) == 0.5);
    REQUIRE(g.values.at(0, 1) == 1.5);
    REQUIRE(g.values.at(1, 0) == 2.0);
    REQUIRE(g.values.at(1, 1) == 0.75);
    const SaliencyMap gs = input_gradient_map(lin.spec, lin.params, x, 0, /*signed=*/true);
    REQUIRE(gs.values.at(0, 1) == -1.5);

    // saturated region: gradient is blind to the input
    const Model sat = saturation_model();
    Tensor xs({1, 1, 1, 1});
    xs[0] = 2.0;
    REQUIRE(max_abs(input_gradient_map(sat.spec, sat.params, xs, 0).values) == 0.0);

    // shifting the output bias changes f everywhere but no gradient map
    Model shifted = lin;
    shifted.params.layers[1].bias[0] += 5.0;
    const SaliencyMap g2 = input_gradient_map(shifted.spec, shifted.params, x, 0);
    REQUIRE(max_abs(g.values - g2.values) == 0.0);
}

TEST_CASE("gradient-times-input properties", "[baselines]") {
    const Model lin = tiny_linear_model();
    Rng rng(41);
    const Tensor x = random_input(lin.spec, rng);

    // map is w .* x elementwise, signed
    const SaliencyMap gx = gradient_times_input(lin.spec, lin.params, x, 0);
    REQUIRE(gx.values.at(0, 1) == Catch::Approx(-1.5 * x[1]));

    // zero input kills the map entirely
    const Tensor zero({1, 1, 2, 2});
    REQUIRE(max_abs(gradient_times_input(lin.spec, lin.params, zero, 0).values) == 0.0);

    // on a bias-free piecewise-linear net the map sums to f(x) exactly
    NetworkSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.num_classes = 2;
    spec.layers = {
        LayerSpec::conv2d(1, 3, {3, 3}, {1, 1}, {1, 1}, /*bias=*/false),
        LayerSpec::relu(),
        LayerSpec::flatten(),
        LayerSpec::linear(48, 2, /*bias=*/false),
    };
    const Parameters params = init_params(spec, 11);
    const Tensor xr = random_input(spec, rng);
    const SaliencyMap m = gradient_times_input(spec, params, xr, 1);
    const double f = forward(spec, params, xr).at(0, 1);
    REQUIRE(sum(m.values) == Catch::Approx(f).margin(1e-10));
}

TEST_CASE("smoothed gradients", "[baselines]") {
    const Model lin = tiny_linear_model();
    Rng rng(42);
    const Tensor x = random_input(lin.spec, rng);

    // sigma = 0 collapses to the plain gradient map
    const SaliencyMap plain = input_gradient_map(lin.spec, lin.params, x, 0);
    const SaliencyMap sg0 = smooth_grad(lin.spec, lin.params, x, 0, 0.0, 7, false, 1);
    REQUIRE(max_abs(plain.values - sg0.values) == 0.0);
    const SaliencyMap sq0 = smooth_grad(lin.spec, lin.params, x, 0, 0.0, 7, true, 1);
    REQUIRE(max_abs(hadamard(plain.values, plain.values) - sq0.values) <= 1e-15);

    // a linear model's gradient ignores the jitter: any sigma, any n
    const SaliencyMap sg =
        smooth_grad(lin.spec, lin.params, x, 0, 2.5, 15, false, 3, /*signed=*/true);
    REQUIRE(sg.values.at(0, 1) == Catch::Approx(-1.5).margin(1e-12));

    // squared variant is nonnegative even on signed gradients
    REQUIRE(min_value(smooth_grad(lin.spec, lin.params, x, 0, 1.0, 9, true, 4).values) >= 0.0);

    // deterministic: same seed, same bits; different seed, different map
    const NetworkSpec cnn = cnn4_spec(1, 8, 4);
    const Parameters cp = init_params(cnn, 2);
    Tensor xc({1, 1, 8, 8});
    for (int64_t i = 0; i < xc.numel(); ++i) xc[i] = rng.uniform();
    const SaliencyMap a = smooth_grad(cnn, cp, xc, 0, 0.1, 5, false, 77);
    const SaliencyMap b = smooth_grad(cnn, cp, xc, 0, 0.1, 5, false, 77);
    const SaliencyMap c = smooth_grad(cnn, cp, xc, 0, 0.1, 5, false, 78);
    REQUIRE(max_abs(a.values - b.values) == 0.0);
    REQUIRE(max_abs(a.values - c.values) > 0.0);

    REQUIRE(default_smoothgrad_sigma(xc) ==
            Catch::Approx(0.15 * (max_value(xc) - min_value(xc))));
}

TEST_CASE("activation-weighted map from the last conv layer", "[baselines]") {
    // conv1x1 identity -> global avgpool -> flatten -> linear(1, no bias):
    // alpha = w/(H*W), so the map is relu(w/(H*W) * A) upsampled — a closed
    // form we can check directly.
    NetworkSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.num_classes = 1;
    spec.layers = {
        LayerSpec::conv2d(1, 1, {1, 1}, {1, 1}, {0, 0}, /*bias=*/false),
        LayerSpec::avgpool2d({4, 4}, {4, 4}),
        LayerSpec::flatten(),
        LayerSpec::linear(1, 1, /*bias=*/false),
    };
    Parameters params = init_params(spec, 3);
    params.layers[0].weight[0] = 1.0;
    params.layers[3].weight[0] = 2.0;

    Tensor x({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x[i] = (i % 3 == 0) ? -1.0 : 0.5 * i;
    const SaliencyMap cam = grad_cam(spec, params, x, 0);
    REQUIRE(cam.values.dim(0) == 4);
    REQUIRE(cam.values.dim(1) == 4);
    for (int i = 0; i < 16; ++i) {
        const double expect = std::max(2.0 / 16.0 * x[i], 0.0);
        REQUIRE(cam.values[i] == Catch::Approx(expect).margin(1e-12));
    }
    REQUIRE(min_value(cam.values) >= 0.0);

    // all-negative evidence clamps to an all-zero map
    Tensor neg = x;
    for (int i = 0; i < 16; ++i) neg[i] = -std::fabs(x[i]) - 0.1;
    REQUIRE(max_abs(grad_cam(spec, params, neg, 0).values) == 0.0);

    // layer selection: default picks the last conv; non-conv layers refuse
    REQUIRE(last_conv_layer(spec) == 0);
    REQUIRE_THROWS_AS(grad_cam(spec, params, x, 0, 2), std::invalid_argument);
    const Model sat = saturation_model();  // no conv layer at all
    Tensor xs({1, 1, 1, 1});
    REQUIRE_THROWS_AS(grad_cam(sat.spec, sat.params, xs, 0), std::invalid_argument);
}

TEST_CASE("random control map", "[baselines]") {
    const SaliencyMap a = random_map(5, 7, 9);
    const SaliencyMap b = random_map(5, 7, 9);
    const SaliencyMap c = random_map(5, 7, 10);
    REQUIRE(a.values.dim(0) == 5);
    REQUIRE(a.values.dim(1) == 7);
    REQUIRE(max_abs(a.values - b.values) == 0.0);
    REQUIRE(max_abs(a.values - c.values) > 0.0);
    REQUIRE(min_value(a.values) >= 0.0);
    REQUIRE(max_value(a.values) < 1.0);
}
