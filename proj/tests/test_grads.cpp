#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fullgrad/grads.hpp"
#include "fullgrad/network.hpp"
#include "fullgrad/presets.hpp"
#include "fullgrad/random.hpp"

using namespace fullgrad;

namespace {

constexpr double kFdStep = 1e-4;
constexpr double kFdTol = 1e-6;

// |analytic - numeric| / max(|analytic|, |numeric|, 1)
double rel_dev(double a, double n) {
    return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1.0});
}

double max_rel_dev(const Tensor& a, const Tensor& n) {
    REQUIRE(a.shape() == n.shape());
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, rel_dev(a[i], n[i]));
    return worst;
}

Tensor random_input(const NetworkSpec& spec, Rng& rng) {
    Tensor x({1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    return x;
}

Tensor off_kink_input(const NetworkSpec& spec, const Parameters& params, Rng& rng,
                      double margin = 10 * kFdStep) {
    for (int tries = 0; tries < 200; ++tries) {
        Tensor x = random_input(spec, rng);
        if (!near_kink(spec, params, x, margin)) return x;
    }
    FAIL("could not sample an off-kink input");
    return Tensor();
}

// compares every gradient the analytic pass produces against the numeric oracle
void check_against_oracle(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                          int target) {
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    const GradientBundle gb = backward(spec, params, trace, target);
    const FdBundle fd = finite_difference_oracle(spec, params, x, target, kFdStep);

    REQUIRE(max_rel_dev(gb.input_grad, fd.input_grad) < kFdTol);
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerGrads& a = gb.param_grads[li];
        const LayerGrads& n = fd.param_grads[li];
        if (a.weight.defined()) REQUIRE(max_rel_dev(a.weight, n.weight) < kFdTol);
        if (a.bias.defined()) REQUIRE(max_rel_dev(a.bias, n.bias) < kFdTol);
        if (a.gamma.defined()) REQUIRE(max_rel_dev(a.gamma, n.gamma) < kFdTol);
        if (a.beta.defined()) REQUIRE(max_rel_dev(a.beta, n.beta) < kFdTol);
    }
}

NetworkSpec small_convnet() {
    NetworkSpec s;
    s.input_shape = {1, 6, 6};
    s.num_classes = 2;
    s.layers = {
        LayerSpec::conv2d(1, 3, {3, 3}, {1, 1}, {1, 1}),
        LayerSpec::relu(),
        LayerSpec::maxpool2d({2, 2}, {2, 2}),
        LayerSpec::flatten(),
        LayerSpec::linear(3 * 3 * 3, 2),
    };
    return s;
}

NetworkSpec small_bn_net() {
    NetworkSpec s;
    s.input_shape = {1, 6, 6};
    s.num_classes = 2;
    s.layers = {
        LayerSpec::conv2d(1, 2, {3, 3}, {1, 1}, {1, 1}, /*bias=*/false),
        LayerSpec::batchnorm2d(2),
        LayerSpec::relu(),
        LayerSpec::avgpool2d({2, 2}, {2, 2}),
        LayerSpec::flatten(),
        LayerSpec::linear(2 * 3 * 3, 2),
    };
    return s;
}

NetworkSpec small_sigmoid_net() {
    NetworkSpec s;
    s.input_shape = {1, 2, 2};
    s.num_classes = 2;
    s.layers = {
        LayerSpec::flatten(),
        LayerSpec::linear(4, 5),
        LayerSpec::sigmoid(),
        LayerSpec::linear(5, 2),
    };
    return s;
}

// f = w1 . relu(w0 x + b0) + b1 with units 1 and 3 dead at x = (1, 0.5)
struct OneHidden {
    NetworkSpec spec;
    Parameters params;
    Tensor x;
};

OneHidden one_hidden_fixture() {
    OneHidden f;
    f.spec.input_shape = {1, 1, 2};
    f.spec.num_classes = 1;
    f.spec.layers = {
        LayerSpec::flatten(),
        LayerSpec::linear(2, 4),
        LayerSpec::relu(),
        LayerSpec::linear(4, 1),
    };
    f.params = init_params(f.spec, 0);
    Tensor& w0 = f.params.layers[1].weight;
    Tensor& b0 = f.params.layers[1].bias;
    const double w0v[4][2] = {{1, 1}, {-1, -1}, {1, -1}, {0, 1}};
    const double b0v[4] = {-0.2, -0.1, 0.0, -2.0};
    for (int u = 0; u < 4; ++u) {
        w0.at(u, 0) = w0v[u][0];
        w0.at(u, 1) = w0v[u][1];
        b0[u] = b0v[u];
    }
    Tensor& w1 = f.params.layers[3].weight;
    const double w1v[4] = {0.7, 0.4, -0.3, 0.9};
    for (int u = 0; u < 4; ++u) w1.at(0, u) = w1v[u];
    f.params.layers[3].bias[0] = 0.3;
    f.x = Tensor({1, 1, 1, 2});
    f.x[0] = 1.0;
    f.x[1] = 0.5;
    return f;
}

}  // namespace

TEST_CASE("saturated toy: zero input-gradient, bias attributions (1,0)", "[grads]") {
    const Model m = saturation_model();
    Tensor x({1, 1, 1, 1});
    x[0] = 2.0;
    ActivationTrace trace;
    forward(m.spec, m.params, x, &trace);
    const GradientBundle gb = backward(m.spec, m.params, trace, 0);

    REQUIRE(gb.input_grad[0] == 0.0);
    REQUIRE(gb.bias_grads[3][0] == 1.0);  // output bias a carries the whole value
    REQUIRE(gb.bias_grads[1][0] == 0.0);  // saturated bias b gets nothing
}

TEST_CASE("single linear layer: df/dw equals the input", "[grads]") {
    NetworkSpec spec;
    spec.input_shape = {1, 1, 1};
    spec.num_classes = 1;
    spec.layers = {LayerSpec::flatten(), LayerSpec::linear(1, 1, /*bias=*/false)};
    Parameters params = init_params(spec, 1);
    params.layers[1].weight[0] = -0.8;

    Tensor x({1, 1, 1, 1});
    x[0] = 3.0;
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    const GradientBundle gb = backward(spec, params, trace, 0);
    REQUIRE(gb.param_grads[1].weight[0] == 3.0);
    REQUIRE(gb.input_grad[0] == -0.8);
}

TEST_CASE("oracle agreement on random nets and off-kink inputs", "[grads]") {
    const NetworkSpec nets[] = {small_convnet(), small_bn_net(), small_sigmoid_net()};
    Rng rng(17);
    for (const NetworkSpec& spec : nets) {
        for (uint64_t seed = 1; seed <= 2; ++seed) {
            Parameters params = init_params(spec, seed);
            // nonzero biases so the bias-gradient paths are exercised
            for (LayerParams& p : params.layers)
                if (p.bias.defined())
                    for (int64_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = 0.3 * rng.uniform();
            for (int trial = 0; trial < 5; ++trial) {
                const Tensor x = off_kink_input(spec, params, rng);
                check_against_oracle(spec, params, x, trial % spec.num_classes);
            }
        }
    }
}

TEST_CASE("oracle on a plain linear model reproduces w exactly", "[grads]") {
    NetworkSpec spec;
    spec.input_shape = {1, 1, 3};
    spec.num_classes = 1;
    spec.layers = {LayerSpec::flatten(), LayerSpec::linear(3, 1)};
    Parameters params = init_params(spec, 2);
    params.layers[1].weight.at(0, 0) = 1.5;
    params.layers[1].weight.at(0, 1) = -2.0;
    params.layers[1].weight.at(0, 2) = 0.25;
    params.layers[1].bias[0] = 0.7;

    Tensor x({1, 1, 1, 3});
    x[0] = 0.3;
    x[1] = -1.1;
    x[2] = 2.2;
    const FdBundle fd = finite_difference_oracle(spec, params, x, 0, kFdStep);
    REQUIRE(fd.input_grad[0] == Catch::Approx(1.5).margin(1e-10));
    REQUIRE(fd.input_grad[1] == Catch::Approx(-2.0).margin(1e-10));
    REQUIRE(fd.input_grad[2] == Catch::Approx(0.25).margin(1e-10));
    REQUIRE(fd.param_grads[1].bias[0] == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("dead branch: analytic and numeric gradients both zero", "[grads]") {
    const OneHidden f = one_hidden_fixture();
    ActivationTrace trace;
    forward(f.spec, f.params, f.x, &trace);
    const GradientBundle gb = backward(f.spec, f.params, trace, 0);
    const FdBundle fd = finite_difference_oracle(f.spec, f.params, f.x, 0, kFdStep);

    // units 1 and 3 are dead at this x: all their parameter gradients vanish
    for (int dead : {1, 3}) {
        REQUIRE(gb.param_grads[1].weight.at(dead, 0) == 0.0);
        REQUIRE(gb.param_grads[1].weight.at(dead, 1) == 0.0);
        REQUIRE(gb.param_grads[1].bias[dead] == 0.0);
        REQUIRE(std::fabs(fd.param_grads[1].weight.at(dead, 0)) < 1e-12);
        REQUIRE(std::fabs(fd.param_grads[1].bias[dead]) < 1e-12);
    }
}

TEST_CASE("relu contributes no implicit bias entry", "[grads]") {
    const NetworkSpec spec = small_convnet();
    const Parameters params = init_params(spec, 4);
    Rng rng(4);
    const Tensor x = random_input(spec, rng);
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    const GradientBundle gb = backward(spec, params, trace, 0);

    REQUIRE_FALSE(gb.bias_grads[1].defined());  // relu
    REQUIRE_FALSE(gb.bias_grads[2].defined());  // maxpool
    REQUIRE_FALSE(gb.bias_grads[3].defined());  // flatten

    // the linearization remainder sigma(z) - sigma'(z) z is identically zero
    // for relu under the mask convention
    const Tensor& z = trace.layers[1].input;
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double mask = z[i] > 0.0 ? 1.0 : 0.0;
        REQUIRE(std::max(z[i], 0.0) - mask * z[i] == 0.0);
    }
}

TEST_CASE("weak dependence: pattern-preserving perturbations leave G fixed", "[grads]") {
    const NetworkSpec spec = small_convnet();
    Parameters params = init_params(spec, 6);
    Rng rng(21);
    for (LayerParams& p : params.layers)
        if (p.bias.defined())
            for (int64_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = 0.3 * rng.uniform();

    const Tensor x = off_kink_input(spec, params, rng, 1e-2);
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    const GradientBundle base = backward(spec, params, trace, 0);

    auto pattern_of = [&](const ActivationTrace& t) {
        std::vector<int64_t> sig;
        for (size_t li = 0; li < spec.layers.size(); ++li) {
            if (spec.layers[li].kind == LayerKind::ReLU) {
                const Tensor& z = t.layers[li].input;
                for (int64_t i = 0; i < z.numel(); ++i) sig.push_back(z[i] > 0.0);
            } else if (spec.layers[li].kind == LayerKind::MaxPool2d) {
                for (int64_t a : t.layers[li].pool_argmax) sig.push_back(a);
            }
        }
        return sig;
    };
    const auto base_pattern = pattern_of(trace);

    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor xp = x;
        for (int64_t i = 0; i < xp.numel(); ++i) xp[i] += 1e-4 * (2.0 * rng.uniform() - 1.0);
        ActivationTrace tp;
        forward(spec, params, xp, &tp);
        if (pattern_of(tp) != base_pattern) continue;  // stepped over a kink; skip
        ++checked;
        const GradientBundle gb = backward(spec, params, tp, 0);
        REQUIRE(max_abs(gb.input_grad - base.input_grad) <= 1e-10);
        for (size_t li = 0; li < spec.layers.size(); ++li)
            if (base.bias_grads[li].defined())
                REQUIRE(max_abs(gb.bias_grads[li] - base.bias_grads[li]) <= 1e-10);
    }
    REQUIRE(checked >= 90);  // the margin makes pattern flips rare
}

TEST_CASE("bias sensitivity: output bias moves f and G but not the input-gradient", "[grads]") {
    const OneHidden f = one_hidden_fixture();

    // +100 on the output bias
    const SensitivityResult big =
        gradient_sensitivity_check(f.spec, f.params, f.x, 0, /*layer=*/3, /*bias=*/0, 100.0);
    REQUIRE(big.delta_f == Catch::Approx(100.0));
    REQUIRE(big.delta_G > 1.0);

    Parameters shifted = f.params;
    shifted.layers[3].bias[0] += 100.0;
    ActivationTrace t0, t1;
    forward(f.spec, f.params, f.x, &t0);
    forward(f.spec, shifted, f.x, &t1);
    const Tensor g0 = backward(f.spec, f.params, t0, 0).input_grad;
    const Tensor g1 = backward(f.spec, shifted, t1, 0).input_grad;
    REQUIRE(max_abs(g1 - g0) == 0.0);  // input-gradient is blind to this change

    // a dead unit's bias, nudged too little to revive it: nothing moves
    const SensitivityResult dead =
        gradient_sensitivity_check(f.spec, f.params, f.x, 0, /*layer=*/1, /*bias=*/1, 0.05);
    REQUIRE(std::fabs(dead.delta_f) <= 1e-12);
    REQUIRE(dead.delta_G <= 1e-12);

    // an active unit's bias: both move
    const SensitivityResult alive =
        gradient_sensitivity_check(f.spec, f.params, f.x, 0, /*layer=*/1, /*bias=*/0, 0.05);
    REQUIRE(std::fabs(alive.delta_f) > 1e-12);
    REQUIRE(alive.delta_G > 1e-12);

    // delta_G vanishes iff delta_f does, across every bias coordinate
    for (int layer : {1, 3}) {
        const Tensor& b = f.params.layers[static_cast<size_t>(layer)].bias;
        for (int i = 0; i < static_cast<int>(b.numel()); ++i) {
            const SensitivityResult r =
                gradient_sensitivity_check(f.spec, f.params, f.x, 0, layer, i, 1e-4);
            REQUIRE((std::fabs(r.delta_f) > 1e-12) == (r.delta_G > 1e-12));
        }
    }
}

TEST_CASE("perturbing an active-path weight moves both f and G", "[grads]") {
    const OneHidden f = one_hidden_fixture();
    ActivationTrace t0;
    forward(f.spec, f.params, f.x, &t0);
    const double f0 = t0.logits.at(0, 0);
    const GradientBundle g0 = backward(f.spec, f.params, t0, 0);

    Parameters p1 = f.params;
    p1.layers[1].weight.at(0, 0) += 0.05;  // unit 0 is active
    ActivationTrace t1;
    forward(f.spec, p1, f.x, &t1);
    const GradientBundle g1 = backward(f.spec, p1, t1, 0);

    REQUIRE(std::fabs(t1.logits.at(0, 0) - f0) > 1e-6);
    double dG = max_abs(g1.input_grad - g0.input_grad);
    for (size_t li = 0; li < g0.bias_grads.size(); ++li)
        if (g0.bias_grads[li].defined())
            dG = std::max(dG, max_abs(g1.bias_grads[li] - g0.bias_grads[li]));
    REQUIRE(dG > 1e-6);
}
