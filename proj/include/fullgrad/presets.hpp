#pragma once

#include <stdexcept>
#include <string>

#include "fullgrad/network.hpp"

namespace fullgrad {

struct Model {
    NetworkSpec spec;
    Parameters params;
};

// 4 parametric layers: enough capacity for the bundled bars corpus and
// MNIST-sized inputs, small enough to retrain many times on one core.
inline NetworkSpec cnn4_spec(int in_channels = 1, int hw = 28, int classes = 10) {
    NetworkSpec s;
    s.input_shape = {in_channels, hw, hw};
    s.num_classes = classes;
    s.layers = {
        LayerSpec::conv2d(in_channels, 8, {3, 3}, {1, 1}, {1, 1}),
        LayerSpec::relu(),
        LayerSpec::maxpool2d({2, 2}, {2, 2}),
        LayerSpec::conv2d(8, 16, {3, 3}, {1, 1}, {1, 1}),
        LayerSpec::relu(),
        LayerSpec::maxpool2d({2, 2}, {2, 2}),
        LayerSpec::flatten(),
        LayerSpec::linear(16 * (hw / 4) * (hw / 4), 32),
        LayerSpec::relu(),
        LayerSpec::linear(32, classes),
    };
    return s;
}

// cnn4 with batch-norm after each conv (convs bias-free, as usual with BN)
inline NetworkSpec cnn4_bn_spec(int in_channels = 1, int hw = 28, int classes = 10) {
    NetworkSpec s;
    s.input_shape = {in_channels, hw, hw};
    s.num_classes = classes;
    s.layers = {
        LayerSpec::conv2d(in_channels, 8, {3, 3}, {1, 1}, {1, 1}, /*bias=*/false),
        LayerSpec::batchnorm2d(8),
        LayerSpec::relu(),
        LayerSpec::maxpool2d({2, 2}, {2, 2}),
        LayerSpec::conv2d(8, 16, {3, 3}, {1, 1}, {1, 1}, /*bias=*/false),
        LayerSpec::batchnorm2d(16),
        LayerSpec::relu(),
        LayerSpec::maxpool2d({2, 2}, {2, 2}),
        LayerSpec::flatten(),
        LayerSpec::linear(16 * (hw / 4) * (hw / 4), 32),
        LayerSpec::relu(),
        LayerSpec::linear(32, classes),
    };
    return s;
}

inline NetworkSpec mlp_spec(int in_channels = 1, int hw = 28, int classes = 10) {
    NetworkSpec s;
    s.input_shape = {in_channels, hw, hw};
    s.num_classes = classes;
    s.layers = {
        LayerSpec::flatten(),
        LayerSpec::linear(in_channels * hw * hw, 64),
        LayerSpec::relu(),
        LayerSpec::linear(64, classes),
    };
    return s;
}

inline NetworkSpec arch_by_name(const std::string& name, int in_channels = 1, int hw = 28,
                                int classes = 10) {
    if (name == "cnn4") return cnn4_spec(in_channels, hw, classes);
    if (name == "cnn4bn") return cnn4_bn_spec(in_channels, hw, classes);
    if (name == "mlp") return mlp_spec(in_channels, hw, classes);
    throw std::invalid_argument("unknown architecture \"" + name + "\" (want cnn4|cnn4bn|mlp)");
}

// f(x) = a - relu(b - x) with a = b = 1: the scalar saturation toy.
// At x = 2 the ReLU is off, so the input-gradient is 0 while the function
// value 1 is carried entirely by the output bias.
inline Model saturation_model() {
    Model m;
    m.spec.input_shape = {1, 1, 1};
    m.spec.num_classes = 1;
    m.spec.layers = {
        LayerSpec::flatten(),
        LayerSpec::linear(1, 1),
        LayerSpec::relu(),
        LayerSpec::linear(1, 1),
    };
    m.params = init_params(m.spec, 0);
    m.params.layers[1].weight[0] = -1.0;  // z = b - x
    m.params.layers[1].bias[0] = 1.0;
    m.params.layers[3].weight[0] = -1.0;  // f = a - relu(z)
    m.params.layers[3].bias[0] = 1.0;
    return m;
}

// Two-input piecewise-linear toy:
//   f(x1,x2) = 3*x1 + x2    when x1 > 1, x2 > 1
//              x1 + 3*x2    when 0 <= x1 <= 1, 0 <= x2 <= 1
// realized as relu features h1 = relu(x1+3*x2), h2 = relu(x1-1),
// h3 = relu(x2-1) and output h1 + 2*h2 - 2*h3. The straight path from the
// origin to a diagonal point crosses only these two regions, which is all
// a path-integral attribution sees.
inline Model two_region_model() {
    Model m;
    m.spec.input_shape = {1, 1, 2};
    m.spec.num_classes = 1;
    m.spec.layers = {
        LayerSpec::flatten(),
        LayerSpec::linear(2, 3),
        LayerSpec::relu(),
        LayerSpec::linear(3, 1, /*bias=*/false),
    };
    m.params = init_params(m.spec, 0);
    Tensor& w1 = m.params.layers[1].weight;  // [3, 2]
    w1.at(0, 0) = 1.0;
    w1.at(0, 1) = 3.0;
    w1.at(1, 0) = 1.0;
    w1.at(1, 1) = 0.0;
    w1.at(2, 0) = 0.0;
    w1.at(2, 1) = 1.0;
    Tensor& b1 = m.params.layers[1].bias;
    b1[0] = 0.0;
    b1[1] = -1.0;
    b1[2] = -1.0;
    Tensor& w2 = m.params.layers[3].weight;  // [1, 3]
    w2.at(0, 0) = 1.0;
    w2.at(0, 1) = 2.0;
    w2.at(0, 2) = -2.0;
    return m;
}

inline Model toy_model_by_name(const std::string& name) {
    if (name == "saturation") return saturation_model();
    if (name == "two-region") return two_region_model();
    throw std::invalid_argument("unknown toy model \"" + name + "\" (want saturation|two-region)");
}

}  // namespace fullgrad
