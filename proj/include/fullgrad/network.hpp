#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fullgrad/random.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

enum class LayerKind { Conv2d, Linear, ReLU, Sigmoid, MaxPool2d, AvgPool2d, BatchNorm2d, Flatten };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Linear: return "linear";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Sigmoid: return "sigmoid";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::AvgPool2d: return "avgpool2d";
        case LayerKind::BatchNorm2d: return "batchnorm2d";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

// One layer in a sequential chain. Only the fields for the layer's kind are
// meaningful; the rest stay at their defaults.
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;

    // conv2d
    int in_channels = 0;
    int out_channels = 0;
    Shape2 kernel{};
    Shape2 stride{1, 1};
    Shape2 padding{0, 0};
    bool has_bias = true;  // conv2d / linear

    // linear
    int in_features = 0;
    int out_features = 0;

    // pooling (stride shared with conv field)
    Shape2 window{};

    // batchnorm
    int channels = 0;
    double eps = 1e-5;

    static LayerSpec conv2d(int cin, int cout, Shape2 kernel, Shape2 stride = {1, 1},
                            Shape2 padding = {0, 0}, bool bias = true) {
        LayerSpec l;
        l.kind = LayerKind::Conv2d;
        l.in_channels = cin;
        l.out_channels = cout;
        l.kernel = kernel;
        l.stride = stride;
        l.padding = padding;
        l.has_bias = bias;
        return l;
    }
    static LayerSpec linear(int in, int out, bool bias = true) {
        LayerSpec l;
        l.kind = LayerKind::Linear;
        l.in_features = in;
        l.out_features = out;
        l.has_bias = bias;
        return l;
    }
    static LayerSpec relu() {
        LayerSpec l;
        l.kind = LayerKind::ReLU;
        return l;
    }
    static LayerSpec sigmoid() {
        LayerSpec l;
        l.kind = LayerKind::Sigmoid;
        return l;
    }
    static LayerSpec maxpool2d(Shape2 window, Shape2 stride) {
        LayerSpec l;
        l.kind = LayerKind::MaxPool2d;
        l.window = window;
        l.stride = stride;
        return l;
    }
    static LayerSpec avgpool2d(Shape2 window, Shape2 stride) {
        LayerSpec l;
        l.kind = LayerKind::AvgPool2d;
        l.window = window;
        l.stride = stride;
        return l;
    }
    static LayerSpec batchnorm2d(int channels, double eps = 1e-5) {
        LayerSpec l;
        l.kind = LayerKind::BatchNorm2d;
        l.channels = channels;
        l.eps = eps;
        return l;
    }
    static LayerSpec flatten() {
        LayerSpec l;
        l.kind = LayerKind::Flatten;
        return l;
    }
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::array<int, 3> input_shape{};  // C,H,W
    int num_classes = 0;
};

// Weights for one layer; undefined tensors for fields the layer lacks.
struct LayerParams {
    Tensor weight;
    Tensor bias;
    Tensor gamma, beta, running_mean, running_var;  // batchnorm2d
};

struct Parameters {
    std::vector<LayerParams> layers;
};

// Per-layer slice of one forward pass, consumed by backward passes.
struct LayerTrace {
    Tensor input;
    Tensor output;                   // this layer's pre-activation output
    std::vector<int64_t> pool_argmax;  // maxpool routing
    Tensor bn_mean, bn_var;          // batch statistics actually used (train mode)
};

struct ActivationTrace {
    std::vector<LayerTrace> layers;
    Tensor logits;
    bool train_mode = false;
};

// Per-layer output shapes: {C,H,W} for spatial tensors, {D} after flatten /
// linear. Throws naming the first incompatible layer.
inline std::vector<std::vector<int>> validate_spec(const NetworkSpec& spec) {
    std::vector<int> cur = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    std::vector<std::vector<int>> report;
    auto fail = [](size_t i, const LayerSpec& l, const std::string& why) {
        throw std::invalid_argument("layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) +
                                    "): " + why);
    };
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                if (cur.size() != 3) fail(i, l, "expects a C x H x W input");
                if (cur[0] != l.in_channels)
                    fail(i, l, "expects " + std::to_string(l.in_channels) + " input channels, got " +
                                   std::to_string(cur[0]));
                const int H = cur[1] + 2 * l.padding.h, W = cur[2] + 2 * l.padding.w;
                if (H < l.kernel.h || W < l.kernel.w) fail(i, l, "kernel does not fit padded input");
                cur = {l.out_channels, (H - l.kernel.h) / l.stride.h + 1,
                       (W - l.kernel.w) / l.stride.w + 1};
                break;
            }
            case LayerKind::Linear: {
                if (cur.size() != 1) fail(i, l, "expects a flat input (add flatten)");
                if (cur[0] != l.in_features)
                    fail(i, l, "expects " + std::to_string(l.in_features) + " features, got " +
                                   std::to_string(cur[0]));
                cur = {l.out_features};
                break;
            }
            case LayerKind::ReLU:
            case LayerKind::Sigmoid:
                break;
            case LayerKind::MaxPool2d:
            case LayerKind::AvgPool2d: {
                if (cur.size() != 3) fail(i, l, "expects a C x H x W input");
                if (l.window.h > cur[1] || l.window.w > cur[2])
                    fail(i, l, "window larger than input");
                cur = {cur[0], (cur[1] - l.window.h) / l.stride.h + 1,
                       (cur[2] - l.window.w) / l.stride.w + 1};
                break;
            }
            case LayerKind::BatchNorm2d: {
                if (cur.size() != 3) fail(i, l, "expects a C x H x W input");
                if (cur[0] != l.channels)
                    fail(i, l, "expects " + std::to_string(l.channels) + " channels, got " +
                                   std::to_string(cur[0]));
                if (!(l.eps > 0.0)) fail(i, l, "eps must be positive");
                break;
            }
            case LayerKind::Flatten: {
                if (cur.size() != 3) fail(i, l, "expects a C x H x W input");
                cur = {cur[0] * cur[1] * cur[2]};
                break;
            }
        }
        report.push_back(cur);
    }
    if (spec.layers.empty() || cur.size() != 1 || cur[0] != spec.num_classes)
        throw std::invalid_argument("network must end in " + std::to_string(spec.num_classes) +
                                    " logits, got " + detail::shape_str(cur));
    return report;
}

namespace detail {

inline Tensor train_batchnorm_step(const Tensor& input, LayerParams& p, double eps,
                                   double momentum, LayerTrace& rec) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t M = static_cast<int64_t>(N) * H * W;
    Tensor mean({C}), var({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) acc += input[base + i];
        }
        mean[c] = acc / static_cast<double>(M);
        double sq = 0.0;
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                const double d = input[base + i] - mean[c];
                sq += d * d;
            }
        }
        var[c] = sq / static_cast<double>(M);  // biased, used for normalization
    }
    // running averages keep the unbiased variance
    const double unbias = M > 1 ? static_cast<double>(M) / static_cast<double>(M - 1) : 1.0;
    for (int c = 0; c < C; ++c) {
        p.running_mean[c] = (1.0 - momentum) * p.running_mean[c] + momentum * mean[c];
        p.running_var[c] = (1.0 - momentum) * p.running_var[c] + momentum * var[c] * unbias;
    }
    rec.bn_mean = mean;
    rec.bn_var = var;
    return batchnorm2d_eval(input, p.gamma, p.beta, mean, var, eps);
}

}  // namespace detail

// Deterministic eval-mode forward pass. Batch-norm layers use running
// statistics; repeated calls with identical inputs are bit-identical.
inline Tensor forward(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                      ActivationTrace* trace = nullptr) {
    detail::require(params.layers.size() == spec.layers.size(),
                    "forward: parameters do not match spec");
    detail::require(x.rank() == 4, "forward: input must be N x C x H x W");
    detail::require(x.dim(1) == spec.input_shape[0] && x.dim(2) == spec.input_shape[1] &&
                        x.dim(3) == spec.input_shape[2],
                    "forward: input shape does not match spec.input_shape");
    Tensor cur = x;
    if (trace) {
        trace->layers.clear();
        trace->train_mode = false;
    }
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const LayerParams& p = params.layers[i];
        LayerTrace rec;
        if (trace) rec.input = cur;
        Tensor out;
        switch (l.kind) {
            case LayerKind::Conv2d:
                out = conv2d(cur, p.weight, l.has_bias ? p.bias : Tensor(), l.stride, l.padding);
                break;
            case LayerKind::Linear:
                out = linear(cur, p.weight, l.has_bias ? p.bias : Tensor());
                break;
            case LayerKind::ReLU:
                out = relu(cur);
                break;
            case LayerKind::Sigmoid:
                out = sigmoid(cur);
                break;
            case LayerKind::MaxPool2d: {
                PoolResult r = maxpool2d(cur, l.window, l.stride);
                out = std::move(r.output);
                rec.pool_argmax = std::move(r.argmax);
                break;
            }
            case LayerKind::AvgPool2d:
                out = avgpool2d(cur, l.window, l.stride);
                break;
            case LayerKind::BatchNorm2d:
                out = batchnorm2d_eval(cur, p.gamma, p.beta, p.running_mean, p.running_var, l.eps);
                break;
            case LayerKind::Flatten:
                out = cur.reshaped({cur.dim(0), cur.dim(1) * cur.dim(2) * cur.dim(3)});
                break;
        }
        if (trace) {
            rec.output = out;
            trace->layers.push_back(std::move(rec));
        }
        cur = std::move(out);
    }
    if (trace) trace->logits = cur;
    return cur;
}

// Train-mode forward: batch-norm layers normalize with batch statistics and
// update the running averages in place (momentum 0.1 by convention).
inline Tensor forward_train(const NetworkSpec& spec, Parameters& params, const Tensor& x,
                            ActivationTrace& trace, double bn_momentum = 0.1) {
    detail::require(params.layers.size() == spec.layers.size(),
                    "forward_train: parameters do not match spec");
    Tensor cur = x;
    trace.layers.clear();
    trace.train_mode = true;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        LayerParams& p = params.layers[i];
        LayerTrace rec;
        rec.input = cur;
        Tensor out;
        switch (l.kind) {
            case LayerKind::BatchNorm2d:
                out = detail::train_batchnorm_step(cur, p, l.eps, bn_momentum, rec);
                break;
            case LayerKind::Conv2d:
                out = conv2d(cur, p.weight, l.has_bias ? p.bias : Tensor(), l.stride, l.padding);
                break;
            case LayerKind::Linear:
                out = linear(cur, p.weight, l.has_bias ? p.bias : Tensor());
                break;
            case LayerKind::ReLU:
                out = relu(cur);
                break;
            case LayerKind::Sigmoid:
                out = sigmoid(cur);
                break;
            case LayerKind::MaxPool2d: {
                PoolResult r = maxpool2d(cur, l.window, l.stride);
                out = std::move(r.output);
                rec.pool_argmax = std::move(r.argmax);
                break;
            }
            case LayerKind::AvgPool2d:
                out = avgpool2d(cur, l.window, l.stride);
                break;
            case LayerKind::Flatten:
                out = cur.reshaped({cur.dim(0), cur.dim(1) * cur.dim(2) * cur.dim(3)});
                break;
        }
        rec.output = out;
        trace.layers.push_back(std::move(rec));
        cur = std::move(out);
    }
    trace.logits = cur;
    return cur;
}

// He-style fan-in initialization, fully determined by seed: weights are
// N(0, 2/fan_in), explicit biases zero, gamma 1, beta 0, running stats (0,1).
inline Parameters init_params(const NetworkSpec& spec, uint64_t seed) {
    Rng rng(seed);
    // the classifier head starts damped so an untrained net scores ~ln(C)
    size_t head = spec.layers.size();
    for (size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::Linear) head = i;
    Parameters params;
    params.layers.resize(spec.layers.size());
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        LayerParams& p = params.layers[i];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const int fan_in = l.in_channels * l.kernel.h * l.kernel.w;
                const double sd = std::sqrt(2.0 / fan_in);
                p.weight = Tensor({l.out_channels, l.in_channels, l.kernel.h, l.kernel.w});
                for (int64_t j = 0; j < p.weight.numel(); ++j) p.weight[j] = sd * rng.normal();
                if (l.has_bias) p.bias = Tensor({l.out_channels});
                break;
            }
            case LayerKind::Linear: {
                const double sd = (i == head ? 0.1 : 1.0) * std::sqrt(2.0 / l.in_features);
                p.weight = Tensor({l.out_features, l.in_features});
                for (int64_t j = 0; j < p.weight.numel(); ++j) p.weight[j] = sd * rng.normal();
                if (l.has_bias) p.bias = Tensor({l.out_features});
                break;
            }
            case LayerKind::BatchNorm2d:
                p.gamma = Tensor::full({l.channels}, 1.0);
                p.beta = Tensor({l.channels});
                p.running_mean = Tensor({l.channels});
                p.running_var = Tensor::full({l.channels}, 1.0);
                break;
            default:
                break;
        }
    }
    return params;
}

}  // namespace fullgrad
