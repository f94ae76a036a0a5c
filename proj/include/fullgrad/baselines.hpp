#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "fullgrad/fullgrad.hpp"
#include "fullgrad/grads.hpp"
#include "fullgrad/network.hpp"
#include "fullgrad/random.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

namespace detail {

inline Tensor channel_sum(const Tensor& nchw, bool take_abs) {
    require(nchw.rank() == 4 && nchw.dim(0) == 1, "channel_sum: expects one N=1 NCHW map");
    const int C = nchw.dim(1), H = nchw.dim(2), W = nchw.dim(3);
    Tensor out({H, W});
    for (int c = 0; c < C; ++c) {
        const double* src = nchw.data() + static_cast<int64_t>(c) * H * W;
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
            out[i] += take_abs ? std::fabs(src[i]) : src[i];
    }
    return out;
}

inline Tensor logit_input_grad(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                               int target) {
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    return backward(spec, params, trace, target).input_grad;
}

}  // namespace detail

// d(logit)/dx, summed over input channels; abs() first unless signed_map.
inline SaliencyMap input_gradient_map(const NetworkSpec& spec, const Parameters& params,
                                      const Tensor& x, int target, bool signed_map = false) {
    SaliencyMap s;
    s.values = detail::channel_sum(detail::logit_input_grad(spec, params, x, target), !signed_map);
    s.method = signed_map ? "gradient-signed" : "gradient";
    s.target = target;
    return s;
}

// elementwise grad .* x, channel-summed, kept signed
inline SaliencyMap gradient_times_input(const NetworkSpec& spec, const Parameters& params,
                                        const Tensor& x, int target) {
    const Tensor g = detail::logit_input_grad(spec, params, x, target);
    SaliencyMap s;
    s.values = detail::channel_sum(hadamard(g, x), false);
    s.method = "gxi";
    s.target = target;
    return s;
}

// Path integral of the gradient from baseline to x, midpoint rule:
// attribution_i = (x_i - x'_i) * (1/steps) * sum_s grad_i(x' + ((s-0.5)/steps)(x - x')).
// Returned at full input shape; the SaliencyMap wrapper channel-sums it.
inline Tensor integrated_gradients_attribution(const NetworkSpec& spec, const Parameters& params,
                                               const Tensor& x, const Tensor& baseline, int target,
                                               int steps = 128) {
    detail::require(steps >= 1, "integrated_gradients: steps must be >= 1");
    detail::require(baseline.shape() == x.shape(),
                    "integrated_gradients: baseline shape must match input");
    const Tensor delta = x - baseline;
    Tensor grad_sum(x.shape());
    for (int s = 1; s <= steps; ++s) {
        const double alpha = (static_cast<double>(s) - 0.5) / steps;
        const Tensor xs = baseline + delta * alpha;
        grad_sum = grad_sum + detail::logit_input_grad(spec, params, xs, target);
    }
    return hadamard(delta, grad_sum * (1.0 / steps));
}

inline SaliencyMap integrated_gradients(const NetworkSpec& spec, const Parameters& params,
                                        const Tensor& x, const Tensor& baseline, int target,
                                        int steps = 128) {
    SaliencyMap s;
    s.values = detail::channel_sum(
        integrated_gradients_attribution(spec, params, x, baseline, target, steps), false);
    s.method = "ig";
    s.target = target;
    return s;
}

inline double default_smoothgrad_sigma(const Tensor& x) {
    return 0.15 * (max_value(x) - min_value(x));
}

// Mean gradient over n Gaussian-jittered copies of x (elementwise squared
// before averaging when squared). Deterministic given seed.
inline SaliencyMap smooth_grad(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                               int target, double sigma, int n, bool squared, uint64_t seed,
                               bool signed_map = false) {
    detail::require(n >= 1, "smooth_grad: n must be >= 1");
    detail::require(sigma >= 0.0, "smooth_grad: sigma must be >= 0");
    Rng rng(seed);
    Tensor acc(x.shape());
    for (int i = 0; i < n; ++i) {
        Tensor xs = x;
        if (sigma > 0.0)
            for (int64_t j = 0; j < xs.numel(); ++j) xs[j] += sigma * rng.normal();
        Tensor g = detail::logit_input_grad(spec, params, xs, target);
        if (squared)
            for (int64_t j = 0; j < g.numel(); ++j) g[j] *= g[j];
        acc = acc + g;
    }
    SaliencyMap s;
    // squared maps are nonnegative already; plain smooth-grad abs-sums
    // channels unless the caller wants the signed mean
    s.values = detail::channel_sum(acc * (1.0 / n), !squared && !signed_map);
    s.method = squared ? "smoothgradsq" : (signed_map ? "smoothgrad-signed" : "smoothgrad");
    s.target = target;
    return s;
}

inline int last_conv_layer(const NetworkSpec& spec) {
    for (int li = static_cast<int>(spec.layers.size()); li-- > 0;)
        if (spec.layers[static_cast<size_t>(li)].kind == LayerKind::Conv2d) return li;
    return -1;
}

// relu of the alpha-weighted channel sum of one conv layer's activations,
// alpha_c = spatial mean of d(logit)/dA_c; upsampled to input size.
inline SaliencyMap grad_cam(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                            int target, int layer = -1) {
    if (layer < 0) layer = last_conv_layer(spec);
    detail::require(layer >= 0 && layer < static_cast<int>(spec.layers.size()),
                    "grad_cam: network has no conv layer / layer out of range");
    detail::require(spec.layers[static_cast<size_t>(layer)].kind == LayerKind::Conv2d,
                    "grad_cam: layer " + std::to_string(layer) + " is not a conv layer");

    ActivationTrace trace;
    forward(spec, params, x, &trace);
    GradientBundle gb = backward(spec, params, trace, target);
    const Tensor& A = trace.layers[static_cast<size_t>(layer)].output;
    const Tensor& dA = gb.preact_grads[static_cast<size_t>(layer)];
    const int C = A.dim(1), H = A.dim(2), W = A.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;

    Tensor cam({H, W});
    for (int c = 0; c < C; ++c) {
        const double* a = A.data() + static_cast<int64_t>(c) * hw;
        const double* g = dA.data() + static_cast<int64_t>(c) * hw;
        double alpha = 0.0;
        for (int64_t i = 0; i < hw; ++i) alpha += g[i];
        alpha /= static_cast<double>(hw);
        for (int64_t i = 0; i < hw; ++i) cam[i] += alpha * a[i];
    }
    for (int64_t i = 0; i < cam.numel(); ++i) cam[i] = std::max(cam[i], 0.0);

    SaliencyMap s;
    s.values = bilinear_upsample(cam, x.dim(2), x.dim(3));
    s.method = "gradcam";
    s.target = target;
    return s;
}

inline SaliencyMap random_map(int h, int w, uint64_t seed) {
    Rng rng(seed);
    SaliencyMap s;
    s.values = Tensor({h, w});
    for (int64_t i = 0; i < s.values.numel(); ++i) s.values[i] = rng.uniform();
    s.method = "random";
    s.target = -1;
    return s;
}

}  // namespace fullgrad
