#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fullgrad/network.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

// Raw parameter gradients dL/dtheta for one layer; undefined tensors where
// the layer has no such parameter.
struct LayerGrads {
    Tensor weight;
    Tensor bias;
    Tensor gamma, beta;
};

// Everything one reverse pass produces. bias_grads holds the bias-gradient
// f^b = (df/db) .* b per layer: explicit conv/linear biases, batch-norm
// implicit biases and generic-nonlinearity implicit biases. Layers without
// any bias contribute no entry (undefined tensor).
struct GradientBundle {
    Tensor input_grad;
    std::vector<LayerGrads> param_grads;
    std::vector<Tensor> preact_grads;  // dL/d(layer output), per layer
    std::vector<Tensor> bias_grads;
};

namespace detail {

struct ConvGrads {
    Tensor input, weight, bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& dout,
                                 Shape2 stride, Shape2 padding, bool with_bias) {
    const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int Ho = dout.dim(2), Wo = dout.dim(3);
    ConvGrads g;
    g.input = Tensor({N, Cin, H, W});
    g.weight = Tensor({Cout, Cin, kh, kw});
    if (with_bias) g.bias = Tensor({Cout});
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < Ho; ++oh) {
                const int ih0 = oh * stride.h - padding.h;
                const int u0 = std::max(0, -ih0);
                const int u1 = std::min(kh, H - ih0);
                for (int ow = 0; ow < Wo; ++ow) {
                    const double go = dout.at(n, co, oh, ow);
                    if (with_bias) g.bias[co] += go;
                    if (go == 0.0) continue;
                    const int iw0 = ow * stride.w - padding.w;
                    const int v0 = std::max(0, -iw0);
                    const int v1 = std::min(kw, W - iw0);
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* xc = input.data() + ((static_cast<int64_t>(n) * Cin + ci) * H) * W;
                        double* dxc = g.input.data() + ((static_cast<int64_t>(n) * Cin + ci) * H) * W;
                        const double* wc =
                            weight.data() + ((static_cast<int64_t>(co) * Cin + ci) * kh) * kw;
                        double* dwc =
                            g.weight.data() + ((static_cast<int64_t>(co) * Cin + ci) * kh) * kw;
                        for (int u = u0; u < u1; ++u) {
                            const int64_t row = static_cast<int64_t>(ih0 + u) * W + iw0;
                            for (int v = v0; v < v1; ++v) {
                                dwc[static_cast<int64_t>(u) * kw + v] += go * xc[row + v];
                                dxc[row + v] += go * wc[static_cast<int64_t>(u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

struct LinearGrads {
    Tensor input, weight, bias;
};

inline LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& dout,
                                   bool with_bias) {
    const int N = input.dim(0), D = input.dim(1), K = weight.dim(0);
    LinearGrads g;
    g.input = Tensor({N, D});
    g.weight = Tensor({K, D});
    if (with_bias) g.bias = Tensor({K});
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) {
            const double go = dout.at(n, k);
            if (with_bias) g.bias[k] += go;
            if (go == 0.0) continue;
            const double* wrow = weight.data() + static_cast<int64_t>(k) * D;
            const double* xrow = input.data() + static_cast<int64_t>(n) * D;
            double* dxrow = g.input.data() + static_cast<int64_t>(n) * D;
            double* dwrow = g.weight.data() + static_cast<int64_t>(k) * D;
            for (int d = 0; d < D; ++d) {
                dxrow[d] += go * wrow[d];
                dwrow[d] += go * xrow[d];
            }
        }
    }
    return g;
}

// derivative at exactly 0 is 0 (strict > mask)
inline Tensor relu_backward(const Tensor& input, const Tensor& dout) {
    Tensor dx = dout;
    for (int64_t i = 0; i < dx.numel(); ++i)
        if (!(input[i] > 0.0)) dx[i] = 0.0;
    return dx;
}

inline Tensor sigmoid_backward(const Tensor& output, const Tensor& dout) {
    Tensor dx = dout;
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= output[i] * (1.0 - output[i]);
    return dx;
}

inline Tensor maxpool_backward(const std::vector<int64_t>& argmax, const Tensor& dout,
                               const std::vector<int>& input_shape) {
    Tensor dx(input_shape);
    for (int64_t o = 0; o < dout.numel(); ++o) dx[argmax[static_cast<size_t>(o)]] += dout[o];
    return dx;
}

inline Tensor avgpool_backward(const Tensor& dout, const std::vector<int>& input_shape,
                               Shape2 window, Shape2 stride) {
    const int N = dout.dim(0), C = dout.dim(1), Ho = dout.dim(2), Wo = dout.dim(3);
    const int H = input_shape[2], W = input_shape[3];
    const double inv = 1.0 / (static_cast<double>(window.h) * window.w);
    Tensor dx(input_shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const double g = dout.at(n, c, oh, ow) * inv;
                    for (int u = 0; u < window.h; ++u)
                        for (int v = 0; v < window.w; ++v)
                            dx[base + static_cast<int64_t>(oh * stride.h + u) * W +
                               (ow * stride.w + v)] += g;
                }
        }
    return dx;
}

struct BnGrads {
    Tensor input, gamma, beta;
};

// eval mode: running statistics are constants, the map is per-channel affine
inline BnGrads batchnorm_eval_backward(const Tensor& input, const LayerParams& p, double eps,
                                       const Tensor& dout) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    BnGrads g;
    g.input = Tensor({N, C, H, W});
    g.gamma = Tensor({C});
    g.beta = Tensor({C});
    for (int c = 0; c < C; ++c) {
        const double inv_sd = 1.0 / std::sqrt(p.running_var[c] + eps);
        const double scale = p.gamma[c] * inv_sd;
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                const double go = dout[base + i];
                g.input[base + i] = go * scale;
                g.gamma[c] += go * (input[base + i] - p.running_mean[c]) * inv_sd;
                g.beta[c] += go;
            }
        }
    }
    return g;
}

// train mode: normalization uses the batch statistics recorded in the trace
inline BnGrads batchnorm_train_backward(const Tensor& input, const LayerParams& p, double eps,
                                        const Tensor& mean, const Tensor& var, const Tensor& dout) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const double M = static_cast<double>(static_cast<int64_t>(N) * H * W);
    BnGrads g;
    g.input = Tensor({N, C, H, W});
    g.gamma = Tensor({C});
    g.beta = Tensor({C});
    for (int c = 0; c < C; ++c) {
        const double inv_sd = 1.0 / std::sqrt(var[c] + eps);
        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                const double go = dout[base + i];
                const double xhat = (input[base + i] - mean[c]) * inv_sd;
                sum_g += go;
                sum_gx += go * xhat;
            }
        }
        g.beta[c] = sum_g;
        g.gamma[c] = sum_gx;
        const double scale = p.gamma[c] * inv_sd;
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                const double xhat = (input[base + i] - mean[c]) * inv_sd;
                g.input[base + i] = scale * (dout[base + i] - sum_g / M - xhat * sum_gx / M);
            }
        }
    }
    return g;
}

}  // namespace detail

// Reverse pass from an arbitrary gradient over the logits. Used directly by
// the trainer (cross-entropy seed, train-mode traces) and by backward()
// below (one-hot seed). bias_grads are filled for eval traces only;
// attribution always runs in eval mode.
inline GradientBundle backward_from(const NetworkSpec& spec, const Parameters& params,
                                    const ActivationTrace& trace, const Tensor& dlogits) {
    detail::require(trace.layers.size() == spec.layers.size(),
                    "backward: trace does not match spec");
    detail::require(dlogits.shape() == trace.logits.shape(),
                    "backward: seed gradient must be shaped like the logits");
    const size_t L = spec.layers.size();
    GradientBundle gb;
    gb.param_grads.resize(L);
    gb.preact_grads.resize(L);
    gb.bias_grads.resize(L);

    Tensor g = dlogits;
    for (size_t li = L; li-- > 0;) {
        const LayerSpec& l = spec.layers[li];
        const LayerParams& p = params.layers[li];
        const LayerTrace& rec = trace.layers[li];
        gb.preact_grads[li] = g;
        switch (l.kind) {
            case LayerKind::Conv2d: {
                detail::ConvGrads cg =
                    detail::conv2d_backward(rec.input, p.weight, g, l.stride, l.padding, l.has_bias);
                gb.param_grads[li].weight = std::move(cg.weight);
                if (l.has_bias) gb.param_grads[li].bias = std::move(cg.bias);
                g = std::move(cg.input);
                break;
            }
            case LayerKind::Linear: {
                detail::LinearGrads lg = detail::linear_backward(rec.input, p.weight, g, l.has_bias);
                gb.param_grads[li].weight = std::move(lg.weight);
                if (l.has_bias) gb.param_grads[li].bias = std::move(lg.bias);
                g = std::move(lg.input);
                break;
            }
            case LayerKind::ReLU:
                g = detail::relu_backward(rec.input, g);
                break;
            case LayerKind::Sigmoid:
                g = detail::sigmoid_backward(rec.output, g);
                break;
            case LayerKind::MaxPool2d:
                g = detail::maxpool_backward(rec.pool_argmax, g, rec.input.shape());
                break;
            case LayerKind::AvgPool2d:
                g = detail::avgpool_backward(g, rec.input.shape(), l.window, l.stride);
                break;
            case LayerKind::BatchNorm2d: {
                detail::BnGrads bg =
                    trace.train_mode
                        ? detail::batchnorm_train_backward(rec.input, p, l.eps, rec.bn_mean,
                                                           rec.bn_var, g)
                        : detail::batchnorm_eval_backward(rec.input, p, l.eps, g);
                gb.param_grads[li].gamma = std::move(bg.gamma);
                gb.param_grads[li].beta = std::move(bg.beta);
                g = std::move(bg.input);
                break;
            }
            case LayerKind::Flatten:
                g = g.reshaped(rec.input.shape());
                break;
        }
    }
    gb.input_grad = std::move(g);

    if (trace.train_mode) return gb;

    // bias-gradients f^b = (df/dz) .* b for every bias source:
    // explicit conv/linear biases, batch-norm implicit biases
    // b_bn = beta - gamma*mean/sqrt(var+eps), and for a generic nonlinearity
    // the linearization remainder b_sigma = sigma(z) - sigma'(z)*z.
    // ReLU has b_sigma = 0 exactly and contributes nothing.
    for (size_t li = 0; li < L; ++li) {
        const LayerSpec& l = spec.layers[li];
        const LayerParams& p = params.layers[li];
        const Tensor& pg = gb.preact_grads[li];
        switch (l.kind) {
            case LayerKind::Conv2d:
                if (l.has_bias) {
                    Tensor m = pg;
                    const int N = m.dim(0), C = m.dim(1);
                    const int64_t hw = static_cast<int64_t>(m.dim(2)) * m.dim(3);
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            double* d = m.data() + ((static_cast<int64_t>(n) * C + c)) * hw;
                            for (int64_t i = 0; i < hw; ++i) d[i] *= p.bias[c];
                        }
                    gb.bias_grads[li] = std::move(m);
                }
                break;
            case LayerKind::Linear:
                if (l.has_bias) {
                    Tensor m = pg;
                    const int N = m.dim(0), K = m.dim(1);
                    for (int n = 0; n < N; ++n)
                        for (int k = 0; k < K; ++k) m.at(n, k) *= p.bias[k];
                    gb.bias_grads[li] = std::move(m);
                }
                break;
            case LayerKind::BatchNorm2d: {
                Tensor m = pg;
                const int N = m.dim(0), C = m.dim(1);
                const int64_t hw = static_cast<int64_t>(m.dim(2)) * m.dim(3);
                for (int c = 0; c < C; ++c) {
                    const double shift =
                        p.beta[c] - p.gamma[c] * p.running_mean[c] / std::sqrt(p.running_var[c] + l.eps);
                    for (int n = 0; n < N; ++n) {
                        double* d = m.data() + ((static_cast<int64_t>(n) * C + c)) * hw;
                        for (int64_t i = 0; i < hw; ++i) d[i] *= shift;
                    }
                }
                gb.bias_grads[li] = std::move(m);
                break;
            }
            case LayerKind::Sigmoid: {
                const Tensor& z = trace.layers[li].input;
                const Tensor& y = trace.layers[li].output;
                Tensor m = pg;
                for (int64_t i = 0; i < m.numel(); ++i) {
                    const double dydz = y[i] * (1.0 - y[i]);
                    m[i] *= y[i] - dydz * z[i];
                }
                gb.bias_grads[li] = std::move(m);
                break;
            }
            default:
                break;
        }
    }
    return gb;
}

// Gradients of the scalar logit f = logits[target] for a single input.
inline GradientBundle backward(const NetworkSpec& spec, const Parameters& params,
                               const ActivationTrace& trace, int target) {
    detail::require(!trace.train_mode, "backward: attribution requires an eval-mode trace");
    detail::require(trace.logits.rank() == 2 && trace.logits.dim(0) == 1,
                    "backward: expects a batch of one");
    detail::require(target >= 0 && target < trace.logits.dim(1),
                    "backward: target out of range");
    Tensor seed({1, trace.logits.dim(1)});
    seed.at(0, target) = 1.0;
    return backward_from(spec, params, trace, seed);
}

// ---------------------------------------------------------------------------
// independent numeric oracle

// Central-difference gradients for every input coordinate and every
// parameter. Lives beside the analytic pass as its test oracle; shares no
// code with backward().
struct FdBundle {
    Tensor input_grad;
    std::vector<LayerGrads> param_grads;
};

namespace detail {

inline double eval_logit(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                         int target) {
    Tensor logits = forward(spec, params, x);
    return logits.at(0, target);
}

inline Tensor fd_tensor(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                        int target, Tensor& subject, double h) {
    Tensor grad(subject.shape());
    for (int64_t i = 0; i < subject.numel(); ++i) {
        const double keep = subject[i];
        subject[i] = keep + h;
        const double fp = eval_logit(spec, params, x, target);
        subject[i] = keep - h;
        const double fm = eval_logit(spec, params, x, target);
        subject[i] = keep;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace detail

inline FdBundle finite_difference_oracle(const NetworkSpec& spec, const Parameters& params,
                                         const Tensor& x, int target, double h = 1e-4) {
    detail::require(h > 0.0, "finite_difference_oracle: h must be positive");
    FdBundle fd;
    Tensor xv = x;
    fd.input_grad = detail::fd_tensor(spec, params, xv, target, xv, h);

    Parameters pv = params;
    fd.param_grads.resize(spec.layers.size());
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        LayerParams& p = pv.layers[li];
        if (p.weight.defined())
            fd.param_grads[li].weight = detail::fd_tensor(spec, pv, x, target, p.weight, h);
        if (p.bias.defined())
            fd.param_grads[li].bias = detail::fd_tensor(spec, pv, x, target, p.bias, h);
        if (p.gamma.defined())
            fd.param_grads[li].gamma = detail::fd_tensor(spec, pv, x, target, p.gamma, h);
        if (p.beta.defined())
            fd.param_grads[li].beta = detail::fd_tensor(spec, pv, x, target, p.beta, h);
    }
    return fd;
}

// True when the input sits too close to a ReLU or maxpool kink for central
// differences at step h to be trusted; callers re-sample such points.
inline bool near_kink(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                      double margin) {
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        if (l.kind == LayerKind::ReLU) {
            const Tensor& z = trace.layers[li].input;
            for (int64_t i = 0; i < z.numel(); ++i)
                if (std::fabs(z[i]) < margin) return true;
        } else if (l.kind == LayerKind::MaxPool2d) {
            const Tensor& z = trace.layers[li].input;
            const int N = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3);
            const int Ho = (H - l.window.h) / l.stride.h + 1;
            const int Wo = (W - l.window.w) / l.stride.w + 1;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
                    for (int oh = 0; oh < Ho; ++oh)
                        for (int ow = 0; ow < Wo; ++ow) {
                            double best = -std::numeric_limits<double>::infinity();
                            double second = best;
                            for (int u = 0; u < l.window.h; ++u)
                                for (int v = 0; v < l.window.w; ++v) {
                                    const double val =
                                        z[base + static_cast<int64_t>(oh * l.stride.h + u) * W +
                                          (ow * l.stride.w + v)];
                                    if (val > best) {
                                        second = best;
                                        best = val;
                                    } else if (val > second) {
                                        second = val;
                                    }
                                }
                            // a window of exact zeros is relu-clipped dead input:
                            // locally constant, not a kink
                            if (best == 0.0 && second == 0.0) continue;
                            if (best - second < margin) return true;
                        }
                }
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// sensitivity probe

struct SensitivityResult {
    double delta_f = 0.0;  // change in the target logit
    double delta_G = 0.0;  // max-abs change across (input-gradient, all f^b)
};

// Perturbs one bias coordinate and reports how the function value and the
// full-gradient pair move. Contract: delta_G vanishes iff delta_f does.
inline SensitivityResult gradient_sensitivity_check(const NetworkSpec& spec,
                                                    const Parameters& params, const Tensor& x,
                                                    int target, int layer, int bias_index,
                                                    double perturbation) {
    detail::require(layer >= 0 && layer < static_cast<int>(spec.layers.size()),
                    "gradient_sensitivity_check: layer out of range");
    detail::require(params.layers[static_cast<size_t>(layer)].bias.defined(),
                    "gradient_sensitivity_check: layer has no explicit bias");

    auto run = [&](const Parameters& p) {
        ActivationTrace trace;
        forward(spec, p, x, &trace);
        GradientBundle gb = backward(spec, p, trace, target);
        return std::pair<double, GradientBundle>(trace.logits.at(0, target), std::move(gb));
    };

    auto [f0, g0] = run(params);
    Parameters perturbed = params;
    perturbed.layers[static_cast<size_t>(layer)].bias[bias_index] += perturbation;
    auto [f1, g1] = run(perturbed);

    SensitivityResult res;
    res.delta_f = f1 - f0;
    double d = max_abs(g1.input_grad - g0.input_grad);
    for (size_t li = 0; li < g0.bias_grads.size(); ++li) {
        const bool a = g0.bias_grads[li].defined(), b = g1.bias_grads[li].defined();
        detail::require(a == b, "gradient_sensitivity_check: bias structure changed");
        if (a) d = std::max(d, max_abs(g1.bias_grads[li] - g0.bias_grads[li]));
    }
    res.delta_G = d;
    return res;
}

}  // namespace fullgrad
