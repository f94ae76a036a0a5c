#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fullgrad {

// Dense row-major tensor of doubles, rank 1-4. Feature maps use N x C x H x W.
// Tensors are immutable by convention once an op returns them; all ops below
// are pure functions of their inputs.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (static_cast<int64_t>(data_.size()) != count(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<int>& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool defined() const { return !shape_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-d index (N,C,H,W)
    double& at(int n, int c, int h, int w) {
        return data_[static_cast<size_t>(((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at(int n, int c, int h, int w) const {
        return data_[static_cast<size_t>(((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    // 2-d index (N,K)
    double& at(int n, int k) { return data_[static_cast<size_t>(static_cast<int64_t>(n) * shape_[1] + k)]; }
    double at(int n, int k) const { return data_[static_cast<size_t>(static_cast<int64_t>(n) * shape_[1] + k)]; }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: shape extents must be positive");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// integer pair for kernel/window/stride/padding
struct Shape2 {
    int h = 0;
    int w = 0;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / reduction helpers

inline Tensor abs(const Tensor& t) {
    Tensor out = t;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "hadamard: shape mismatch");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "tensor add: shape mismatch");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "tensor sub: shape mismatch");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor operator*(const Tensor& a, double s) {
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return out;
}

inline double sum(const Tensor& t) {
    double acc = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) acc += t[i];
    return acc;
}

inline double dot(const Tensor& a, const Tensor& b) {
    detail::require(a.numel() == b.numel(), "dot: element count mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double min_value(const Tensor& t) {
    detail::require(t.numel() > 0, "min_value: empty tensor");
    double m = t[0];
    for (int64_t i = 1; i < t.numel(); ++i) m = std::min(m, t[i]);
    return m;
}

inline double max_value(const Tensor& t) {
    detail::require(t.numel() > 0, "max_value: empty tensor");
    double m = t[0];
    for (int64_t i = 1; i < t.numel(); ++i) m = std::max(m, t[i]);
    return m;
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::fabs(t[i]));
    return m;
}

// ---------------------------------------------------------------------------
// layer forward kernels

// Cross-correlation (deep-learning convolution, no kernel flip).
// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or undefined.
// Output extent: H' = floor((H + 2p - kh) / s) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     Shape2 stride, Shape2 padding) {
    detail::require(input.rank() == 4, "conv2d: input must be N x C x H x W");
    detail::require(weight.rank() == 4, "conv2d: weight must be Cout x Cin x kh x kw");
    detail::require(stride.h > 0 && stride.w > 0, "conv2d: stride must be positive");
    detail::require(padding.h >= 0 && padding.w >= 0, "conv2d: padding must be non-negative");
    const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    detail::require(weight.dim(1) == Cin,
                    "conv2d: input channels " + std::to_string(Cin) +
                        " do not match weight channels " + std::to_string(weight.dim(1)));
    detail::require(H + 2 * padding.h >= kh && W + 2 * padding.w >= kw,
                    "conv2d: kernel does not fit padded input");
    if (bias.defined())
        detail::require(bias.rank() == 1 && bias.dim(0) == Cout, "conv2d: bias must be [Cout]");

    const int Ho = (H + 2 * padding.h - kh) / stride.h + 1;
    const int Wo = (W + 2 * padding.w - kw) / stride.w + 1;
    Tensor out({N, Cout, Ho, Wo});

    const double* x = input.data();
    const double* wdat = weight.data();
    double* y = out.data();
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            const double b = bias.defined() ? bias[co] : 0.0;
            for (int oh = 0; oh < Ho; ++oh) {
                const int ih0 = oh * stride.h - padding.h;
                const int u0 = std::max(0, -ih0);
                const int u1 = std::min(kh, H - ih0);
                for (int ow = 0; ow < Wo; ++ow) {
                    const int iw0 = ow * stride.w - padding.w;
                    const int v0 = std::max(0, -iw0);
                    const int v1 = std::min(kw, W - iw0);
                    double acc = b;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* xc = x + ((static_cast<int64_t>(n) * Cin + ci) * H) * W;
                        const double* wc = wdat + ((static_cast<int64_t>(co) * Cin + ci) * kh) * kw;
                        for (int u = u0; u < u1; ++u) {
                            const double* xrow = xc + static_cast<int64_t>(ih0 + u) * W + iw0;
                            const double* wrow = wc + static_cast<int64_t>(u) * kw;
                            for (int v = v0; v < v1; ++v) acc += xrow[v] * wrow[v];
                        }
                    }
                    y[((static_cast<int64_t>(n) * Cout + co) * Ho + oh) * Wo + ow] = acc;
                }
            }
        }
    }
    return out;
}

// input [N,D], weight [K,D], bias [K] or undefined -> [N,K]
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    detail::require(input.rank() == 2, "linear: input must be N x D");
    detail::require(weight.rank() == 2, "linear: weight must be K x D");
    const int N = input.dim(0), D = input.dim(1), K = weight.dim(0);
    detail::require(weight.dim(1) == D,
                    "linear: input features " + std::to_string(D) + " do not match weight columns " +
                        std::to_string(weight.dim(1)));
    if (bias.defined())
        detail::require(bias.rank() == 1 && bias.dim(0) == K, "linear: bias must be [K]");

    Tensor out({N, K});
    for (int n = 0; n < N; ++n) {
        const double* xrow = input.data() + static_cast<int64_t>(n) * D;
        for (int k = 0; k < K; ++k) {
            const double* wrow = weight.data() + static_cast<int64_t>(k) * D;
            double acc = bias.defined() ? bias[k] : 0.0;
            for (int d = 0; d < D; ++d) acc += wrow[d] * xrow[d];
            out.at(n, k) = acc;
        }
    }
    return out;
}

inline Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
    return out;
}

inline Tensor sigmoid(const Tensor& input) {
    Tensor out = input;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return out;
}

// Eval-mode batch norm: y = gamma * (x - mean) / sqrt(var + eps) + beta.
// Equivalently y = a_bn * x + b_bn with implicit bias
// b_bn[c] = beta[c] - gamma[c] * mean[c] / sqrt(var[c] + eps).
inline Tensor batchnorm2d_eval(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                               const Tensor& running_mean, const Tensor& running_var, double eps) {
    detail::require(input.rank() == 4, "batchnorm2d: input must be N x C x H x W");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    detail::require(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                        running_var.numel() == C,
                    "batchnorm2d: per-channel parameter shape mismatch");
    Tensor out({N, C, H, W});
    for (int c = 0; c < C; ++c) {
        const double denom = running_var[c] + eps;
        if (!(denom > 0.0)) throw std::domain_error("batchnorm2d: var + eps must be positive");
        const double scale = gamma[c] / std::sqrt(denom);
        const double shift = beta[c] - scale * running_mean[c];
        for (int n = 0; n < N; ++n) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
                out[base + i] = scale * input[base + i] + shift;
        }
    }
    return out;
}

struct PoolResult {
    Tensor output;
    // flat index into the input per output element; ties broken by lowest flat index
    std::vector<int64_t> argmax;
};

inline PoolResult maxpool2d(const Tensor& input, Shape2 window, Shape2 stride) {
    detail::require(input.rank() == 4, "maxpool2d: input must be N x C x H x W");
    detail::require(window.h > 0 && window.w > 0 && stride.h > 0 && stride.w > 0,
                    "maxpool2d: window and stride must be positive");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    detail::require(window.h <= H && window.w <= W, "maxpool2d: window larger than input");
    const int Ho = (H - window.h) / stride.h + 1;
    const int Wo = (W - window.w) / stride.w + 1;
    PoolResult res;
    res.output = Tensor({N, C, Ho, Wo});
    res.argmax.resize(static_cast<size_t>(res.output.numel()));
    int64_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int oh = 0; oh < Ho; ++oh) {
                for (int ow = 0; ow < Wo; ++ow) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_idx = -1;
                    for (int u = 0; u < window.h; ++u) {
                        for (int v = 0; v < window.w; ++v) {
                            const int64_t idx =
                                base + static_cast<int64_t>(oh * stride.h + u) * W + (ow * stride.w + v);
                            if (input[idx] > best) {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    res.output[o] = best;
                    res.argmax[static_cast<size_t>(o)] = best_idx;
                    ++o;
                }
            }
        }
    }
    return res;
}

inline Tensor avgpool2d(const Tensor& input, Shape2 window, Shape2 stride) {
    detail::require(input.rank() == 4, "avgpool2d: input must be N x C x H x W");
    detail::require(window.h > 0 && window.w > 0 && stride.h > 0 && stride.w > 0,
                    "avgpool2d: window and stride must be positive");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    detail::require(window.h <= H && window.w <= W, "avgpool2d: window larger than input");
    const int Ho = (H - window.h) / stride.h + 1;
    const int Wo = (W - window.w) / stride.w + 1;
    const double inv = 1.0 / (static_cast<double>(window.h) * window.w);
    Tensor out({N, C, Ho, Wo});
    int64_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const int64_t base = ((static_cast<int64_t>(n) * C + c) * H) * W;
            for (int oh = 0; oh < Ho; ++oh) {
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int u = 0; u < window.h; ++u)
                        for (int v = 0; v < window.w; ++v)
                            acc += input[base + static_cast<int64_t>(oh * stride.h + u) * W +
                                         (ow * stride.w + v)];
                    out[o++] = acc * inv;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// image-space utilities

// Bilinear upsampling with half-pixel centers and edge clamping:
// source coordinate s = (o + 0.5) * (h / H) - 0.5, clamped to [0, h-1].
// Accepts [h,w] or [C,h,w]; target must not be smaller than the source.
inline Tensor bilinear_upsample(const Tensor& input, int target_h, int target_w) {
    detail::require(input.rank() == 2 || input.rank() == 3,
                    "bilinear_upsample: input must be [h,w] or [C,h,w]");
    const bool has_channels = input.rank() == 3;
    const int C = has_channels ? input.dim(0) : 1;
    const int h = input.dim(has_channels ? 1 : 0);
    const int w = input.dim(has_channels ? 2 : 1);
    detail::require(target_h >= h && target_w >= w,
                    "bilinear_upsample: downsampling not supported (target " +
                        std::to_string(target_h) + "x" + std::to_string(target_w) + " < source " +
                        std::to_string(h) + "x" + std::to_string(w) + ")");

    std::vector<int> lo_y(static_cast<size_t>(target_h)), lo_x(static_cast<size_t>(target_w));
    std::vector<double> fy(static_cast<size_t>(target_h)), fx(static_cast<size_t>(target_w));
    const double ry = static_cast<double>(h) / target_h;
    const double rx = static_cast<double>(w) / target_w;
    for (int o = 0; o < target_h; ++o) {
        double s = (o + 0.5) * ry - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(h - 1));
        lo_y[static_cast<size_t>(o)] = std::min(static_cast<int>(s), h - 2 >= 0 ? h - 2 : 0);
        fy[static_cast<size_t>(o)] = s - lo_y[static_cast<size_t>(o)];
    }
    for (int o = 0; o < target_w; ++o) {
        double s = (o + 0.5) * rx - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(w - 1));
        lo_x[static_cast<size_t>(o)] = std::min(static_cast<int>(s), w - 2 >= 0 ? w - 2 : 0);
        fx[static_cast<size_t>(o)] = s - lo_x[static_cast<size_t>(o)];
    }

    Tensor out(has_channels ? std::vector<int>{C, target_h, target_w}
                            : std::vector<int>{target_h, target_w});
    for (int c = 0; c < C; ++c) {
        const double* src = input.data() + static_cast<int64_t>(c) * h * w;
        double* dst = out.data() + static_cast<int64_t>(c) * target_h * target_w;
        for (int oy = 0; oy < target_h; ++oy) {
            const int y0 = lo_y[static_cast<size_t>(oy)];
            const int y1 = std::min(y0 + 1, h - 1);
            const double ty = fy[static_cast<size_t>(oy)];
            for (int ox = 0; ox < target_w; ++ox) {
                const int x0 = lo_x[static_cast<size_t>(ox)];
                const int x1 = std::min(x0 + 1, w - 1);
                const double tx = fx[static_cast<size_t>(ox)];
                const double top = src[static_cast<int64_t>(y0) * w + x0] * (1.0 - tx) +
                                   src[static_cast<int64_t>(y0) * w + x1] * tx;
                const double bot = src[static_cast<int64_t>(y1) * w + x0] * (1.0 - tx) +
                                   src[static_cast<int64_t>(y1) * w + x1] * tx;
                dst[static_cast<int64_t>(oy) * target_w + ox] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    return out;
}

// (v - min) / (max - min + eps) over the whole tensor. A constant input maps
// to all zeros: it carries no spatial saliency signal.
inline Tensor rescale_unit(const Tensor& input, double eps = 1e-12) {
    if (input.numel() == 0) return input;
    const double lo = min_value(input);
    const double hi = max_value(input);
    const double inv = 1.0 / (hi - lo + eps);
    Tensor out = input;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - lo) * inv;
    return out;
}

// numerically stable row-wise log-softmax; input [N,K]
inline Tensor log_softmax(const Tensor& input) {
    detail::require(input.rank() == 2, "log_softmax: input must be N x K");
    const int N = input.dim(0), K = input.dim(1);
    Tensor out({N, K});
    for (int n = 0; n < N; ++n) {
        const double* row = input.data() + static_cast<int64_t>(n) * K;
        double m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
        const double lz = m + std::log(z);
        for (int k = 0; k < K; ++k) out.at(n, k) = row[k] - lz;
    }
    return out;
}

}  // namespace fullgrad
