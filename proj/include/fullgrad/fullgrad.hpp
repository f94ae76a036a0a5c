#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fullgrad/grads.hpp"
#include "fullgrad/network.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

// |f - reconstruction| must stay below this times max(1, |f|); a breach
// means the backward pass is wrong, not that the input is unusual.
inline constexpr double kCompletenessTol = 1e-8;

// One per-channel bias-gradient map from a conv or batch-norm layer.
struct BiasMapEntry {
    int layer = 0;
    int channel = 0;
    Tensor map;  // [H, W] at the layer's own resolution
};

// The exact decomposition f = input_gradient . x + sum of all bias terms.
// Spatial (conv / batch-norm) bias-gradients keep their geometry in
// bias_maps; bias terms with no spatial meaning for the saliency
// aggregation (fully-connected biases, flattened nonlinearity remainders)
// land in fc_bias_terms so the reconstruction stays exact.
struct FullGradients {
    Tensor input_gradient;  // shaped like x
    std::vector<BiasMapEntry> bias_maps;
    std::vector<double> fc_bias_terms;
    double f_value = 0.0;
    int target = 0;
    std::vector<LayerKind> layer_kinds;  // per layer, for map queries
};

enum class PsiVariant { Full, NoAbs, AbsOnly };

inline const char* psi_name(PsiVariant v) {
    switch (v) {
        case PsiVariant::Full: return "full";
        case PsiVariant::NoAbs: return "noabs";
        case PsiVariant::AbsOnly: return "absonly";
    }
    return "?";
}

inline PsiVariant parse_psi(const std::string& s) {
    if (s == "full") return PsiVariant::Full;
    if (s == "noabs") return PsiVariant::NoAbs;
    if (s == "absonly") return PsiVariant::AbsOnly;
    throw std::invalid_argument("unknown psi variant \"" + s + "\" (want full|noabs|absonly)");
}

struct PostProcessor {
    PsiVariant variant = PsiVariant::Full;
    int target_h = 0, target_w = 0;
};

struct SaliencyMap {
    Tensor values;  // [H, W], input spatial size
    std::string method;
    int target = 0;
};

inline double completeness_residual(const FullGradients& fg, const Tensor& x) {
    double recon = dot(fg.input_gradient, x);
    for (const BiasMapEntry& e : fg.bias_maps) recon += sum(e.map);
    for (double t : fg.fc_bias_terms) recon += t;
    return fg.f_value - recon;
}

// Decompose the target logit into input-gradient and bias-gradient parts,
// then verify the parts re-assemble to the logit before returning.
inline FullGradients decompose(const NetworkSpec& spec, const Parameters& params, const Tensor& x,
                               int target) {
    detail::require(x.rank() == 4 && x.dim(0) == 1, "decompose: expects one N=1 NCHW input");
    ActivationTrace trace;
    forward(spec, params, x, &trace);
    GradientBundle gb = backward(spec, params, trace, target);

    FullGradients fg;
    fg.input_gradient = std::move(gb.input_grad);
    fg.f_value = trace.logits.at(0, target);
    fg.target = target;
    for (const LayerSpec& l : spec.layers) fg.layer_kinds.push_back(l.kind);

    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const Tensor& bg = gb.bias_grads[li];
        if (!bg.defined()) continue;
        const LayerKind kind = spec.layers[li].kind;
        const bool spatial = bg.rank() == 4 &&
                             (kind == LayerKind::Conv2d || kind == LayerKind::BatchNorm2d);
        if (spatial) {
            const int C = bg.dim(1), H = bg.dim(2), W = bg.dim(3);
            for (int c = 0; c < C; ++c) {
                BiasMapEntry e;
                e.layer = static_cast<int>(li);
                e.channel = c;
                e.map = Tensor({H, W});
                const double* src = bg.data() + static_cast<int64_t>(c) * H * W;
                for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) e.map[i] = src[i];
                fg.bias_maps.push_back(std::move(e));
            }
        } else {
            for (int64_t i = 0; i < bg.numel(); ++i) fg.fc_bias_terms.push_back(bg[i]);
        }
    }

    const double res = completeness_residual(fg, x);
    const double tol = kCompletenessTol * std::max(1.0, std::fabs(fg.f_value));
    if (!(std::fabs(res) <= tol))
        throw std::logic_error("full-gradient reconstruction residual " + std::to_string(res) +
                               " exceeds " + std::to_string(tol) +
                               " — the backward pass is inconsistent with the forward pass");
    return fg;
}

// psi: abs / rescale-to-[0,1] / bilinear upsample, per variant. Applied to
// one single-channel map at a time.
inline Tensor postprocess(const Tensor& map, const PostProcessor& psi) {
    detail::require(psi.target_h > 0 && psi.target_w > 0,
                    "postprocess: target size must be positive");
    switch (psi.variant) {
        case PsiVariant::Full:
            return bilinear_upsample(rescale_unit(abs(map)), psi.target_h, psi.target_w);
        case PsiVariant::NoAbs:
            return bilinear_upsample(map, psi.target_h, psi.target_w);
        case PsiVariant::AbsOnly:
            return bilinear_upsample(abs(map), psi.target_h, psi.target_w);
    }
    throw std::logic_error("postprocess: bad variant");
}

namespace detail {

inline Tensor channel_slice(const Tensor& nchw, int c) {
    const int H = nchw.dim(2), W = nchw.dim(3);
    Tensor m({H, W});
    const double* src = nchw.data() + static_cast<int64_t>(c) * H * W;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) m[i] = src[i];
    return m;
}

}  // namespace detail

// The input-gradient part of the aggregate: sum over input channels of
// psi(grad .* x), at input resolution.
inline Tensor saliency_input_term(const FullGradients& fg, const Tensor& x,
                                  const PostProcessor& psi) {
    detail::require(x.rank() == 4 && x.dim(0) == 1, "saliency: expects one N=1 NCHW input");
    detail::require(psi.target_h == x.dim(2) && psi.target_w == x.dim(3),
                    "saliency: psi target size must equal the input spatial size");
    const Tensor gx = hadamard(fg.input_gradient, x);
    Tensor acc({x.dim(2), x.dim(3)});
    for (int c = 0; c < x.dim(1); ++c)
        acc = acc + postprocess(detail::channel_slice(gx, c), psi);
    return acc;
}

// Aggregate saliency: psi of each input-gradient channel map plus psi of
// every conv / batch-norm bias-gradient channel map, all summed at input
// resolution. Fully-connected bias terms carry no geometry and are not
// part of this sum.
inline SaliencyMap fullgrad_saliency(const FullGradients& fg, const Tensor& x,
                                     const PostProcessor& psi) {
    Tensor acc = saliency_input_term(fg, x, psi);
    for (const BiasMapEntry& e : fg.bias_maps) acc = acc + postprocess(e.map, psi);
    SaliencyMap s;
    s.values = std::move(acc);
    s.method = std::string("fullgrad-") + psi_name(psi.variant);
    s.target = fg.target;
    return s;
}

inline SaliencyMap fullgrad_saliency(const NetworkSpec& spec, const Parameters& params,
                                     const Tensor& x, int target,
                                     PsiVariant variant = PsiVariant::Full) {
    const FullGradients fg = decompose(spec, params, x, target);
    const PostProcessor psi{variant, x.dim(2), x.dim(3)};
    return fullgrad_saliency(fg, x, psi);
}

// One layer's channel-aggregated bias-gradient map, upsampled to the psi
// target size. Only conv / batch-norm layers have spatial maps.
inline SaliencyMap layer_bias_map(const FullGradients& fg, int layer, const PostProcessor& psi) {
    detail::require(layer >= 0 && layer < static_cast<int>(fg.layer_kinds.size()),
                    "layer_bias_map: layer out of range");
    const LayerKind kind = fg.layer_kinds[static_cast<size_t>(layer)];
    if (kind != LayerKind::Conv2d && kind != LayerKind::BatchNorm2d)
        throw std::invalid_argument(std::string("layer_bias_map: layer ") + std::to_string(layer) +
                                    " (" + layer_kind_name(kind) +
                                    ") has no spatial bias-gradient map");
    Tensor acc({psi.target_h, psi.target_w});
    for (const BiasMapEntry& e : fg.bias_maps)
        if (e.layer == layer) acc = acc + postprocess(e.map, psi);
    SaliencyMap s;
    s.values = std::move(acc);
    s.method = "bias-map-layer-" + std::to_string(layer);
    s.target = fg.target;
    return s;
}

}  // namespace fullgrad
