#pragma once

#include <stdexcept>
#include <string>

#include "fullgrad/baselines.hpp"
#include "fullgrad/fullgrad.hpp"

namespace fullgrad {

enum class Method { FullGrad, Gradient, GradTimesInput, IntegratedGradients, SmoothGrad,
                    SmoothGradSq, GradCam, Random };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::FullGrad: return "fullgrad";
        case Method::Gradient: return "gradient";
        case Method::GradTimesInput: return "gxi";
        case Method::IntegratedGradients: return "ig";
        case Method::SmoothGrad: return "smoothgrad";
        case Method::SmoothGradSq: return "smoothgradsq";
        case Method::GradCam: return "gradcam";
        case Method::Random: return "random";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "fullgrad") return Method::FullGrad;
    if (s == "gradient") return Method::Gradient;
    if (s == "gxi") return Method::GradTimesInput;
    if (s == "ig") return Method::IntegratedGradients;
    if (s == "smoothgrad") return Method::SmoothGrad;
    if (s == "smoothgradsq") return Method::SmoothGradSq;
    if (s == "gradcam") return Method::GradCam;
    if (s == "random") return Method::Random;
    throw std::invalid_argument(
        "unknown method \"" + s +
        "\" (want fullgrad|gradient|gxi|ig|smoothgrad|smoothgradsq|gradcam|random)");
}

struct MethodOptions {
    PsiVariant psi = PsiVariant::Full;  // fullgrad only
    int ig_steps = 128;
    double sg_sigma = -1.0;  // < 0: 0.15 * input value range
    int sg_samples = 25;
    int gradcam_layer = -1;  // < 0: last conv layer
    uint64_t seed = 0;       // smooth-grad noise / random map
    bool signed_maps = false;  // keep sign where the method supports it
};

// Whether compute_saliency yields a signed map under these options — the
// contrastive protocols require one.
inline bool method_is_signed(Method m, const MethodOptions& opt) {
    switch (m) {
        case Method::FullGrad: return opt.psi == PsiVariant::NoAbs;
        case Method::Gradient:
        case Method::SmoothGrad: return opt.signed_maps;
        case Method::GradTimesInput:
        case Method::IntegratedGradients: return true;
        case Method::SmoothGradSq:
        case Method::GradCam:
        case Method::Random: return false;
    }
    return false;
}

inline SaliencyMap compute_saliency(const NetworkSpec& spec, const Parameters& params,
                                    const Tensor& x, int target, Method m,
                                    const MethodOptions& opt = {}) {
    switch (m) {
        case Method::FullGrad:
            return fullgrad_saliency(spec, params, x, target, opt.psi);
        case Method::Gradient:
            return input_gradient_map(spec, params, x, target, opt.signed_maps);
        case Method::GradTimesInput:
            return gradient_times_input(spec, params, x, target);
        case Method::IntegratedGradients:
            return integrated_gradients(spec, params, x, Tensor(x.shape()), target, opt.ig_steps);
        case Method::SmoothGrad:
        case Method::SmoothGradSq: {
            const double sigma =
                opt.sg_sigma >= 0.0 ? opt.sg_sigma : default_smoothgrad_sigma(x);
            return smooth_grad(spec, params, x, target, sigma, opt.sg_samples,
                               m == Method::SmoothGradSq, opt.seed, opt.signed_maps);
        }
        case Method::GradCam:
            return grad_cam(spec, params, x, target, opt.gradcam_layer);
        case Method::Random:
            return random_map(x.dim(2), x.dim(3), opt.seed);
    }
    throw std::logic_error("compute_saliency: bad method");
}

}  // namespace fullgrad
