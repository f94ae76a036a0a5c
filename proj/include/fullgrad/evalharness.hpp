#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fullgrad/dataset.hpp"
#include "fullgrad/methods.hpp"
#include "fullgrad/model_io.hpp"
#include "fullgrad/network.hpp"
#include "fullgrad/random.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

// One benchmark curve: a statistic per removal percentage, averaged over
// images or retraining seeds.
struct EvalCurve {
    std::string method;
    std::vector<double> k_grid;  // percent of pixels removed
    std::vector<double> values;
    std::vector<double> stddev;
    int n_samples = 0;
    std::vector<uint64_t> seeds;
    std::map<std::string, std::string> metadata;
};

inline const std::vector<double>& default_perturbation_grid() {
    static const std::vector<double> g{0, 1, 2, 5, 10, 20, 50};
    return g;
}

inline const std::vector<double>& default_roar_grid() {
    static const std::vector<double> g{0, 10, 30, 50, 70, 90};
    return g;
}

namespace detail {

struct MeanStd {
    double mean = 0.0, stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd ms;
    if (v.empty()) return ms;
    for (double x : v) ms.mean += x;
    ms.mean /= static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - ms.mean) * (x - ms.mean);
    ms.stddev = std::sqrt(sq / static_cast<double>(v.size()));
    return ms;
}

// pixels selected by saliency order only; ties go to the lowest flat index
inline std::vector<int64_t> saliency_order(const Tensor& saliency, bool ascending) {
    std::vector<int64_t> idx(static_cast<size_t>(saliency.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return ascending ? saliency[a] < saliency[b] : saliency[a] > saliency[b];
    });
    return idx;
}

inline Tensor fill_pixels(const Tensor& x, const std::vector<int64_t>& order, int64_t count,
                          double fill) {
    Tensor out = x;
    const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int64_t i = 0; i < count; ++i) {
        const int64_t p = order[static_cast<size_t>(i)];
        for (int c = 0; c < C; ++c) out[static_cast<int64_t>(c) * hw + p] = fill;
    }
    return out;
}

inline int64_t removal_count(double k, int64_t hw) {
    return static_cast<int64_t>(std::floor(k * static_cast<double>(hw) / 100.0));
}

}  // namespace detail

// Replace the floor(k% * H*W) lowest-saliency pixels with fill, across all
// channels of the pixel.
inline Tensor perturb_least_salient(const Tensor& x, const SaliencyMap& saliency, double k,
                                    double fill = 0.0) {
    detail::require(x.rank() == 4 && x.dim(0) == 1, "perturb: expects one N=1 NCHW image");
    detail::require(saliency.values.rank() == 2 && saliency.values.dim(0) == x.dim(2) &&
                        saliency.values.dim(1) == x.dim(3),
                    "perturb: saliency map must match the image's spatial shape");
    detail::require(k >= 0.0 && k <= 100.0, "perturb: k must be a percentage in [0,100]");
    const auto order = detail::saliency_order(saliency.values, /*ascending=*/true);
    return detail::fill_pixels(x, order, detail::removal_count(k, saliency.values.numel()), fill);
}

inline Tensor perturb_most_salient(const Tensor& x, const SaliencyMap& saliency, double k,
                                   double fill = 0.0) {
    detail::require(x.rank() == 4 && x.dim(0) == 1, "perturb: expects one N=1 NCHW image");
    detail::require(saliency.values.rank() == 2 && saliency.values.dim(0) == x.dim(2) &&
                        saliency.values.dim(1) == x.dim(3),
                    "perturb: saliency map must match the image's spatial shape");
    detail::require(k >= 0.0 && k <= 100.0, "perturb: k must be a percentage in [0,100]");
    const auto order = detail::saliency_order(saliency.values, /*ascending=*/false);
    return detail::fill_pixels(x, order, detail::removal_count(k, saliency.values.numel()), fill);
}

// ---------------------------------------------------------------------------
// trainer

struct TrainConfig {
    int epochs = 6;
    int batch_size = 32;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    uint64_t seed = 1;
};

struct TrainResult {
    Parameters params;
    double initial_loss = 0.0;  // mean cross-entropy before any update
    std::vector<double> epoch_loss;
    std::vector<double> epoch_accuracy;  // on the training pass itself
};

namespace detail {

inline std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& ds,
                                                        const std::vector<int>& order, size_t begin,
                                                        size_t end) {
    const int B = static_cast<int>(end - begin);
    const int C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
    Tensor x({B, C, H, W});
    std::vector<int> labels(static_cast<size_t>(B));
    const int64_t n = static_cast<int64_t>(C) * H * W;
    for (int b = 0; b < B; ++b) {
        const int src = order[begin + static_cast<size_t>(b)];
        std::copy(ds.images.data() + src * n, ds.images.data() + (src + 1) * n,
                  x.data() + b * n);
        labels[static_cast<size_t>(b)] = ds.labels[static_cast<size_t>(src)];
    }
    return {std::move(x), std::move(labels)};
}

struct CrossEntropy {
    double loss = 0.0;
    int correct = 0;
    Tensor dlogits;
};

// mean negative log-softmax of the true class; gradient (softmax - onehot)/B
inline CrossEntropy cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const int B = logits.dim(0), K = logits.dim(1);
    const Tensor ls = log_softmax(logits);
    CrossEntropy ce;
    ce.dlogits = Tensor({B, K});
    for (int b = 0; b < B; ++b) {
        const int y = labels[static_cast<size_t>(b)];
        ce.loss -= ls.at(b, y) / B;
        int argmax = 0;
        for (int k = 1; k < K; ++k)
            if (logits.at(b, k) > logits.at(b, argmax)) argmax = k;
        if (argmax == y) ++ce.correct;
        for (int k = 0; k < K; ++k)
            ce.dlogits.at(b, k) = (std::exp(ls.at(b, k)) - (k == y ? 1.0 : 0.0)) / B;
    }
    return ce;
}

inline void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr,
                     double momentum, double weight_decay) {
    if (!velocity.defined()) velocity = Tensor(param.shape());
    for (int64_t i = 0; i < param.numel(); ++i) {
        const double g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

}  // namespace detail

inline double mean_cross_entropy(const NetworkSpec& spec, const Parameters& params,
                                 const Dataset& ds, int chunk = 256) {
    double total = 0.0;
    std::vector<int> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(chunk)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(chunk));
        auto [x, labels] = detail::gather_batch(ds, order, begin, end);
        const Tensor logits = forward(spec, params, x);
        total += detail::cross_entropy(logits, labels).loss * static_cast<double>(end - begin);
    }
    return total / static_cast<double>(ds.size());
}

inline double accuracy(const NetworkSpec& spec, const Parameters& params, const Dataset& ds,
                       int chunk = 256) {
    int correct = 0;
    std::vector<int> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(chunk)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(chunk));
        auto [x, labels] = detail::gather_batch(ds, order, begin, end);
        const Tensor logits = forward(spec, params, x);
        correct += detail::cross_entropy(logits, labels).correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Minibatch SGD with momentum on cross-entropy. Fully determined by the
// config seed: it fixes the weight init, the shuffle sequence, and the
// (serial) reduction order.
inline TrainResult sgd_train(const NetworkSpec& spec, const Dataset& ds, const TrainConfig& cfg) {
    detail::require(cfg.epochs >= 0 && cfg.batch_size >= 1, "sgd_train: bad config");
    detail::require(ds.size() >= 1, "sgd_train: empty dataset");
    TrainResult res;
    res.params = init_params(spec, cfg.seed);
    res.initial_loss = mean_cross_entropy(spec, res.params, ds);

    std::vector<LayerGrads> velocity(spec.layers.size());
    Rng shuffle_rng(mix_seed(cfg.seed, 0x51e11ed));
    std::vector<int> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<int>(i)))]);

        double loss_sum = 0.0;
        int correct = 0;
        size_t batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            auto [x, labels] = detail::gather_batch(ds, order, begin, end);
            ActivationTrace trace;
            forward_train(spec, res.params, x, trace);
            detail::CrossEntropy ce = detail::cross_entropy(trace.logits, labels);
            if (!std::isfinite(ce.loss))
                throw std::runtime_error("sgd_train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch));
            loss_sum += ce.loss;
            correct += ce.correct;
            ++batches;

            GradientBundle gb = backward_from(spec, res.params, trace, ce.dlogits);
            for (size_t li = 0; li < spec.layers.size(); ++li) {
                LayerParams& p = res.params.layers[li];
                LayerGrads& g = gb.param_grads[li];
                LayerGrads& v = velocity[li];
                if (g.weight.defined())
                    detail::sgd_step(p.weight, v.weight, g.weight, cfg.lr, cfg.momentum,
                                     cfg.weight_decay);
                if (g.bias.defined())
                    detail::sgd_step(p.bias, v.bias, g.bias, cfg.lr, cfg.momentum, 0.0);
                if (g.gamma.defined())
                    detail::sgd_step(p.gamma, v.gamma, g.gamma, cfg.lr, cfg.momentum, 0.0);
                if (g.beta.defined())
                    detail::sgd_step(p.beta, v.beta, g.beta, cfg.lr, cfg.momentum, 0.0);
            }
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        res.epoch_accuracy.push_back(static_cast<double>(correct) /
                                     static_cast<double>(ds.size()));
    }
    return res;
}

// ---------------------------------------------------------------------------
// protocol 1: pixel perturbation

// Per image: pick the most confident class, remove the k% least salient
// pixels, record |fractional change| of that logit. Curve = mean/stddev
// over the dataset per k.
inline EvalCurve pixel_perturbation_curve(const NetworkSpec& spec, const Parameters& params,
                                          const Dataset& ds, Method method,
                                          const std::vector<double>& k_grid, uint64_t seed,
                                          MethodOptions opt = {}) {
    detail::require(!k_grid.empty(), "pixel_perturbation_curve: empty k grid");
    EvalCurve curve;
    curve.method = method_name(method);
    if (method == Method::FullGrad) curve.method += std::string("-") + psi_name(opt.psi);
    curve.k_grid = k_grid;
    curve.n_samples = ds.size();
    curve.seeds = {seed};
    curve.metadata["protocol"] = "pixel-perturbation";
    curve.metadata["fill"] = "0";
    curve.metadata["ig_steps"] = std::to_string(opt.ig_steps);
    curve.metadata["sg_samples"] = std::to_string(opt.sg_samples);

    std::vector<std::vector<double>> stats(k_grid.size());
    for (int i = 0; i < ds.size(); ++i) {
        const Tensor x = ds.image(i);
        const Tensor logits = forward(spec, params, x);
        int target = 0;
        for (int k = 1; k < logits.dim(1); ++k)
            if (logits.at(0, k) > logits.at(0, target)) target = k;
        const double f = logits.at(0, target);

        MethodOptions o = opt;
        o.seed = mix_seed(seed, static_cast<uint64_t>(i));
        const SaliencyMap sal = compute_saliency(spec, params, x, target, method, o);

        for (size_t ki = 0; ki < k_grid.size(); ++ki) {
            const Tensor xt = perturb_least_salient(x, sal, k_grid[ki], 0.0);
            const double ft = forward(spec, params, xt).at(0, target);
            stats[ki].push_back(std::fabs(f - ft) / std::max(std::fabs(f), 1e-12));
        }
    }
    for (const auto& per_k : stats) {
        const detail::MeanStd ms = detail::mean_std(per_k);
        curve.values.push_back(ms.mean);
        curve.stddev.push_back(ms.stddev);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// protocol 2: ROAR (remove and retrain)

// Saliency maps come from the ORIGINAL model only, computed once per image
// and frozen; retraining never recomputes them. Both splits are degraded
// with the same rule; the curve reports modified-test-set accuracy, mean
// over retraining seeds.
inline EvalCurve roar_run(const NetworkSpec& spec, const Dataset& train_ds, const Dataset& test_ds,
                          const Parameters& original_params, Method method,
                          const std::vector<double>& k_grid, const std::vector<uint64_t>& seeds,
                          const TrainConfig& config, MethodOptions opt = {}) {
    detail::require(!seeds.empty(), "roar_run: need at least one retraining seed");
    detail::require(!k_grid.empty(), "roar_run: empty k grid");

    auto frozen_maps = [&](const Dataset& ds, uint64_t salt) {
        std::vector<SaliencyMap> maps;
        maps.reserve(static_cast<size_t>(ds.size()));
        for (int i = 0; i < ds.size(); ++i) {
            const Tensor x = ds.image(i);
            const Tensor logits = forward(spec, original_params, x);
            int target = 0;
            for (int k = 1; k < logits.dim(1); ++k)
                if (logits.at(0, k) > logits.at(0, target)) target = k;
            MethodOptions o = opt;
            o.seed = mix_seed(opt.seed ^ salt, static_cast<uint64_t>(i));
            maps.push_back(compute_saliency(spec, original_params, x, target, method, o));
        }
        return maps;
    };
    const std::vector<SaliencyMap> train_maps = frozen_maps(train_ds, 0x7261696e);
    const std::vector<SaliencyMap> test_maps = frozen_maps(test_ds, 0x74657374);

    auto degrade = [](const Dataset& ds, const std::vector<SaliencyMap>& maps, double k) {
        Dataset out = ds;
        const int64_t n = static_cast<int64_t>(ds.images.dim(1)) * ds.images.dim(2) *
                          ds.images.dim(3);
        for (int i = 0; i < ds.size(); ++i) {
            const Tensor xt =
                perturb_most_salient(ds.image(i), maps[static_cast<size_t>(i)], k, 0.0);
            std::copy(xt.data(), xt.data() + n, out.images.data() + i * n);
        }
        return out;
    };

    EvalCurve curve;
    curve.method = method_name(method);
    if (method == Method::FullGrad) curve.method += std::string("-") + psi_name(opt.psi);
    curve.k_grid = k_grid;
    curve.n_samples = static_cast<int>(seeds.size());
    curve.seeds = seeds;
    curve.metadata["protocol"] = "roar";
    curve.metadata["epochs"] = std::to_string(config.epochs);
    curve.metadata["train_n"] = std::to_string(train_ds.size());
    curve.metadata["test_n"] = std::to_string(test_ds.size());

    for (double k : k_grid) {
        const Dataset mod_train = degrade(train_ds, train_maps, k);
        const Dataset mod_test = degrade(test_ds, test_maps, k);
        std::vector<double> accs;
        for (uint64_t s : seeds) {
            TrainConfig cfg = config;
            cfg.seed = s;
            const TrainResult tr = sgd_train(spec, mod_train, cfg);
            accs.push_back(accuracy(spec, tr.params, mod_test));
        }
        const detail::MeanStd ms = detail::mean_std(accs);
        curve.values.push_back(ms.mean);
        curve.stddev.push_back(ms.stddev);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// protocol 3: class-contrast pixel removal (digit flipping)

struct FlipResult {
    double mean = 0.0;
    double stddev = 0.0;
    int n = 0;
};

// For each image of class_a: rank pixels by the signed saliency contrast
// (class_a map minus class_b map), zero the top k%, and measure the drop in
// log-odds (logit_a - logit_b). Requires a signed method.
inline FlipResult digit_flip_delta_logodds(const NetworkSpec& spec, const Parameters& params,
                                           const Dataset& ds, int class_a, int class_b,
                                           Method method, double k, MethodOptions opt = {},
                                           uint64_t seed = 0) {
    if (!method_is_signed(method, opt))
        throw std::invalid_argument(std::string("digit_flip: method ") + method_name(method) +
                                    " does not produce a signed map with these options"
                                    " (fullgrad needs psi=noabs; gradient/smoothgrad need the"
                                    " signed variant)");
    std::vector<double> deltas;
    for (int i = 0; i < ds.size(); ++i) {
        if (ds.labels[static_cast<size_t>(i)] != class_a) continue;
        const Tensor x = ds.image(i);
        MethodOptions o = opt;
        o.seed = mix_seed(seed, static_cast<uint64_t>(i));
        const SaliencyMap sal_a = compute_saliency(spec, params, x, class_a, method, o);
        const SaliencyMap sal_b = compute_saliency(spec, params, x, class_b, method, o);
        SaliencyMap contrast;
        contrast.values = sal_a.values - sal_b.values;
        contrast.method = sal_a.method + "-contrast";
        contrast.target = class_a;

        const Tensor logits = forward(spec, params, x);
        const Tensor xt = perturb_most_salient(x, contrast, k, 0.0);
        const Tensor logits_t = forward(spec, params, xt);
        deltas.push_back((logits.at(0, class_a) - logits.at(0, class_b)) -
                         (logits_t.at(0, class_a) - logits_t.at(0, class_b)));
    }
    detail::require(!deltas.empty(), "digit_flip: dataset has no images of the source class");
    const detail::MeanStd ms = detail::mean_std(deltas);
    return FlipResult{ms.mean, ms.stddev, static_cast<int>(deltas.size())};
}

// ---------------------------------------------------------------------------
// protocol 1b: removal-fraction sweep with method-ordering report

struct OrderingReport {
    std::vector<EvalCurve> curves;  // absonly, noabs, gradient, random (in order)
    std::vector<double> rf_grid;

    const EvalCurve& by_method(const std::string& name) const {
        for (const EvalCurve& c : curves)
            if (c.method == name) return c;
        throw std::invalid_argument("OrderingReport: no curve for " + name);
    }
    // the documented chain absonly <= noabs <= gradient <= random at one RF
    bool full_chain(size_t rf_index) const {
        const auto& a = by_method("fullgrad-absonly").values.at(rf_index);
        const auto& n = by_method("fullgrad-noabs").values.at(rf_index);
        const auto& g = by_method("gradient").values.at(rf_index);
        const auto& r = by_method("random").values.at(rf_index);
        return a <= n && n <= g && g <= r;
    }
    // the strict subset the benchmark gate requires, at the first RF entry
    bool required_ordering() const {
        const auto& a = by_method("fullgrad-absonly").values.at(0);
        const auto& n = by_method("fullgrad-noabs").values.at(0);
        const auto& r = by_method("random").values.at(0);
        return a < n && n < r;
    }
    bool random_largest_everywhere() const {
        const EvalCurve& r = by_method("random");
        for (const EvalCurve& c : curves)
            for (size_t i = 0; i < r.values.size(); ++i)
                if (c.values[i] > r.values[i]) return false;
        return true;
    }
};

// Removal-fraction sweep comparing the psi variants against gradient and
// random ranking. rf entries are fractions in [0,1].
inline OrderingReport mnist_pixel_perturbation(const NetworkSpec& spec, const Parameters& params,
                                               const Dataset& ds,
                                               const std::vector<double>& rf_grid, uint64_t seed,
                                               MethodOptions opt = {}) {
    std::vector<double> k_grid;
    for (double rf : rf_grid) {
        detail::require(rf >= 0.0 && rf <= 1.0, "mnist_pixel_perturbation: RF must be in [0,1]");
        k_grid.push_back(rf * 100.0);
    }
    OrderingReport rep;
    rep.rf_grid = rf_grid;
    MethodOptions abs_only = opt;
    abs_only.psi = PsiVariant::AbsOnly;
    MethodOptions no_abs = opt;
    no_abs.psi = PsiVariant::NoAbs;
    rep.curves.push_back(
        pixel_perturbation_curve(spec, params, ds, Method::FullGrad, k_grid, seed, abs_only));
    rep.curves.push_back(
        pixel_perturbation_curve(spec, params, ds, Method::FullGrad, k_grid, seed, no_abs));
    rep.curves.push_back(
        pixel_perturbation_curve(spec, params, ds, Method::Gradient, k_grid, seed, opt));
    rep.curves.push_back(
        pixel_perturbation_curve(spec, params, ds, Method::Random, k_grid, seed, opt));
    for (EvalCurve& c : rep.curves) c.metadata["protocol"] = "removal-fraction-sweep";
    return rep;
}

// ---------------------------------------------------------------------------
// report writers

inline void write_curves_csv(const std::vector<EvalCurve>& curves, const std::string& path) {
    std::string out = "method,k,mean,stddev,n\n";
    char buf[160];
    for (const EvalCurve& c : curves)
        for (size_t i = 0; i < c.k_grid.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%d\n", c.method.c_str(),
                          c.k_grid[i], c.values[i], c.stddev[i], c.n_samples);
            out += buf;
        }
    detail::atomic_write(path, out);
}

inline void write_curves_json(const std::vector<EvalCurve>& curves, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const EvalCurve& c : curves) {
        nlohmann::json j;
        j["method"] = c.method;
        j["k_grid"] = c.k_grid;
        j["values"] = c.values;
        j["stddev"] = c.stddev;
        j["n_samples"] = c.n_samples;
        j["seeds"] = c.seeds;
        j["metadata"] = c.metadata;
        doc.push_back(j);
    }
    detail::atomic_write(path, doc.dump(2) + "\n");
}

}  // namespace fullgrad
