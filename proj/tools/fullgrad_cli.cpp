// Command-line front end: dataset generation, training, saliency rendering,
// consistency checks, and the three benchmark protocols.
// Exit codes: 0 ok, 1 runtime/tolerance failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fullgrad/all.hpp"

namespace fg = fullgrad;

namespace {

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::invalid_argument("empty list: \"" + s + "\"");
    return out;
}

std::vector<uint64_t> parse_csv_u64(const std::string& s) {
    std::vector<uint64_t> out;
    for (double v : parse_csv_doubles(s)) out.push_back(static_cast<uint64_t>(v));
    return out;
}

std::vector<std::string> parse_csv_strings(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw std::invalid_argument("empty list: \"" + s + "\"");
    return out;
}

// shared saliency-method flags
struct MethodFlags {
    std::string method = "fullgrad";
    std::string psi = "full";
    int steps = 128;
    double sigma = -1.0;
    int samples = 25;
    int gradcam_layer = -1;
    bool signed_maps = false;
    uint64_t seed = 0;

    void attach(CLI::App* cmd, bool single_method = true) {
        if (single_method)
            cmd->add_option("--method", method,
                            "fullgrad|gradient|gxi|ig|smoothgrad|smoothgradsq|gradcam|random");
        cmd->add_option("--psi", psi, "fullgrad post-processing: full|noabs|absonly");
        cmd->add_option("--steps", steps, "integration steps for ig");
        cmd->add_option("--sigma", sigma, "smooth-grad noise stddev (<0: 0.15 * input range)");
        cmd->add_option("--samples", samples, "smooth-grad sample count");
        cmd->add_option("--gradcam-layer", gradcam_layer, "conv layer for gradcam (<0: last)");
        cmd->add_flag("--signed", signed_maps, "keep sign for gradient/smoothgrad maps");
        cmd->add_option("--seed", seed, "seed for stochastic methods / protocols");
    }

    fg::MethodOptions options() const {
        fg::MethodOptions o;
        o.psi = fg::parse_psi(psi);
        o.ig_steps = steps;
        o.sg_sigma = sigma;
        o.sg_samples = samples;
        o.gradcam_layer = gradcam_layer;
        o.signed_maps = signed_maps;
        o.seed = seed;
        return o;
    }
};

// shared model-source flags: trained files, a named toy, or a fresh init
struct ModelFlags {
    std::string manifest, weights, toy, arch;
    uint64_t init_seed = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", manifest, "model manifest (JSON)");
        cmd->add_option("--weights", weights, "weights blob matching --model");
        cmd->add_option("--toy", toy, "built-in toy model: saturation|two-region");
        cmd->add_option("--arch", arch, "randomly initialized architecture: cnn4|cnn4bn|mlp");
        cmd->add_option("--init-seed", init_seed, "weight init seed for --arch");
    }

    fg::Model load() const {
        if (!toy.empty()) return fg::toy_model_by_name(toy);
        if (!arch.empty()) {
            fg::Model m;
            m.spec = fg::arch_by_name(arch);
            m.params = fg::init_params(m.spec, init_seed);
            return m;
        }
        if (manifest.empty() || weights.empty())
            throw std::invalid_argument("need --model+--weights, --toy, or --arch");
        fg::LoadedModel lm = fg::load_model(manifest, weights);
        return fg::Model{std::move(lm.spec), std::move(lm.params)};
    }
};

int most_confident_class(const fg::NetworkSpec& spec, const fg::Parameters& params,
                         const fg::Tensor& x) {
    const fg::Tensor logits = fg::forward(spec, params, x);
    int target = 0;
    for (int k = 1; k < logits.dim(1); ++k)
        if (logits.at(0, k) > logits.at(0, target)) target = k;
    return target;
}

// ---------------------------------------------------------------------------

int cmd_dataset(int n_train, int n_test, uint64_t seed, const std::string& out_dir) {
    const fg::Dataset train = fg::make_bars_dataset(n_train, seed, "train");
    const fg::Dataset test = fg::make_bars_dataset(n_test, fg::mix_seed(seed, 1), "test");
    fg::save_idx(train, out_dir + "/train-images.idx", out_dir + "/train-labels.idx");
    fg::save_idx(test, out_dir + "/test-images.idx", out_dir + "/test-labels.idx");
    std::printf("wrote %d train / %d test images to %s\n", train.size(), test.size(),
                out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& arch, const std::string& train_images,
              const std::string& train_labels, const std::string& test_images,
              const std::string& test_labels, const fg::TrainConfig& cfg,
              const std::string& out_manifest, const std::string& out_weights) {
    const fg::Dataset train = fg::load_idx(train_images, train_labels);
    const fg::NetworkSpec spec =
        fg::arch_by_name(arch, train.images.dim(1), train.images.dim(2));
    const fg::TrainResult res = fg::sgd_train(spec, train, cfg);
    std::printf("initial loss %.4f\n", res.initial_loss);
    for (size_t e = 0; e < res.epoch_loss.size(); ++e)
        std::printf("epoch %zu: loss %.4f, train accuracy %.4f\n", e, res.epoch_loss[e],
                    res.epoch_accuracy[e]);
    fg::save_model(spec, res.params, out_manifest, out_weights);
    std::printf("model written to %s + %s\n", out_manifest.c_str(), out_weights.c_str());
    if (!test_images.empty()) {
        const fg::Dataset test = fg::load_idx(test_images, test_labels);
        std::printf("test accuracy %.4f\n", fg::accuracy(spec, res.params, test));
    }
    return 0;
}

int cmd_saliency(const fg::Model& model, const std::string& images, const std::string& labels,
                 int index, const std::string& input_csv, const MethodFlags& mf, int target,
                 const std::string& out, const std::string& overlay, double alpha) {
    fg::Tensor x;
    if (!input_csv.empty()) {
        const std::vector<double> vals = parse_csv_doubles(input_csv);
        const auto& is = model.spec.input_shape;
        if (static_cast<int64_t>(vals.size()) != static_cast<int64_t>(is[0]) * is[1] * is[2])
            throw std::invalid_argument("--input needs " +
                                        std::to_string(is[0] * is[1] * is[2]) + " values");
        x = fg::Tensor({1, is[0], is[1], is[2]});
        for (size_t i = 0; i < vals.size(); ++i) x[static_cast<int64_t>(i)] = vals[i];
    } else if (!images.empty()) {
        const fg::Dataset ds = fg::load_idx(images, labels);
        x = ds.image(index);
    } else {
        throw std::invalid_argument("need --images+--labels+--index or --input");
    }

    if (target < 0) target = most_confident_class(model.spec, model.params, x);
    const fg::SaliencyMap sal = fg::compute_saliency(model.spec, model.params, x, target,
                                                     fg::parse_method(mf.method), mf.options());
    fg::write_pgm(sal.values, out);
    const double f = fg::forward(model.spec, model.params, x).at(0, target);
    std::printf("method %s, target %d, f=%.6g, map %dx%d -> %s\n", sal.method.c_str(), target, f,
                sal.values.dim(0), sal.values.dim(1), out.c_str());
    if (!overlay.empty()) {
        fg::Tensor base({x.dim(2), x.dim(3)});
        for (int64_t i = 0; i < base.numel(); ++i) base[i] = x[i];  // first channel
        fg::write_ppm_overlay(base, sal.values, alpha, overlay);
        std::printf("overlay -> %s\n", overlay.c_str());
    }
    return 0;
}

int cmd_check(const fg::Model& model, int n, uint64_t seed, int fd_inputs, bool bias_free,
              int corrupt_layer) {
    const auto& is = model.spec.input_shape;
    fg::Rng rng(seed);
    const double h = 1e-4;

    if (bias_free) {
        for (size_t li = 0; li < model.spec.layers.size(); ++li)
            if (model.params.layers[li].bias.defined() ||
                model.spec.layers[li].kind == fg::LayerKind::BatchNorm2d ||
                model.spec.layers[li].kind == fg::LayerKind::Sigmoid)
                throw std::invalid_argument("--bias-free: model has bias sources at layer " +
                                            std::to_string(li));
    }

    double max_residual = 0.0, max_fd_dev = 0.0, max_prop2 = 0.0;
    for (int i = 0; i < n; ++i) {
        fg::Tensor x({1, is[0], is[1], is[2]});
        int tries = 0;
        do {
            for (int64_t j = 0; j < x.numel(); ++j) x[j] = rng.uniform();
        } while (fg::near_kink(model.spec, model.params, x, 10 * h) && ++tries < 100);
        const int target = most_confident_class(model.spec, model.params, x);

        fg::FullGradients fgd = fg::decompose(model.spec, model.params, x, target);
        if (corrupt_layer >= 0) {
            bool hit = false;
            for (fg::BiasMapEntry& e : fgd.bias_maps)
                if (e.layer == corrupt_layer) {
                    e.map[0] += 1.0;
                    hit = true;
                    break;
                }
            if (!hit)
                throw std::invalid_argument("--corrupt-layer " + std::to_string(corrupt_layer) +
                                            ": layer has no bias-gradient map");
        }
        const double res = std::fabs(fg::completeness_residual(fgd, x)) /
                           std::max(1.0, std::fabs(fgd.f_value));
        max_residual = std::max(max_residual, res);
        if (res > fg::kCompletenessTol) {
            std::printf("FAIL completeness: relative residual %.3e at input %d (layer %s)\n", res,
                        i,
                        corrupt_layer >= 0 ? std::to_string(corrupt_layer).c_str() : "unknown");
            return 1;
        }

        if (bias_free) {
            const double recon = fg::dot(fgd.input_gradient, x);
            const double dev = std::fabs(fgd.f_value - recon) /
                               std::max(1.0, std::fabs(fgd.f_value));
            max_prop2 = std::max(max_prop2, dev);
            if (dev > 1e-10) {
                std::printf("FAIL bias-free identity f = grad.x: deviation %.3e at input %d\n",
                            dev, i);
                return 1;
            }
        }

        if (i < fd_inputs) {
            fg::ActivationTrace trace;
            fg::forward(model.spec, model.params, x, &trace);
            const fg::Tensor analytic =
                fg::backward(model.spec, model.params, trace, target).input_grad;
            const double f0 = trace.logits.at(0, target);
            bool piecewise_linear = true;
            for (const fg::LayerSpec& l : model.spec.layers)
                if (l.kind == fg::LayerKind::Sigmoid) piecewise_linear = false;
            fg::Tensor xv = x;
            int64_t skipped = 0;
            for (int64_t j = 0; j < x.numel(); ++j) {
                const double keep = xv[j];
                xv[j] = keep + h;
                const double fp = fg::forward(model.spec, model.params, xv).at(0, target);
                xv[j] = keep - h;
                const double fm = fg::forward(model.spec, model.params, xv).at(0, target);
                xv[j] = keep;
                // Inside one linear region the second difference is exactly
                // zero, so anything beyond roundoff means the +-h probe
                // straddles a kink in this pixel's cone: the coordinate is
                // untestable at this step size. Smooth nets have genuine
                // curvature, so no skipping there (none is needed).
                if (piecewise_linear &&
                    std::fabs(fp + fm - 2 * f0) > 1e-11 * std::max(1.0, std::fabs(f0))) {
                    ++skipped;
                    continue;
                }
                const double numeric = (fp - fm) / (2 * h);
                const double dev = std::fabs(analytic[j] - numeric) /
                                   std::max({std::fabs(analytic[j]), std::fabs(numeric), 1.0});
                max_fd_dev = std::max(max_fd_dev, dev);
                if (dev > 1e-6) {
                    std::printf("FAIL gradient check: input coordinate %lld deviates %.3e\n",
                                static_cast<long long>(j), dev);
                    return 1;
                }
            }
            if (skipped * 5 > x.numel()) {
                std::printf("FAIL gradient check: %lld of %lld coordinates straddle kinks\n",
                            static_cast<long long>(skipped),
                            static_cast<long long>(x.numel()));
                return 1;
            }
        }
    }
    std::printf("ok: %d inputs, max completeness residual %.3e (tol %.0e)", n, max_residual,
                fg::kCompletenessTol);
    if (fd_inputs > 0) std::printf(", max input-gradient deviation %.3e (tol 1e-06)", max_fd_dev);
    if (bias_free) std::printf(", max bias-free identity deviation %.3e (tol 1e-10)", max_prop2);
    std::printf("\n");
    return 0;
}

int cmd_perturb(const fg::Model& model, const std::string& images, const std::string& labels,
                int n, const std::vector<std::string>& methods, const std::vector<double>& k_grid,
                const std::vector<double>& rf_grid, const MethodFlags& mf, const std::string& out,
                const std::string& out_json) {
    fg::Dataset ds = fg::load_idx(images, labels);
    if (n > 0 && n < ds.size()) {
        fg::Dataset sub;
        sub.split = ds.split;
        sub.images = fg::Tensor({n, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
        const int64_t per = ds.images.numel() / ds.size();
        std::copy(ds.images.data(), ds.images.data() + n * per, sub.images.data());
        sub.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
        ds = std::move(sub);
    }

    std::vector<fg::EvalCurve> curves;
    if (!rf_grid.empty()) {
        fg::OrderingReport rep =
            fg::mnist_pixel_perturbation(model.spec, model.params, ds, rf_grid, mf.seed,
                                         mf.options());
        curves = rep.curves;
        for (size_t i = 0; i < rep.rf_grid.size(); ++i)
            std::printf("RF %.2f: chain absonly<=noabs<=gradient<=random %s\n", rep.rf_grid[i],
                        rep.full_chain(i) ? "holds" : "VIOLATED");
        std::printf("required ordering absonly < noabs < random at RF %.2f: %s\n", rep.rf_grid[0],
                    rep.required_ordering() ? "holds" : "VIOLATED");
    } else {
        bool have_random = false;
        for (const std::string& name : methods) {
            const fg::Method m = fg::parse_method(name);
            have_random = have_random || m == fg::Method::Random;
            curves.push_back(fg::pixel_perturbation_curve(model.spec, model.params, ds, m, k_grid,
                                                          mf.seed, mf.options()));
        }
        if (!have_random)
            curves.push_back(fg::pixel_perturbation_curve(model.spec, model.params, ds,
                                                          fg::Method::Random, k_grid, mf.seed,
                                                          mf.options()));
    }
    fg::write_curves_csv(curves, out);
    if (!out_json.empty()) fg::write_curves_json(curves, out_json);
    for (const fg::EvalCurve& c : curves) {
        std::printf("%s:", c.method.c_str());
        for (size_t i = 0; i < c.k_grid.size(); ++i)
            std::printf(" k=%g %.4f", c.k_grid[i], c.values[i]);
        std::printf("\n");
    }
    std::printf("curves -> %s\n", out.c_str());
    return 0;
}

int cmd_roar(const fg::Model& model, const std::string& train_images,
             const std::string& train_labels, const std::string& test_images,
             const std::string& test_labels, const std::vector<std::string>& methods,
             const std::vector<double>& k_grid, const std::vector<uint64_t>& seeds,
             const fg::TrainConfig& cfg, const MethodFlags& mf, const std::string& out,
             const std::string& out_json) {
    const fg::Dataset train = fg::load_idx(train_images, train_labels);
    const fg::Dataset test = fg::load_idx(test_images, test_labels);
    std::vector<fg::EvalCurve> curves;
    for (const std::string& name : methods)
        curves.push_back(fg::roar_run(model.spec, train, test, model.params,
                                      fg::parse_method(name), k_grid, seeds, cfg, mf.options()));
    fg::write_curves_csv(curves, out);
    if (!out_json.empty()) fg::write_curves_json(curves, out_json);
    for (const fg::EvalCurve& c : curves) {
        std::printf("%s:", c.method.c_str());
        for (size_t i = 0; i < c.k_grid.size(); ++i)
            std::printf(" k=%g acc %.4f±%.4f", c.k_grid[i], c.values[i], c.stddev[i]);
        std::printf("\n");
    }
    std::printf("curves -> %s\n", out.c_str());
    return 0;
}

int cmd_flip(const fg::Model& model, const std::string& images, const std::string& labels,
             const std::vector<std::string>& methods, double k, int class_a, int class_b,
             const MethodFlags& mf, const std::string& out) {
    const fg::Dataset ds = fg::load_idx(images, labels);
    // validate before any work so a bad combination is a usage error
    for (const std::string& name : methods)
        if (!fg::method_is_signed(fg::parse_method(name), mf.options()))
            throw std::invalid_argument("method " + name +
                                        " does not produce a signed map with these options");
    std::string csv = "method,k,mean,stddev,n\n";
    char buf[160];
    for (const std::string& name : methods) {
        const fg::Method m = fg::parse_method(name);
        const fg::FlipResult res = fg::digit_flip_delta_logodds(
            model.spec, model.params, ds, class_a, class_b, m, k, mf.options(), mf.seed);
        std::string id = name;
        if (m == fg::Method::FullGrad) id += std::string("-") + mf.psi;
        std::printf("%s: mean delta log-odds %.4f ± %.4f over %d images of class %d\n", id.c_str(),
                    res.mean, res.stddev, res.n, class_a);
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%d\n", id.c_str(), k, res.mean,
                      res.stddev, res.n);
        csv += buf;
    }
    if (!out.empty()) {
        fg::detail::atomic_write(out, csv);
        std::printf("table -> %s\n", out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"full-gradient attribution toolkit"};
    app.require_subcommand(1);

    // dataset
    auto* dataset = app.add_subcommand("dataset", "generate the bundled synthetic bars corpus");
    int ds_train = 2000, ds_test = 500;
    uint64_t ds_seed = 7;
    std::string ds_out = ".";
    dataset->add_option("--n-train", ds_train, "training images");
    dataset->add_option("--n-test", ds_test, "test images");
    dataset->add_option("--seed", ds_seed, "generator seed");
    dataset->add_option("--out-dir", ds_out, "output directory");

    // train
    auto* train = app.add_subcommand("train", "train a model and write manifest + weights");
    std::string tr_arch = "cnn4", tr_ti, tr_tl, tr_vi, tr_vl, tr_om = "model.json",
                tr_ow = "model.bin";
    fg::TrainConfig tr_cfg;
    train->add_option("--arch", tr_arch, "cnn4|cnn4bn|mlp");
    train->add_option("--train-images", tr_ti)->required();
    train->add_option("--train-labels", tr_tl)->required();
    train->add_option("--test-images", tr_vi);
    train->add_option("--test-labels", tr_vl);
    train->add_option("--epochs", tr_cfg.epochs);
    train->add_option("--batch-size", tr_cfg.batch_size);
    train->add_option("--lr", tr_cfg.lr);
    train->add_option("--momentum", tr_cfg.momentum);
    train->add_option("--weight-decay", tr_cfg.weight_decay);
    train->add_option("--seed", tr_cfg.seed);
    train->add_option("--out-model", tr_om, "manifest output path");
    train->add_option("--out-weights", tr_ow, "weights blob output path");

    // saliency
    auto* saliency = app.add_subcommand("saliency", "render a saliency map to PGM/PPM");
    ModelFlags sal_model;
    sal_model.attach(saliency);
    MethodFlags sal_mf;
    sal_mf.attach(saliency);
    std::string sal_images, sal_labels, sal_input, sal_out = "saliency.pgm", sal_overlay;
    int sal_index = 0, sal_target = -1;
    double sal_alpha = 0.5;
    saliency->add_option("--images", sal_images, "IDX image file");
    saliency->add_option("--labels", sal_labels, "IDX label file");
    saliency->add_option("--index", sal_index, "image index within --images");
    saliency->add_option("--input", sal_input, "raw input values (CSV), for toy models");
    saliency->add_option("--target", sal_target, "class index (default: most confident)");
    saliency->add_option("--out", sal_out, "PGM output path");
    saliency->add_option("--overlay", sal_overlay, "optional PPM overlay output path");
    saliency->add_option("--alpha", sal_alpha, "overlay blend factor");

    // check
    auto* check = app.add_subcommand("check", "verify decomposition + gradients on random inputs");
    ModelFlags chk_model;
    chk_model.attach(check);
    int chk_n = 100, chk_fd = 3, chk_corrupt = -1;
    uint64_t chk_seed = 11;
    bool chk_bias_free = false;
    check->add_option("--n", chk_n, "random inputs for the completeness check");
    check->add_option("--seed", chk_seed, "input sampling seed");
    check->add_option("--fd-inputs", chk_fd,
                      "inputs to also gradient-check against central differences");
    check->add_flag("--bias-free", chk_bias_free,
                    "model must be bias-free; also assert f(x) = grad.x");
    check->add_option("--corrupt-layer", chk_corrupt)->group("");  // fault-injection hook

    // perturb
    auto* perturb = app.add_subcommand("perturb", "least-salient pixel removal benchmark");
    ModelFlags per_model;
    per_model.attach(perturb);
    MethodFlags per_mf;
    per_mf.attach(perturb, /*single_method=*/false);
    std::string per_images, per_labels, per_methods = "fullgrad", per_k, per_rf,
                per_out = "perturb.csv", per_json;
    int per_n = 0;
    perturb->add_option("--images", per_images)->required();
    perturb->add_option("--labels", per_labels)->required();
    perturb->add_option("--n", per_n, "cap on images used (0 = all)");
    perturb->add_option("--methods", per_methods, "comma-separated method list");
    perturb->add_option("--k-grid", per_k, "removal percentages (default 0,1,2,5,10,20,50)");
    perturb->add_option("--rf-grid", per_rf,
                        "removal fractions in [0,1]; runs the psi-variant ordering sweep");
    perturb->add_option("--out", per_out, "CSV output path");
    perturb->add_option("--out-json", per_json, "JSON output path");

    // roar
    auto* roar = app.add_subcommand("roar", "remove-and-retrain benchmark");
    ModelFlags roar_model;
    roar_model.attach(roar);
    MethodFlags roar_mf;
    roar_mf.attach(roar, /*single_method=*/false);
    std::string roar_ti, roar_tl, roar_vi, roar_vl, roar_methods = "fullgrad",
                roar_k, roar_seeds = "1,2,3", roar_out = "roar.csv", roar_json;
    fg::TrainConfig roar_cfg;
    roar->add_option("--train-images", roar_ti)->required();
    roar->add_option("--train-labels", roar_tl)->required();
    roar->add_option("--test-images", roar_vi)->required();
    roar->add_option("--test-labels", roar_vl)->required();
    roar->add_option("--methods", roar_methods, "comma-separated method list");
    roar->add_option("--k-grid", roar_k, "removal percentages (default 0,10,30,50,70,90)");
    roar->add_option("--seeds", roar_seeds, "retraining seeds (comma-separated)");
    roar->add_option("--epochs", roar_cfg.epochs);
    roar->add_option("--batch-size", roar_cfg.batch_size);
    roar->add_option("--lr", roar_cfg.lr);
    roar->add_option("--momentum", roar_cfg.momentum);
    roar->add_option("--weight-decay", roar_cfg.weight_decay);
    roar->add_option("--out", roar_out, "CSV output path");
    roar->add_option("--out-json", roar_json, "JSON output path");

    // flip
    auto* flip = app.add_subcommand("flip", "class-contrast pixel removal (delta log-odds)");
    ModelFlags flip_model;
    flip_model.attach(flip);
    MethodFlags flip_mf;
    flip_mf.psi = "noabs";
    flip_mf.attach(flip, /*single_method=*/false);
    std::string flip_images, flip_labels, flip_methods = "fullgrad", flip_out;
    double flip_k = 20.0;
    int flip_a = 8, flip_b = 3;
    flip->add_option("--images", flip_images)->required();
    flip->add_option("--labels", flip_labels)->required();
    flip->add_option("--methods", flip_methods, "comma-separated signed methods");
    flip->add_option("--k", flip_k, "percent of pixels removed");
    flip->add_option("--class-a", flip_a, "source class");
    flip->add_option("--class-b", flip_b, "contrast class");
    flip->add_option("--out", flip_out, "CSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (dataset->parsed()) return cmd_dataset(ds_train, ds_test, ds_seed, ds_out);
        if (train->parsed())
            return cmd_train(tr_arch, tr_ti, tr_tl, tr_vi, tr_vl, tr_cfg, tr_om, tr_ow);
        if (saliency->parsed())
            return cmd_saliency(sal_model.load(), sal_images, sal_labels, sal_index, sal_input,
                                sal_mf, sal_target, sal_out, sal_overlay, sal_alpha);
        if (check->parsed())
            return cmd_check(chk_model.load(), chk_n, chk_seed, chk_fd, chk_bias_free,
                             chk_corrupt);
        if (perturb->parsed())
            return cmd_perturb(per_model.load(), per_images, per_labels, per_n,
                               parse_csv_strings(per_methods),
                               per_k.empty() ? fg::default_perturbation_grid()
                                             : parse_csv_doubles(per_k),
                               per_rf.empty() ? std::vector<double>{} : parse_csv_doubles(per_rf),
                               per_mf, per_out, per_json);
        if (roar->parsed())
            return cmd_roar(roar_model.load(), roar_ti, roar_tl, roar_vi, roar_vl,
                            parse_csv_strings(roar_methods),
                            roar_k.empty() ? fg::default_roar_grid() : parse_csv_doubles(roar_k),
                            parse_csv_u64(roar_seeds), roar_cfg, roar_mf, roar_out, roar_json);
        if (flip->parsed())
            return cmd_flip(flip_model.load(), flip_images, flip_labels,
                            parse_csv_strings(flip_methods), flip_k, flip_a, flip_b, flip_mf,
                            flip_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
