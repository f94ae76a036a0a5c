#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fullgrad/evalharness.hpp"
#include "fullgrad/presets.hpp"

using namespace fullgrad;

namespace {

SaliencyMap map2x2() {
    SaliencyMap s;
    s.values = Tensor({2, 2});
    s.values[0] = 0.1;
    s.values[1] = 0.2;
    s.values[2] = 0.3;
    s.values[3] = 0.4;
    s.method = "test";
    return s;
}

Tensor image2x2x2() {
    Tensor x({1, 2, 2, 2});
    for (int i = 0; i < 8; ++i) x[i] = 1.0 + i;
    return x;
}

std::string scratch_dir() {
    const std::string dir = std::string(FULLGRAD_SCRATCH_DIR) + "/evalharness";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("pixel removal selects by rank, fills every channel", "[evalharness]") {
    const Tensor x = image2x2x2();
    const SaliencyMap s = map2x2();

    // k=25% of 4 pixels removes exactly one: the least salient is (0,0)
    const Tensor least = perturb_least_salient(x, s, 25.0);
    REQUIRE(least.at(0, 0, 0, 0) == 0.0);
    REQUIRE(least.at(0, 1, 0, 0) == 0.0);  // both channels of the pixel
    for (int i = 1; i < 4; ++i) {
        REQUIRE(least[i] == x[i]);
        REQUIRE(least[4 + i] == x[4 + i]);
    }

    // the most-salient variant picks (1,1) instead
    const Tensor most = perturb_most_salient(x, s, 25.0, -1.0);
    REQUIRE(most.at(0, 0, 1, 1) == -1.0);
    REQUIRE(most.at(0, 1, 1, 1) == -1.0);
    REQUIRE(most.at(0, 0, 0, 0) == x[0]);

    // k=0 is the identity; k=100 wipes everything
    REQUIRE(max_abs(perturb_least_salient(x, s, 0.0) - x) == 0.0);
    REQUIRE(max_abs(perturb_least_salient(x, s, 100.0)) == 0.0);

    // floor(k% * HW): 49% of 4 pixels still removes only one
    const Tensor p49 = perturb_least_salient(x, s, 49.0);
    int removed = 0;
    for (int i = 0; i < 4; ++i)
        if (p49[i] == 0.0) ++removed;
    REQUIRE(removed == 1);
}

TEST_CASE("removal depends only on the saliency ordering", "[evalharness]") {
    Rng rng(50);
    Tensor x({1, 1, 6, 6});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    SaliencyMap s;
    s.values = Tensor({6, 6});
    for (int64_t i = 0; i < 36; ++i) s.values[i] = 2.0 * rng.uniform() - 1.0;

    SaliencyMap cubed = s;  // v -> v^3 is strictly increasing
    for (int64_t i = 0; i < 36; ++i) cubed.values[i] = std::pow(s.values[i], 3.0);

    for (double k : {10.0, 37.0, 80.0}) {
        REQUIRE(max_abs(perturb_least_salient(x, s, k) -
                        perturb_least_salient(x, cubed, k)) == 0.0);
    }

    // tied saliency resolves to the lowest flat index, deterministically
    SaliencyMap flat;
    flat.values = Tensor({6, 6});  // all zeros
    const Tensor t = perturb_least_salient(x, flat, 10.0);  // floor(3.6) = 3 pixels
    for (int i = 0; i < 3; ++i) REQUIRE(t[i] == 0.0);
    REQUIRE(t[3] == x[3]);
}

TEST_CASE("pixel removal input validation", "[evalharness]") {
    const Tensor x = image2x2x2();
    SaliencyMap wrong;
    wrong.values = Tensor({3, 2});
    REQUIRE_THROWS_AS(perturb_least_salient(x, wrong, 10.0), std::invalid_argument);
    REQUIRE_THROWS_AS(perturb_least_salient(x, map2x2(), -1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(perturb_least_salient(x, map2x2(), 101.0), std::invalid_argument);
}

TEST_CASE("trainer overfits a small sample and is seed-deterministic", "[evalharness]") {
    const Dataset ds = make_bars_dataset(10, 3);
    const NetworkSpec spec = mlp_spec();

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 5;
    cfg.lr = 0.1;
    cfg.seed = 2;
    const TrainResult tr = sgd_train(spec, ds, cfg);
    REQUIRE(tr.epoch_accuracy.back() == 1.0);
    REQUIRE(accuracy(spec, tr.params, ds) == 1.0);
    REQUIRE(mean_cross_entropy(spec, tr.params, ds) < tr.initial_loss);

    // bit-identical rerun
    const TrainResult tr2 = sgd_train(spec, ds, cfg);
    for (size_t li = 0; li < tr.params.layers.size(); ++li) {
        const LayerParams& a = tr.params.layers[li];
        const LayerParams& b = tr2.params.layers[li];
        if (a.weight.defined()) REQUIRE(max_abs(a.weight - b.weight) == 0.0);
        if (a.bias.defined()) REQUIRE(max_abs(a.bias - b.bias) == 0.0);
    }

    // lr = 0: every parameter stays at its initialization
    TrainConfig frozen = cfg;
    frozen.lr = 0.0;
    frozen.epochs = 2;
    const TrainResult tf = sgd_train(spec, ds, frozen);
    const Parameters fresh = init_params(spec, frozen.seed);
    for (size_t li = 0; li < fresh.layers.size(); ++li) {
        if (fresh.layers[li].weight.defined())
            REQUIRE(max_abs(tf.params.layers[li].weight - fresh.layers[li].weight) == 0.0);
        if (fresh.layers[li].bias.defined())
            REQUIRE(max_abs(tf.params.layers[li].bias - fresh.layers[li].bias) == 0.0);
    }
}

TEST_CASE("fresh init on balanced labels scores near ln(num_classes)", "[evalharness]") {
    const Dataset ds = make_bars_dataset(100, 5);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 4;
    const TrainResult tr = sgd_train(cnn4_spec(), ds, cfg);
    const double ln10 = std::log(10.0);
    REQUIRE(tr.initial_loss > 0.9 * ln10);
    REQUIRE(tr.initial_loss < 1.1 * ln10);
}

TEST_CASE("trainer reports divergence instead of emitting NaN parameters", "[evalharness]") {
    const Dataset ds = make_bars_dataset(32, 6);
    TrainConfig cfg;
    // bounded logit gradients keep pure-lr blowup only linear; decay compounds
    // the weights geometrically until the loss stops being finite
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.lr = 1e8;
    cfg.weight_decay = 1.0;
    REQUIRE_THROWS_WITH(sgd_train(mlp_spec(), ds, cfg),
                        Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("trainer handles batch-norm networks in training mode", "[evalharness]") {
    const Dataset ds = make_bars_dataset(10, 7);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 10;
    cfg.lr = 0.05;
    cfg.seed = 3;
    const TrainResult tr = sgd_train(cnn4_bn_spec(), ds, cfg);
    REQUIRE(tr.epoch_accuracy.back() >= 0.9);
    REQUIRE(tr.epoch_loss.back() < tr.initial_loss);
    // running statistics moved off their initialization
    REQUIRE(max_abs(tr.params.layers[1].running_mean) > 0.0);
}

TEST_CASE("perturbation curve: k=0 scores exactly zero and reruns match", "[evalharness]") {
    const Dataset ds = make_bars_dataset(4, 9);
    const NetworkSpec spec = cnn4_spec();
    const Parameters params = init_params(spec, 6);

    const EvalCurve c =
        pixel_perturbation_curve(spec, params, ds, Method::Gradient, {0.0, 10.0}, 11);
    REQUIRE(c.method == "gradient");
    REQUIRE(c.values.size() == 2);
    REQUIRE(c.values[0] == 0.0);  // removing nothing changes nothing
    REQUIRE(c.stddev[0] == 0.0);
    REQUIRE(c.n_samples == 4);

    const EvalCurve c2 =
        pixel_perturbation_curve(spec, params, ds, Method::Gradient, {0.0, 10.0}, 11);
    REQUIRE(c.values[1] == c2.values[1]);
    REQUIRE(c.stddev[1] == c2.stddev[1]);

    MethodOptions opt;
    opt.psi = PsiVariant::Full;
    const EvalCurve fg =
        pixel_perturbation_curve(spec, params, ds, Method::FullGrad, {0.0}, 11, opt);
    REQUIRE(fg.method == "fullgrad-full");
}

TEST_CASE("class-contrast removal: validation and the k=0 identity", "[evalharness]") {
    const Dataset ds = make_bars_dataset(20, 10);
    const NetworkSpec spec = cnn4_spec();
    const Parameters params = init_params(spec, 8);

    MethodOptions noabs;
    noabs.psi = PsiVariant::NoAbs;
    const FlipResult r0 =
        digit_flip_delta_logodds(spec, params, ds, 8, 3, Method::FullGrad, 0.0, noabs);
    REQUIRE(r0.mean == 0.0);
    REQUIRE(r0.n == 2);  // labels cycle 0..9: two images of class 8 in 20

    // unsigned maps cannot rank a signed contrast
    MethodOptions full;
    full.psi = PsiVariant::Full;
    REQUIRE_THROWS_AS(
        digit_flip_delta_logodds(spec, params, ds, 8, 3, Method::FullGrad, 20.0, full),
        std::invalid_argument);
    REQUIRE_THROWS_AS(
        digit_flip_delta_logodds(spec, params, ds, 8, 3, Method::Random, 20.0),
        std::invalid_argument);

    // source class absent from the data
    Dataset no8 = ds;
    for (int& l : no8.labels)
        if (l == 8) l = 0;
    REQUIRE_THROWS_AS(
        digit_flip_delta_logodds(spec, params, no8, 8, 3, Method::FullGrad, 10.0, noabs),
        std::invalid_argument);
}

TEST_CASE("retraining protocol at k=0 reduces to plain training", "[evalharness]") {
    const Dataset train = make_bars_dataset(30, 12);
    const Dataset test = make_bars_dataset(10, 13, "test");
    const NetworkSpec spec = mlp_spec();
    const Parameters original = init_params(spec, 1);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    const EvalCurve curve =
        roar_run(spec, train, test, original, Method::Gradient, {0.0}, {5}, cfg);
    REQUIRE(curve.method == "gradient");
    REQUIRE(curve.n_samples == 1);

    TrainConfig direct = cfg;
    direct.seed = 5;
    const TrainResult tr = sgd_train(spec, train, direct);
    REQUIRE(curve.values[0] == accuracy(spec, tr.params, test));
    REQUIRE(curve.stddev[0] == 0.0);
}

TEST_CASE("removal-fraction sweep produces the four comparison curves", "[evalharness]") {
    const Dataset ds = make_bars_dataset(2, 14);
    const NetworkSpec spec = cnn4_spec();
    const Parameters params = init_params(spec, 2);

    const OrderingReport rep = mnist_pixel_perturbation(spec, params, ds, {0.0, 0.5}, 17);
    REQUIRE(rep.curves.size() == 4);
    REQUIRE(rep.by_method("fullgrad-absonly").values.size() == 2);
    REQUIRE(rep.by_method("fullgrad-noabs").k_grid[1] == 50.0);
    REQUIRE(rep.by_method("gradient").values[0] == 0.0);  // rf = 0
    REQUIRE(rep.by_method("random").values[0] == 0.0);
    REQUIRE_THROWS_AS(rep.by_method("does-not-exist"), std::invalid_argument);
    REQUIRE_THROWS_AS(mnist_pixel_perturbation(spec, params, ds, {1.5}, 17),
                      std::invalid_argument);
}

TEST_CASE("ordering report logic on synthetic curves", "[evalharness]") {
    auto curve = [](const std::string& name, std::vector<double> vals) {
        EvalCurve c;
        c.method = name;
        c.k_grid = {50.0};
        c.k_grid.resize(vals.size(), 50.0);
        c.values = std::move(vals);
        c.stddev.assign(c.values.size(), 0.0);
        return c;
    };
    OrderingReport rep;
    rep.rf_grid = {0.5};
    rep.curves = {curve("fullgrad-absonly", {0.1}), curve("fullgrad-noabs", {0.2}),
                  curve("gradient", {0.3}), curve("random", {0.4})};
    REQUIRE(rep.required_ordering());
    REQUIRE(rep.full_chain(0));
    REQUIRE(rep.random_largest_everywhere());

    rep.curves[0].values[0] = 0.25;  // absonly above noabs now
    REQUIRE_FALSE(rep.required_ordering());
    REQUIRE_FALSE(rep.full_chain(0));

    rep.curves[2].values[0] = 0.9;  // gradient above random
    REQUIRE_FALSE(rep.random_largest_everywhere());
}

TEST_CASE("curve reports serialize to csv and json", "[evalharness]") {
    EvalCurve c;
    c.method = "gradient";
    c.k_grid = {0.0, 12.5};
    c.values = {0.0, 0.03125};
    c.stddev = {0.0, 0.01};
    c.n_samples = 4;
    c.seeds = {11};
    c.metadata["protocol"] = "pixel-perturbation";

    const std::string dir = scratch_dir();
    const std::string csv_path = dir + "/curves.csv";
    write_curves_csv({c}, csv_path);
    std::ifstream in(csv_path);
    std::string header, row;
    REQUIRE(std::getline(in, header));
    REQUIRE(header == "method,k,mean,stddev,n");
    REQUIRE(std::getline(in, row));
    REQUIRE(row == "gradient,0,0,0,4");
    REQUIRE(std::getline(in, row));
    REQUIRE(row == "gradient,12.5,0.03125,0.01,4");

    const std::string json_path = dir + "/curves.json";
    write_curves_json({c}, json_path);
    std::ifstream jin(json_path);
    nlohmann::json doc = nlohmann::json::parse(jin);
    REQUIRE(doc.is_array());
    REQUIRE(doc.size() == 1);
    REQUIRE(doc[0]["method"] == "gradient");
    REQUIRE(doc[0]["values"][1].get<double>() == 0.03125);
    REQUIRE(doc[0]["metadata"]["protocol"] == "pixel-perturbation");

    // writer leaves no temp droppings next to the outputs
    int entries = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        (void)e;
        ++entries;
    }
    REQUIRE(entries == 2);
}
