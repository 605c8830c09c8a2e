#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "claf/pipeline.hpp"
#include "support/oracles.hpp"

using namespace claf;

namespace {

Dataset margin_toy(std::size_t per_class, double margin, std::uint64_t seed) {
    Dataset ds;
    ds.n_classes = 2;
    Rng rng(seed);
    for (int label = 0; label < 2; ++label)
        for (std::size_t i = 0; i < per_class; ++i) {
            LabeledImage img;
            img.label = label;
            img.pixels = Tensor({3, kImageSize, kImageSize});
            const double r = 0.5 + (label == 0 ? margin : -margin);
            const double g = 0.5 + (label == 1 ? margin : -margin);
            for (std::size_t px = 0; px < 1024; ++px) {
                img.pixels.data[px] = r + rng.uniform(-0.01, 0.01);
                img.pixels.data[1024 + px] = g + rng.uniform(-0.01, 0.01);
                img.pixels.data[2048 + px] = 0.5;
            }
            for (double& v : img.pixels.data) v = std::min(1.0, std::max(0.0, v));
            ds.items.push_back(std::move(img));
        }
    return ds;
}

Encoder channel_mean_encoder() {
    EncoderDef def;
    def.preset = "toy2d";
    def.layers = {{LayerKind::Conv, 3, 2, 1, 1, 0}, {LayerKind::GlobalAvgPool}};
    def.out_dim = 2;
    def.norm_mean = {0.5, 0.5, 0.5};
    def.norm_std = {1.0, 1.0, 1.0};
    Encoder f = make_encoder(def, 0);
    Tensor& w = f.params.at("conv0.w");
    std::fill(w.data.begin(), w.data.end(), 0.0);
    w.data[0] = 1.0;
    w.data[4] = 1.0;
    return f;
}

// head that always answers `cls`
Classifier constant_head(int d, int n, int cls) {
    Classifier c = make_classifier(d, n, 0);
    std::fill(c.params.at("w").data.begin(), c.params.at("w").data.end(), 0.0);
    Tensor& b = c.params.at("b");
    std::fill(b.data.begin(), b.data.end(), 0.0);
    b.data[cls] = 1.0;
    return c;
}

// head reading the (R - G) margin directly
Classifier margin_head() {
    Classifier c = make_classifier(2, 2, 0);
    Tensor& w = c.params.at("w");
    w.data = {8.0, -8.0, -8.0, 8.0};  // [d=2, n=2] row-major
    std::fill(c.params.at("b").data.begin(), c.params.at("b").data.end(), 0.0);
    return c;
}

}  // namespace

TEST_CASE("constant head on a balanced 10-class set scores 0.1") {
    Dataset ds = synthetic_dataset(10, 8, 4, false);
    Encoder f = make_encoder(micro_encoder_def(), 1);
    Classifier head = constant_head(12, 10, 3);
    CHECK(clean_accuracy(f, head, ds) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("a model that separates the toy set scores 1.0") {
    Dataset ds = margin_toy(16, 0.2, 7);
    Encoder f = channel_mean_encoder();
    Classifier head = margin_head();
    CHECK(clean_accuracy(f, head, ds) == 1.0);
}

TEST_CASE("robust accuracy at epsilon 0 equals clean accuracy bit-exactly") {
    Dataset ds = margin_toy(10, 0.05, 8);
    Encoder f = channel_mean_encoder();
    Classifier head = margin_head();
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.k = 3;
    const double clean = clean_accuracy(f, head, ds);
    const double robust = robust_accuracy(f, head, ds, cfg, 99);
    CHECK(robust == clean);
}

TEST_CASE("robust accuracy is non-increasing in epsilon (shared seed, 3 seeds)") {
    // moderate margin so the attack budget is the binding constraint
    Dataset ds = margin_toy(24, 0.02, 9);
    Encoder f = channel_mean_encoder();
    Classifier head = margin_head();
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        double prev = 2.0;
        for (double eps : {0.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0}) {
            AttackConfig cfg;
            cfg.epsilon = eps;
            cfg.eta = 2.0 / 255.0;
            cfg.k = 10;
            const double acc = robust_accuracy(f, head, ds, cfg, seed);
            CHECK(acc <= prev + 1e-12);
            prev = acc;
        }
        // the largest budget must actually break this thin-margin toy
        CHECK(prev < 0.5);
    }
}

TEST_CASE("evaluation is deterministic given checkpoint, dataset, cfg, seed") {
    Dataset ds = margin_toy(12, 0.05, 10);
    Encoder f = channel_mean_encoder();
    Classifier head = margin_head();
    AttackConfig cfg;
    cfg.k = 5;
    CHECK(robust_accuracy(f, head, ds, cfg, 7) == robust_accuracy(f, head, ds, cfg, 7));
    EvalReport a = evaluate_model(f, head, ds, {cfg}, 7);
    EvalReport b = evaluate_model(f, head, ds, {cfg}, 7);
    CHECK(format_eval_report(a) == format_eval_report(b));
}

TEST_CASE("empty dataset is an error") {
    Dataset empty;
    empty.n_classes = 2;
    Encoder f = channel_mean_encoder();
    Classifier head = margin_head();
    CHECK_THROWS_AS(clean_accuracy(f, head, empty), Error);
    CHECK_THROWS_AS(robust_accuracy(f, head, empty, AttackConfig{}, 1), Error);
}

TEST_CASE("eval report format is a flat key-value block") {
    EvalReport r;
    r.samples = 500;
    r.clean_acc = 0.912;
    AttackConfig a;
    a.epsilon = 8.0 / 255.0;
    r.robust.push_back({a, 0.55});
    const std::string s = format_eval_report(r);
    CHECK(s.find("samples = 500\n") != std::string::npos);
    CHECK(s.find("clean_acc = 0.912000\n") != std::string::npos);
    CHECK(s.find("attack0.eps = 0.0313725") != std::string::npos);
    CHECK(s.find("attack0.robust_acc = 0.550000\n") != std::string::npos);
    CHECK(r.robust_at(8.0 / 255.0) == 0.55);
    CHECK(r.robust_at(0.5) == -1.0);
}

TEST_CASE("ablation arms differ only in the documented switch") {
    RunConfig base;
    for (const std::string& name : kAblationNames) {
        AblationOutcome o = make_ablation_arms(name, base);
        auto diff = config_diff(o.arm_a, o.arm_b);
        REQUIRE(diff.size() == 1);
        CHECK(diff[0] == o.switch_key);
        CHECK(o.arm_a.seed == o.arm_b.seed);
    }
    CHECK_THROWS_WITH_AS(make_ablation_arms("bogus", base), doctest::Contains("unknown ablation"),
                         Error);
}

TEST_CASE("classifier_nat_vs_adv arms flip exactly the retrain switch") {
    RunConfig base;
    AblationOutcome o = make_ablation_arms("classifier_nat_vs_adv", base);
    CHECK(o.arm_a.classifier_training == "natural");
    CHECK(o.arm_b.classifier_training == "adversarial");
    CHECK(o.switch_key == "classifier_training");
}
