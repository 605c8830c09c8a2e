#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "claf/data.hpp"
#include "support/oracles.hpp"

using namespace claf;

namespace {

LabeledImage toy_image(int label, double fill) {
    LabeledImage img;
    img.label = label;
    img.pixels = Tensor::filled({3, kImageSize, kImageSize}, fill);
    return img;
}

LabeledImage random_image(int label, Rng& rng) {
    LabeledImage img;
    img.label = label;
    img.pixels = oracle::random_tensor({3, kImageSize, kImageSize}, rng, 0.0, 1.0);
    // snap to the 1/255 grid like real records
    for (double& v : img.pixels.data) v = std::round(v * 255.0) / 255.0;
    return img;
}

}  // namespace

TEST_CASE("parse: two all-white records") {
    std::vector<std::uint8_t> bytes;
    for (int label : {0, 7}) {
        bytes.push_back(static_cast<std::uint8_t>(label));
        bytes.insert(bytes.end(), 3072, 255);
    }
    auto images = parse_cifar10(bytes);
    REQUIRE(images.size() == 2);
    CHECK(images[0].label == 0);
    CHECK(images[1].label == 7);
    for (double v : images[0].pixels.data) CHECK(v == 1.0);
    for (double v : images[1].pixels.data) CHECK(v == 1.0);
}

TEST_CASE("parse: truncated file errors with offset") {
    std::vector<std::uint8_t> bytes(3072, 0);
    CHECK_THROWS_WITH_AS(parse_cifar10(bytes), doctest::Contains("offset 0"), Error);
}

TEST_CASE("parse: label byte > 9 errors") {
    std::vector<std::uint8_t> bytes(kCifarRecordBytes, 0);
    bytes[0] = 10;
    CHECK_THROWS_WITH_AS(parse_cifar10(bytes), doctest::Contains("label"), Error);
}

TEST_CASE("parse -> serialize round-trips bytes exactly") {
    Rng rng(42);
    std::vector<std::uint8_t> bytes;
    for (int i = 0; i < 5; ++i) {
        bytes.push_back(static_cast<std::uint8_t>(rng.uniform_int(10)));
        for (int j = 0; j < 3072; ++j)
            bytes.push_back(static_cast<std::uint8_t>(rng.uniform_int(256)));
    }
    auto images = parse_cifar10(bytes);
    auto again = serialize_cifar10(images);
    CHECK(again == bytes);
}

TEST_CASE("augment: all-disabled policy is the identity") {
    Rng rng(1);
    LabeledImage img = random_image(3, rng);
    LabeledImage out = augment(img, AugPolicy::disabled(), Rng(99));
    CHECK(out.label == 3);
    CHECK(out.pixels.data == img.pixels.data);
}

TEST_CASE("augment: flip with p=1 applied twice restores the image") {
    Rng rng(2);
    LabeledImage img = random_image(1, rng);
    AugPolicy p = AugPolicy::disabled();
    p.flip = true;
    p.flip_p = 1.0;
    LabeledImage once = augment(img, p, Rng(5));
    CHECK(once.pixels.data != img.pixels.data);
    LabeledImage twice = augment(once, p, Rng(6));
    CHECK(twice.pixels.data == img.pixels.data);
}

TEST_CASE("augment: crop offsets enumerate the padded canvas") {
    // 4x4 toy image so all (2*pad+1)^2 crops can be enumerated directly
    const int S = 4, pad = 2;
    LabeledImage img;
    img.label = 0;
    img.pixels = Tensor({3, S, S});
    for (std::size_t i = 0; i < img.pixels.numel(); ++i)
        img.pixels.data[i] = static_cast<double>(i + 1) / 64.0;

    // brute force: every crop of the zero-padded canvas
    std::set<std::vector<double>> expected;
    for (int oy = 0; oy <= 2 * pad; ++oy)
        for (int ox = 0; ox <= 2 * pad; ++ox) {
            std::vector<double> out(3 * S * S, 0.0);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        const int sy = y + oy - pad, sx = x + ox - pad;
                        if (sy >= 0 && sy < S && sx >= 0 && sx < S)
                            out[(c * S + y) * S + x] = img.pixels.data[(c * S + sy) * S + sx];
                    }
            expected.insert(out);
        }

    AugPolicy p = AugPolicy::disabled();
    p.crop = true;
    p.crop_pad = pad;
    std::set<std::vector<double>> seen;
    for (int seed = 0; seed < 400; ++seed)
        seen.insert(augment(img, p, Rng(seed)).pixels.data);
    // every observed crop is a legal canvas crop, and sampling covers all of them
    for (const auto& s : seen) CHECK(expected.count(s) == 1);
    CHECK(seen.size() == expected.size());
}

TEST_CASE("augment: pixels stay in [0,1] over 10k randomized trials") {
    Rng rng(7);
    AugPolicy p;  // full default policy
    for (int trial = 0; trial < 10000; ++trial) {
        LabeledImage img = random_image(static_cast<int>(rng.uniform_int(10)), rng);
        LabeledImage out = augment(img, p, Rng(trial));
        CHECK(out.label == img.label);
        double lo = 1e9, hi = -1e9;
        for (double v : out.pixels.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        REQUIRE(lo >= 0.0);
        REQUIRE(hi <= 1.0);
    }
}

TEST_CASE("augment: deterministic for a fixed stream") {
    Rng rng(8);
    LabeledImage img = random_image(2, rng);
    AugPolicy p;
    CHECK(augment(img, p, Rng(1234)).pixels.data == augment(img, p, Rng(1234)).pixels.data);
    // different streams almost surely differ
    CHECK(augment(img, p, Rng(1234)).pixels.data != augment(img, p, Rng(1235)).pixels.data);
}

TEST_CASE("multiview: N=1 gives two views sharing the label") {
    Rng rng(9);
    auto batch = make_multiview_batch({random_image(4, rng)}, AugPolicy{}, Rng(1));
    CHECK(batch.n_views() == 2);
    CHECK(batch.labels[0] == 4);
    CHECK(batch.labels[1] == 4);
    CHECK(batch.origins[0] == ViewOrigin::Aug1);
    CHECK(batch.origins[1] == ViewOrigin::Aug2);
    batch.validate();
}

TEST_CASE("multiview: every view has a nonempty positive set") {
    Rng rng(10);
    std::vector<LabeledImage> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(random_image(i % 2, rng));
    auto batch = make_multiview_batch(samples, AugPolicy{}, Rng(2));
    CHECK(batch.n_views() == 8);
    for (std::size_t i = 0; i < batch.n_views(); ++i)
        CHECK(positive_set(batch, i).size() >= 1);
}

TEST_CASE("multiview: N=3 same class gives |P(i)| = 5 everywhere") {
    Rng rng(11);
    std::vector<LabeledImage> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(random_image(6, rng));
    auto batch = make_multiview_batch(samples, AugPolicy{}, Rng(3));
    for (std::size_t i = 0; i < batch.n_views(); ++i)
        CHECK(positive_set(batch, i).size() == 5);
}

TEST_CASE("multiview: views order is [aug1 block, aug2 block]") {
    Rng rng(12);
    std::vector<LabeledImage> samples = {random_image(0, rng), random_image(1, rng)};
    auto batch = make_multiview_batch(samples, AugPolicy{}, Rng(4));
    CHECK(batch.labels == std::vector<int>{0, 1, 0, 1});
    CHECK(batch.origins[0] == ViewOrigin::Aug1);
    CHECK(batch.origins[1] == ViewOrigin::Aug1);
    CHECK(batch.origins[2] == ViewOrigin::Aug2);
    CHECK(batch.origins[3] == ViewOrigin::Aug2);
}

TEST_CASE("multiview: label-P(i) equals identity-P(i) only when classes are distinct") {
    Rng rng(13);
    // distinct classes: P(i) from labels == sibling views only
    std::vector<LabeledImage> distinct = {random_image(0, rng), random_image(1, rng),
                                          random_image(2, rng)};
    auto b1 = make_multiview_batch(distinct, AugPolicy{}, Rng(5));
    const std::size_t N = 3;
    for (std::size_t i = 0; i < b1.n_views(); ++i) {
        auto P = positive_set(b1, i);
        const std::size_t sibling = i < N ? i + N : i - N;
        REQUIRE(P.size() == 1);
        CHECK(P[0] == sibling);
    }
    // shared class: P(i) strictly larger than the sibling set
    std::vector<LabeledImage> shared = {random_image(1, rng), random_image(1, rng)};
    auto b2 = make_multiview_batch(shared, AugPolicy{}, Rng(6));
    CHECK(positive_set(b2, 0).size() == 3);
}

TEST_CASE("append_adversarial: tags, labels and positive sets") {
    Rng rng(14);
    std::vector<LabeledImage> samples = {random_image(3, rng)};
    auto batch = make_multiview_batch(samples, AugPolicy{}, Rng(7));
    auto with_adv = append_adversarial(batch, {samples[0].pixels});
    CHECK(with_adv.n_views() == 3);
    CHECK(with_adv.origins[2] == ViewOrigin::Adversarial);
    CHECK(with_adv.labels[2] == 3);
    // the adversarial anchor's positive set includes both sibling augmentations
    auto P = positive_set(with_adv, 2);
    CHECK(std::find(P.begin(), P.end(), 0u) != P.end());
    CHECK(std::find(P.begin(), P.end(), 1u) != P.end());

    // size mismatch errors
    CHECK_THROWS_AS(append_adversarial(batch, {samples[0].pixels, samples[0].pixels}), Error);
    // out-of-range pixels error
    Tensor bad = samples[0].pixels;
    bad.data[0] = 1.5;
    CHECK_THROWS_AS(append_adversarial(batch, {bad}), Error);
}

TEST_CASE("adversarial labels equal source labels on random batches") {
    Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<LabeledImage> samples;
        const std::size_t N = 1 + rng.uniform_int(5);
        for (std::size_t i = 0; i < N; ++i)
            samples.push_back(random_image(static_cast<int>(rng.uniform_int(3)), rng));
        auto batch = make_multiview_batch(samples, AugPolicy{}, Rng(trial));
        std::vector<Tensor> adv;
        for (const auto& s : samples) adv.push_back(s.pixels);
        auto full = append_adversarial(batch, adv);
        for (std::size_t i = 0; i < N; ++i) CHECK(full.labels[2 * N + i] == samples[i].label);
    }
}

TEST_CASE("synthetic dataset: deterministic, in range, CIFAR-shaped") {
    Dataset a = synthetic_dataset(2, 20, 99, false);
    Dataset b = synthetic_dataset(2, 20, 99, false);
    REQUIRE(a.items.size() == 40);
    CHECK(a.n_classes == 2);
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        CHECK(a.items[i].label == b.items[i].label);
        CHECK(a.items[i].pixels.data == b.items[i].pixels.data);
        for (double v : a.items[i].pixels.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    // train and test splits differ
    Dataset t = synthetic_dataset(2, 20, 99, true);
    CHECK(t.items[0].pixels.data != a.items[0].pixels.data);
}

TEST_CASE("batch_tensor stacks views") {
    Rng rng(16);
    std::vector<LabeledImage> samples = {random_image(0, rng), random_image(1, rng)};
    auto batch = make_multiview_batch(samples, AugPolicy::disabled(), Rng(8));
    Tensor t = batch_tensor(batch);
    CHECK(t.shape == Shape{4, 3, kImageSize, kImageSize});
    CHECK(std::equal(batch.views[0].data.begin(), batch.views[0].data.end(), t.data.begin()));
}
