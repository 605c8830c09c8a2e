#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "claf/model.hpp"
#include "support/oracles.hpp"

using namespace claf;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("desk encoder has d=64; presets are consistent") {
    CHECK(desk_encoder_def().out_dim == 64);
    CHECK(tiny_encoder_def().out_dim == 16);
    CHECK(micro_encoder_def().out_dim == 12);
    CHECK_THROWS_AS(encoder_def_by_name("resnet"), Error);
}

TEST_CASE("zero-initialized encoder maps any image to v = 0") {
    Encoder f = make_encoder(tiny_encoder_def(), 1);
    for (auto& [name, t] : f.params.items()) std::fill(t.data.begin(), t.data.end(), 0.0);
    Rng rng(2);
    Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor v = encode_value(f, x);
    REQUIRE(v.shape == Shape{2, 16});
    for (double val : v.data) CHECK(val == 0.0);
}

TEST_CASE("identical images in a batch produce identical rows") {
    Encoder f = make_encoder(micro_encoder_def(), 3);
    Rng rng(4);
    Tensor one = oracle::random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor batch({3, 3, 32, 32});
    for (int i = 0; i < 3; ++i)
        std::copy(one.data.begin(), one.data.end(), batch.data.begin() + i * one.numel());
    Tensor v = encode_value(f, batch);
    const std::size_t d = v.shape[1];
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t j = 0; j < d; ++j) CHECK(v.data[i * d + j] == v.data[j]);
}

TEST_CASE("projection rows are unit norm") {
    ProjectionHead g = make_projection(16, 12, 8, 5);
    Rng rng(6);
    Tensor v = oracle::random_tensor({4, 16}, rng);
    Tape tape;
    BoundParams gb = bind_params(tape, g.params, false);
    Tensor z = project(g, gb, tape.constant(v)).value();
    for (std::size_t i = 0; i < 4; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < 8; ++j) norm += z.data[i * 8 + j] * z.data[i * 8 + j];
        CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-12);
    }
}

TEST_CASE("projection is scale-invariant when linear without bias") {
    ProjectionHead g = make_projection(6, 5, 4, 7);
    std::fill(g.params.at("b1").data.begin(), g.params.at("b1").data.end(), 0.0);
    std::fill(g.params.at("b2").data.begin(), g.params.at("b2").data.end(), 0.0);
    Rng rng(8);
    // positive activations keep relu linear on the ray
    Tensor v = oracle::random_tensor({3, 6}, rng, 0.1, 1.0);
    Tensor v2 = v;
    for (double& x : v2.data) x *= 2.0;
    Tape tape;
    BoundParams gb = bind_params(tape, g.params, false);
    Tensor z1 = project(g, gb, tape.constant(v)).value();
    Tensor z2 = project(g, gb, tape.constant(v2)).value();
    for (std::size_t i = 0; i < z1.data.size(); ++i)
        CHECK(z1.data[i] == doctest::Approx(z2.data[i]).epsilon(1e-12));
}

TEST_CASE("projection forward matches the scalar-loop oracle") {
    ProjectionHead g = make_projection(7, 6, 5, 9);
    Rng rng(10);
    Tensor v = oracle::random_tensor({4, 7}, rng);
    Tape tape;
    BoundParams gb = bind_params(tape, g.params, false);
    Tensor got = project(g, gb, tape.constant(v)).value();
    Tensor want = oracle::projection_reference(v, g.params.at("w1"), g.params.at("b1"),
                                               g.params.at("w2"), g.params.at("b2"));
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::fabs(got.data[i] - want.data[i]) < 1e-12);
}

TEST_CASE("classifier: zero input and bias give uniform softmax; n = 10") {
    Classifier c = make_classifier(16, 10, 11);
    CHECK(c.n_classes == 10);
    Tape tape;
    BoundParams cb = bind_params(tape, c.params, false);
    Tensor logits = classify(c, cb, tape.constant(Tensor({2, 16}))).value();
    REQUIRE(logits.shape == Shape{2, 10});
    for (double v : logits.data) CHECK(v == 0.0);  // zero biases by construction
}

TEST_CASE("classifier forward matches the scalar-loop oracle") {
    Classifier c = make_classifier(9, 4, 13);
    Rng rng(14);
    Tensor v = oracle::random_tensor({5, 9}, rng);
    Tape tape;
    BoundParams cb = bind_params(tape, c.params, false);
    Tensor got = classify(c, cb, tape.constant(v)).value();
    Tensor want = oracle::classifier_reference(v, c.params.at("w"), c.params.at("b"));
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::fabs(got.data[i] - want.data[i]) < 1e-12);
}

TEST_CASE("init: deterministic per seed, differing across seeds") {
    Encoder a = make_encoder(tiny_encoder_def(), 42);
    Encoder b = make_encoder(tiny_encoder_def(), 42);
    Encoder c = make_encoder(tiny_encoder_def(), 43);
    CHECK(a.params.hash() == b.params.hash());
    CHECK(a.params.hash() != c.params.hash());
}

TEST_CASE("init: weight variance approximates 2/fan_in") {
    // a large layer so the sample variance is tight
    ProjectionHead g = make_projection(128, 256, 8, 77);
    const Tensor& w = g.params.at("w1");  // 128*256 = 32768 entries, fan_in 128
    REQUIRE(w.numel() == 32768);
    double mean = 0.0;
    for (double v : w.data) mean += v;
    mean /= static_cast<double>(w.numel());
    double var = 0.0;
    for (double v : w.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.numel());
    const double want = 2.0 / 128.0;
    CHECK(var > 0.9 * want);
    CHECK(var < 1.1 * want);
    // biases start at zero
    for (double v : g.params.at("b1").data) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Checkpoint ckpt;
    Rng rng(15);
    ckpt.add_tensor("enc.conv0.w", oracle::random_tensor({4, 3, 3, 3}, rng));
    ckpt.add_tensor("scalar", Tensor::scalar(-0.125));
    ckpt.set_meta("stage", "2");
    ckpt.set_meta("note", "with = signs and\nnewlines");
    const std::string path = tmp_path("claf_test_roundtrip.ckpt");
    save_checkpoint(path, ckpt);
    Checkpoint back = load_checkpoint(path);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "enc.conv0.w");
    CHECK(back.tensors[0].second.shape == Shape{4, 3, 3, 3});
    CHECK(back.tensors[0].second.data == ckpt.tensors[0].second.data);
    CHECK(back.tensors[1].second.item() == -0.125);
    CHECK(back.meta_or("note", "") == "with = signs and\nnewlines");

    // saving the loaded checkpoint reproduces the file byte for byte
    const std::string path2 = tmp_path("claf_test_roundtrip2.ckpt");
    save_checkpoint(path2, back);
    CHECK(file_hash(path) == file_hash(path2));
}

TEST_CASE("checkpoint: corrupt magic, version, truncation, shape mismatch") {
    const std::string path = tmp_path("claf_test_bad.ckpt");
    Checkpoint ckpt;
    ckpt.add_tensor("w", Tensor({2, 2}, {1, 2, 3, 4}));
    save_checkpoint(path, ckpt);

    auto clobber = [&](std::size_t off, char byte) {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(static_cast<std::streamoff>(off));
        fs.write(&byte, 1);
    };
    clobber(0, 'X');
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), Error);
    clobber(0, 'C');
    clobber(4, 9);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), Error);

    save_checkpoint(path, ckpt);
    {
        // drop the last 8 bytes
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), Error);

    save_checkpoint(path, ckpt);
    ParamMap wrong;
    wrong.add("w", Tensor({4}));
    Checkpoint good = load_checkpoint(path);
    CHECK_THROWS_WITH_AS(load_params(good, "", wrong), doctest::Contains("shape"), Error);
    ParamMap missing;
    missing.add("nope", Tensor({2, 2}));
    CHECK_THROWS_WITH_AS(load_params(good, "", missing), doctest::Contains("missing"), Error);
}

TEST_CASE("encode validates input rank") {
    Encoder f = make_encoder(micro_encoder_def(), 1);
    CHECK_THROWS_AS(encode_value(f, Tensor({3, 32, 32})), Error);
}

TEST_CASE("frozen binding leaves no gradients on parameters") {
    Encoder f = make_encoder(micro_encoder_def(), 2);
    Rng rng(16);
    Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    const std::uint64_t before = f.params.hash();
    Tape tape;
    BoundParams fb = bind_params(tape, f.params, false);
    DiffTensor v = encode(f, fb, tape.leaf(x, true));
    tape.backward(mean(v));
    CHECK(!tape.has_grad(fb.at("conv0.w")));
    CHECK(f.params.hash() == before);
}
