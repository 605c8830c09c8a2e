#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "claf/tape.hpp"
#include "claf/tensor.hpp"
#include "support/oracles.hpp"

using namespace claf;

TEST_CASE("tensor shape/data consistency") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), Error);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    CHECK(shape_str({2, 3, 4}) == "[2,3,4]");
}

TEST_CASE("matmul identity returns the operand") {
    Rng rng(7);
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0;
    Tensor a = oracle::random_tensor({3, 3}, rng);
    Tape tape;
    DiffTensor out = matmul(tape.constant(eye), tape.constant(a));
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.value().data[i] == doctest::Approx(a.data[i]));
}

TEST_CASE("relu clips negatives") {
    Tape tape;
    DiffTensor out = relu(tape.constant(Tensor({2}, {-1.0, 2.0})));
    CHECK(out.value().data[0] == 0.0);
    CHECK(out.value().data[1] == 2.0);
}

TEST_CASE("softmax of constant vector is uniform") {
    Tape tape;
    DiffTensor out = softmax(tape.constant(Tensor({4}, {0.0, 0.0, 0.0, 0.0})));
    for (int i = 0; i < 4; ++i) CHECK(out.value().data[i] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("evaluate is pure: identical bindings give bit-identical outputs") {
    Rng rng(11);
    Tensor x = oracle::random_tensor({2, 3, 6, 6}, rng, 0.0, 1.0);
    Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
    auto run_once = [&]() {
        Tape tape;
        DiffTensor out = global_avg_pool(
            maxpool2x2(relu(conv2d(tape.constant(x), tape.constant(w), 1, 1))));
        return out.value();
    };
    Tensor a = run_once();
    Tensor b = run_once();
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("backward: d(x*x)/dx at 3 is 6") {
    Tape tape;
    DiffTensor x = tape.leaf(Tensor::scalar(3.0), true);
    tape.backward(mul(x, x));
    CHECK(tape.grad(x).data[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: relu subgradient is 0 below the kink") {
    Tape tape;
    DiffTensor x = tape.leaf(Tensor({2}, {-1.0, 2.0}), true);
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x).data[0] == 0.0);
    CHECK(tape.grad(x).data[1] == 1.0);
}

TEST_CASE("backward: gradient of log-sum-exp equals softmax (finite differences)") {
    const Tensor v({3}, {0.3, -1.2, 2.0});
    Tape tape;
    DiffTensor x = tape.leaf(v, true);
    tape.backward(logsumexp(x));
    const Tensor& g = tape.grad(x);

    // central differences, h = 1e-5
    const double h = 1e-5;
    for (std::size_t i = 0; i < 3; ++i) {
        auto f = [&](double delta) {
            Tensor p = v;
            p.data[i] += delta;
            Tape t2;
            return logsumexp(t2.constant(p)).value().item();
        };
        const double numeric = (f(h) - f(-h)) / (2.0 * h);
        CHECK(g.data[i] == doctest::Approx(numeric).epsilon(1e-7));
    }
    // and the closed form: softmax of v
    double denom = 0.0;
    for (double vi : v.data) denom += std::exp(vi);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(g.data[i] == doctest::Approx(std::exp(v.data[i]) / denom).epsilon(1e-12));
}

TEST_CASE("backward: fan-out of degree 3 sums three contributions") {
    Tape tape;
    DiffTensor x = tape.leaf(Tensor::scalar(1.5), true);
    tape.backward(add(add(x, x), x));
    CHECK(tape.grad(x).data[0] == 3.0);
}

TEST_CASE("backward rejects non-scalar seed") {
    Tape tape;
    DiffTensor x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
    DiffTensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("gradients exist only after backward and only with requires_grad") {
    Tape tape;
    DiffTensor a = tape.leaf(Tensor::scalar(2.0), true);
    DiffTensor b = tape.leaf(Tensor::scalar(5.0), false);
    CHECK(!tape.has_grad(a));
    CHECK_THROWS_AS(tape.grad(a), Error);
    tape.backward(mul(a, b));
    CHECK(tape.has_grad(a));
    CHECK(tape.grad(a).data[0] == 5.0);
    CHECK_THROWS_AS(tape.grad(b), Error);
}

TEST_CASE("log-sum-exp is overflow-safe") {
    Tensor v({4}, {0.1, -0.7, 1.3, 0.4});
    Tensor shifted = v;
    for (double& x : shifted.data) x += 1e4;

    auto softmax_of = [](const Tensor& t) {
        Tape tape;
        return softmax(tape.constant(t)).value();
    };
    Tensor s1 = softmax_of(v);
    Tensor s2 = softmax_of(shifted);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::isfinite(s2.data[i]));
        CHECK(std::fabs(s1.data[i] - s2.data[i]) < 1e-12);
    }
}

TEST_CASE("shape mismatches raise structured errors naming the op") {
    Tape tape;
    DiffTensor a = tape.constant(Tensor({2, 3}));
    DiffTensor b = tape.constant(Tensor({3, 3}));
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), Error);
    CHECK_THROWS_WITH_AS(matmul(b, a), doctest::Contains("matmul"), Error);
    DiffTensor m = tape.constant(Tensor({2, 2}));
    CHECK_THROWS_WITH_AS(matmul(a, m), doctest::Contains("[2,3]"), Error);
}

TEST_CASE("maxpool and pooling shapes") {
    Rng rng(3);
    Tensor x = oracle::random_tensor({1, 2, 4, 4}, rng);
    Tape tape;
    DiffTensor p = maxpool2x2(tape.constant(x));
    CHECK(p.shape() == Shape{1, 2, 2, 2});
    DiffTensor gap = global_avg_pool(tape.constant(x));
    CHECK(gap.shape() == Shape{1, 2});
    // gap value against a direct mean
    double m = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += x.data[i];
    CHECK(gap.value().data[0] == doctest::Approx(m / 16.0).epsilon(1e-15));
}

TEST_CASE("conv2d stride and padding output dims") {
    Tape tape;
    DiffTensor x = tape.constant(Tensor({1, 1, 5, 5}));
    DiffTensor w = tape.constant(Tensor({1, 1, 3, 3}));
    CHECK(conv2d(x, w, 1, 1).shape() == Shape{1, 1, 5, 5});
    CHECK(conv2d(x, w, 2, 1).shape() == Shape{1, 1, 3, 3});
    CHECK(conv2d(x, w, 1, 0).shape() == Shape{1, 1, 3, 3});
}

TEST_CASE("conv2d matches a direct loop on a small case") {
    Rng rng(17);
    Tensor x = oracle::random_tensor({2, 2, 4, 4}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
    Tape tape;
    Tensor got = conv2d(tape.constant(x), tape.constant(w), 1, 1).value();
    for (int b = 0; b < 2; ++b)
        for (int oc = 0; oc < 3; ++oc)
            for (int oy = 0; oy < 4; ++oy)
                for (int ox = 0; ox < 4; ++ox) {
                    double s = 0.0;
                    for (int ic = 0; ic < 2; ++ic)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy + ky - 1, ix = ox + kx - 1;
                                if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
                                s += x.data[((b * 2 + ic) * 4 + iy) * 4 + ix] *
                                     w.data[((oc * 2 + ic) * 3 + ky) * 3 + kx];
                            }
                    CHECK(got.data[((b * 3 + oc) * 4 + oy) * 4 + ox] ==
                          doctest::Approx(s).epsilon(1e-12));
                }
}

TEST_CASE("l2_normalize_rows errors on a zero row") {
    Tape tape;
    CHECK_THROWS_WITH_AS(l2_normalize_rows(tape.constant(Tensor({2, 3}))),
                         doctest::Contains("degenerate"), Error);
}

TEST_CASE("masked logsumexp errors on an empty row") {
    Tape tape;
    Tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor mask({2, 2}, {1.0, 0.0, 0.0, 0.0});
    CHECK_THROWS_AS(masked_logsumexp_rows(tape.constant(x), mask), Error);
}

TEST_CASE("one backward pass per tape") {
    Tape tape;
    DiffTensor x = tape.leaf(Tensor::scalar(1.0), true);
    DiffTensor y = mul(x, x);
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("clamp and sign forward semantics") {
    Tape tape;
    Tensor x({5}, {-2.0, -0.2, 0.0, 0.3, 7.0});
    Tensor c = clamp(tape.constant(x), -0.5, 0.5).value();
    CHECK(c.data[0] == -0.5);
    CHECK(c.data[1] == -0.2);
    CHECK(c.data[4] == 0.5);
    Tensor s = sign(tape.constant(x)).value();
    CHECK(s.data[0] == -1.0);
    CHECK(s.data[2] == 0.0);
    CHECK(s.data[4] == 1.0);
}

TEST_CASE("concat_rows stacks blocks in order") {
    Tape tape;
    DiffTensor a = tape.leaf(Tensor({1, 2}, {1.0, 2.0}), true);
    DiffTensor b = tape.leaf(Tensor({2, 2}, {3.0, 4.0, 5.0, 6.0}), true);
    DiffTensor cat = concat_rows({a, b});
    REQUIRE(cat.shape() == Shape{3, 2});
    CHECK(cat.value().data[0] == 1.0);
    CHECK(cat.value().data[5] == 6.0);
    // gradient splits back
    Tensor w({3, 2}, {1.0, 1.0, 2.0, 2.0, 3.0, 3.0});
    tape.backward(sum(mul(cat, tape.constant(w))));
    CHECK(tape.grad(a).data[0] == 1.0);
    CHECK(tape.grad(b).data[2] == 3.0);
}
