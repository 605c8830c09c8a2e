#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "claf/attack.hpp"
#include "claf/loss.hpp"
#include "support/oracles.hpp"

using namespace claf;

namespace {

// flat x: [1,d] -> logits [1,2] through a fixed linear map
LogitsFn linear_logits(const oracle::LinearBinaryModel& m) {
    return [&m](Tape& t, const DiffTensor& x) {
        return bias_add_rows(matmul(x, t.constant(m.w)), t.constant(m.b));
    };
}

double model_ce(const oracle::LinearBinaryModel& m, const Tensor& x, int y) {
    std::vector<double> flat(x.data.begin(), x.data.end());
    return oracle::linear_ce(m, flat, y);
}

}  // namespace

TEST_CASE("project_linf basics") {
    Rng rng(1);
    Tensor x0 = oracle::random_tensor({8}, rng, 0.2, 0.8);
    const double eps = 8.0 / 255.0;

    // inside the ball: unchanged
    Tensor inside = x0;
    inside.data[3] += eps / 2;
    Tensor p = project_linf(inside, x0, eps);
    CHECK(p.data == inside.data);

    // x0 + 1 everywhere clips to x0 + eps (then to 1)
    Tensor far = x0;
    for (double& v : far.data) v += 1.0;
    Tensor q = project_linf(far, x0, eps);
    for (std::size_t i = 0; i < q.data.size(); ++i)
        CHECK(q.data[i] == doctest::Approx(std::min(1.0, x0.data[i] + eps)).epsilon(1e-15));

    // idempotent on random inputs
    for (int trial = 0; trial < 100; ++trial) {
        Tensor cand = oracle::random_tensor({8}, rng, -0.5, 1.5);
        Tensor once = project_linf(cand, x0, eps);
        Tensor twice = project_linf(once, x0, eps);
        CHECK(once.data == twice.data);
    }

    CHECK_THROWS_AS(project_linf(Tensor({3}), Tensor({4}), eps), Error);
}

TEST_CASE("fgsm with eps=0 returns x unchanged") {
    Rng rng(2);
    oracle::LinearBinaryModel m{oracle::random_tensor({6, 2}, rng), oracle::random_tensor({2}, rng)};
    Tensor x = oracle::random_tensor({1, 6}, rng, 0.0, 1.0);
    Tensor adv = fgsm(linear_logits(m), x, {0}, 0.0);
    CHECK(adv.data == x.data);
}

TEST_CASE("fgsm attains the exact l-inf maximum on binary linear models") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 2 + rng.uniform_int(9);  // d <= 10
        oracle::LinearBinaryModel m{oracle::random_tensor({d, 2}, rng),
                                    oracle::random_tensor({2}, rng)};
        Tensor x = oracle::random_tensor({1, d}, rng, 0.05, 0.95);
        const int y = static_cast<int>(rng.uniform_int(2));
        const double eps = 0.1;

        Tensor adv = fgsm(linear_logits(m), x, {y}, eps);
        std::vector<double> x0(x.data.begin(), x.data.end());
        auto best = oracle::max_ce_over_corners(m, x0, y, eps);
        const double got = model_ce(m, adv, y);
        CHECK(got >= best.ce - 1e-9);
        for (std::size_t i = 0; i < d; ++i)
            CHECK(std::fabs(adv.data[i] - best.x[i]) < 1e-12);
    }
}

TEST_CASE("fgsm containment over random cases") {
    Rng rng(4);
    oracle::LinearBinaryModel m{oracle::random_tensor({5, 2}, rng), oracle::random_tensor({2}, rng)};
    const double eps = 8.0 / 255.0;
    for (int trial = 0; trial < 200; ++trial) {
        Tensor x = oracle::random_tensor({1, 5}, rng, 0.0, 1.0);
        Tensor adv = fgsm(linear_logits(m), x, {static_cast<int>(rng.uniform_int(2))}, eps);
        for (std::size_t i = 0; i < adv.data.size(); ++i) {
            CHECK(std::fabs(adv.data[i] - x.data[i]) <= eps + 1e-9);
            CHECK(adv.data[i] >= 0.0);
            CHECK(adv.data[i] <= 1.0);
        }
    }
}

TEST_CASE("pgd with k=0 and no random start returns x") {
    Rng rng(5);
    oracle::LinearBinaryModel m{oracle::random_tensor({4, 2}, rng), oracle::random_tensor({2}, rng)};
    Tensor x = oracle::random_tensor({2, 4}, rng, 0.0, 1.0);
    AttackConfig cfg;
    cfg.k = 0;
    cfg.random_start = false;
    Tensor adv = pgd(linear_logits(m), x, {0, 1}, cfg, Rng(1));
    CHECK(adv.data == x.data);
}

TEST_CASE("pgd with one big step equals fgsm on random models") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 3 + rng.uniform_int(5);
        oracle::LinearBinaryModel m{oracle::random_tensor({d, 2}, rng),
                                    oracle::random_tensor({2}, rng)};
        Tensor x = oracle::random_tensor({1, d}, rng, 0.1, 0.9);
        const int y = static_cast<int>(rng.uniform_int(2));
        AttackConfig cfg;
        cfg.epsilon = 0.05;
        cfg.eta = 0.08;  // eta >= eps: one step reaches the corner
        cfg.k = 1;
        cfg.random_start = false;
        Tensor a = pgd(linear_logits(m), x, {y}, cfg, Rng(trial));
        Tensor b = fgsm(linear_logits(m), x, {y}, cfg.epsilon);
        for (std::size_t i = 0; i < d; ++i) CHECK(std::fabs(a.data[i] - b.data[i]) < 1e-12);
    }
}

TEST_CASE("pgd containment and purity on a real model") {
    Encoder f = make_encoder(micro_encoder_def(), 7);
    Classifier c = make_classifier(12, 2, 7);
    const std::uint64_t fh = f.params.hash(), ch = c.params.hash();
    Rng rng(8);
    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.eta = 2.0 / 255.0;
    cfg.k = 3;
    Tensor x = oracle::random_tensor({4, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor adv = pgd(f, c, x, {0, 1, 0, 1}, cfg, Rng(9));
    for (std::size_t i = 0; i < adv.data.size(); ++i) {
        CHECK(std::fabs(adv.data[i] - x.data[i]) <= cfg.epsilon + 1e-9);
        CHECK(adv.data[i] >= 0.0);
        CHECK(adv.data[i] <= 1.0);
    }
    CHECK(f.params.hash() == fh);
    CHECK(c.params.hash() == ch);
}

TEST_CASE("pgd non-degradation on linear models without random start") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 4 + rng.uniform_int(4);
        oracle::LinearBinaryModel m{oracle::random_tensor({d, 2}, rng),
                                    oracle::random_tensor({2}, rng)};
        Tensor x = oracle::random_tensor({1, d}, rng, 0.1, 0.9);
        const int y = static_cast<int>(rng.uniform_int(2));
        AttackConfig cfg;
        cfg.epsilon = 0.06;
        cfg.eta = 0.01;
        cfg.k = 1 + static_cast<int>(rng.uniform_int(8));
        cfg.random_start = false;
        Tensor adv = pgd(linear_logits(m), x, {y}, cfg, Rng(trial));
        CHECK(model_ce(m, adv, y) >= model_ce(m, x, y) - 1e-12);
    }
}

TEST_CASE("pgd determinism: same seed, same output; restarts keep the best") {
    Encoder f = make_encoder(micro_encoder_def(), 11);
    Classifier c = make_classifier(12, 2, 11);
    Rng rng(12);
    Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    AttackConfig cfg;
    cfg.k = 2;
    Tensor a = pgd(f, c, x, {0, 1}, cfg, Rng(77));
    Tensor b = pgd(f, c, x, {0, 1}, cfg, Rng(77));
    CHECK(a.data == b.data);
    Tensor d2 = pgd(f, c, x, {0, 1}, cfg, Rng(78));
    CHECK(a.data != d2.data);

    // multiple restarts never produce a lower per-sample CE than one restart
    AttackConfig multi = cfg;
    multi.restarts = 3;
    Tensor m1 = pgd(f, c, x, {0, 1}, cfg, Rng(79));
    Tensor m3 = pgd(f, c, x, {0, 1}, multi, Rng(79));
    auto fwd = model_logits_fn(f, c);
    Tape t1, t3;
    auto ce1 = cross_entropy_per_row(fwd(t1, t1.constant(m1)).value(), {0, 1});
    auto ce3 = cross_entropy_per_row(fwd(t3, t3.constant(m3)).value(), {0, 1});
    for (std::size_t i = 0; i < 2; ++i) CHECK(ce3[i] >= ce1[i] - 1e-12);
}

TEST_CASE("attack config validation") {
    AttackConfig cfg;
    cfg.epsilon = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = AttackConfig{};
    cfg.norm = "l2";
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = AttackConfig{};
    cfg.k = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
