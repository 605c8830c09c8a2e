#include "claf/gradcheck.hpp"

#include <cmath>

#include "claf/loss.hpp"
#include "claf/model.hpp"
#include "claf/rng.hpp"

namespace claf {

GradReport check_gradient(const ScalarGraphFn& f, const std::vector<Tensor>& points, double h) {
    if (points.empty()) throw Error("check_gradient: no points");
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<DiffTensor> leaves;
        leaves.reserve(points.size());
        for (const Tensor& p : points) leaves.push_back(tape.leaf(p, true));
        DiffTensor out = f(tape, leaves);
        if (out.value().numel() != 1)
            throw Error("check_gradient: function output has shape " + shape_str(out.shape()) +
                        ", expected scalar");
        tape.backward(out);
        for (const DiffTensor& l : leaves)
            analytic.push_back(tape.has_grad(l) ? tape.grad(l) : Tensor(l.shape()));
    }

    auto eval_at = [&](const std::vector<Tensor>& pts) {
        Tape tape;
        std::vector<DiffTensor> leaves;
        for (const Tensor& p : pts) leaves.push_back(tape.constant(p));
        return f(tape, leaves).value().data[0];
    };

    GradReport rep;
    std::vector<Tensor> probe = points;
    for (std::size_t t = 0; t < points.size(); ++t) {
        for (std::size_t i = 0; i < points[t].numel(); ++i) {
            const double orig = probe[t].data[i];
            probe[t].data[i] = orig + h;
            const double fp = eval_at(probe);
            probe[t].data[i] = orig - h;
            const double fm = eval_at(probe);
            probe[t].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[t].data[i];
            const double abs_err = std::fabs(a - numeric);
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
            ++rep.probes;
        }
    }
    return rep;
}

GradReport check_gradient(const std::function<DiffTensor(Tape&, const DiffTensor&)>& f,
                          const Tensor& point, double h) {
    return check_gradient(
        [&f](Tape& t, const std::vector<DiffTensor>& xs) { return f(t, xs[0]); }, {point}, h);
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kTol = 1e-4;
constexpr double kH = 1e-5;

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// uniform magnitude in [margin, hi], random sign; keeps relu/clamp/sign
// probes away from their kinks
Tensor rand_tensor_away_from(Shape shape, Rng& rng, double margin, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(margin, hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    return t;
}

// Reduces an arbitrary-output function to a scalar via a random weighting.
// The weights are a pure function of the seed so repeated evaluations (the
// finite-difference probes) see the identical function.
DiffTensor pin(Tape& t, const DiffTensor& y, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w(y.shape());
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    return sum(mul(y, t.constant(w)));
}

struct SuiteBuilder {
    std::vector<GradCheckCase> cases;
    Rng root{20240911ULL};

    void run(const std::string& name, const ScalarGraphFn& f, std::vector<Tensor> points,
             double h = kH) {
        GradCheckCase c;
        c.name = name;
        c.report = check_gradient(f, points, h);
        c.pass = c.report.max_rel_err < kTol;
        cases.push_back(std::move(c));
    }
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite() {
    SuiteBuilder s;
    Rng rng = s.root;

    auto pinned = [&](auto op) {
        const std::uint64_t pin_seed = rng.next_u64();
        return [op, pin_seed](Tape& t, const std::vector<DiffTensor>& xs) {
            return pin(t, op(t, xs), pin_seed);
        };
    };

    // elementwise and structural primitives; several instances give each op
    // well over 100 probed coordinates
    for (int inst = 0; inst < 3; ++inst) {
        Rng r = rng.fork(100 + inst);
        const std::string tag = "#" + std::to_string(inst);
        Tensor a = rand_tensor({4, 11}, r);
        Tensor b = rand_tensor({4, 11}, r);
        s.run("add" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return add(xs[0], xs[1]);
              }),
              {a, b});
        s.run("sub" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return sub(xs[0], xs[1]);
              }),
              {a, b});
        s.run("mul" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return mul(xs[0], xs[1]);
              }),
              {a, b});
        s.run("scale" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return scale(xs[0], -1.7);
              }),
              {a});
        s.run("add_scalar" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return add_scalar(xs[0], 0.37);
              }),
              {a});
        s.run("relu" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return relu(xs[0]);
              }),
              {rand_tensor_away_from({6, 9}, r, 0.05, 1.5)});
        s.run("exp" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return claf::exp(xs[0]);
              }),
              {rand_tensor({5, 8}, r)});
        s.run("log" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return claf::log(xs[0]);
              }),
              {rand_tensor({5, 8}, r, 0.2, 2.0)});
        s.run("clamp" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return clamp(xs[0], -0.5, 0.5);
              }),
              {[&] {
                  // keep probes at least 10h away from the clamp edges
                  Tensor t = rand_tensor({6, 9}, r, -1.0, 1.0);
                  for (double& v : t.data)
                      if (std::fabs(std::fabs(v) - 0.5) < 10 * kH) v += 0.01;
                  return t;
              }()});
        s.run("sign" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return sign(xs[0]);
              }),
              {rand_tensor_away_from({6, 9}, r, 0.05, 1.5)});
        s.run("matmul" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return matmul(xs[0], xs[1]);
              }),
              {rand_tensor({4, 6}, r), rand_tensor({6, 5}, r)});
        s.run("transpose2d" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return transpose2d(xs[0]);
              }),
              {rand_tensor({5, 7}, r)});
        s.run("sum" + tag,
              [](Tape&, const std::vector<DiffTensor>& xs) { return sum(xs[0]); },
              {rand_tensor({6, 7}, r)});
        s.run("mean" + tag,
              [](Tape&, const std::vector<DiffTensor>& xs) { return mean(xs[0]); },
              {rand_tensor({6, 7}, r)});
        s.run("row_sum" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return row_sum(xs[0]);
              }),
              {rand_tensor({6, 7}, r)});
        s.run("sub_rowvec" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return sub_rowvec(xs[0], xs[1]);
              }),
              {rand_tensor({6, 7}, r), rand_tensor({6}, r)});
        s.run("concat_rows" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return concat_rows({xs[0], xs[1], xs[2]});
              }),
              {rand_tensor({3, 6}, r), rand_tensor({2, 6}, r), rand_tensor({4, 6}, r)});
        s.run("logsumexp" + tag,
              [](Tape&, const std::vector<DiffTensor>& xs) { return logsumexp(xs[0]); },
              {rand_tensor({37}, r, -2.0, 2.0)});
        s.run("logsumexp_rows" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return logsumexp_rows(xs[0]);
              }),
              {rand_tensor({6, 8}, r, -2.0, 2.0)});
        s.run("masked_logsumexp_rows" + tag, pinned([&r](Tape&, const std::vector<DiffTensor>& xs) {
                  Tensor mask({6, 8});
                  Rng mr(12345);
                  bool any;
                  for (std::size_t i = 0; i < 6; ++i) {
                      any = false;
                      for (std::size_t j = 0; j < 8; ++j) {
                          mask.data[i * 8 + j] = mr.bernoulli(0.6) ? 1.0 : 0.0;
                          any = any || mask.data[i * 8 + j] != 0.0;
                      }
                      if (!any) mask.data[i * 8] = 1.0;
                  }
                  return masked_logsumexp_rows(xs[0], mask);
              }),
              {rand_tensor({6, 8}, r, -2.0, 2.0)});
        s.run("l2_normalize_rows" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return l2_normalize_rows(xs[0]);
              }),
              {rand_tensor_away_from({5, 7}, r, 0.1, 1.5)});
        s.run("softmax_rows" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return softmax_rows(xs[0]);
              }),
              {rand_tensor({5, 7}, r, -2.0, 2.0)});
    }

    // spatial primitives
    for (int inst = 0; inst < 2; ++inst) {
        Rng r = rng.fork(200 + inst);
        const std::string tag = "#" + std::to_string(inst);
        s.run("conv2d_s1p1" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return conv2d(xs[0], xs[1], 1, 1);
              }),
              {rand_tensor({2, 2, 5, 5}, r), rand_tensor({3, 2, 3, 3}, r)});
        s.run("conv2d_s2p0" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return conv2d(xs[0], xs[1], 2, 0);
              }),
              {rand_tensor({2, 2, 6, 6}, r), rand_tensor({3, 2, 3, 3}, r)});
        s.run("bias_add_channels" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return bias_add_channels(xs[0], xs[1]);
              }),
              {rand_tensor({2, 3, 4, 4}, r), rand_tensor({3}, r)});
        s.run("bias_add_rows" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return bias_add_rows(xs[0], xs[1]);
              }),
              {rand_tensor({6, 7}, r), rand_tensor({7}, r)});
        s.run("channel_affine" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return channel_affine(xs[0], {2.0, -1.5, 0.7}, {0.1, 0.0, -0.2});
              }),
              {rand_tensor({2, 3, 4, 4}, r)});
        s.run("maxpool2x2" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return maxpool2x2(xs[0]);
              }),
              // distinct random values make pooling ties measure zero
              {rand_tensor({2, 3, 6, 6}, r)});
        s.run("global_avg_pool" + tag, pinned([](Tape&, const std::vector<DiffTensor>& xs) {
                  return global_avg_pool(xs[0]);
              }),
              {rand_tensor({2, 3, 6, 6}, r)});
    }

    // composed: supervised contrastive loss through row normalization,
    // probed at raw (pre-normalization) latents
    {
        Rng r = rng.fork(300);
        const std::vector<int> labels = {0, 1, 0, 0, 1, 0};  // N=3 multiview labels
        Tensor raw = rand_tensor_away_from({6, 8}, r, 0.1, 1.2);
        s.run("scl_loss_pipeline", [labels](Tape&, const std::vector<DiffTensor>& xs) {
            SCLossInput in;
            in.z = l2_normalize_rows(xs[0]);
            in.labels = labels;
            in.tau = 0.1;
            return scl_loss(in);
        }, {raw});
    }

    // composed: cross-entropy on raw logits
    {
        Rng r = rng.fork(301);
        const std::vector<int> labels = {3, 0, 9, 1, 7};
        s.run("cross_entropy", [labels](Tape&, const std::vector<DiffTensor>& xs) {
            return cross_entropy(xs[0], labels);
        }, {rand_tensor({5, 10}, r, -2.0, 2.0)});
    }

    // composed: cross-entropy through encoder + classifier, first w.r.t. the
    // input image (the attack gradient), then w.r.t. the parameters
    {
        Rng r = rng.fork(302);
        EncoderDef def;
        def.preset = "gradcheck-mini";
        def.layers = {{LayerKind::Conv, 3, 4, 3, 1, 1},
                      {LayerKind::Relu},
                      {LayerKind::MaxPool2},
                      {LayerKind::Conv, 4, 5, 3, 1, 1},
                      {LayerKind::Relu},
                      {LayerKind::GlobalAvgPool}};
        def.out_dim = 5;
        def.norm_mean = {0.49, 0.48, 0.45};
        def.norm_std = {0.25, 0.24, 0.26};
        Encoder f = make_encoder(def, 7);
        Classifier c = make_classifier(5, 3, 7);
        const std::vector<int> labels = {1, 2};
        Tensor x = rand_tensor({2, 3, 8, 8}, r, 0.1, 0.9);

        s.run("ce_through_encoder_wrt_input",
              [&f, &c, labels](Tape& t, const std::vector<DiffTensor>& xs) {
                  BoundParams fb = bind_params(t, f.params, false);
                  BoundParams cb = bind_params(t, c.params, false);
                  return cross_entropy(classify(c, cb, encode(f, fb, xs[0])), labels);
              },
              {x});

        std::vector<Tensor> param_points;
        for (const auto& [n, tns] : f.params.items()) param_points.push_back(tns);
        for (const auto& [n, tns] : c.params.items()) param_points.push_back(tns);
        s.run("ce_through_encoder_wrt_params",
              [&f, &c, labels, &x](Tape& t, const std::vector<DiffTensor>& xs) {
                  BoundParams fb, cb;
                  std::size_t k = 0;
                  for (const auto& [n, tns] : f.params.items()) fb.add(n, xs[k++]);
                  for (const auto& [n, tns] : c.params.items()) cb.add(n, xs[k++]);
                  return cross_entropy(classify(c, cb, encode(f, fb, t.constant(x))), labels);
              },
              param_points);
    }

    // composed: projection head forward (matmul/bias/relu/normalize chain)
    {
        Rng r = rng.fork(303);
        ProjectionHead g = make_projection(6, 5, 4, 11);
        Tensor v = rand_tensor({3, 6}, r, -1.0, 1.0);
        const std::uint64_t pin_seed = rng.fork(304).next_u64();
        s.run("projection_head",
              [&g, &v, pin_seed](Tape& t, const std::vector<DiffTensor>& xs) {
                  BoundParams gb;
                  std::size_t k = 0;
                  for (const auto& [n, tns] : g.params.items()) gb.add(n, xs[k++]);
                  return pin(t, project(g, gb, t.constant(v)), pin_seed);
              },
              [&] {
                  std::vector<Tensor> pts;
                  for (const auto& [n, tns] : g.params.items()) pts.push_back(tns);
                  return pts;
              }());
    }

    return s.cases;
}

bool gradcheck_suite_passed(const std::vector<GradCheckCase>& cases) {
    for (const auto& c : cases)
        if (!c.pass) return false;
    return !cases.empty();
}

}  // namespace claf
