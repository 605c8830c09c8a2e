#include "claf/attack.hpp"

#include <algorithm>
#include <cmath>

#include "claf/loss.hpp"

namespace claf {

void AttackConfig::validate() const {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw Error("AttackConfig: epsilon " + std::to_string(epsilon) + " outside [0,1]");
    if (eta < 0.0) throw Error("AttackConfig: negative eta");
    if (k < 0) throw Error("AttackConfig: negative step count");
    if (restarts < 1) throw Error("AttackConfig: restarts must be >= 1");
    if (norm != "linf") throw Error("AttackConfig: unsupported norm '" + norm + "'");
}

Tensor project_linf(const Tensor& cand, const Tensor& orig, double epsilon) {
    if (cand.shape != orig.shape)
        throw Error("project_linf: shape mismatch " + shape_str(cand.shape) + " vs " +
                    shape_str(orig.shape));
    Tensor out = cand;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double lo = orig.data[i] - epsilon;
        const double hi = orig.data[i] + epsilon;
        out.data[i] = std::min(std::max(out.data[i], lo), hi);
        out.data[i] = std::min(std::max(out.data[i], 0.0), 1.0);
    }
    return out;
}

LogitsFn model_logits_fn(const Encoder& f, const Classifier& c) {
    return [&f, &c](Tape& tape, const DiffTensor& x) {
        BoundParams fb = bind_params(tape, f.params, false);
        BoundParams cb = bind_params(tape, c.params, false);
        return classify(c, cb, encode(f, fb, x));
    };
}

namespace {

// dCE/dx at the given point
Tensor input_gradient(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y) {
    Tape tape;
    DiffTensor xa = tape.leaf(x, true);
    DiffTensor loss = cross_entropy(fwd(tape, xa), y);
    tape.backward(loss);
    return tape.grad(xa);
}

Tensor sign_step(const Tensor& x, const Tensor& g, double step) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double gi = g.data[i];
        out.data[i] += step * (gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0));
    }
    return out;
}

std::vector<double> per_row_ce(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y) {
    Tape tape;
    return cross_entropy_per_row(fwd(tape, tape.constant(x)).value(), y);
}

}  // namespace

Tensor fgsm(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y, double epsilon) {
    Tensor g = input_gradient(fwd, x, y);
    return project_linf(sign_step(x, g, epsilon), x, epsilon);
}

Tensor fgsm(const Encoder& f, const Classifier& c, const Tensor& x, const std::vector<int>& y,
            double epsilon) {
    return fgsm(model_logits_fn(f, c), x, y, epsilon);
}

Tensor pgd(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, const Rng& rng) {
    cfg.validate();
    if (x.shape.empty() || x.shape[0] != y.size())
        throw Error("pgd: batch of " + shape_str(x.shape) + " with " + std::to_string(y.size()) +
                    " labels");
    const std::size_t B = x.shape[0];
    const std::size_t row = x.numel() / B;

    Tensor best;
    std::vector<double> best_ce;
    for (int r = 0; r < cfg.restarts; ++r) {
        Tensor xa = x;
        if (cfg.random_start) {
            for (std::size_t i = 0; i < B; ++i) {
                Rng noise = rng.fork(static_cast<std::uint64_t>(r) * B + i);
                double* d = xa.data.data() + i * row;
                for (std::size_t j = 0; j < row; ++j)
                    d[j] += noise.uniform(-cfg.epsilon, cfg.epsilon);
            }
            xa = project_linf(xa, x, cfg.epsilon);
        }
        for (int step = 0; step < cfg.k; ++step) {
            Tensor g = input_gradient(fwd, xa, y);
            xa = project_linf(sign_step(xa, g, cfg.eta), x, cfg.epsilon);
        }
        if (cfg.restarts == 1) return xa;
        std::vector<double> ce = per_row_ce(fwd, xa, y);
        if (r == 0) {
            best = xa;
            best_ce = ce;
        } else {
            for (std::size_t i = 0; i < B; ++i)
                if (ce[i] > best_ce[i]) {
                    best_ce[i] = ce[i];
                    std::copy(xa.data.begin() + i * row, xa.data.begin() + (i + 1) * row,
                              best.data.begin() + i * row);
                }
        }
    }
    return best;
}

Tensor pgd(const Encoder& f, const Classifier& c, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, const Rng& rng) {
    return pgd(model_logits_fn(f, c), x, y, cfg, rng);
}

}  // namespace claf
