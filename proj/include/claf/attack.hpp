#pragma once

#include <functional>
#include <string>
#include <vector>

#include "claf/model.hpp"
#include "claf/rng.hpp"
#include "claf/tensor.hpp"

namespace claf {

// l-inf attack budget in raw pixel units (models normalize internally, so
// epsilon = 8/255 means the usual thing).
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double eta = 2.0 / 255.0;
    int k = 5;
    bool random_start = true;
    int restarts = 1;
    std::string norm = "linf";

    void validate() const;
};

// clamp(clamp(cand, orig - eps, orig + eps), 0, 1); idempotent.
Tensor project_linf(const Tensor& cand, const Tensor& orig, double epsilon);

// Differentiable model surface the attacks climb: batch input -> logits.
using LogitsFn = std::function<DiffTensor(Tape&, const DiffTensor&)>;

// Single sign-gradient step: project(x + eps * sign(dCE/dx)).
Tensor fgsm(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y, double epsilon);
Tensor fgsm(const Encoder& f, const Classifier& c, const Tensor& x, const std::vector<int>& y,
            double epsilon);

// Iterated sign-gradient ascent with projection, optional uniform random
// start (noise for row i drawn from rng.fork(restart * B + i)). With
// restarts > 1 the per-sample candidate with the highest cross-entropy wins.
// Model parameters are read-only throughout.
Tensor pgd(const LogitsFn& fwd, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, const Rng& rng);
Tensor pgd(const Encoder& f, const Classifier& c, const Tensor& x, const std::vector<int>& y,
           const AttackConfig& cfg, const Rng& rng);

// The encoder+classifier pipeline as a LogitsFn (parameters bound without
// gradients; only the input carries them).
LogitsFn model_logits_fn(const Encoder& f, const Classifier& c);

}  // namespace claf
