#pragma once

#include <vector>

#include "claf/tape.hpp"

namespace claf {

// Inputs to the supervised contrastive loss over a multiview batch:
// z holds one unit-norm latent row per view, labels one class id per view.
struct SCLossInput {
    DiffTensor z;             // [views, p], rows unit L2 norm
    std::vector<int> labels;  // per view
    double tau = 0.1;         // temperature, > 0
};

// Sum over anchors i of -1/|P(i)| * sum_{p in P(i)} log( exp(z_i.z_p / tau)
// / sum_{a != i} exp(z_i.z_a / tau) ). Every view anchors, adversarial views
// included; P(i) is all other same-label views. Errors if any P(i) is empty.
// Always >= 0 and finite; the denominator uses a max-shifted log-sum-exp.
DiffTensor scl_loss(const SCLossInput& input);

// Mean over the batch of -log softmax(logits)[label], stable via
// log-sum-exp. Errors on out-of-range labels.
DiffTensor cross_entropy(const DiffTensor& logits, const std::vector<int>& labels);

// Per-row -log softmax(logits)[label] without the mean, for per-sample
// attack scoring.
std::vector<double> cross_entropy_per_row(const Tensor& logits, const std::vector<int>& labels);

}  // namespace claf
