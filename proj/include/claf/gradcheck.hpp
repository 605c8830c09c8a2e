#pragma once

#include <functional>
#include <string>
#include <vector>

#include "claf/tape.hpp"

namespace claf {

struct GradReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t probes = 0;
};

// Builds a scalar output from leaves bound to the given points.
using ScalarGraphFn = std::function<DiffTensor(Tape&, const std::vector<DiffTensor>&)>;

// Compares the analytic gradient against central differences
// (f(x+h) - f(x-h)) / 2h for every coordinate of every point. Relative error
// uses max(|analytic|, |numeric|, 1) as denominator so near-zero gradients
// are judged on absolute error. The caller keeps probe points away from
// nondifferentiable kinks (relu at 0, clamp edges, maxpool ties).
GradReport check_gradient(const ScalarGraphFn& f, const std::vector<Tensor>& points, double h);

// single-input convenience
GradReport check_gradient(const std::function<DiffTensor(Tape&, const DiffTensor&)>& f,
                          const Tensor& point, double h);

struct GradCheckCase {
    std::string name;
    GradReport report;
    bool pass = false;
};

// Every primitive op plus the composed paths the training loops depend on
// (contrastive loss through normalization, cross-entropy through the
// encoder as used by input-gradient attacks). Threshold is max relative
// error < 1e-4.
std::vector<GradCheckCase> run_gradcheck_suite();

bool gradcheck_suite_passed(const std::vector<GradCheckCase>& cases);

}  // namespace claf
