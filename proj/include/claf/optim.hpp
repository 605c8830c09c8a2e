#pragma once

#include <string>
#include <utility>
#include <vector>

#include "claf/model.hpp"
#include "claf/tensor.hpp"

namespace claf {

// lr0 * 0.5 * (1 + cos(pi * t / T))
double cosine_lr(int t, int T, double lr0);

using GradList = std::vector<std::pair<std::string, Tensor>>;

// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(ParamMap& params, const GradList& grads, double lr);

    const ParamMap& velocity() const { return velocity_; }
    ParamMap& velocity() { return velocity_; }

private:
    double momentum_;
    double weight_decay_;
    ParamMap velocity_;  // lazily created per parameter, insertion order stable
};

// Bias-corrected Adam.
class Adam {
public:
    Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamMap& params, const GradList& grads, double lr);

    std::int64_t t() const { return t_; }
    void set_t(std::int64_t t) { t_ = t; }
    ParamMap& m() { return m_; }
    ParamMap& v() { return v_; }
    const ParamMap& m() const { return m_; }
    const ParamMap& v() const { return v_; }
    void reset();

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    ParamMap m_, v_;
};

}  // namespace claf
