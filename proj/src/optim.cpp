#include "claf/optim.hpp"

#include <cmath>

namespace claf {

double cosine_lr(int t, int T, double lr0) {
    if (t < 0 || t > T || T <= 0) throw Error("cosine_lr: epoch " + std::to_string(t) +
                                              " outside [0," + std::to_string(T) + "]");
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(T)));
}

void SgdMomentum::step(ParamMap& params, const GradList& grads, double lr) {
    if (grads.size() != params.size()) throw Error("SgdMomentum: grad/param count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& [name, g] = grads[i];
        Tensor& p = params.items()[i].second;
        if (params.items()[i].first != name || p.shape != g.shape)
            throw Error("SgdMomentum: grad " + name + " does not align with parameter " +
                        params.items()[i].first);
        if (!velocity_.contains(name)) velocity_.add(name, Tensor(p.shape));
        Tensor& v = velocity_.at(name);
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double grad = g.data[j] + weight_decay_ * p.data[j];
            v.data[j] = momentum_ * v.data[j] + grad;
            p.data[j] -= lr * v.data[j];
        }
    }
}

void Adam::step(ParamMap& params, const GradList& grads, double lr) {
    if (grads.size() != params.size()) throw Error("Adam: grad/param count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& [name, g] = grads[i];
        Tensor& p = params.items()[i].second;
        if (params.items()[i].first != name || p.shape != g.shape)
            throw Error("Adam: grad " + name + " does not align with parameter " +
                        params.items()[i].first);
        if (!m_.contains(name)) {
            m_.add(name, Tensor(p.shape));
            v_.add(name, Tensor(p.shape));
        }
        Tensor& m = m_.at(name);
        Tensor& v = v_.at(name);
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * g.data[j];
            v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * g.data[j] * g.data[j];
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::reset() {
    t_ = 0;
    m_ = ParamMap();
    v_ = ParamMap();
}

}  // namespace claf
