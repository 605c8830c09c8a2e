#include "claf/loss.hpp"

#include <cmath>
#include <string>

namespace claf {

DiffTensor scl_loss(const SCLossInput& input) {
    const DiffTensor& z = input.z;
    if (!z.valid()) throw Error("scl_loss: empty latent tensor");
    const Tensor& zv = z.value();
    if (zv.shape.size() != 2)
        throw Error("scl_loss: latents must be 2-D, got " + shape_str(zv.shape));
    const std::size_t V = zv.shape[0], p = zv.shape[1];
    if (input.labels.size() != V)
        throw Error("scl_loss: " + std::to_string(V) + " views but " +
                    std::to_string(input.labels.size()) + " labels");
    if (!(input.tau > 0.0)) throw Error("scl_loss: temperature must be positive");
    for (std::size_t i = 0; i < V; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += zv.data[i * p + j] * zv.data[i * p + j];
        if (std::fabs(s - 1.0) > 1e-6)
            throw Error("scl_loss: row " + std::to_string(i) + " is not unit norm");
    }

    // candidate set A(i) = everyone but i; positives share the label
    Tensor amask({V, V});
    Tensor posw({V, V});
    for (std::size_t i = 0; i < V; ++i) {
        std::size_t npos = 0;
        for (std::size_t j = 0; j < V; ++j)
            if (j != i && input.labels[j] == input.labels[i]) ++npos;
        if (npos == 0)
            throw Error("scl_loss: view " + std::to_string(i) + " has an empty positive set");
        for (std::size_t j = 0; j < V; ++j) {
            if (j == i) continue;
            amask.data[i * V + j] = 1.0;
            if (input.labels[j] == input.labels[i])
                posw.data[i * V + j] = 1.0 / static_cast<double>(npos);
        }
    }

    Tape& t = *z.tape();
    DiffTensor logits = scale(matmul(z, transpose2d(z)), 1.0 / input.tau);
    DiffTensor lse = masked_logsumexp_rows(logits, amask);               // [V]
    DiffTensor pos_mean = row_sum(mul(logits, t.constant(posw)));        // [V]
    return sum(sub(lse, pos_mean));
}

DiffTensor cross_entropy(const DiffTensor& logits, const std::vector<int>& labels) {
    if (!logits.valid()) throw Error("cross_entropy: empty logits");
    const Tensor& lv = logits.value();
    if (lv.shape.size() != 2)
        throw Error("cross_entropy: logits must be 2-D, got " + shape_str(lv.shape));
    const std::size_t B = lv.shape[0], n = lv.shape[1];
    if (labels.size() != B)
        throw Error("cross_entropy: " + std::to_string(B) + " rows but " +
                    std::to_string(labels.size()) + " labels");
    Tensor onehot({B, n});
    for (std::size_t i = 0; i < B; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n)
            throw Error("cross_entropy: label " + std::to_string(labels[i]) +
                        " out of range [0," + std::to_string(n) + ")");
        onehot.data[i * n + labels[i]] = 1.0;
    }
    Tape& t = *logits.tape();
    DiffTensor lse = logsumexp_rows(logits);
    DiffTensor true_logit = row_sum(mul(logits, t.constant(onehot)));
    return scale(sum(sub(lse, true_logit)), 1.0 / static_cast<double>(B));
}

std::vector<double> cross_entropy_per_row(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2) throw Error("cross_entropy_per_row: logits must be 2-D");
    const std::size_t B = logits.shape[0], n = logits.shape[1];
    if (labels.size() != B) throw Error("cross_entropy_per_row: label count mismatch");
    std::vector<double> out(B);
    for (std::size_t i = 0; i < B; ++i) {
        const double* row = logits.data.data() + i * n;
        double m = row[0];
        for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - m);
        out[i] = m + std::log(s) - row[labels[i]];
    }
    return out;
}

}  // namespace claf
