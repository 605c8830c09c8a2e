#pragma once

#include <functional>
#include <vector>

#include "claf/tensor.hpp"

namespace claf {

class Tape;

// Handle to a value recorded on a tape. Copies are cheap; the data lives in
// the tape node. Immutable once created.
class DiffTensor {
public:
    DiffTensor() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    bool requires_grad() const;
    int node_id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    DiffTensor(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Eager Wengert list. Ops append nodes as they execute; append order is the
// topological order, and backward() walks it once in reverse. One backward
// pass per tape; training loops rebuild the tape each step. Tapes are
// single-threaded (ops may parallelize internally over output elements).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    DiffTensor leaf(Tensor value, bool requires_grad);
    DiffTensor constant(Tensor value) { return leaf(std::move(value), false); }
    DiffTensor constant(double v) { return leaf(Tensor::scalar(v), false); }

    // Seeds d(out)/d(out) = 1 and propagates to every requires_grad node.
    // out must be scalar.
    void backward(const DiffTensor& out);

    bool has_grad(const DiffTensor& v) const;
    const Tensor& grad(const DiffTensor& v) const;

    std::size_t num_nodes() const { return nodes_.size(); }

    // --- op implementation surface ---
    using BackFn = std::function<void(Tape&, int self)>;
    DiffTensor emit(const char* op, Tensor value, bool requires_grad, BackFn back);
    const Tensor& val(int id) const { return nodes_[id].value; }
    bool rg(int id) const { return nodes_[id].requires_grad; }
    const Tensor& grad_at(int id) const { return nodes_[id].grad; }
    // Allocates a zero grad buffer on first touch.
    Tensor& grad_buf(int id);
    bool grad_alloc(int id) const { return nodes_[id].grad_alloc; }

private:
    struct Node {
        const char* op;
        Tensor value;
        Tensor grad;
        BackFn back;
        bool requires_grad = false;
        bool grad_alloc = false;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---- primitive ops ----
// Shape errors name the op and both shapes. All ops are pure: identical
// inputs produce bit-identical outputs.

DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor sub(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor scale(const DiffTensor& a, double c);
DiffTensor add_scalar(const DiffTensor& a, double c);

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b);  // [m,k]x[k,n]
DiffTensor transpose2d(const DiffTensor& a);

// x: [B,C,H,W], w: [OC,IC,KH,KW]; zero padding; im2col + matmul inside.
DiffTensor conv2d(const DiffTensor& x, const DiffTensor& w, int stride, int pad);
DiffTensor bias_add_channels(const DiffTensor& x, const DiffTensor& b);  // b: [C]
DiffTensor bias_add_rows(const DiffTensor& x, const DiffTensor& b);      // x: [r,c], b: [c]
// per-channel y = a_c * x + b_c (input normalization lives here)
DiffTensor channel_affine(const DiffTensor& x, const std::vector<double>& a, const std::vector<double>& b);

DiffTensor maxpool2x2(const DiffTensor& x);       // [B,C,H,W] -> [B,C,H/2,W/2]
DiffTensor global_avg_pool(const DiffTensor& x);  // [B,C,H,W] -> [B,C]

DiffTensor relu(const DiffTensor& x);  // subgradient at 0 is 0
DiffTensor exp(const DiffTensor& x);
DiffTensor log(const DiffTensor& x);

// Max-shifted, overflow-safe. 1-D -> scalar; 2-D -> per-row vector.
DiffTensor logsumexp(const DiffTensor& x);
DiffTensor logsumexp_rows(const DiffTensor& x);
// LSE over row entries where mask != 0; rows with empty mask are an error.
DiffTensor masked_logsumexp_rows(const DiffTensor& x, const Tensor& mask);

// rows scaled to unit L2 norm; a zero row is a degenerate-normalization error
DiffTensor l2_normalize_rows(const DiffTensor& x);

DiffTensor concat_rows(const std::vector<DiffTensor>& parts);  // along axis 0

DiffTensor sum(const DiffTensor& x);       // -> scalar
DiffTensor mean(const DiffTensor& x);      // -> scalar
DiffTensor row_sum(const DiffTensor& x);   // [r,c] -> [r]
DiffTensor sub_rowvec(const DiffTensor& x, const DiffTensor& v);  // x_ij - v_i

DiffTensor sign(const DiffTensor& x);  // gradient defined as 0 everywhere
DiffTensor clamp(const DiffTensor& x, double lo, double hi);

// Compositions of the primitives above (single gradient path).
DiffTensor softmax(const DiffTensor& x);       // 1-D
DiffTensor softmax_rows(const DiffTensor& x);  // 2-D

}  // namespace claf
