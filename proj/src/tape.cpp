#include "claf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "kernels.hpp"

namespace claf {

const Tensor& DiffTensor::value() const {
    if (!tape_) throw Error("DiffTensor: empty handle");
    return tape_->val(id_);
}

bool DiffTensor::requires_grad() const {
    if (!tape_) throw Error("DiffTensor: empty handle");
    return tape_->rg(id_);
}

DiffTensor Tape::leaf(Tensor value, bool requires_grad) {
    return emit("leaf", std::move(value), requires_grad, nullptr);
}

DiffTensor Tape::emit(const char* op, Tensor value, bool requires_grad, BackFn back) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return DiffTensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
        n.grad = Tensor(n.value.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

void Tape::backward(const DiffTensor& out) {
    if (out.tape() != this) throw Error("backward: output from another tape");
    if (backward_done_) throw Error("backward: tape already differentiated; rebuild the tape per step");
    const Node& o = nodes_[out.node_id()];
    if (o.value.numel() != 1)
        throw Error("backward: seed must be scalar, got shape " + shape_str(o.value.shape));
    backward_done_ = true;
    if (!o.requires_grad) return;
    grad_buf(out.node_id()).data[0] = 1.0;
    for (int i = out.node_id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.grad_alloc || !n.back) continue;
        n.back(*this, i);
    }
}

bool Tape::has_grad(const DiffTensor& v) const {
    if (v.tape() != this) return false;
    const Node& n = nodes_[v.node_id()];
    return n.requires_grad && n.grad_alloc;
}

const Tensor& Tape::grad(const DiffTensor& v) const {
    if (v.tape() != this) throw Error("grad: tensor from another tape");
    const Node& n = nodes_[v.node_id()];
    if (!n.requires_grad)
        throw Error("grad: tensor does not require grad");
    if (!n.grad_alloc)
        throw Error("grad: no gradient recorded; run backward on a dependent scalar first");
    return n.grad;
}

// ---------------------------------------------------------------------------

namespace {

Tape* tape_of(const char* op, const DiffTensor& a) {
    if (!a.valid()) throw Error(std::string(op) + ": empty tensor handle");
    return a.tape();
}

void require_same_tape(const char* op, const DiffTensor& a, const DiffTensor& b) {
    if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
}

void require_same_shape(const char* op, const DiffTensor& a, const DiffTensor& b) {
    if (a.shape() != b.shape())
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

void acc(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// elementwise binary op with per-element partials
template <class FwdF, class DaF, class DbF>
DiffTensor ew_binary(const char* op, const DiffTensor& a, const DiffTensor& b, FwdF f, DaF da,
                     DbF db) {
    require_same_tape(op, a, b);
    require_same_shape(op, a, b);
    Tape& t = *tape_of(op, a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(av.data[i], bv.data[i]);
    const bool rg = a.requires_grad() || b.requires_grad();
    const int ia = a.node_id(), ib = b.node_id();
    return t.emit(op, std::move(out), rg, [ia, ib, da, db](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        const Tensor& av2 = tp.val(ia);
        const Tensor& bv2 = tp.val(ib);
        if (tp.rg(ia)) {
            Tensor& ga = tp.grad_buf(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] += g.data[i] * da(av2.data[i], bv2.data[i]);
        }
        if (tp.rg(ib)) {
            Tensor& gb = tp.grad_buf(ib);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gb.data[i] += g.data[i] * db(av2.data[i], bv2.data[i]);
        }
    });
}

// elementwise unary op; partial depends on (input, output)
template <class FwdF, class DxF>
DiffTensor ew_unary(const char* op, const DiffTensor& a, FwdF f, DxF dx) {
    Tape& t = *tape_of(op, a);
    const Tensor& av = a.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(av.data[i]);
    const int ia = a.node_id();
    return t.emit(op, std::move(out), a.requires_grad(), [ia, dx](Tape& tp, int self) {
        if (!tp.rg(ia)) return;
        const Tensor& g = tp.grad_at(self);
        const Tensor& av2 = tp.val(ia);
        const Tensor& ov = tp.val(self);
        Tensor& ga = tp.grad_buf(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * dx(av2.data[i], ov.data[i]);
    });
}

}  // namespace

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
    return ew_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
    return ew_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
    return ew_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

DiffTensor scale(const DiffTensor& a, double c) {
    return ew_unary(
        "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

DiffTensor add_scalar(const DiffTensor& a, double c) {
    return ew_unary(
        "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

DiffTensor relu(const DiffTensor& a) {
    return ew_unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

DiffTensor exp(const DiffTensor& a) {
    return ew_unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

DiffTensor log(const DiffTensor& a) {
    return ew_unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

DiffTensor sign(const DiffTensor& a) {
    return ew_unary(
        "sign", a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
        [](double, double) { return 0.0; });
}

DiffTensor clamp(const DiffTensor& a, double lo, double hi) {
    return ew_unary(
        "clamp", a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
    require_same_tape("matmul", a, b);
    Tape& t = *tape_of("matmul", a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0])
        throw Error("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                    shape_str(bv.shape));
    const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    kern::matmul(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    const bool rg = a.requires_grad() || b.requires_grad();
    const int ia = a.node_id(), ib = b.node_id();
    return t.emit("matmul", std::move(out), rg, [ia, ib, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        if (tp.rg(ia)) {  // dA += dC * B^T
            kern::matmul_nt_acc(g.data.data(), tp.val(ib).data.data(),
                                tp.grad_buf(ia).data.data(), m, n, k);
        }
        if (tp.rg(ib)) {  // dB += A^T * dC
            kern::matmul_tn_acc(tp.val(ia).data.data(), g.data.data(),
                                tp.grad_buf(ib).data.data(), k, m, n);
        }
    });
}

DiffTensor transpose2d(const DiffTensor& a) {
    Tape& t = *tape_of("transpose2d", a);
    const Tensor& av = a.value();
    if (av.shape.size() != 2)
        throw Error("transpose2d: expected 2-D tensor, got " + shape_str(av.shape));
    const std::size_t r = av.shape[0], c = av.shape[1];
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
    const int ia = a.node_id();
    return t.emit("transpose2d", std::move(out), a.requires_grad(), [ia, r, c](Tape& tp, int self) {
        if (!tp.rg(ia)) return;
        const Tensor& g = tp.grad_at(self);
        Tensor& ga = tp.grad_buf(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga.data[i * c + j] += g.data[j * r + i];
    });
}

DiffTensor conv2d(const DiffTensor& x, const DiffTensor& w, int stride, int pad) {
    require_same_tape("conv2d", x, w);
    Tape& t = *tape_of("conv2d", x);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.shape.size() != 4 || wv.shape.size() != 4 || xv.shape[1] != wv.shape[1])
        throw Error("conv2d: incompatible shapes x=" + shape_str(xv.shape) +
                    " w=" + shape_str(wv.shape));
    if (stride < 1 || pad < 0) throw Error("conv2d: bad stride/pad");
    const int B = static_cast<int>(xv.shape[0]), IC = static_cast<int>(xv.shape[1]);
    const int H = static_cast<int>(xv.shape[2]), W = static_cast<int>(xv.shape[3]);
    const int OC = static_cast<int>(wv.shape[0]);
    const int KH = static_cast<int>(wv.shape[2]), KW = static_cast<int>(wv.shape[3]);
    const int OH = kern::conv_out_dim(H, KH, stride, pad), OW = kern::conv_out_dim(W, KW, stride, pad);
    if (OH < 1 || OW < 1)
        throw Error("conv2d: kernel larger than padded input, x=" + shape_str(xv.shape) +
                    " w=" + shape_str(wv.shape));
    const std::size_t ckk = static_cast<std::size_t>(IC) * KH * KW;
    const std::size_t owh = static_cast<std::size_t>(OH) * OW;
    Tensor out({static_cast<std::size_t>(B), static_cast<std::size_t>(OC),
                static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
    {
        std::vector<double> col(ckk * owh);
#pragma omp parallel for schedule(static) firstprivate(col)
        for (int b = 0; b < B; ++b) {
            const double* xb = xv.data.data() + static_cast<std::size_t>(b) * IC * H * W;
            kern::im2col(xb, IC, H, W, KH, KW, stride, pad, col.data(), OH, OW);
            double* yb = out.data.data() + static_cast<std::size_t>(b) * OC * owh;
            kern::matmul(wv.data.data(), col.data(), yb, OC, ckk, owh);
        }
    }
    const bool rg = x.requires_grad() || w.requires_grad();
    const int ix = x.node_id(), iw = w.node_id();
    return t.emit("conv2d", std::move(out), rg,
                  [ix, iw, stride, pad, B, IC, H, W, OC, KH, KW, OH, OW, ckk, owh](Tape& tp, int self) {
                      const Tensor& g = tp.grad_at(self);
                      const Tensor& xv2 = tp.val(ix);
                      const Tensor& wv2 = tp.val(iw);
                      if (tp.rg(iw)) {
                          // dW += sum_b dY_b * col_b^T, accumulated in batch order
                          Tensor& gw = tp.grad_buf(iw);
                          std::vector<double> col(ckk * owh);
                          for (int b = 0; b < B; ++b) {
                              const double* xb = xv2.data.data() + static_cast<std::size_t>(b) * IC * H * W;
                              kern::im2col(xb, IC, H, W, KH, KW, stride, pad, col.data(), OH, OW);
                              const double* gb = g.data.data() + static_cast<std::size_t>(b) * OC * owh;
                              kern::matmul_nt_acc(gb, col.data(), gw.data.data(), OC, owh, ckk);
                          }
                      }
                      if (tp.rg(ix)) {
                          Tensor& gx = tp.grad_buf(ix);
                          std::vector<double> dcol(ckk * owh);
#pragma omp parallel for schedule(static) firstprivate(dcol)
                          for (int b = 0; b < B; ++b) {
                              const double* gb = g.data.data() + static_cast<std::size_t>(b) * OC * owh;
                              std::memset(dcol.data(), 0, dcol.size() * sizeof(double));
                              kern::matmul_tn_acc(wv2.data.data(), gb, dcol.data(), ckk, OC, owh);
                              double* gxb = gx.data.data() + static_cast<std::size_t>(b) * IC * H * W;
                              kern::col2im_acc(dcol.data(), IC, H, W, KH, KW, stride, pad, gxb, OH, OW);
                          }
                      }
                  });
}

DiffTensor bias_add_channels(const DiffTensor& x, const DiffTensor& b) {
    require_same_tape("bias_add_channels", x, b);
    Tape& t = *tape_of("bias_add_channels", x);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.shape.size() != 4 || bv.shape.size() != 1 || bv.shape[0] != xv.shape[1])
        throw Error("bias_add_channels: shapes x=" + shape_str(xv.shape) +
                    " b=" + shape_str(bv.shape));
    const std::size_t B = xv.shape[0], C = xv.shape[1], HW = xv.shape[2] * xv.shape[3];
    Tensor out(xv.shape);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double bc = bv.data[c];
            const double* src = xv.data.data() + (n * C + c) * HW;
            double* dst = out.data.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] + bc;
        }
    const bool rg = x.requires_grad() || b.requires_grad();
    const int ix = x.node_id(), ib = b.node_id();
    return t.emit("bias_add_channels", std::move(out), rg, [ix, ib, B, C, HW](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        if (tp.rg(ix)) acc(tp.grad_buf(ix), g);
        if (tp.rg(ib)) {
            Tensor& gb = tp.grad_buf(ib);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const double* gc = g.data.data() + (n * C + c) * HW;
                    double s = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) s += gc[i];
                    gb.data[c] += s;
                }
        }
    });
}

DiffTensor bias_add_rows(const DiffTensor& x, const DiffTensor& b) {
    require_same_tape("bias_add_rows", x, b);
    Tape& t = *tape_of("bias_add_rows", x);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.shape.size() != 2 || bv.shape.size() != 1 || bv.shape[0] != xv.shape[1])
        throw Error("bias_add_rows: shapes x=" + shape_str(xv.shape) + " b=" + shape_str(bv.shape));
    const std::size_t r = xv.shape[0], c = xv.shape[1];
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = xv.data[i * c + j] + bv.data[j];
    const bool rg = x.requires_grad() || b.requires_grad();
    const int ix = x.node_id(), ib = b.node_id();
    return t.emit("bias_add_rows", std::move(out), rg, [ix, ib, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        if (tp.rg(ix)) acc(tp.grad_buf(ix), g);
        if (tp.rg(ib)) {
            Tensor& gb = tp.grad_buf(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[i * c + j];
        }
    });
}

DiffTensor channel_affine(const DiffTensor& x, const std::vector<double>& a,
                          const std::vector<double>& b) {
    Tape& t = *tape_of("channel_affine", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 4 || a.size() != xv.shape[1] || b.size() != xv.shape[1])
        throw Error("channel_affine: x=" + shape_str(xv.shape) + " with " +
                    std::to_string(a.size()) + " channel coefficients");
    const std::size_t B = xv.shape[0], C = xv.shape[1], HW = xv.shape[2] * xv.shape[3];
    Tensor out(xv.shape);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double ac = a[c], bc = b[c];
            const double* src = xv.data.data() + (n * C + c) * HW;
            double* dst = out.data.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = ac * src[i] + bc;
        }
    const int ix = x.node_id();
    std::vector<double> ac = a;
    return t.emit("channel_affine", std::move(out), x.requires_grad(),
                  [ix, ac, B, C, HW](Tape& tp, int self) {
                      if (!tp.rg(ix)) return;
                      const Tensor& g = tp.grad_at(self);
                      Tensor& gx = tp.grad_buf(ix);
                      for (std::size_t n = 0; n < B; ++n)
                          for (std::size_t c = 0; c < C; ++c) {
                              const double a_c = ac[c];
                              const double* gs = g.data.data() + (n * C + c) * HW;
                              double* gd = gx.data.data() + (n * C + c) * HW;
                              for (std::size_t i = 0; i < HW; ++i) gd[i] += a_c * gs[i];
                          }
                  });
}

DiffTensor maxpool2x2(const DiffTensor& x) {
    Tape& t = *tape_of("maxpool2x2", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 4 || xv.shape[2] % 2 != 0 || xv.shape[3] % 2 != 0)
        throw Error("maxpool2x2: need even spatial dims, got " + shape_str(xv.shape));
    const std::size_t B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor out({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
    for (std::size_t nc = 0; nc < B * C; ++nc) {
        const double* plane = xv.data.data() + nc * H * W;
        double* oplane = out.data.data() + nc * OH * OW;
        std::uint32_t* am = argmax->data() + nc * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                const std::size_t i0 = (2 * oh) * W + 2 * ow;
                // ties resolve to the first index in scan order
                std::size_t best = i0;
                double bv = plane[i0];
                for (std::size_t cand : {i0 + 1, i0 + W, i0 + W + 1}) {
                    if (plane[cand] > bv) {
                        bv = plane[cand];
                        best = cand;
                    }
                }
                oplane[oh * OW + ow] = bv;
                am[oh * OW + ow] = static_cast<std::uint32_t>(best);
            }
    }
    const int ix = x.node_id();
    return t.emit("maxpool2x2", std::move(out), x.requires_grad(),
                  [ix, argmax, B, C, H, W, OH, OW](Tape& tp, int self) {
                      if (!tp.rg(ix)) return;
                      const Tensor& g = tp.grad_at(self);
                      Tensor& gx = tp.grad_buf(ix);
                      for (std::size_t nc = 0; nc < B * C; ++nc) {
                          const double* gp = g.data.data() + nc * OH * OW;
                          const std::uint32_t* am = argmax->data() + nc * OH * OW;
                          double* gplane = gx.data.data() + nc * H * W;
                          for (std::size_t i = 0; i < OH * OW; ++i) gplane[am[i]] += gp[i];
                      }
                  });
}

DiffTensor global_avg_pool(const DiffTensor& x) {
    Tape& t = *tape_of("global_avg_pool", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 4)
        throw Error("global_avg_pool: expected 4-D tensor, got " + shape_str(xv.shape));
    const std::size_t B = xv.shape[0], C = xv.shape[1], HW = xv.shape[2] * xv.shape[3];
    Tensor out({B, C});
    for (std::size_t nc = 0; nc < B * C; ++nc) {
        const double* plane = xv.data.data() + nc * HW;
        double s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) s += plane[i];
        out.data[nc] = s / static_cast<double>(HW);
    }
    const int ix = x.node_id();
    return t.emit("global_avg_pool", std::move(out), x.requires_grad(),
                  [ix, B, C, HW](Tape& tp, int self) {
                      if (!tp.rg(ix)) return;
                      const Tensor& g = tp.grad_at(self);
                      Tensor& gx = tp.grad_buf(ix);
                      const double inv = 1.0 / static_cast<double>(HW);
                      for (std::size_t nc = 0; nc < B * C; ++nc) {
                          const double gv = g.data[nc] * inv;
                          double* gplane = gx.data.data() + nc * HW;
                          for (std::size_t i = 0; i < HW; ++i) gplane[i] += gv;
                      }
                  });
}

namespace {

// shared LSE core: rows x cols, optional row-major 0/1 mask
Tensor lse_forward(const char* op, const Tensor& xv, const double* mask, std::size_t rows,
                   std::size_t cols) {
    Tensor out({rows});
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = xv.data.data() + i * cols;
        const double* mrow = mask ? mask + i * cols : nullptr;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j)
            if ((!mrow || mrow[j] != 0.0) && row[j] > m) m = row[j];
        if (m == -std::numeric_limits<double>::infinity())
            throw Error(std::string(op) + ": row " + std::to_string(i) + " has no active entries");
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            if (!mrow || mrow[j] != 0.0) s += std::exp(row[j] - m);
        out.data[i] = m + std::log(s);
    }
    return out;
}

DiffTensor lse_emit(const char* op, Tape& t, const DiffTensor& x, Tensor out,
                    std::shared_ptr<Tensor> mask, std::size_t rows, std::size_t cols,
                    bool scalar_out) {
    if (scalar_out) out.shape.clear();
    const int ix = x.node_id();
    return t.emit(op, std::move(out), x.requires_grad(),
                  [ix, mask, rows, cols](Tape& tp, int self) {
                      if (!tp.rg(ix)) return;
                      const Tensor& g = tp.grad_at(self);
                      const Tensor& xv = tp.val(ix);
                      const Tensor& ov = tp.val(self);
                      Tensor& gx = tp.grad_buf(ix);
                      for (std::size_t i = 0; i < rows; ++i) {
                          const double gi = g.data[i];
                          const double li = ov.data[i];
                          const double* row = xv.data.data() + i * cols;
                          const double* mrow = mask ? mask->data.data() + i * cols : nullptr;
                          double* grow = gx.data.data() + i * cols;
                          for (std::size_t j = 0; j < cols; ++j)
                              if (!mrow || mrow[j] != 0.0) grow[j] += gi * std::exp(row[j] - li);
                      }
                  });
}

}  // namespace

DiffTensor logsumexp(const DiffTensor& x) {
    Tape& t = *tape_of("logsumexp", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 1)
        throw Error("logsumexp: expected 1-D tensor, got " + shape_str(xv.shape));
    Tensor out = lse_forward("logsumexp", xv, nullptr, 1, xv.shape[0]);
    return lse_emit("logsumexp", t, x, std::move(out), nullptr, 1, xv.shape[0], true);
}

DiffTensor logsumexp_rows(const DiffTensor& x) {
    Tape& t = *tape_of("logsumexp_rows", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 2)
        throw Error("logsumexp_rows: expected 2-D tensor, got " + shape_str(xv.shape));
    Tensor out = lse_forward("logsumexp_rows", xv, nullptr, xv.shape[0], xv.shape[1]);
    return lse_emit("logsumexp_rows", t, x, std::move(out), nullptr, xv.shape[0], xv.shape[1], false);
}

DiffTensor masked_logsumexp_rows(const DiffTensor& x, const Tensor& mask) {
    Tape& t = *tape_of("masked_logsumexp_rows", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 2 || mask.shape != xv.shape)
        throw Error("masked_logsumexp_rows: x=" + shape_str(xv.shape) +
                    " mask=" + shape_str(mask.shape));
    Tensor out = lse_forward("masked_logsumexp_rows", xv, mask.data.data(), xv.shape[0], xv.shape[1]);
    return lse_emit("masked_logsumexp_rows", t, x, std::move(out),
                    std::make_shared<Tensor>(mask), xv.shape[0], xv.shape[1], false);
}

DiffTensor l2_normalize_rows(const DiffTensor& x) {
    Tape& t = *tape_of("l2_normalize_rows", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 2)
        throw Error("l2_normalize_rows: expected 2-D tensor, got " + shape_str(xv.shape));
    const std::size_t r = xv.shape[0], c = xv.shape[1];
    Tensor out(xv.shape);
    auto norms = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.data.data() + i * c;
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += row[j] * row[j];
        const double nrm = std::sqrt(s);
        if (nrm == 0.0)
            throw Error("l2_normalize_rows: zero row " + std::to_string(i) +
                        " (degenerate normalization)");
        (*norms)[i] = nrm;
        double* orow = out.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) orow[j] = row[j] / nrm;
    }
    const int ix = x.node_id();
    return t.emit("l2_normalize_rows", std::move(out), x.requires_grad(),
                  [ix, norms, r, c](Tape& tp, int self) {
                      if (!tp.rg(ix)) return;
                      const Tensor& g = tp.grad_at(self);
                      const Tensor& z = tp.val(self);
                      Tensor& gx = tp.grad_buf(ix);
                      // d/dx (x/|x|) applied to g: (g - z (z.g)) / |x|
                      for (std::size_t i = 0; i < r; ++i) {
                          const double* gr = g.data.data() + i * c;
                          const double* zr = z.data.data() + i * c;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < c; ++j) dot += gr[j] * zr[j];
                          const double inv = 1.0 / (*norms)[i];
                          double* gxr = gx.data.data() + i * c;
                          for (std::size_t j = 0; j < c; ++j) gxr[j] += (gr[j] - zr[j] * dot) * inv;
                      }
                  });
}

DiffTensor concat_rows(const std::vector<DiffTensor>& parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    Tape& t = *tape_of("concat_rows", parts[0]);
    const std::size_t c = parts[0].shape().size() == 2 ? parts[0].shape()[1] : 0;
    std::size_t rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        require_same_tape("concat_rows", parts[0], p);
        if (p.shape().size() != 2 || p.shape()[1] != c)
            throw Error("concat_rows: incompatible part shape " + shape_str(p.shape()));
        rows += p.shape()[0];
        rg = rg || p.requires_grad();
    }
    Tensor out({rows, c});
    std::vector<int> ids;
    std::vector<std::size_t> offs;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        std::memcpy(out.data.data() + off, pv.data.data(), pv.data.size() * sizeof(double));
        ids.push_back(p.node_id());
        offs.push_back(off);
        off += pv.data.size();
    }
    return t.emit("concat_rows", std::move(out), rg, [ids, offs](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (!tp.rg(ids[p])) continue;
            Tensor& gp = tp.grad_buf(ids[p]);
            const double* src = g.data.data() + offs[p];
            for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += src[i];
        }
    });
}

DiffTensor sum(const DiffTensor& x) {
    Tape& t = *tape_of("sum", x);
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data) s += v;
    const int ix = x.node_id();
    return t.emit("sum", Tensor::scalar(s), x.requires_grad(), [ix](Tape& tp, int self) {
        if (!tp.rg(ix)) return;
        const double g = tp.grad_at(self).data[0];
        Tensor& gx = tp.grad_buf(ix);
        for (double& v : gx.data) v += g;
    });
}

DiffTensor mean(const DiffTensor& x) {
    Tape& t = *tape_of("mean", x);
    const Tensor& xv = x.value();
    const double n = static_cast<double>(xv.numel());
    double s = 0.0;
    for (double v : xv.data) s += v;
    const int ix = x.node_id();
    return t.emit("mean", Tensor::scalar(s / n), x.requires_grad(), [ix, n](Tape& tp, int self) {
        if (!tp.rg(ix)) return;
        const double g = tp.grad_at(self).data[0] / n;
        Tensor& gx = tp.grad_buf(ix);
        for (double& v : gx.data) v += g;
    });
}

DiffTensor row_sum(const DiffTensor& x) {
    Tape& t = *tape_of("row_sum", x);
    const Tensor& xv = x.value();
    if (xv.shape.size() != 2)
        throw Error("row_sum: expected 2-D tensor, got " + shape_str(xv.shape));
    const std::size_t r = xv.shape[0], c = xv.shape[1];
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        const double* row = xv.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) s += row[j];
        out.data[i] = s;
    }
    const int ix = x.node_id();
    return t.emit("row_sum", std::move(out), x.requires_grad(), [ix, r, c](Tape& tp, int self) {
        if (!tp.rg(ix)) return;
        const Tensor& g = tp.grad_at(self);
        Tensor& gx = tp.grad_buf(ix);
        for (std::size_t i = 0; i < r; ++i) {
            const double gi = g.data[i];
            double* grow = gx.data.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) grow[j] += gi;
        }
    });
}

DiffTensor sub_rowvec(const DiffTensor& x, const DiffTensor& v) {
    require_same_tape("sub_rowvec", x, v);
    Tape& t = *tape_of("sub_rowvec", x);
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (xv.shape.size() != 2 || vv.shape.size() != 1 || vv.shape[0] != xv.shape[0])
        throw Error("sub_rowvec: shapes x=" + shape_str(xv.shape) + " v=" + shape_str(vv.shape));
    const std::size_t r = xv.shape[0], c = xv.shape[1];
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = xv.data[i * c + j] - vv.data[i];
    const bool rg = x.requires_grad() || v.requires_grad();
    const int ix = x.node_id(), iv = v.node_id();
    return t.emit("sub_rowvec", std::move(out), rg, [ix, iv, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_at(self);
        if (tp.rg(ix)) acc(tp.grad_buf(ix), g);
        if (tp.rg(iv)) {
            Tensor& gv = tp.grad_buf(iv);
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                const double* row = g.data.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) s += row[j];
                gv.data[i] -= s;
            }
        }
    });
}

DiffTensor softmax(const DiffTensor& x) {
    DiffTensor lse = logsumexp(x);
    // broadcast scalar over the vector
    Tape& t = *x.tape();
    Tensor bcast(x.shape());
    std::fill(bcast.data.begin(), bcast.data.end(), lse.value().data[0]);
    // route through sub with an explicit broadcast node to keep the graph exact
    const int il = lse.node_id();
    DiffTensor lseb = t.emit("broadcast", std::move(bcast), lse.requires_grad(),
                             [il](Tape& tp, int self) {
                                 if (!tp.rg(il)) return;
                                 const Tensor& g = tp.grad_at(self);
                                 double s = 0.0;
                                 for (double v : g.data) s += v;
                                 tp.grad_buf(il).data[0] += s;
                             });
    return claf::exp(sub(x, lseb));
}

DiffTensor softmax_rows(const DiffTensor& x) {
    return claf::exp(sub_rowvec(x, logsumexp_rows(x)));
}

}  // namespace claf
