#pragma once

#include <cstddef>

// Raw dense kernels behind the tape ops. Every parallel loop assigns each
// output element to exactly one thread and computes it in a fixed serial
// order, so results are bit-identical for any thread count.
namespace claf::kern {

// C[M,N] = A[M,K] * B[K,N]
void matmul(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
// C[M,N] += A[M,K] * B[K,N]
void matmul_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
// C[M,N] += A[K,M]^T * B[K,N]
void matmul_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
// C[M,N] += A[M,K] * B[N,K]^T
void matmul_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);

// x: [C,H,W] -> col: [C*KH*KW, OH*OW], zero padding
void im2col(const double* x, int C, int H, int W, int KH, int KW, int stride, int pad,
            double* col, int OH, int OW);
// col: [C*KH*KW, OH*OW] accumulated back into x_acc: [C,H,W]
void col2im_acc(const double* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                double* x_acc, int OH, int OW);

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace claf::kern
