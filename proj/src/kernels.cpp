#include "kernels.hpp"

#include <cstring>

namespace claf::kern {

void matmul(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
    std::memset(C, 0, M * N * sizeof(double));
    matmul_acc(A, B, C, M, K, N);
}

void matmul_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(M); ++i) {
        double* c = C + i * N;
        const double* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void matmul_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(M); ++i) {
        double* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aki = A[k * M + i];
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
        }
    }
}

void matmul_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(M); ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) {
            const double* b = B + j * K;
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

void im2col(const double* x, int C, int H, int W, int KH, int KW, int stride, int pad,
            double* col, int OH, int OW) {
    const int cols = OH * OW;
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int kh = 0; kh < KH; ++kh) {
            for (int kw = 0; kw < KW; ++kw) {
                double* row = col + (static_cast<std::size_t>(c) * KH * KW + kh * KW + kw) * cols;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    double* r = row + static_cast<std::size_t>(oh) * OW;
                    if (ih < 0 || ih >= H) {
                        std::memset(r, 0, OW * sizeof(double));
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        r[ow] = (iw < 0 || iw >= W) ? 0.0 : xr[iw];
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                double* x_acc, int OH, int OW) {
    const int cols = OH * OW;
    for (int c = 0; c < C; ++c) {
        double* xc = x_acc + static_cast<std::size_t>(c) * H * W;
        for (int kh = 0; kh < KH; ++kh) {
            for (int kw = 0; kw < KW; ++kw) {
                const double* row = col + (static_cast<std::size_t>(c) * KH * KW + kh * KW + kw) * cols;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    double* xr = xc + static_cast<std::size_t>(ih) * W;
                    const double* r = row + static_cast<std::size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) xr[iw] += r[ow];
                    }
                }
            }
        }
    }
}

}  // namespace claf::kern
