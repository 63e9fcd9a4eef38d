#pragma once

#include <cblas.h>

namespace gsyn::nn::detail {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b,
                 float beta, float* c) {
    const int lda = trans_a ? m : k;
    const int ldb = trans_b ? k : n;
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, lda, b, ldb, beta, c, n);
}

void im2col(const float* x, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, float* col);

// Accumulates into x (caller zeroes it).
void col2im(const float* col, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, float* x);

}  // namespace gsyn::nn::detail
