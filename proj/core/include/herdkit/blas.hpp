#pragma once

namespace herdkit {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, where op transposes
// when the corresponding flag is set. Thin typed front-end so the rest of
// the code never touches the backing linear-algebra library directly.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

// Caps the GEMM thread pool; results are identical at any cap because each
// output block is reduced sequentially, but 1 is the conservative setting.
void set_blas_threads(int n);

}  // namespace herdkit
