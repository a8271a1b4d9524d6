#include "herdkit/blas.hpp"

#include <Eigen/Dense>

namespace herdkit {

namespace {

// Eigen compiles its kernels for the instruction set selected at build time
// (-march=native), so there is no runtime CPU dispatch to go wrong on
// machines whose cpuid is masked by a hypervisor.
template <typename T>
void gemm_impl(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
               const T* b, int ldb, T beta, T* c, int ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MutMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using ConstMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

  MutMap C(c, m, n, Eigen::OuterStride<>(ldc));
  // When beta == 0 the destination may be uninitialized storage, so it must
  // be assigned rather than scaled and accumulated.
  auto run = [&](const auto& A, const auto& B) {
    if (beta == T(0)) {
      C.noalias() = alpha * (A * B);
    } else if (beta == T(1)) {
      C.noalias() += alpha * (A * B);
    } else {
      C *= beta;
      C.noalias() += alpha * (A * B);
    }
  };

  ConstMap A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  ConstMap B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  if (!trans_a && !trans_b) {
    run(A, B);
  } else if (trans_a && !trans_b) {
    run(A.transpose(), B);
  } else if (!trans_a && trans_b) {
    run(A, B.transpose());
  } else {
    run(A.transpose(), B.transpose());
  }
}

}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                  int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void set_blas_threads(int n) { Eigen::setNbThreads(n); }

}  // namespace herdkit
