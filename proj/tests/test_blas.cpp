#include <vector>

#include "doctest.h"
#include "herdkit/blas.hpp"

using namespace herdkit;

namespace {

// Reference row-major matmul with optional transposes, for cross-checking.
template <typename T>
std::vector<T> naive_gemm(bool ta, bool tb, int m, int n, int k, T alpha, const std::vector<T>& a,
                          int lda, const std::vector<T>& b, int ldb, T beta, std::vector<T> c,
                          int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        T av = ta ? a[size_t(p) * lda + i] : a[size_t(i) * lda + p];
        T bv = tb ? b[size_t(j) * ldb + p] : b[size_t(p) * ldb + j];
        acc += av * bv;
      }
      c[size_t(i) * ldc + j] = alpha * acc + beta * c[size_t(i) * ldc + j];
    }
  }
  return c;
}

template <typename T>
void check_close(const std::vector<T>& got, const std::vector<T>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) CHECK(double(got[i]) == doctest::Approx(double(want[i])).epsilon(tol));
}

}  // namespace

TEST_SUITE("blas") {

TEST_CASE_TEMPLATE("gemm matches the naive reference", T, float, double) {
  // 2x3 times 3x2 with plain layout
  std::vector<T> a = {1, 2, 3, 4, 5, 6};
  std::vector<T> b = {7, 8, 9, 10, 11, 12};
  std::vector<T> c(4, T(0.5));
  std::vector<T> want = naive_gemm<T>(false, false, 2, 2, 3, T(2), a, 3, b, 2, T(1), c, 2);
  gemm<T>(false, false, 2, 2, 3, T(2), a.data(), 3, b.data(), 2, T(1), c.data(), 2);
  check_close(c, want, 1e-6);
}

TEST_CASE_TEMPLATE("gemm transpose variants agree with the reference", T, float, double) {
  // a is stored 3x2 and used transposed; b is stored 2x3 and used transposed.
  std::vector<T> a = {1, 4, 2, 5, 3, 6};
  std::vector<T> b = {7, 9, 11, 8, 10, 12};
  std::vector<T> c(4, T(0));
  std::vector<T> want = naive_gemm<T>(true, true, 2, 2, 3, T(1), a, 2, b, 3, T(0), c, 2);
  gemm<T>(true, true, 2, 2, 3, T(1), a.data(), 2, b.data(), 3, T(0), c.data(), 2);
  check_close(c, want, 1e-6);

  // mixed: transposed a only
  std::vector<T> c2(4, T(0)), c2w(4, T(0));
  std::vector<T> b2 = {7, 8, 9, 10, 11, 12};
  c2w = naive_gemm<T>(true, false, 2, 2, 3, T(1), a, 2, b2, 2, T(0), c2w, 2);
  gemm<T>(true, false, 2, 2, 3, T(1), a.data(), 2, b2.data(), 2, T(0), c2.data(), 2);
  check_close(c2, c2w, 1e-6);
}

TEST_CASE_TEMPLATE("gemm scales existing output by a general beta", T, float, double) {
  std::vector<T> a = {1, 2, 3, 4, 5, 6};
  std::vector<T> b = {7, 8, 9, 10, 11, 12};
  std::vector<T> c(4, T(8));
  std::vector<T> want = naive_gemm<T>(false, false, 2, 2, 3, T(3), a, 3, b, 2, T(0.25), c, 2);
  gemm<T>(false, false, 2, 2, 3, T(3), a.data(), 3, b.data(), 2, T(0.25), c.data(), 2);
  check_close(c, want, 1e-6);
}

TEST_CASE("gemm honors a wide ldc for strided submatrix writes") {
  // Write a 2x2 product into the left corner of a 2x5 destination.
  std::vector<float> a = {1, 2, 3, 4};
  std::vector<float> b = {5, 6, 7, 8};
  std::vector<float> c(10, -1.0f);
  gemm<float>(false, false, 2, 2, 2, 1.0f, a.data(), 2, b.data(), 2, 0.0f, c.data(), 5);
  CHECK(c[0] == 19.0f);
  CHECK(c[1] == 22.0f);
  CHECK(c[5] == 43.0f);
  CHECK(c[6] == 50.0f);
  // untouched columns retain their sentinel
  CHECK(c[2] == -1.0f);
  CHECK(c[7] == -1.0f);
}

}  // TEST_SUITE
