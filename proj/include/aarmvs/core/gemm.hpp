#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace aarmvs {

// C(MxN) = alpha * op(A) * op(B) + beta * C, all row-major contiguous.
// op(A) is MxK (A stored KxM when trans_a). Single dispatch point so the
// whole library shares one GEMM backend.
template <typename T>
void gemm(int64_t m, int64_t k, int64_t n, const T* a, bool trans_a, const T* b, bool trans_b,
          T* c, T alpha = T(1), T beta = T(0)) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  MMap C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (beta == T(0)) {
      if (alpha == T(1))
        C.noalias() = A * B;
      else
        C.noalias() = alpha * (A * B);
    } else {
      if (beta != T(1)) C *= beta;
      if (alpha == T(1))
        C.noalias() += A * B;
      else
        C.noalias() += alpha * (A * B);
    }
  };
  if (!trans_a && !trans_b)
    run(CMap(a, m, k), CMap(b, k, n));
  else if (trans_a && !trans_b)
    run(CMap(a, k, m).transpose(), CMap(b, k, n));
  else if (!trans_a && trans_b)
    run(CMap(a, m, k), CMap(b, n, k).transpose());
  else
    run(CMap(a, k, m).transpose(), CMap(b, n, k).transpose());
}

}  // namespace aarmvs
