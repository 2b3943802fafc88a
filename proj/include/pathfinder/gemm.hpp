#pragma once
// Row-major dense GEMM on Eigen maps, plus a textbook loop kept as the
// full-precision baseline for benchmarks.

#include <Eigen/Core>

#include <cstddef>

namespace pathfinder::gemm {

namespace detail {
template <class Real>
using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using Map = Eigen::Map<RowMajor<Real>>;
template <class Real>
using ConstMap = Eigen::Map<const RowMajor<Real>>;
}  // namespace detail

/// C[M,N] (+)= A[M,K] · B[K,N]
template <class Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c,
             bool accumulate = false) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map<Real> cm(c, M, N);
  const detail::ConstMap<Real> am(a, M, K), bm(b, K, N);
  if (accumulate) {
    cm.noalias() += am * bm;
  } else {
    cm.noalias() = am * bm;
  }
}

/// C[M,N] (+)= A[M,K] · B[N,K]^T
template <class Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c,
             bool accumulate = false) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map<Real> cm(c, M, N);
  const detail::ConstMap<Real> am(a, M, K), bm(b, N, K);
  if (accumulate) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() = am * bm.transpose();
  }
}

/// C[M,N] (+)= A[K,M]^T · B[K,N]
template <class Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c,
             bool accumulate = false) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map<Real> cm(c, M, N);
  const detail::ConstMap<Real> am(a, K, M), bm(b, K, N);
  if (accumulate) {
    cm.noalias() += am.transpose() * bm;
  } else {
    cm.noalias() = am.transpose() * bm;
  }
}

/// Textbook triple loop, used as the full-precision baseline in benchmarks.
template <class Real>
void gemm_naive(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace pathfinder::gemm
