#pragma once

#include <cassert>
#include <cmath>
#include <vector>

#include "svc/common.hpp"

namespace svc {

// Dense row-major matrix. Vectors are 1 x n or n x 1 as convenient.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<Real> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  Real& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  Real at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  Real* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const Real* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

// ---------------------------------------------------------------------------
// Kernels. Every reduction runs in ascending index order; the streaming
// session and the batched decoder must agree bit-for-bit, so there is exactly
// one implementation of each primitive and no blocked/reassociated variants.
// ---------------------------------------------------------------------------

// c = a . b  for length-n vectors.
inline Real dot(const Real* a, const Real* b, int n) {
  Real s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// out(m,n) += A(m,k) * B(k,n). i-k-j order: per-element accumulation is in
// ascending k, identical to a single-row times matrix product.
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);

// out(m,n) = A(m,k) * B(k,n)
Tensor matmul(const Tensor& a, const Tensor& b);

// out(m,n) += A(m,k) * B(n,k)^T
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);

// out(k,n) += A(m,k)^T * B(m,n)
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);

// In-place softmax over x[0..n). Max-subtracted, ascending-order sums.
void softmax_inplace(Real* x, int n);

// y = x / rms(x) * gain, rms over n entries with eps inside the sqrt.
void rmsnorm_row(const Real* x, const Real* gain, Real* y, int n, Real eps = 1e-6);

inline Real silu(Real x) { return x / (1.0 + std::exp(-x)); }

}  // namespace svc
