#include "svc/tensor.hpp"

#include <cmath>

namespace svc {

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  assert(a.cols == b.rows && out.rows == a.rows && out.cols == b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const Real* arow = a.row(i);
    Real* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const Real aik = arow[p];
      const Real* brow = b.row(p);
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  matmul_acc(a, b, out);
  return out;
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  assert(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows);
  const int m = a.rows, k = a.cols, n = b.rows;
  for (int i = 0; i < m; ++i) {
    const Real* arow = a.row(i);
    Real* orow = out.row(i);
    for (int j = 0; j < n; ++j) orow[j] += dot(arow, b.row(j), k);
  }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  assert(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int p = 0; p < m; ++p) {
    const Real* arow = a.row(p);
    const Real* brow = b.row(p);
    for (int i = 0; i < k; ++i) {
      const Real aip = arow[i];
      Real* orow = out.row(i);
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

void softmax_inplace(Real* x, int n) {
  Real mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  Real sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const Real inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

void rmsnorm_row(const Real* x, const Real* gain, Real* y, int n, Real eps) {
  Real ss = 0.0;
  for (int i = 0; i < n; ++i) ss += x[i] * x[i];
  const Real inv = 1.0 / std::sqrt(ss / n + eps);
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv * gain[i];
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace svc
