#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <span>
#include <vector>

#include "kernel.hpp"

namespace skelup {

template <class Scalar>
struct IdResult {
  std::vector<int> skel;    // column positions, pivot order
  std::vector<int> redund;  // column positions, pivot order
  Matrix<Scalar> T;         // |skel| x |redund|, A(:,redund) ~ A(:,skel) T
};

namespace detail {
inline double abs2(double v) { return v * v; }
inline double abs2(const cdouble& v) { return v.real() * v.real() + v.imag() * v.imag(); }
inline double conj(double v) { return v; }
inline cdouble conj(const cdouble& v) { return std::conj(v); }
inline double unit_phase(double v) { return v < 0.0 ? -1.0 : 1.0; }
inline cdouble unit_phase(const cdouble& v) {
  const double a = std::abs(v);
  return a == 0.0 ? cdouble(1.0) : v / a;
}
}  // namespace detail

// Column-pivoted Householder QR truncated at the first pivot <= eps * first pivot.
// Every reduction runs sequentially in row order, so appended zero rows leave
// all results bitwise unchanged.
template <class Scalar>
IdResult<Scalar> id(const Matrix<Scalar>& A, double eps) {
  const Eigen::Index m = A.rows(), n = A.cols();
  IdResult<Scalar> out;
  if (n == 0) {
    out.T.resize(0, 0);
    return out;
  }
  Matrix<Scalar> R = A;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> norm2(n);
  auto column_norm2 = [&](Eigen::Index j, Eigen::Index from) {
    const Scalar* c = R.data() + j * m;
    double s = 0.0;
    for (Eigen::Index i = from; i < m; ++i) s += detail::abs2(c[i]);
    return s;
  };
  for (Eigen::Index j = 0; j < n; ++j) norm2[j] = column_norm2(j, 0);
  std::vector<double> norm0 = norm2;

  const Eigen::Index kmax = std::min(m, n);
  Eigen::Index k = 0;
  double first = 0.0;
  std::vector<Scalar> u(m);
  for (; k < kmax; ++k) {
    Eigen::Index p = k;
    for (Eigen::Index j = k + 1; j < n; ++j)
      if (norm2[j] > norm2[p]) p = j;
    // Downdated norms only choose the pivot; the reflector needs the exact one.
    const double pivot = std::sqrt(column_norm2(p, k));
    if (k == 0) first = pivot;
    if (pivot == 0.0 || pivot <= eps * first) break;
    if (p != k) {
      R.col(k).swap(R.col(p));
      std::swap(perm[k], perm[p]);
      std::swap(norm2[k], norm2[p]);
      std::swap(norm0[k], norm0[p]);
    }
    Scalar* ck = R.data() + k * m;
    const Scalar alpha = ck[k];
    const Scalar phase = detail::unit_phase(alpha);
    const Scalar beta = -phase * pivot;
    for (Eigen::Index i = k; i < m; ++i) u[i] = ck[i];
    u[k] = alpha + phase * pivot;
    const double uu = 2.0 * pivot * (pivot + std::abs(alpha));
    for (Eigen::Index j = k + 1; j < n; ++j) {
      Scalar* cj = R.data() + j * m;
      Scalar s(0);
      for (Eigen::Index i = k; i < m; ++i) s += detail::conj(u[i]) * cj[i];
      const Scalar f = (2.0 / uu) * s;
      for (Eigen::Index i = k; i < m; ++i) cj[i] -= u[i] * f;
    }
    ck[k] = beta;
    for (Eigen::Index i = k + 1; i < m; ++i) ck[i] = Scalar(0);
    // Downdate the trailing norms; recompute where cancellation sets in.
    for (Eigen::Index j = k + 1; j < n; ++j) {
      const double d = norm2[j] - detail::abs2(R(k, j));
      norm2[j] = (d <= 1e-4 * norm0[j]) ? column_norm2(j, k + 1) : d;
      if (d <= 1e-4 * norm0[j]) norm0[j] = norm2[j];
    }
  }

  out.skel.assign(perm.begin(), perm.begin() + k);
  out.redund.assign(perm.begin() + k, perm.end());
  const Eigen::Index r = n - k;
  out.T.resize(k, r);
  // Back substitution R11 T = R12, column by column.
  for (Eigen::Index c = 0; c < r; ++c) {
    for (Eigen::Index i = k - 1; i >= 0; --i) {
      Scalar s = R(i, k + c);
      for (Eigen::Index l = i + 1; l < k; ++l) s -= R(i, l) * out.T(l, c);
      out.T(i, c) = s / R(i, i);
    }
  }
  return out;
}

// ID of A computed from the rows listed in `rows` only (e.g. the rows that are
// not identically zero).
template <class Scalar>
IdResult<Scalar> id_rows_reduced(const Matrix<Scalar>& A, std::span<const int> rows, double eps) {
  Matrix<Scalar> sub(rows.size(), A.cols());
  for (Eigen::Index r = 0; r < sub.rows(); ++r) sub.row(r) = A.row(rows[r]);
  return id(sub, eps);
}

// Compression stack [A(N,I); A(I,N)^*; proxy rows of I].
template <class Scalar>
Matrix<Scalar> proxy_stack(const Matrix<Scalar>& a_ni, const Matrix<Scalar>& a_in, const Matrix<Scalar>& proxy) {
  const Eigen::Index n = proxy.cols();
  Matrix<Scalar> out(a_ni.rows() + a_in.cols() + proxy.rows(), n);
  out.topRows(a_ni.rows()) = a_ni;
  out.middleRows(a_ni.rows(), a_in.cols()) = a_in.adjoint();
  out.bottomRows(proxy.rows()) = proxy;
  return out;
}

// Proxy rows of `cols` for a disc of radius `radius` around `center`.
template <class Scalar>
Matrix<Scalar> proxy_rows(const KernelMatrix<Scalar>& kernel, Point center, double radius, int n_proxy,
                          std::span<const Dof> cols) {
  int n = n_proxy;
  if (kernel.wavenumber() * radius > 2.0 * std::numbers::pi) n *= 2;
  return kernel.proxy_rows(ProxySurface::circle(center, radius, n), cols);
}

}  // namespace skelup
