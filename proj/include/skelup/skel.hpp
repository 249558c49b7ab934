#pragma once

#include <Eigen/LU>

#include <algorithm>
#include <complex>
#include <cstring>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "compress.hpp"

namespace skelup {

class SingularBlock : public std::runtime_error {
 public:
  SingularBlock() : std::runtime_error("redundant block singular; decrease eps or n_occ") {}
};

// Box owners use kind 0 and i = box id; edge owners use kind 1 + orient and the edge indices.
struct OwnerKey {
  std::int32_t level = 0;
  std::int32_t kind = 0;
  std::int64_t i = 0;
  std::int64_t j = 0;

  static OwnerKey box(int level, int id) { return {level, 0, id, 0}; }
  static OwnerKey edge(const EdgeKey& e) { return {e.level, 1 + e.orient, e.i, e.j}; }
  bool is_box() const { return kind == 0; }
  EdgeKey edge_key() const { return {level, kind - 1, i, j}; }

  friend bool operator==(const OwnerKey&, const OwnerKey&) = default;
  friend auto operator<=>(const OwnerKey&, const OwnerKey&) = default;
};

struct OwnerKeyHash {
  std::size_t operator()(const OwnerKey& k) const {
    std::size_t h = std::hash<std::int64_t>()(k.i);
    h = h * 1000003u ^ std::hash<std::int64_t>()(k.j);
    h = h * 1000003u ^ static_cast<std::size_t>(k.kind * 64 + k.level);
    return h;
  }
};

// Log-determinant of an LU factor, imaginary part kept in (-pi, pi].
template <class Scalar>
cdouble lu_logdet(const Eigen::PartialPivLU<Matrix<Scalar>>& lu) {
  cdouble s(0.0);
  const auto& m = lu.matrixLU();
  for (Eigen::Index i = 0; i < m.rows(); ++i) s += std::log(cdouble(m(i, i)));
  if (lu.permutationP().determinant() < 0) s += cdouble(0.0, std::numbers::pi);
  return s;
}

inline cdouble wrap_phase(cdouble z) {
  double im = std::remainder(z.imag(), 2.0 * std::numbers::pi);
  if (im <= -std::numbers::pi) im += 2.0 * std::numbers::pi;
  return {z.real(), im};
}

template <class Scalar>
struct SkelData {
  OwnerKey owner;
  std::vector<Dof> dofs;       // I, ascending
  std::vector<int> skel;       // positions into dofs, T row order
  std::vector<int> redund;     // positions into dofs, T column order
  std::vector<int> skel_slot;  // position in dofs -> index into skel, or -1
  Matrix<Scalar> T;
  Matrix<Scalar> d_ss;
  Matrix<Scalar> d_rr;
  Matrix<Scalar> x_sr;  // D_SR D_RR^-1
  Matrix<Scalar> x_rs;  // D_RR^-1 D_RS
  Eigen::PartialPivLU<Matrix<Scalar>> d_rr_lu;

  int position(Dof d) const {
    auto it = std::lower_bound(dofs.begin(), dofs.end(), d);
    return (it != dofs.end() && *it == d) ? static_cast<int>(it - dofs.begin()) : -1;
  }
  std::vector<Dof> skel_dofs() const {
    std::vector<Dof> out;
    for (int p : skel) out.push_back(dofs[p]);
    return out;
  }
  std::vector<Dof> redund_dofs() const {
    std::vector<Dof> out;
    for (int p : redund) out.push_back(dofs[p]);
    return out;
  }
  cdouble logdet_rr() const { return redund.empty() ? cdouble(0.0) : lu_logdet<Scalar>(d_rr_lu); }
};

template <class Scalar>
Eigen::PartialPivLU<Matrix<Scalar>> checked_lu(const Matrix<Scalar>& a) {
  Eigen::PartialPivLU<Matrix<Scalar>> lu(a);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double v = std::abs(lu.matrixLU()(i, i));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (a.rows() > 0 && !(lo > 1e3 * std::numeric_limits<double>::epsilon() * hi)) throw SingularBlock();
  return lu;
}

// Skeletonize index set `dofs` given its diagonal block and its compression stack.
template <class Scalar>
SkelData<Scalar> skeletonize(const OwnerKey& owner, std::vector<Dof> dofs, const Matrix<Scalar>& a_ii,
                             const Matrix<Scalar>& stack, double eps) {
  SkelData<Scalar> sk;
  sk.owner = owner;
  sk.dofs = std::move(dofs);
  IdResult<Scalar> idr = id<Scalar>(stack, eps);
  sk.skel = std::move(idr.skel);
  sk.redund = std::move(idr.redund);
  sk.T = std::move(idr.T);
  sk.skel_slot.assign(sk.dofs.size(), -1);
  for (std::size_t s = 0; s < sk.skel.size(); ++s) sk.skel_slot[sk.skel[s]] = static_cast<int>(s);

  const auto ns = static_cast<Eigen::Index>(sk.skel.size());
  const auto nr = static_cast<Eigen::Index>(sk.redund.size());
  Matrix<Scalar> a_ss(ns, ns), a_sr(ns, nr), a_rs(nr, ns), a_rr(nr, nr);
  for (Eigen::Index c = 0; c < ns; ++c) {
    for (Eigen::Index r = 0; r < ns; ++r) a_ss(r, c) = a_ii(sk.skel[r], sk.skel[c]);
    for (Eigen::Index r = 0; r < nr; ++r) a_rs(r, c) = a_ii(sk.redund[r], sk.skel[c]);
  }
  for (Eigen::Index c = 0; c < nr; ++c) {
    for (Eigen::Index r = 0; r < ns; ++r) a_sr(r, c) = a_ii(sk.skel[r], sk.redund[c]);
    for (Eigen::Index r = 0; r < nr; ++r) a_rr(r, c) = a_ii(sk.redund[r], sk.redund[c]);
  }
  const Matrix<Scalar> Tadj = sk.T.adjoint();
  const Matrix<Scalar> d_sr = a_sr - a_ss * sk.T;
  const Matrix<Scalar> d_rs = a_rs - Tadj * a_ss;
  sk.d_rr = a_rr - a_rs * sk.T - Tadj * a_sr + Tadj * a_ss * sk.T;
  if (nr > 0) {
    sk.d_rr_lu = checked_lu<Scalar>(sk.d_rr);
    sk.x_rs = sk.d_rr_lu.solve(d_rs);
    const Matrix<Scalar> rhs = d_sr.transpose();
    const Matrix<Scalar> sol = sk.d_rr_lu.transpose().solve(rhs);
    sk.x_sr = sol.transpose();
  } else {
    sk.x_rs.resize(0, ns);
    sk.x_sr.resize(ns, 0);
  }
  sk.d_ss = a_ss - d_sr * sk.x_rs;
  return sk;
}

// Skeletonize I against the full complement of a dense matrix (global stack).
template <class Scalar>
SkelData<Scalar> skeletonize_dense(const Matrix<Scalar>& A, std::vector<Dof> dofs, double eps,
                                   const OwnerKey& owner = {}) {
  std::sort(dofs.begin(), dofs.end());
  std::vector<Dof> rest;
  for (Dof d = 0; d < static_cast<Dof>(A.rows()); ++d)
    if (!std::binary_search(dofs.begin(), dofs.end(), d)) rest.push_back(d);
  const auto n = static_cast<Eigen::Index>(dofs.size());
  const auto m = static_cast<Eigen::Index>(rest.size());
  Matrix<Scalar> a_ii(n, n), a_ni(m, n), a_in(n, m);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) a_ii(r, c) = A(dofs[r], dofs[c]);
    for (Eigen::Index r = 0; r < m; ++r) a_ni(r, c) = A(rest[r], dofs[c]);
  }
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index r = 0; r < n; ++r) a_in(r, c) = A(dofs[r], rest[c]);
  Matrix<Scalar> stack(2 * m, n);
  stack.topRows(m) = a_ni;
  stack.bottomRows(m) = a_in.adjoint();
  return skeletonize<Scalar>(owner, std::move(dofs), a_ii, stack, eps);
}

namespace detail {
template <class Scalar>
Vector<Scalar> gather(const SkelData<Scalar>& sk, const std::vector<int>& pos, const Vector<Scalar>& x) {
  Vector<Scalar> v(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) v(k) = x(sk.dofs[pos[k]]);
  return v;
}
template <class Scalar>
void scatter(const SkelData<Scalar>& sk, const std::vector<int>& pos, const Vector<Scalar>& v, Vector<Scalar>& x) {
  for (std::size_t k = 0; k < pos.size(); ++k) x(sk.dofs[pos[k]]) = v(k);
}
}  // namespace detail

enum class ElimSide { left_adjoint, right };

// left_adjoint: x <- U^* x = M^* Q^* x.  right: x <- V x = Q H x.
template <class Scalar>
void apply_elim(const SkelData<Scalar>& sk, ElimSide side, Vector<Scalar>& x) {
  Vector<Scalar> xs = detail::gather(sk, sk.skel, x);
  Vector<Scalar> xr = detail::gather(sk, sk.redund, x);
  if (side == ElimSide::left_adjoint) {
    xr.noalias() -= sk.T.adjoint() * xs;
    xs.noalias() -= sk.x_sr * xr;
  } else {
    xr.noalias() -= sk.x_rs * xs;
    xs.noalias() -= sk.T * xr;
  }
  detail::scatter(sk, sk.skel, xs, x);
  detail::scatter(sk, sk.redund, xr, x);
}

// Inverse of apply_elim with the same side.
template <class Scalar>
void apply_elim_inv(const SkelData<Scalar>& sk, ElimSide side, Vector<Scalar>& x) {
  Vector<Scalar> xs = detail::gather(sk, sk.skel, x);
  Vector<Scalar> xr = detail::gather(sk, sk.redund, x);
  if (side == ElimSide::left_adjoint) {
    xs.noalias() += sk.x_sr * xr;
    xr.noalias() += sk.T.adjoint() * xs;
  } else {
    xs.noalias() += sk.T * xr;
    xr.noalias() += sk.x_rs * xs;
  }
  detail::scatter(sk, sk.skel, xs, x);
  detail::scatter(sk, sk.redund, xr, x);
}

template <class Scalar>
void apply_rr(const SkelData<Scalar>& sk, Vector<Scalar>& x) {
  if (sk.redund.empty()) return;
  detail::scatter(sk, sk.redund, Vector<Scalar>(sk.d_rr * detail::gather(sk, sk.redund, x)), x);
}

template <class Scalar>
void solve_rr(const SkelData<Scalar>& sk, Vector<Scalar>& x) {
  if (sk.redund.empty()) return;
  detail::scatter(sk, sk.redund, Vector<Scalar>(sk.d_rr_lu.solve(detail::gather(sk, sk.redund, x))), x);
}

// Bitwise comparison of everything a skeletonization stores.
template <class Scalar>
bool same_bits(const SkelData<Scalar>& a, const SkelData<Scalar>& b) {
  auto eq = [](const Matrix<Scalar>& x, const Matrix<Scalar>& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.data(), y.data(), sizeof(Scalar) * static_cast<std::size_t>(x.size())) == 0;
  };
  return a.owner == b.owner && a.dofs == b.dofs && a.skel == b.skel && a.redund == b.redund && eq(a.T, b.T) &&
         eq(a.d_ss, b.d_ss) && eq(a.d_rr, b.d_rr) && eq(a.x_sr, b.x_sr) && eq(a.x_rs, b.x_rs);
}

}  // namespace skelup
