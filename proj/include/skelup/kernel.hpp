#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"

namespace skelup {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using cdouble = std::complex<double>;

template <class Scalar>
class KernelMatrix {
 public:
  virtual ~KernelMatrix() = default;

  virtual const Discretization& disc() const = 0;
  virtual Scalar entry(Dof i, Dof j) const = 0;
  virtual bool symmetric() const { return false; }
  virtual double wavenumber() const { return 0.0; }

  // Rows spanning the interactions of `cols` with anything outside the surface,
  // in both directions.
  virtual Matrix<Scalar> proxy_rows(const ProxySurface& s, std::span<const Dof> cols) const = 0;

  // Every input that influences row and column i. Bitwise-equal signatures
  // (and equal global signatures) imply bitwise-equal entries.
  virtual std::vector<double> dof_signature(Dof i) const = 0;
  virtual std::vector<double> global_signature() const { return {}; }

  std::size_t size() const { return disc().size(); }

  Matrix<Scalar> block(std::span<const Dof> rows, std::span<const Dof> cols) const {
    Matrix<Scalar> out(rows.size(), cols.size());
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = entry(rows[r], cols[c]);
    return out;
  }

  Matrix<Scalar> dense() const {
    const Eigen::Index n = static_cast<Eigen::Index>(size());
    Matrix<Scalar> out(n, n);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < n; ++r) out(r, c) = entry(static_cast<Dof>(r), static_cast<Dof>(c));
    return out;
  }

  // y = G x by direct summation.
  Vector<Scalar> multiply(const Vector<Scalar>& x) const {
    const Eigen::Index n = static_cast<Eigen::Index>(size());
    Vector<Scalar> y = Vector<Scalar>::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Scalar s(0);
      for (Eigen::Index j = 0; j < n; ++j) s += entry(static_cast<Dof>(i), static_cast<Dof>(j)) * x(j);
      y(i) = s;
    }
    return y;
  }
};

// Laplace double-layer operator -1/2 I + D on a closed curve.
class LaplaceDoubleLayer final : public KernelMatrix<double> {
 public:
  explicit LaplaceDoubleLayer(Discretization disc) : disc_(std::move(disc)) {
    disc_.validate();
    if (disc_.normals.empty() || disc_.curvatures.empty())
      throw GeometryError("double-layer kernel needs normals and curvatures");
  }

  const Discretization& disc() const override { return disc_; }

  double entry(Dof i, Dof j) const override {
    constexpr double inv4pi = 0.25 / std::numbers::pi;
    if (i == j) return -0.5 - inv4pi * disc_.curvatures[i] * disc_.weights[i];
    return dlp(disc_.points[i], disc_.points[j], disc_.normals[j]) * disc_.weights[j];
  }

  // d/dn_y of -log|x-y|/(2 pi).
  static double dlp(Point x, Point y, Point ny) {
    const double dx = y.x - x.x, dy = y.y - x.y;
    return -(0.5 / std::numbers::pi) * (dx * ny.x + dy * ny.y) / (dx * dx + dy * dy);
  }
  static double slp(Point x, Point y) { return -(0.5 / std::numbers::pi) * std::log(distance(x, y)); }

  Matrix<double> proxy_rows(const ProxySurface& s, std::span<const Dof> cols) const override {
    const Eigen::Index np = static_cast<Eigen::Index>(s.points.size());
    Matrix<double> out(3 * np, cols.size());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const Dof j = cols[c];
      const Point y = disc_.points[j];
      for (Eigen::Index k = 0; k < np; ++k) {
        const Point z = s.points[k];
        out(k, c) = dlp(z, y, disc_.normals[j]) * disc_.weights[j];
        out(np + k, c) = slp(y, z) * s.arc_weight;
        out(2 * np + k, c) = dlp(y, z, s.normals[k]) * s.arc_weight;
      }
    }
    return out;
  }

  std::vector<double> dof_signature(Dof i) const override {
    const Point p = disc_.points[i], n = disc_.normals[i];
    return {p.x, p.y, disc_.weights[i], n.x, n.y, disc_.curvatures[i]};
  }

 private:
  Discretization disc_;
};

namespace detail {

inline cdouble hankel0(double x) { return {std::cyl_bessel_j(0.0, x), std::cyl_neumann(0.0, x)}; }
inline cdouble hankel1(double x) { return {std::cyl_bessel_j(1.0, x), std::cyl_neumann(1.0, x)}; }

template <class F>
cdouble adaptive_simpson(const F& f, double a, double b, cdouble fa, cdouble fm, cdouble fb, cdouble whole,
                         double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const cdouble flm = f(lm), frm = f(rm);
  const cdouble left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const cdouble right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const cdouble delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
cdouble integrate(const F& f, double a, double b, double tol) {
  const cdouble fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const cdouble whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 50);
}

}  // namespace detail

// Integral of (i/4) H0(k|y|) over the square [-h/2, h/2]^2.
inline cdouble helmholtz_cell_integral(double k, double h) {
  static std::mutex mu;
  static std::map<std::pair<double, double>, cdouble> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find({k, h}); it != cache.end()) return it->second;
  cdouble val;
  if (k == 0.0) {
    val = 0.0;
  } else {
    const cdouble I(0.0, 1.0);
    auto f = [&](double theta) {
      const double r = 0.5 * h / std::cos(theta);
      return r * detail::hankel1(k * r) / k + 2.0 * I / (std::numbers::pi * k * k);
    };
    val = 8.0 * 0.25 * I * detail::integrate(f, 0.0, 0.25 * std::numbers::pi, 1e-13);
  }
  cache.emplace(std::make_pair(k, h), val);
  return val;
}

// Lippmann-Schwinger operator I + k^2 K[w .] symmetrized with sqrt(w), on a
// uniform n x n grid of (0,1)^2.
class LippmannSchwinger final : public KernelMatrix<cdouble> {
 public:
  LippmannSchwinger(Discretization grid, std::vector<double> w, double k)
      : disc_(std::move(grid)), w_(std::move(w)), k_(k) {
    disc_.validate();
    if (w_.size() != disc_.size()) throw GeometryError("scatterer length differs from point count");
    h_ = std::sqrt(disc_.weights.at(0));
    sqrtw_.resize(w_.size());
    for (std::size_t i = 0; i < w_.size(); ++i) {
      if (w_[i] < 0.0) throw GeometryError("scatterer must be nonnegative");
      sqrtw_[i] = std::sqrt(w_[i]);
    }
    self_ = helmholtz_cell_integral(k_, h_);
    build_table();
  }

  const Discretization& disc() const override { return disc_; }
  bool symmetric() const override { return true; }
  double wavenumber() const override { return k_; }
  const std::vector<double>& scatterer() const { return w_; }

  static cdouble green(double k, double r) { return cdouble(0.0, 0.25) * detail::hankel0(k * r); }

  cdouble entry(Dof i, Dof j) const override {
    if (i == j) return 1.0 + k_ * k_ * w_[i] * self_;
    if (sqrtw_[i] == 0.0 || sqrtw_[j] == 0.0) return 0.0;
    const double c = (k_ * k_ * h_ * h_) * (sqrtw_[i] * sqrtw_[j]);  // symmetric to the bit
    if (!table_.empty()) {
      const std::int64_t di = std::abs(cell_[i].first - cell_[j].first);
      const std::int64_t dj = std::abs(cell_[i].second - cell_[j].second);
      return c * table_[static_cast<std::size_t>(di + nx_ * dj)];
    }
    return c * green(k_, distance(disc_.points[i], disc_.points[j]));
  }

  Matrix<cdouble> proxy_rows(const ProxySurface& s, std::span<const Dof> cols) const override {
    const Eigen::Index np = static_cast<Eigen::Index>(s.points.size());
    Matrix<cdouble> out(4 * np, cols.size());
    const cdouble I(0.0, 1.0);
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const Dof j = cols[c];
      const Point y = disc_.points[j];
      const double scale = k_ * k_ * h_ * h_ * sqrtw_[j];
      for (Eigen::Index k = 0; k < np; ++k) {
        const Point z = s.points[k];
        const double dx = y.x - z.x, dy = y.y - z.y;
        const double r = std::hypot(dx, dy);
        const cdouble g = scale * green(k_, r);
        // d/dn_z of (i/4) H0(k|y - z|)
        const double cosang = -(dx * s.normals[k].x + dy * s.normals[k].y) / r;
        const cdouble dg = scale * (-0.25 * I * k_ * detail::hankel1(k_ * r)) * cosang;
        out(k, c) = g;
        out(np + k, c) = dg;
        out(2 * np + k, c) = std::conj(g);
        out(3 * np + k, c) = std::conj(dg);
      }
    }
    return out;
  }

  std::vector<double> dof_signature(Dof i) const override {
    const Point p = disc_.points[i];
    return {p.x, p.y, disc_.weights[i], w_[i]};
  }
  std::vector<double> global_signature() const override { return {k_, h_}; }

 private:
  Discretization disc_;
  std::vector<double> w_;
  std::vector<double> sqrtw_;
  double k_ = 0.0;
  double h_ = 0.0;
  cdouble self_;
  // Green's function by grid offset, filled when the points form a uniform grid of spacing h.
  std::vector<std::pair<std::int64_t, std::int64_t>> cell_;
  std::vector<cdouble> table_;
  std::int64_t nx_ = 0;

  void build_table() {
    double x0 = disc_.points[0].x, y0 = disc_.points[0].y;
    for (const Point& p : disc_.points) x0 = std::min(x0, p.x), y0 = std::min(y0, p.y);
    std::int64_t mx = 0, my = 0;
    cell_.resize(disc_.size());
    for (std::size_t i = 0; i < disc_.size(); ++i) {
      const Point p = disc_.points[i];
      const double fx = (p.x - x0) / h_, fy = (p.y - y0) / h_;
      const std::int64_t ix = std::llround(fx), iy = std::llround(fy);
      if (std::abs(fx - double(ix)) > 1e-6 || std::abs(fy - double(iy)) > 1e-6) {
        cell_.clear();
        return;
      }
      cell_[i] = {ix, iy};
      mx = std::max(mx, ix);
      my = std::max(my, iy);
    }
    if ((mx + 1) * (my + 1) > 16 * static_cast<std::int64_t>(disc_.size())) {
      cell_.clear();
      return;
    }
    nx_ = mx + 1;
    table_.resize(static_cast<std::size_t>(nx_ * (my + 1)));
    for (std::int64_t dj = 0; dj <= my; ++dj)
      for (std::int64_t di = 0; di < nx_; ++di)
        table_[static_cast<std::size_t>(di + nx_ * dj)] =
            (di == 0 && dj == 0) ? cdouble(0.0) : green(k_, h_ * std::hypot(double(di), double(dj)));
  }
};

// Curve r(t) (cos t, sin t) with a smooth bump of height 1/4 on (t_m, t_M).
struct BumpWindow {
  double t_m = 0.0;
  double t_M = 0.0;
};

inline Discretization bump_circle(std::size_t n, std::optional<BumpWindow> window = {}) {
  if (n < 3) throw GeometryError("curve needs at least 3 points");
  Discretization d;
  d.points.resize(n);
  d.weights.resize(n);
  d.normals.resize(n);
  d.params.resize(n);
  d.curvatures.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    double r = 1.0, r1 = 0.0, r2 = 0.0;
    if (window && t > window->t_m && t < window->t_M) {
      const double span = window->t_M - window->t_m;
      const double s = (2.0 * t - (window->t_M + window->t_m)) / span;
      const double ds = 2.0 / span;
      const double q = 1.0 - s * s;
      const double f = 0.25 * std::exp(-1.0 / q);
      const double g1 = -2.0 * s / (q * q);
      const double g2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
      r = 1.0 + f;
      r1 = f * g1 * ds;
      r2 = f * (g1 * g1 + g2) * ds * ds;
    }
    const double c = std::cos(t), sn = std::sin(t);
    const double x1 = r1 * c - r * sn, y1 = r1 * sn + r * c;
    const double x2 = r2 * c - 2.0 * r1 * sn - r * c, y2 = r2 * sn + 2.0 * r1 * c - r * sn;
    const double speed = std::hypot(x1, y1);
    d.points[j] = {r * c, r * sn};
    d.normals[j] = {y1 / speed, -x1 / speed};
    d.weights[j] = speed * 2.0 * std::numbers::pi / static_cast<double>(n);
    d.params[j] = t;
    d.curvatures[j] = (x1 * y2 - y1 * x2) / (speed * speed * speed);
  }
  return d;
}

inline Discretization bump_circle(std::size_t n, double t_m, double t_M) {
  return bump_circle(n, BumpWindow{t_m, t_M});
}

inline BumpWindow proportion_window() { return {0.9 * std::numbers::pi, 1.1 * std::numbers::pi}; }
inline BumpWindow count_window(std::size_t n) {
  const double half = 1000.0 * std::numbers::pi / static_cast<double>(n);
  return {std::numbers::pi - half, std::numbers::pi + half};
}

// Cell-centered n x n grid on (0,1)^2, index i + n*j.
inline Discretization unit_grid(std::size_t n) {
  Discretization d;
  const double h = 1.0 / static_cast<double>(n);
  d.points.resize(n * n);
  d.weights.assign(n * n, h * h);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      d.points[i + n * j] = {(static_cast<double>(i) + 0.5) * h, (static_cast<double>(j) + 0.5) * h};
  return d;
}

inline double gaussian_w0(Point x) {
  const double dx = x.x - 0.5, dy = x.y - 0.5;
  return std::exp(-16.0 * (dx * dx + dy * dy));
}

inline constexpr Point kBumpCenter{0.8, 0.8};

// Exponent s for which about `count` grid points see exp(-s|x-d|^2) above 2^-52.
inline double perturbation_scale(const Discretization& grid, std::size_t count = 340) {
  std::vector<double> r;
  r.reserve(grid.size());
  for (const Point& p : grid.points) r.push_back(distance(p, kBumpCenter));
  std::sort(r.begin(), r.end());
  if (count == 0 || count >= r.size()) throw GeometryError("perturbation count out of range");
  const double rho = 0.5 * (r[count - 1] + r[count]);
  return 52.0 * std::numbers::ln2 / (rho * rho);
}

inline double gaussian_bump(Point x, double s) {
  const double dx = x.x - kBumpCenter.x, dy = x.y - kBumpCenter.y;
  const double v = std::exp(-s * (dx * dx + dy * dy));
  return v <= std::ldexp(1.0, -52) ? 0.0 : v;
}

inline std::vector<double> scatterer_w0(const Discretization& grid) {
  std::vector<double> w(grid.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = gaussian_w0(grid.points[i]);
  return w;
}

inline std::vector<double> scatterer_w1(const Discretization& grid, double s) {
  std::vector<double> w(grid.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = gaussian_w0(grid.points[i]) + gaussian_bump(grid.points[i], s);
  return w;
}

inline std::shared_ptr<const LaplaceDoubleLayer> laplace_dlp(Discretization disc) {
  return std::make_shared<const LaplaceDoubleLayer>(std::move(disc));
}

inline std::shared_ptr<const LippmannSchwinger> helmholtz_ls(Discretization grid, std::vector<double> w, double k) {
  return std::make_shared<const LippmannSchwinger>(std::move(grid), std::move(w), k);
}

struct Perturbation {
  std::vector<Dof> modified;  // ascending
  std::string description;
  const Discretization* old_disc = nullptr;
  const Discretization* new_disc = nullptr;

  bool empty() const { return modified.empty(); }
};

namespace detail {
inline bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
}  // namespace detail

template <class Scalar>
Perturbation diff(const KernelMatrix<Scalar>& old_k, const KernelMatrix<Scalar>& new_k) {
  if (old_k.size() != new_k.size()) throw GeometryError("perturbation changes the number of DOFs");
  Perturbation p;
  p.old_disc = &old_k.disc();
  p.new_disc = &new_k.disc();
  const auto n = static_cast<Dof>(old_k.size());
  if (!detail::same_bits(old_k.global_signature(), new_k.global_signature())) {
    p.description = "global parameters changed";
    p.modified.resize(n);
    for (Dof i = 0; i < n; ++i) p.modified[i] = i;
    return p;
  }
  for (Dof i = 0; i < n; ++i)
    if (!detail::same_bits(old_k.dof_signature(i), new_k.dof_signature(i))) p.modified.push_back(i);
  p.description = std::to_string(p.modified.size()) + " DOFs changed";
  return p;
}

}  // namespace skelup
