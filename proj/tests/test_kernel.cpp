#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include <skelup/kernel.hpp>

using namespace skelup;
using std::numbers::pi;

TEST(LaplaceDoubleLayer, CircleOffDiagonalIsConstant) {
  const auto g = laplace_dlp(bump_circle(256));
  const auto& d = g->disc();
  for (Dof i = 0; i < 256; i += 17)
    for (Dof j = 0; j < 256; j += 5) {
      if (i == j) continue;
      EXPECT_NEAR(g->entry(i, j), -d.weights[j] / (4.0 * pi), 1e-15);
    }
}

TEST(LaplaceDoubleLayer, CircleDiagonalLimit) {
  const auto g = laplace_dlp(bump_circle(300));
  const auto& d = g->disc();
  for (Dof i = 0; i < 300; i += 7) EXPECT_NEAR(g->entry(i, i), -0.5 - d.weights[i] / (4.0 * pi), 1e-15);
  // The diagonal continues the off-diagonal limit: entries next to i approach it.
  const auto fine = laplace_dlp(bump_circle(4096, proportion_window()));
  const Dof i = 2048;  // bump apex
  const double limit = fine->entry(i, i) + 0.5;
  const auto& f = fine->disc();
  EXPECT_NEAR(fine->entry(i, i + 1) / f.weights[i + 1], limit / f.weights[i], 1e-3 * std::abs(limit / f.weights[i]));
}

TEST(LaplaceDoubleLayer, RowSumIsMinusOne) {
  const auto g = laplace_dlp(bump_circle(4096, proportion_window()));
  for (Dof i : {0, 1000, 2048, 1900, 3500}) {
    double s = 0.0;
    for (Dof j = 0; j < 4096; ++j) s += g->entry(i, j);
    EXPECT_NEAR(s, -1.0, 1e-9) << "row " << i;
  }
}

TEST(LaplaceDoubleLayer, InteriorDirichletSolve) {
  const int n = 2048;
  const auto g = laplace_dlp(bump_circle(n, proportion_window()));
  const auto& d = g->disc();
  auto u = [](Point p) { return p.x * p.x - p.y * p.y; };
  Eigen::VectorXd f(n);
  for (int i = 0; i < n; ++i) f(i) = u(d.points[i]);
  const Eigen::VectorXd sigma = g->dense().partialPivLu().solve(f);
  for (Point x : {Point{0.2, 0.1}, Point{-0.4, 0.3}, Point{0.0, -0.5}}) {
    double v = 0.0;
    for (int j = 0; j < n; ++j) v += LaplaceDoubleLayer::dlp(x, d.points[j], d.normals[j]) * d.weights[j] * sigma(j);
    EXPECT_NEAR(v, u(x), 1e-10);
  }
}

TEST(LaplaceDoubleLayer, MissingNormalsRejected) {
  Discretization d = unit_grid(4);
  EXPECT_THROW(LaplaceDoubleLayer{d}, GeometryError);
}

TEST(BumpCircle, RadiusAtApexAndEndpoints) {
  const Discretization d = bump_circle(4096, proportion_window());
  EXPECT_NEAR(std::hypot(d.points[2048].x, d.points[2048].y), 1.0 + 0.25 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(1.0 + 0.25 * std::exp(-1.0), 1.09197, 1e-5);
  // Outside the open window the curve is the unit circle.
  for (std::size_t j : {0u, 1843u, 2253u, 4000u}) EXPECT_DOUBLE_EQ(std::hypot(d.points[j].x, d.points[j].y), 1.0);
  // Normals are unit, outward, and orthogonal to a finite-difference tangent.
  for (std::size_t j = 1900; j < 2200; j += 13) {
    const Point n = d.normals[j];
    const Point t{d.points[j + 1].x - d.points[j - 1].x, d.points[j + 1].y - d.points[j - 1].y};
    EXPECT_NEAR(n.x * t.x + n.y * t.y, 0.0, 1e-3 * std::hypot(t.x, t.y));
    EXPECT_GT(n.x * d.points[j].x + n.y * d.points[j].y, 0.0);
  }
}

TEST(BumpCircle, WeightsSumToArcLength) {
  EXPECT_NEAR([] {
    double s = 0.0;
    for (double w : bump_circle(1024).weights) s += w;
    return s;
  }(), 2.0 * pi, 1e-12);
}

TEST(BumpCircle, FixedCountWindowChangesOnlyWindowPoints) {
  const std::size_t n = 4096;
  const BumpWindow w = count_window(n);
  const auto a = laplace_dlp(bump_circle(n, w));
  const auto b = laplace_dlp(bump_circle(n));
  const Perturbation p = diff(*a, *b);
  std::size_t in_window = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = 2.0 * pi * static_cast<double>(j) / static_cast<double>(n);
    const bool inside = t > w.t_m && t < w.t_M;
    in_window += inside;
    const bool changed = std::binary_search(p.modified.begin(), p.modified.end(), static_cast<Dof>(j));
    if (!inside) EXPECT_FALSE(changed) << j;
    // A bump above rounding level must register.
    const double s = (2.0 * t - (w.t_M + w.t_m)) / (w.t_M - w.t_m);
    if (inside && 0.25 * std::exp(-1.0 / (1.0 - s * s)) > 1e-15) EXPECT_TRUE(changed) << j;
  }
  EXPECT_EQ(in_window, 999u);
  EXPECT_GE(p.modified.size(), 980u);
  EXPECT_LE(p.modified.size(), 999u);
}

TEST(BumpCircle, FixedProportionScalesWithN) {
  for (std::size_t n : {1024u, 2048u, 4096u}) {
    const Perturbation p = diff(*laplace_dlp(bump_circle(n, proportion_window())), *laplace_dlp(bump_circle(n)));
    EXPECT_NEAR(static_cast<double>(p.modified.size()) / n, 0.1, 0.01);
  }
}

namespace {

cdouble hankel0_ref(double x) { return {std::cyl_bessel_j(0.0, x), std::cyl_neumann(0.0, x)}; }

// Composite Simpson on n (even) panels.
template <class F>
cdouble simpson(const F& f, double a, double b, int n) {
  const double h = (b - a) / n;
  cdouble s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

}  // namespace

TEST(LippmannSchwinger, ZeroScattererIsIdentity) {
  const Discretization g = unit_grid(8);
  const auto k = helmholtz_ls(g, std::vector<double>(64, 0.0), 2.0 * pi);
  const Eigen::MatrixXcd a = k->dense();
  EXPECT_EQ((a - Eigen::MatrixXcd::Identity(64, 64)).norm(), 0.0);
}

TEST(LippmannSchwinger, EntriesMatchDirectFormula) {
  const std::size_t n = 32;
  const Discretization g = unit_grid(n);
  const double kw = 2.0 * pi * 0.1 * 10.0;
  const std::vector<double> w = scatterer_w0(g);
  const auto k = helmholtz_ls(g, w, kw);
  const double h = 1.0 / n;
  std::mt19937 rng(3);
  std::uniform_int_distribution<Dof> pick(0, static_cast<Dof>(n * n - 1));
  for (int t = 0; t < 500; ++t) {
    const Dof i = pick(rng), j = pick(rng);
    if (i == j) continue;
    const double r = distance(g.points[i], g.points[j]);
    const cdouble want = kw * kw * h * h * std::sqrt(w[i] * w[j]) * cdouble(0.0, 0.25) * hankel0_ref(kw * r);
    EXPECT_LT(std::abs(k->entry(i, j) - want), 1e-13 * std::abs(want));
    EXPECT_EQ(k->entry(i, j), k->entry(j, i));
  }
}

TEST(LippmannSchwinger, SelfCellIntegral) {
  for (double kw : {2.0 * pi * 0.1, 2.0 * pi, 20.0 * pi}) {
    const double h = 1.0 / 32.0;
    // Polar coordinates over one eighth of the cell; r = u^2 smooths the log singularity.
    auto inner = [&](double theta) {
      const double rmax = 0.5 * h / std::cos(theta);
      auto f = [&](double u) {
        const double r = u * u;
        return r == 0.0 ? cdouble(0.0) : cdouble(0.0, 0.25) * hankel0_ref(kw * r) * r * 2.0 * u;
      };
      return simpson(f, 0.0, std::sqrt(rmax), 400);
    };
    const cdouble want = 8.0 * simpson(inner, 0.0, 0.25 * pi, 200);
    const cdouble got = helmholtz_cell_integral(kw, h);
    EXPECT_LT(std::abs(got - want), 1e-9 * std::abs(want)) << "k = " << kw;
  }
}

TEST(LippmannSchwinger, DiagonalUsesCellIntegral) {
  const Discretization g = unit_grid(16);
  const std::vector<double> w = scatterer_w0(g);
  const double kw = 2.0 * pi;
  const auto k = helmholtz_ls(g, w, kw);
  const cdouble self = helmholtz_cell_integral(kw, 1.0 / 16.0);
  for (Dof i : {0, 100, 136, 255}) EXPECT_EQ(k->entry(i, i), 1.0 + kw * kw * w[i] * self);
}

TEST(LippmannSchwinger, RejectsNegativeScatterer) {
  const Discretization g = unit_grid(4);
  std::vector<double> w(16, 1.0);
  w[3] = -1e-3;
  EXPECT_THROW(helmholtz_ls(g, w, 1.0), GeometryError);
}

TEST(Scatterer, GaussianValues) {
  EXPECT_DOUBLE_EQ(gaussian_w0({0.5, 0.5}), 1.0);
  const Discretization g = unit_grid(64);
  const double s = perturbation_scale(g);
  const double w1 = gaussian_w0(kBumpCenter) + gaussian_bump(kBumpCenter, s);
  EXPECT_NEAR(w1, 1.0 + std::exp(-16.0 * 0.18), 1e-15);
}

TEST(Scatterer, PerturbationTouchesAbout340Points) {
  for (std::size_t n : {32u, 64u, 128u}) {
    const Discretization g = unit_grid(n);
    const auto a = helmholtz_ls(g, scatterer_w0(g), 2.0 * pi * 0.1);
    const auto b = helmholtz_ls(g, scatterer_w1(g, perturbation_scale(g)), 2.0 * pi * 0.1);
    const Perturbation p = diff(*a, *b);
    EXPECT_GE(p.modified.size(), 320u) << n;
    EXPECT_LE(p.modified.size(), 360u) << n;
    // Unmodified pairs keep identical entries.
    std::vector<Dof> keep;
    for (Dof i = 0; i < static_cast<Dof>(g.size()) && keep.size() < 40; i += 7)
      if (!std::binary_search(p.modified.begin(), p.modified.end(), i)) keep.push_back(i);
    for (Dof i : keep)
      for (Dof j : keep) EXPECT_EQ(a->entry(i, j), b->entry(i, j));
  }
}

TEST(Perturbation, IdenticalKernelsGiveEmptySet) {
  const auto a = laplace_dlp(bump_circle(512));
  const auto b = laplace_dlp(bump_circle(512));
  EXPECT_TRUE(diff(*a, *b).empty());
}

TEST(Perturbation, GlobalChangeMarksEverything) {
  const Discretization g = unit_grid(8);
  const auto a = helmholtz_ls(g, scatterer_w0(g), 1.0);
  const auto b = helmholtz_ls(g, scatterer_w0(g), 1.5);
  EXPECT_EQ(diff(*a, *b).modified.size(), 64u);
}

TEST(KernelMatrix, BlockAndMultiplyAgreeWithDense) {
  const auto k = laplace_dlp(bump_circle(200, proportion_window()));
  const Eigen::MatrixXd a = k->dense();
  const std::vector<Dof> rows{3, 7, 150}, cols{0, 7, 9, 199};
  const Eigen::MatrixXd blk = k->block(rows, cols);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(blk(r, c), a(rows[r], cols[c]));
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(200, -1.0, 1.0);
  EXPECT_LT((k->multiply(x) - a * x).norm(), 1e-13 * (a * x).norm());
}

TEST(ProxyRows, FirstBlockIsKernelFromProxyPoints) {
  const Discretization g = unit_grid(16);
  const std::vector<double> w = scatterer_w0(g);
  const double kw = 2.0 * pi;
  const auto k = helmholtz_ls(g, w, kw);
  const ProxySurface s = ProxySurface::circle({0.5, 0.5}, 0.3, 16);
  const std::vector<Dof> cols{119, 120, 135};
  const Eigen::MatrixXcd p = k->proxy_rows(s, cols);
  ASSERT_EQ(p.rows(), 64);
  for (int c = 0; c < 3; ++c)
    for (int q = 0; q < 16; ++q) {
      const double r = distance(s.points[q], g.points[cols[c]]);
      const cdouble want = kw * kw * std::sqrt(w[cols[c]]) / 256.0 * cdouble(0.0, 0.25) * hankel0_ref(kw * r);
      EXPECT_LT(std::abs(p(q, c) - want), 1e-13 * std::abs(want));
      EXPECT_EQ(p(32 + q, c), std::conj(p(q, c)));
    }

  const auto lap = laplace_dlp(bump_circle(64));
  const Eigen::MatrixXd pl = lap->proxy_rows(s, cols);
  ASSERT_EQ(pl.rows(), 48);
  const auto& d = lap->disc();
  for (int c = 0; c < 3; ++c)
    for (int q = 0; q < 16; ++q)
      EXPECT_EQ(pl(q, c), LaplaceDoubleLayer::dlp(s.points[q], d.points[cols[c]], d.normals[cols[c]]) *
                              d.weights[cols[c]]);
}
