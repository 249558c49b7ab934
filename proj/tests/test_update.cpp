#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include <skelup/bench.hpp>

using namespace skelup;

namespace {

using CellSet = std::set<std::pair<std::int64_t, std::int64_t>>;

// Grid problem with w changed on the DOFs of the given leaves.
struct LeafPerturbation {
  std::shared_ptr<const KernelMatrix<cdouble>> old_k, new_k;
  std::shared_ptr<const QuadTree> tree;
  Perturbation pert;
};

std::shared_ptr<const QuadTree> grid_tree(const Discretization& g, int n_occ) {
  return std::make_shared<const QuadTree>(QuadTree::build(g, n_occ, RootRegion{{0.0, 0.0}, 1.0}));
}

LeafPerturbation perturb_leaves(std::size_t side, int n_occ, const std::vector<int>& leaves) {
  LeafPerturbation out;
  Discretization g = unit_grid(side);
  out.tree = grid_tree(g, n_occ);
  std::vector<double> w0 = scatterer_w0(g), w1 = w0;
  for (int leaf : leaves)
    for (Dof d : out.tree->box(leaf).dofs) w1[d] += 0.5;
  const double k = 2.0 * std::numbers::pi * 0.1;
  out.old_k = helmholtz_ls(g, std::move(w0), k);
  out.new_k = helmholtz_ls(std::move(g), std::move(w1), k);
  out.pert = diff(*out.old_k, *out.new_k);
  return out;
}

// Perturbation touching exactly the DOFs of one leaf, kernel-free.
Perturbation leaf_perturbation(const QuadTree& tree, const Discretization& g, int leaf) {
  Perturbation p;
  p.modified = tree.box(leaf).dofs;
  p.old_disc = &g;
  p.new_disc = &g;
  return p;
}

// Coordinate-level simulation of the box rules on a uniform tree:
// M_L = the leaf and its 8 neighbors, then M_l = parents of M_{l+1} and their
// neighbors. `extra` widens every neighbor ring.
std::vector<CellSet> simulate_rules(int L, std::int64_t x, std::int64_t y, int extra) {
  std::vector<CellSet> m(L + 1);
  const std::int64_t n = std::int64_t{1} << L;
  auto ring = [](CellSet& out, std::int64_t cx, std::int64_t cy, int r, std::int64_t side) {
    for (std::int64_t dx = -r; dx <= r; ++dx)
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        const std::int64_t a = cx + dx, b = cy + dy;
        if (a >= 0 && b >= 0 && a < side && b < side) out.insert({a, b});
      }
  };
  ring(m[L], x, y, 1, n);
  for (int l = L - 1; l >= 1; --l) {
    CellSet parents;
    for (const auto& [a, b] : m[l + 1]) parents.insert({a >> 1, b >> 1});
    for (const auto& [a, b] : parents) ring(m[l], a, b, 1 + extra, std::int64_t{1} << l);
  }
  return m;
}

CellSet box_cells(const QuadTree& tree, const std::vector<OwnerKey>& keys) {
  CellSet out;
  for (const OwnerKey& k : keys) {
    const Box& b = tree.box(static_cast<int>(k.i));
    out.insert({b.z1, b.z2});
  }
  return out;
}

bool subset(const std::vector<OwnerKey>& a, const std::vector<OwnerKey>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

template <class Scalar>
void expect_exact(const Factorization<Scalar>& updated, const Factorization<Scalar>& fresh) {
  EXPECT_TRUE(same_bits(updated, fresh));
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::mt19937_64 rng(500 + s);
    const Vector<Scalar> x = random_vector<Scalar>(fresh.size(), rng);
    const Vector<Scalar> y = fresh.apply(x);
    EXPECT_LE((updated.apply(x) - y).norm(), 1e-13 * y.norm());
  }
}

// Owners whose stored data differ between two builds over the same tree.
template <class Scalar>
std::vector<std::vector<OwnerKey>> differing_owners(const Factorization<Scalar>& a, const Factorization<Scalar>& b) {
  std::vector<std::vector<OwnerKey>> out(a.stages.size());
  for (std::size_t t = 0; t < a.stages.size(); ++t) {
    std::set<OwnerKey> keys;
    for (const auto& sk : a.stages[t].owners) keys.insert(sk->owner);
    for (const auto& sk : b.stages[t].owners) keys.insert(sk->owner);
    for (const OwnerKey& k : keys) {
      const auto* x = a.stages[t].find(k);
      const auto* y = b.stages[t].find(k);
      if (!x || !y || !same_bits(*x, *y)) out[t].push_back(k);
    }
  }
  return out;
}

}  // namespace

TEST(Mark, EmptyPerturbation) {
  const Discretization g = unit_grid(32);
  const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
  const Perturbation none;
  for (FactorKind kind : {FactorKind::rskelf, FactorKind::hif}) {
    const MarkedSets m = mark(kind, tree, tree, none);
    EXPECT_EQ(m.stages.size(), stage_tags(tree, kind).size());
    for (const auto& st : m.stages) EXPECT_TRUE(st.marked.empty());
    EXPECT_EQ(m.total(), 0u);
  }
}

TEST(Mark, RskelfMatchesRuleSimulation) {
  const Discretization g = unit_grid(64);
  const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
  const int L = tree.max_level();
  ASSERT_EQ(L, 5);
  std::mt19937_64 rng(11);
  std::vector<int> leaves = tree.level_boxes(L);
  std::shuffle(leaves.begin(), leaves.end(), rng);
  leaves.resize(20);
  leaves.push_back(tree.find(L, 0, 0));  // corner leaf
  for (int leaf : leaves) {
    const Box& b = tree.box(leaf);
    const MarkedSets m = mark_rskelf(tree, tree, leaf_perturbation(tree, g, leaf));
    const auto sim = simulate_rules(L, b.z1, b.z2, 0);
    for (const auto& st : m.stages) EXPECT_EQ(box_cells(tree, st.marked), sim[st.tag.level]) << "level " << st.tag.level;
  }
}

TEST(Mark, CornerLeafPattern) {
  const Discretization g = unit_grid(64);
  const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
  const int L = tree.max_level();
  const int leaf = tree.find(L, 0, 0);
  const MarkedSets m = mark_rskelf(tree, tree, leaf_perturbation(tree, g, leaf));
  // M_L: the corner leaf and its three neighbors, which are its siblings.
  EXPECT_EQ(box_cells(tree, m.stages[0].marked), (CellSet{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
  // Level L-1: one parent, plus the three boxes around it.
  EXPECT_EQ(box_cells(tree, m.stages[1].parent_rule), (CellSet{{0, 0}}));
  EXPECT_EQ(box_cells(tree, m.stages[1].neighbor_rule), (CellSet{{0, 1}, {1, 0}, {1, 1}}));
  EXPECT_EQ(m.stages[1].marked.size(), 4u);
}

TEST(Mark, SingleLeafBounds) {
  for (std::size_t side : {32, 64, 128, 256}) {
    const Discretization g = unit_grid(side);
    const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
    const int L = tree.max_level();
    std::mt19937_64 rng(side);
    std::vector<int> leaves = tree.level_boxes(L);
    std::shuffle(leaves.begin(), leaves.end(), rng);
    leaves.resize(std::min<std::size_t>(leaves.size(), 50));
    for (int leaf : leaves) {
      const Perturbation p = leaf_perturbation(tree, g, leaf);
      for (const auto& st : mark_rskelf(tree, tree, p).stages) {
        EXPECT_LE(st.marked.size(), 25u);
        if (st.tag.level <= L - 3) EXPECT_LE(st.reach, 2);
      }
      for (const auto& st : mark_hif(tree, tree, p).stages) {
        if (st.tag.edge) continue;
        EXPECT_LE(st.marked.size(), 81u);
        if (st.tag.level <= L - 3) EXPECT_LE(st.reach, 4);
      }
    }
  }
}

TEST(Mark, HifBoxesCoverRskelfBoxes) {
  const Discretization g = unit_grid(64);
  const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
  for (int leaf : {tree.find(5, 0, 0), tree.find(5, 13, 20), tree.find(5, 31, 7)}) {
    const Perturbation p = leaf_perturbation(tree, g, leaf);
    const MarkedSets r = mark_rskelf(tree, tree, p);
    const MarkedSets h = mark_hif(tree, tree, p);
    for (const auto& rs : r.stages)
      for (const auto& hs : h.stages)
        if (hs.tag == rs.tag) EXPECT_TRUE(subset(rs.marked, hs.marked));
  }
}

TEST(Mark, Monotone) {
  const Discretization g = unit_grid(64);
  const QuadTree tree = QuadTree::build(g, 4, RootRegion{{0.0, 0.0}, 1.0});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Dof> pick(0, static_cast<Dof>(g.size()) - 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::set<Dof> small, big;
    for (int k = 0; k < 3; ++k) small.insert(pick(rng));
    big = small;
    for (int k = 0; k < 5; ++k) big.insert(pick(rng));
    Perturbation p1, p2;
    p1.modified.assign(small.begin(), small.end());
    p2.modified.assign(big.begin(), big.end());
    p1.old_disc = p1.new_disc = p2.old_disc = p2.new_disc = &g;
    for (FactorKind kind : {FactorKind::rskelf, FactorKind::hif}) {
      const MarkedSets a = mark(kind, tree, tree, p1), b = mark(kind, tree, tree, p2);
      for (std::size_t t = 0; t < a.stages.size(); ++t) EXPECT_TRUE(subset(a.stages[t].marked, b.stages[t].marked));
      for (std::size_t t = 0; t < a.stages.size(); ++t) {
        EXPECT_TRUE(subset(a.stages[t].parent_rule, a.stages[t].marked));
        EXPECT_TRUE(subset(a.stages[t].neighbor_rule, a.stages[t].marked));
      }
    }
  }
}

TEST(Mark, SingleLeafCostGrowsAdditively) {
  std::size_t prev = 0;
  for (int e = 15; e <= 21; ++e) {
    const std::size_t n = std::size_t{1} << e;
    const Discretization d = bump_circle(n, count_window(n));
    const QuadTree tree = QuadTree::build(d, 32);
    const Perturbation p = leaf_perturbation(tree, d, tree.leaf_of(static_cast<Dof>(n / 2)));
    const std::size_t total = mark_rskelf(tree, tree, p).total();
    if (e > 15) EXPECT_LE(total, prev + 25) << "N = 2^" << e;
    prev = total;
  }
}

TEST(Mark, ProportionalPerturbationMarksLinearly) {
  for (int e = 12; e <= 16; ++e) {
    const std::size_t n = std::size_t{1} << e;
    ExperimentConfig c;
    c.N = n;
    c.mode = "fixed-proportion";
    const auto p = circle_problem(c);
    const Perturbation pert = diff(*p.base, *p.perturbed);
    const std::size_t total = mark_rskelf(*p.base_tree, *p.perturbed_tree, pert).total();
    std::size_t boxes = 0;
    for (int l = 1; l <= p.base_tree->max_level(); ++l) boxes += p.base_tree->level_boxes(l).size();
    EXPECT_GE(static_cast<double>(total), 0.05 * static_cast<double>(boxes)) << "N = 2^" << e;
  }
}

TEST(Update, EmptyPerturbationSharesEverything) {
  auto lp = perturb_leaves(32, 8, {});
  ASSERT_TRUE(lp.pert.empty());
  FactorOptions opt;
  const auto f = build<cdouble>(FactorKind::hif, lp.old_k, lp.tree, opt);
  UpdateReport rep;
  const auto g = update(f, lp.old_k, lp.pert, &rep);
  EXPECT_EQ(rep.marked_total, 0u);
  EXPECT_EQ(rep.recomputed, 0u);
  EXPECT_EQ(rep.violations, 0u);
  EXPECT_FALSE(rep.root_refactored);
  EXPECT_EQ(g.root, f.root);
  for (std::size_t t = 0; t < f.stages.size(); ++t) EXPECT_EQ(g.stages[t].owners, f.stages[t].owners);
  const CostReport cr = update_cost_report(f, lp.pert);
  EXPECT_EQ(cr.marked_total, 0u);
  EXPECT_EQ(cr.reskeletonized_dofs, 0u);
  EXPECT_EQ(cr.predicted_work, 0.0);
  EXPECT_EQ(cr.measured_work, 0.0);
  for (const auto& [tag, m] : cr.marked) EXPECT_EQ(m, 0u);
}

TEST(Update, CircleMatchesFreshBuild) {
  for (const char* mode : {"fixed-count", "fixed-proportion"}) {
    ExperimentConfig c;
    c.N = 4096;
    c.mode = mode;
    const auto p = circle_problem(c);
    const auto f_old = build(FactorKind::rskelf, p.base, p.base_tree, c.factor_options());
    const Perturbation pert = diff(*p.base, *p.perturbed);
    UpdateReport rep;
    const auto f_new = update(f_old, p.perturbed, pert, &rep);
    EXPECT_EQ(rep.violations, 0u) << mode;
    expect_exact(f_new, build(FactorKind::rskelf, p.perturbed, p.perturbed_tree, c.factor_options()));
    // Unmarked owners are the old objects.
    for (std::size_t t = 0; t < f_new.stages.size(); ++t)
      for (const auto& sk : f_new.stages[t].owners)
        if (!std::binary_search(rep.rules.stages[t].marked.begin(), rep.rules.stages[t].marked.end(), sk->owner))
          EXPECT_EQ(sk, f_old.stages[t].find_shared(sk->owner));
  }
}

TEST(Update, LippmannSchwingerMatchesFreshBuild) {
  for (FactorKind kind : {FactorKind::hif, FactorKind::rskelf}) {
    ExperimentConfig c;
    c.problem = "lippmann-schwinger";
    c.N = 1024;
    c.kind = to_string(kind);
    const auto p = ls_problem(c);
    const auto f_old = build(kind, p.base, p.base_tree, c.factor_options());
    const Perturbation pert = diff(*p.base, *p.perturbed);
    ASSERT_FALSE(pert.empty());
    UpdateReport rep;
    const auto f_new = update(f_old, p.perturbed, pert, &rep);
    EXPECT_EQ(rep.violations, 0u);
    EXPECT_GT(rep.reused, 0u);
    expect_exact(f_new, build(kind, p.perturbed, p.base_tree, c.factor_options()));
  }
}

TEST(Update, SingleLeafMatchesFreshBuild) {
  const Discretization g = unit_grid(32);
  const QuadTree tree = QuadTree::build(g, 8, RootRegion{{0.0, 0.0}, 1.0});
  const int L = tree.max_level();
  for (const auto& [x, y] : std::vector<std::pair<int, int>>{{0, 0}, {7, 9}, {15, 3}}) {
    auto lp = perturb_leaves(32, 8, {tree.find(L, x, y)});
    for (FactorKind kind : {FactorKind::rskelf, FactorKind::hif}) {
      FactorOptions opt;
      const auto f_old = build<cdouble>(kind, lp.old_k, lp.tree, opt);
      UpdateReport rep;
      const auto f_new = update(f_old, lp.new_k, lp.pert, &rep);
      EXPECT_EQ(rep.violations, 0u);
      expect_exact(f_new, build<cdouble>(kind, lp.new_k, lp.tree, opt));
      const CostReport cr = update_cost_report(f_old, lp.pert);
      EXPECT_EQ(cr.marked_total, rep.rules.total());
      EXPECT_GT(cr.reskeletonized_dofs, 0u);
      EXPECT_GT(cr.measured_work, 0.0);
    }
  }
}

// Everything that differs between fresh builds of the old and new problems is marked.
TEST(Update, MarkingIsSound) {
  ExperimentConfig c;
  c.problem = "lippmann-schwinger";
  c.N = 1024;
  c.n_occ = 8;
  const auto p = ls_problem(c);
  const Perturbation pert = diff(*p.base, *p.perturbed);
  for (FactorKind kind : {FactorKind::hif, FactorKind::rskelf}) {
    const auto a = build(kind, p.base, p.base_tree, c.factor_options());
    const auto b = build(kind, p.perturbed, p.base_tree, c.factor_options());
    const MarkedSets m = mark(kind, *p.base_tree, *p.base_tree, pert);
    const auto d = differing_owners(a, b);
    std::size_t differing = 0;
    for (std::size_t t = 0; t < d.size(); ++t) {
      differing += d[t].size();
      EXPECT_TRUE(subset(d[t], m.stages[t].marked)) << "stage " << t;
    }
    EXPECT_GT(differing, 0u);
  }
}

TEST(Update, GlobalChangeRecomputesEverything) {
  Discretization g = unit_grid(32);
  const auto tree = grid_tree(g, 16);
  const auto w = scatterer_w0(g);
  auto a = helmholtz_ls(g, w, 2.0 * std::numbers::pi * 0.1);
  auto b = helmholtz_ls(g, w, 2.0 * std::numbers::pi * 0.2);
  const Perturbation pert = diff(*a, *b);
  EXPECT_EQ(pert.modified.size(), g.size());
  FactorOptions opt;
  const auto f = build<cdouble>(FactorKind::hif, a, tree, opt);
  UpdateReport rep;
  const auto u = update<cdouble>(f, b, pert, &rep);
  EXPECT_TRUE(rep.root_refactored);
  expect_exact(u, build<cdouble>(FactorKind::hif, b, tree, opt));
}

TEST(Update, PointLeavingTheRootInvalidatesTree) {
  Discretization d = bump_circle(1024);
  const auto old_k = laplace_dlp(d);
  const auto tree = std::make_shared<const QuadTree>(QuadTree::build(d, 32));
  d.points[5] = {10.0, 10.0};
  const auto new_k = laplace_dlp(d);
  const auto f = build<double>(FactorKind::rskelf, old_k, tree, FactorOptions{});
  const Perturbation pert = diff(*old_k, *new_k);
  EXPECT_THROW(update<double>(f, new_k, pert), TreeInvalidated);
  const auto smaller = laplace_dlp(bump_circle(512));
  EXPECT_THROW(update<double>(f, smaller, pert), GeometryError);
}
