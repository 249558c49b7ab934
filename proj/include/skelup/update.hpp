#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <set>
#include <unordered_set>
#include <vector>

#include "factor.hpp"

namespace skelup {

struct MarkedStage {
  StageTag tag;
  std::vector<OwnerKey> marked;  // ascending
  std::vector<OwnerKey> direct;
  std::vector<OwnerKey> parent_rule;
  std::vector<OwnerKey> neighbor_rule;
  int reach = -1;  // box stages only, relative to the first modified DOF's ancestor
};

struct MarkedSets {
  std::vector<MarkedStage> stages;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.marked.size();
    return n;
  }
  std::size_t box_total() const {
    std::size_t n = 0;
    for (const auto& s : stages)
      if (!s.tag.edge) n += s.marked.size();
    return n;
  }
};

namespace detail {

using Cell = std::pair<std::int64_t, std::int64_t>;

inline std::vector<OwnerKey> sorted(const std::set<OwnerKey>& s) { return {s.begin(), s.end()}; }

// Existing edges of `level` whose 4x3 cell footprint contains cell c.
inline void edges_seeing(const QuadTree& tree, int level, Cell c, std::set<OwnerKey>& out) {
  for (std::int64_t i = c.first - 1; i <= c.first + 2; ++i)
    for (std::int64_t j = c.second - 1; j <= c.second + 1; ++j) {
      const EdgeKey e{level, 0, i, j};
      if (tree.edge_exists(e)) out.insert(OwnerKey::edge(e));
    }
  for (std::int64_t i = c.first - 1; i <= c.first + 1; ++i)
    for (std::int64_t j = c.second - 1; j <= c.second + 2; ++j) {
      const EdgeKey e{level, 1, i, j};
      if (tree.edge_exists(e)) out.insert(OwnerKey::edge(e));
    }
}

// Existing boxes of `level` whose 3x3 cell footprint contains cell c.
inline void boxes_seeing(const QuadTree& tree, int level, Cell c, std::set<OwnerKey>& out) {
  for (std::int64_t dy = -1; dy <= 1; ++dy)
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      const int b = tree.find(level, c.first + dx, c.second + dy);
      if (b >= 0) out.insert(OwnerKey::box(level, b));
    }
}

inline std::array<Cell, 2> edge_sides(const EdgeKey& e) {
  if (e.orient == 0) return {Cell{e.i - 1, e.j}, Cell{e.i, e.j}};
  return {Cell{e.i, e.j - 1}, Cell{e.i, e.j}};
}

}  // namespace detail

// Rule-based marking. `old_tree` and `new_tree` share one box structure and
// differ only in where modified DOFs sit.
inline MarkedSets mark(FactorKind kind, const QuadTree& old_tree, const QuadTree& new_tree, const Perturbation& pert) {
  using detail::Cell;
  MarkedSets out;
  const int L = old_tree.max_level();
  std::vector<std::set<OwnerKey>> direct(L + 1);
  std::vector<Point> positions;
  for (Dof x : pert.modified) {
    for (const QuadTree* tr : {&old_tree, &new_tree}) {
      const int leaf = tr->leaf_of(x);
      direct[tr->box(leaf).level].insert(OwnerKey::box(tr->box(leaf).level, leaf));
      for (int b : tr->rnbor(leaf)) direct[tr->box(b).level].insert(OwnerKey::box(tr->box(b).level, b));
    }
    if (pert.old_disc) positions.push_back(pert.old_disc->points[x]);
    if (pert.new_disc) positions.push_back(pert.new_disc->points[x]);
  }
  const int anchor = pert.modified.empty() ? -1 : old_tree.leaf_of(pert.modified.front());

  std::set<OwnerKey> prev_boxes;             // marked boxes of the previous box stage
  std::vector<Cell> side_cells;              // side cells of edges marked at the previous edge stage
  int side_level = -1;
  for (const StageTag& tag : stage_tags(old_tree, kind)) {
    MarkedStage ms;
    ms.tag = tag;
    const int l = tag.level;
    if (!tag.edge) {
      std::set<OwnerKey> P, U;
      for (const OwnerKey& k : prev_boxes) {
        const int p = old_tree.box(static_cast<int>(k.i)).parent;
        if (p >= 0) P.insert(OwnerKey::box(l, p));
      }
      std::vector<Cell> dirty;
      if (side_level == l + 1)
        for (const Cell& c : side_cells) {
          const Cell up{c.first >> 1, c.second >> 1};
          dirty.push_back(up);
          const int b = old_tree.find(l, up.first, up.second);
          if (b >= 0) P.insert(OwnerKey::box(l, b));
        }
      for (const OwnerKey& k : P)
        for (int b : old_tree.nbor(static_cast<int>(k.i)))
          if (old_tree.box(b).level == l) U.insert(OwnerKey::box(l, b));
      for (const Cell& c : dirty) detail::boxes_seeing(old_tree, l, c, U);
      std::set<OwnerKey> M = direct[l];
      M.insert(P.begin(), P.end());
      M.insert(U.begin(), U.end());
      ms.direct = detail::sorted(direct[l]);
      ms.parent_rule = detail::sorted(P);
      ms.neighbor_rule = detail::sorted(U);
      ms.marked = detail::sorted(M);
      if (anchor >= 0 && old_tree.box(anchor).level >= l) {
        const Box& a = old_tree.box(old_tree.ancestor(anchor, l));
        int r = 0;
        for (const OwnerKey& k : M) {
          const Box& b = old_tree.box(static_cast<int>(k.i));
          r = std::max<int>(r, static_cast<int>(std::max(std::abs(b.z1 - a.z1), std::abs(b.z2 - a.z2))));
        }
        ms.reach = M.empty() ? -1 : r;
      }
      prev_boxes = std::move(M);
    } else {
      std::set<Cell> dirty;
      for (const OwnerKey& k : prev_boxes) {
        const Box& b = old_tree.box(static_cast<int>(k.i));
        dirty.insert({b.z1, b.z2});
      }
      for (const Point& p : positions) dirty.insert(old_tree.cell_of(p, l));
      if (side_level == l + 1)
        for (const Cell& c : side_cells) dirty.insert({c.first >> 1, c.second >> 1});
      std::set<OwnerKey> E, D;
      for (const Cell& c : dirty) detail::edges_seeing(old_tree, l, c, E);
      for (const Point& p : positions) detail::edges_seeing(old_tree, l, old_tree.cell_of(p, l), D);
      ms.direct = detail::sorted(D);
      ms.marked = detail::sorted(E);
      side_cells.clear();
      for (const OwnerKey& k : E)
        for (const Cell& c : detail::edge_sides(k.edge_key())) side_cells.push_back(c);
      side_level = l;
    }
    out.stages.push_back(std::move(ms));
  }
  return out;
}

inline MarkedSets mark_rskelf(const QuadTree& old_tree, const QuadTree& new_tree, const Perturbation& pert) {
  return mark(FactorKind::rskelf, old_tree, new_tree, pert);
}

inline MarkedSets mark_hif(const QuadTree& old_tree, const QuadTree& new_tree, const Perturbation& pert) {
  return mark(FactorKind::hif, old_tree, new_tree, pert);
}

struct UpdateReport {
  MarkedSets rules;
  std::vector<std::size_t> marked_per_stage;  // rules plus safety-net marks
  std::size_t marked_total = 0;
  std::size_t recomputed = 0;
  std::size_t reused = 0;
  std::size_t violations = 0;  // safety-net marks outside the rule sets
  std::size_t reskeletonized_dofs = 0;
  bool root_refactored = false;
};

// Tree for the new discretization: shared when no modified DOF changes leaf.
inline std::shared_ptr<const QuadTree> tree_for(const std::shared_ptr<const QuadTree>& old_tree,
                                                const Discretization& new_disc, const Perturbation& pert) {
  bool moved = false;
  for (Dof d : pert.modified) {
    if (old_tree->locate(new_disc.points[d]) != old_tree->leaf_of(d)) {
      moved = true;
      break;
    }
  }
  if (!moved) return old_tree;
  return std::make_shared<const QuadTree>(old_tree->moved(new_disc, pert.modified));
}

// Selective refactorization. Owners outside the marked sets are shared with
// `old`; the result is bitwise identical to a fresh build on the new kernel.
template <class Scalar>
Factorization<Scalar> update(const Factorization<Scalar>& old, std::shared_ptr<const KernelMatrix<Scalar>> kernel_new,
                             const Perturbation& pert, UpdateReport* report = nullptr) {
  if (kernel_new->size() != old.size()) throw GeometryError("perturbation changes the number of DOFs");
  const Discretization& old_disc = old.kernel->disc();
  const Discretization& new_disc = kernel_new->disc();
  auto tree = tree_for(old.tree, new_disc, pert);

  Factorization<Scalar> f = old;
  f.tree = tree;
  f.kernel = std::move(kernel_new);
  LevelView<Scalar> view(f);

  UpdateReport rep;
  rep.rules = mark(old.kind, *old.tree, *tree, pert);

  std::unordered_set<Dof> changed(pert.modified.begin(), pert.modified.end());
  for (std::size_t t = 0; t < f.stages.size(); ++t) {
    const StageTag tag = f.stages[t].tag;
    const auto ti = static_cast<std::int32_t>(t);
    std::set<OwnerKey> dyn;
    for (auto it = changed.begin(); it != changed.end();) {
      const Dof x = *it;
      if (old.elim_stage[x] < ti && f.elim_stage[x] < ti) {
        it = changed.erase(it);
        continue;
      }
      for (const Point p : {old_disc.points[x], new_disc.points[x]}) {
        const auto c = tree->cell_of(p, tag.level);
        if (tag.edge)
          detail::edges_seeing(*tree, tag.level, c, dyn);
        else
          detail::boxes_seeing(*tree, tag.level, c, dyn);
      }
      ++it;
    }
    const auto& rules = rep.rules.stages[t].marked;
    std::vector<OwnerKey> keys(rules.begin(), rules.end());
    for (const OwnerKey& k : dyn)
      if (!std::binary_search(rules.begin(), rules.end(), k)) {
        keys.push_back(k);
        ++rep.violations;
      }
    std::sort(keys.begin(), keys.end());
    rep.marked_per_stage.push_back(keys.size());
    rep.marked_total += keys.size();

    Stage<Scalar>& st = f.stages[t];
    bool structural = false;
    std::vector<std::pair<std::shared_ptr<const SkelData<Scalar>>, std::shared_ptr<const SkelData<Scalar>>>> swaps;
    for (const OwnerKey& key : keys) swaps.emplace_back(old.stages[t].find_shared(key), view.compute_owner(t, key));
    for (const auto& [old_sk, new_sk] : swaps) view.clear_owner(t, old_sk.get());
    for (const auto& [old_sk, new_sk] : swaps) view.mark_owner(t, new_sk.get());
    for (std::size_t q = 0; q < keys.size(); ++q) {
      const OwnerKey& key = keys[q];
      const auto& [old_sk, new_sk] = swaps[q];
      if (old_sk) {
        auto& slot = st.owners[st.index.at(key)];
        if (new_sk) {
          slot = new_sk;
        } else {
          slot = nullptr;
          structural = true;
        }
      } else if (new_sk) {
        st.owners.push_back(new_sk);
        structural = true;
      }
      if (new_sk) {
        ++rep.recomputed;
        rep.reskeletonized_dofs += new_sk->dofs.size();
      }
      if (old_sk) {
        for (int p : old_sk->skel) changed.insert(old_sk->dofs[p]);
      }
      if (new_sk) {
        for (int p : new_sk->skel) changed.insert(new_sk->dofs[p]);
      }
      const std::vector<Dof> none;
      const std::vector<Dof>& a = old_sk ? old_sk->dofs : none;
      const std::vector<Dof>& b = new_sk ? new_sk->dofs : none;
      std::vector<Dof> sym;
      std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(sym));
      changed.insert(sym.begin(), sym.end());
    }
    if (structural) {
      st.owners.erase(std::remove(st.owners.begin(), st.owners.end(), nullptr), st.owners.end());
      st.reindex();
    }
    rep.reused += st.owners.size();
  }
  rep.reused -= std::min(rep.reused, rep.recomputed);

  const std::size_t T = f.stages.size();
  const std::vector<Dof> root_dofs = view.active_in(T, 0);
  bool refactor = root_dofs != old.root->dofs;
  for (Dof d : root_dofs) refactor = refactor || changed.count(d) > 0;
  for (std::size_t t = 0; t < T; ++t)
    if (f.stages[t].tag.level <= 1 && rep.marked_per_stage[t] > 0) refactor = true;
  if (refactor) f.root = view.compute_root();
  rep.root_refactored = refactor;
  if (report) *report = std::move(rep);
  return f;
}

struct CostReport {
  std::vector<std::pair<StageTag, std::size_t>> marked;
  std::size_t marked_total = 0;
  std::size_t reskeletonized_dofs = 0;
  double predicted_work = 0.0;  // sum over stages of |M| * (mean |I| at that stage)^3
  double measured_work = 0.0;   // sum over marked owners of (|S| + |R|)^3
};

template <class Scalar>
CostReport update_cost_report(const Factorization<Scalar>& old, const Perturbation& pert) {
  CostReport r;
  if (pert.empty()) {
    for (const auto& st : old.stages) r.marked.emplace_back(st.tag, 0);
    return r;
  }
  auto tree = pert.new_disc ? tree_for(old.tree, *pert.new_disc, pert) : old.tree;
  const MarkedSets m = mark(old.kind, *old.tree, *tree, pert);
  for (std::size_t t = 0; t < old.stages.size(); ++t) {
    const auto& st = old.stages[t];
    const auto& keys = m.stages[t].marked;
    r.marked.emplace_back(st.tag, keys.size());
    r.marked_total += keys.size();
    double mean = 0.0;
    for (const auto& sk : st.owners) mean += static_cast<double>(sk->dofs.size());
    if (!st.owners.empty()) mean /= static_cast<double>(st.owners.size());
    r.predicted_work += static_cast<double>(keys.size()) * mean * mean * mean;
    for (const OwnerKey& k : keys)
      if (const auto* sk = st.find(k)) {
        const double n = static_cast<double>(sk->dofs.size());
        r.reskeletonized_dofs += sk->dofs.size();
        r.measured_work += n * n * n;
      }
  }
  return r;
}

}  // namespace skelup
