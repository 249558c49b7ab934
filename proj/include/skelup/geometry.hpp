#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace skelup {

using Dof = std::int32_t;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TreeInvalidated : public GeometryError {
 public:
  TreeInvalidated() : GeometryError("tree invalidated; rebuild required") {}
};

struct Discretization {
  std::vector<Point> points;
  std::vector<double> weights;
  std::vector<Point> normals;      // optional
  std::vector<double> params;      // optional
  std::vector<double> curvatures;  // optional, signed

  std::size_t size() const { return points.size(); }

  void validate() const {
    const std::size_t n = points.size();
    if (weights.size() != n) throw GeometryError("weights length differs from point count");
    for (double w : weights)
      if (!(w > 0.0)) throw GeometryError("quadrature weights must be positive");
    if (!normals.empty()) {
      if (normals.size() != n) throw GeometryError("normals length differs from point count");
      for (const Point& v : normals)
        if (std::abs(std::hypot(v.x, v.y) - 1.0) > 1e-12) throw GeometryError("normal is not unit length");
    }
    if (!params.empty() && params.size() != n) throw GeometryError("params length differs from point count");
    if (!curvatures.empty() && curvatures.size() != n)
      throw GeometryError("curvatures length differs from point count");
  }
};

// Square bounding region of the tree.
struct RootRegion {
  Point origin;  // lower-left corner
  double width = 1.0;

  static RootRegion enclosing(std::span<const Discretization* const> discs) {
    double lo_x = INFINITY, lo_y = INFINITY, hi_x = -INFINITY, hi_y = -INFINITY;
    for (const Discretization* d : discs)
      for (const Point& p : d->points) {
        lo_x = std::min(lo_x, p.x);
        lo_y = std::min(lo_y, p.y);
        hi_x = std::max(hi_x, p.x);
        hi_y = std::max(hi_y, p.y);
      }
    if (!(lo_x <= hi_x)) throw GeometryError("empty discretization");
    double w = std::max(hi_x - lo_x, hi_y - lo_y);
    if (w == 0.0) w = 1.0;
    w *= 1.0 + 1e-3;
    const Point c{0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)};
    return {{c.x - 0.5 * w, c.y - 0.5 * w}, w};
  }
};

struct Box {
  int id = -1;
  int level = 0;
  std::int64_t z1 = 0;
  std::int64_t z2 = 0;
  Point center;
  double half_width = 0.0;
  int parent = -1;
  std::array<int, 4> children{-1, -1, -1, -1};  // index = xbit + 2*ybit
  bool is_leaf = true;
  std::vector<Dof> dofs;  // leaves only, ascending
};

// Edge between two cells of level `level`. Vertical edges sit on x = i*w and
// span cell row j; horizontal edges sit on y = j*w and span cell column i.
struct EdgeKey {
  int level = 0;
  int orient = 0;  // 0 vertical, 1 horizontal
  std::int64_t i = 0;
  std::int64_t j = 0;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

struct EdgeCell {
  EdgeKey key;
  std::array<int, 2> boxes{-1, -1};
  std::vector<Dof> dofs;
};

struct ProxySurface {
  Point center;
  double radius = 0.0;
  std::vector<Point> points;
  std::vector<Point> normals;  // outward
  double arc_weight = 0.0;

  static ProxySurface circle(Point c, double r, int n) {
    ProxySurface s;
    s.center = c;
    s.radius = r;
    s.arc_weight = 2.0 * std::numbers::pi * r / n;
    s.points.reserve(n);
    s.normals.reserve(n);
    for (int k = 0; k < n; ++k) {
      const double t = 2.0 * std::numbers::pi * k / n;
      s.normals.push_back({std::cos(t), std::sin(t)});
      s.points.push_back({c.x + r * std::cos(t), c.y + r * std::sin(t)});
    }
    return s;
  }
};

class QuadTree {
 public:
  static constexpr int kMaxLevel = 30;

  // Adaptive tree over one point set.
  static QuadTree build(const Discretization& disc, int n_occ, std::optional<RootRegion> root = {}) {
    const Discretization* d = &disc;
    return build_structure(std::span<const Discretization* const>(&d, 1), n_occ, root);
  }

  // One box structure valid for every given point set: a box splits if any set
  // holds more than n_occ of its points there. DOFs are assigned from `discs[0]`.
  static QuadTree build_structure(std::span<const Discretization* const> discs, int n_occ,
                                  std::optional<RootRegion> root = {}) {
    if (n_occ < 1) throw GeometryError("n_occ must be positive");
    for (const Discretization* d : discs)
      if (d->size() == 0) throw GeometryError("empty discretization");
    QuadTree t;
    t.n_occ_ = n_occ;
    t.root_ = root ? *root : RootRegion::enclosing(discs);

    struct Pending {
      int parent;
      int child;
      int level;
      std::int64_t z1, z2;
      std::vector<std::vector<Dof>> members;
    };
    std::vector<Pending> current;
    {
      Pending r{-1, -1, 0, 0, 0, {}};
      for (const Discretization* d : discs) {
        std::vector<Dof> all(d->size());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<Dof>(k);
        r.members.push_back(std::move(all));
      }
      current.push_back(std::move(r));
    }
    while (!current.empty()) {
      std::vector<Pending> next;
      for (Pending& p : current) {
        Box b;
        b.id = static_cast<int>(t.boxes_.size());
        b.level = p.level;
        b.z1 = p.z1;
        b.z2 = p.z2;
        b.center = t.cell_center(p.level, p.z1, p.z2);
        b.half_width = 0.5 * t.cell_width(p.level);
        b.parent = p.parent;
        if (p.parent >= 0) {
          t.boxes_[p.parent].children[p.child] = b.id;
          t.boxes_[p.parent].is_leaf = false;
        }
        bool split = false;
        for (const auto& m : p.members) split = split || static_cast<int>(m.size()) > n_occ;
        if (split && p.level >= kMaxLevel) throw GeometryError("unresolvable point cluster");
        if (split) {
          std::array<Pending, 4> kids;
          for (int c = 0; c < 4; ++c) {
            kids[c] = Pending{b.id, c, p.level + 1, 2 * p.z1 + (c & 1), 2 * p.z2 + (c >> 1), {}};
            kids[c].members.resize(p.members.size());
          }
          for (std::size_t s = 0; s < p.members.size(); ++s)
            for (Dof k : p.members[s]) {
              const Point q = discs[s]->points[k];
              const int c = (q.x > b.center.x ? 1 : 0) + (q.y > b.center.y ? 2 : 0);
              kids[c].members[s].push_back(k);
            }
          for (int c = 0; c < 4; ++c) {
            bool any = false;
            for (const auto& m : kids[c].members) any = any || !m.empty();
            if (any) next.push_back(std::move(kids[c]));
          }
        }
        t.boxes_.push_back(std::move(b));
      }
      current = std::move(next);
    }
    t.index_levels();
    t.assign(*discs[0]);
    return t;
  }

  // Same box structure, DOFs of `disc` placed into the existing leaves.
  QuadTree reassign(const Discretization& disc) const {
    QuadTree t = *this;
    t.assign(disc);
    return t;
  }

  // Copy in which only the listed DOFs are relocated according to `disc`.
  QuadTree moved(const Discretization& disc, std::span<const Dof> changed) const {
    if (disc.size() != leaf_of_.size()) throw GeometryError("point count changed");
    QuadTree t = *this;
    for (Dof d : changed) {
      const int nb = t.locate(disc.points[d]);
      const int ob = t.leaf_of_[d];
      if (nb == ob) continue;
      auto& from = t.boxes_[ob].dofs;
      from.erase(std::lower_bound(from.begin(), from.end(), d));
      auto& to = t.boxes_[nb].dofs;
      to.insert(std::lower_bound(to.begin(), to.end(), d), d);
      t.leaf_of_[d] = nb;
    }
    return t;
  }

  // Leaf containing p; throws when p falls outside every leaf.
  int locate(Point p) const {
    const double x1 = root_.origin.x + root_.width, y1 = root_.origin.y + root_.width;
    if (!(p.x >= root_.origin.x && p.x <= x1 && p.y >= root_.origin.y && p.y <= y1)) throw TreeInvalidated();
    int b = 0;
    while (!boxes_[b].is_leaf) {
      const Point c = boxes_[b].center;
      const int child = boxes_[b].children[(p.x > c.x ? 1 : 0) + (p.y > c.y ? 2 : 0)];
      if (child < 0) throw TreeInvalidated();
      b = child;
    }
    return b;
  }

  std::size_t size() const { return boxes_.size(); }
  int max_level() const { return static_cast<int>(by_level_.size()) - 1; }
  int n_occ() const { return n_occ_; }
  const RootRegion& root_region() const { return root_; }
  std::size_t dof_count() const { return leaf_of_.size(); }
  const Box& box(int id) const { return boxes_[id]; }
  const std::vector<Box>& boxes() const { return boxes_; }
  const std::vector<int>& level_boxes(int level) const { return by_level_.at(level); }
  int leaf_of(Dof d) const { return leaf_of_[d]; }
  const std::vector<int>& nbor(int b) const { return nbor_[b]; }
  // Boxes b' with b in nbor(b').
  const std::vector<int>& rnbor(int b) const { return rnbor_[b]; }

  double cell_width(int level) const { return std::ldexp(root_.width, -level); }
  Point cell_center(int level, std::int64_t z1, std::int64_t z2) const {
    const double w = cell_width(level);
    return {root_.origin.x + (static_cast<double>(z1) + 0.5) * w, root_.origin.y + (static_cast<double>(z2) + 0.5) * w};
  }

  int find(int level, std::int64_t z1, std::int64_t z2) const {
    if (level < 0 || level > max_level()) return -1;
    const std::int64_t n = std::int64_t{1} << level;
    if (z1 < 0 || z2 < 0 || z1 >= n || z2 >= n) return -1;
    auto it = lookup_[level].find(pack(z1, z2));
    return it == lookup_[level].end() ? -1 : it->second;
  }

  int ancestor(int b, int level) const {
    while (b >= 0 && boxes_[b].level > level) b = boxes_[b].parent;
    return (b >= 0 && boxes_[b].level == level) ? b : -1;
  }

  // Cell of `p` at `level`, computed with the same comparisons as the split.
  std::pair<std::int64_t, std::int64_t> cell_of(Point p, int level) const {
    std::int64_t z1 = 0, z2 = 0;
    for (int l = 0; l < level; ++l) {
      const Point c = cell_center(l, z1, z2);
      z1 = 2 * z1 + (p.x > c.x ? 1 : 0);
      z2 = 2 * z2 + (p.y > c.y ? 1 : 0);
    }
    return {z1, z2};
  }

  // Childless box at a level coarser than `level` covering cell (z1,z2), or -1.
  int coarse_leaf_covering(int level, std::int64_t z1, std::int64_t z2) const {
    for (int l = level - 1; l >= 0; --l) {
      const int a = find(l, z1 >> (level - l), z2 >> (level - l));
      if (a >= 0) return boxes_[a].is_leaf ? a : -1;
    }
    return -1;
  }

  Point edge_center(const EdgeKey& e) const {
    const double w = cell_width(e.level);
    if (e.orient == 0)
      return {root_.origin.x + static_cast<double>(e.i) * w, root_.origin.y + (static_cast<double>(e.j) + 0.5) * w};
    return {root_.origin.x + (static_cast<double>(e.i) + 0.5) * w, root_.origin.y + static_cast<double>(e.j) * w};
  }

  // The (up to two) level boxes sharing edge e, -1 where absent.
  std::array<int, 2> edge_boxes(const EdgeKey& e) const {
    if (e.orient == 0) return {find(e.level, e.i - 1, e.j), find(e.level, e.i, e.j)};
    return {find(e.level, e.i, e.j - 1), find(e.level, e.i, e.j)};
  }

  bool edge_exists(const EdgeKey& e) const {
    const auto b = edge_boxes(e);
    return b[0] >= 0 || b[1] >= 0;
  }

  // Edges of the level boxes, in lexicographic center order.
  std::vector<EdgeKey> edges_at(int level) const {
    std::vector<EdgeKey> out;
    if (level < 1 || level > max_level()) return out;
    for (int b : by_level_[level]) {
      const Box& x = boxes_[b];
      out.push_back({level, 0, x.z1, x.z2});
      out.push_back({level, 0, x.z1 + 1, x.z2});
      out.push_back({level, 1, x.z1, x.z2});
      out.push_back({level, 1, x.z1, x.z2 + 1});
    }
    std::sort(out.begin(), out.end(), [](const EdgeKey& a, const EdgeKey& b) { return edge_less(a, b); });
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // Lexicographic order of edge centers (x, then y), in doubled grid units.
  static bool edge_less(const EdgeKey& a, const EdgeKey& b) {
    const auto ax = a.orient == 0 ? 2 * a.i : 2 * a.i + 1;
    const auto ay = a.orient == 0 ? 2 * a.j + 1 : 2 * a.j;
    const auto bx = b.orient == 0 ? 2 * b.i : 2 * b.i + 1;
    const auto by = b.orient == 0 ? 2 * b.j + 1 : 2 * b.j;
    if (ax != bx) return ax < bx;
    return ay < by;
  }

  // Nearest edge center of the level grid, existing or not.
  EdgeKey nearest_edge(Point p, int level) const {
    const double w = cell_width(level);
    const auto a = static_cast<std::int64_t>(std::floor((p.x - root_.origin.x) / w));
    const auto b = static_cast<std::int64_t>(std::floor((p.y - root_.origin.y) / w));
    EdgeKey best;
    double best_d = INFINITY;
    auto consider = [&](const EdgeKey& e) {
      const Point c = edge_center(e);
      const double dx = p.x - c.x, dy = p.y - c.y;
      const double d = dx * dx + dy * dy;
      if (d < best_d || (d == best_d && edge_less(e, best))) {
        best_d = d;
        best = e;
      }
    };
    for (std::int64_t i = a; i <= a + 1; ++i)
      for (std::int64_t j = b - 1; j <= b + 1; ++j) consider({level, 0, i, j});
    for (std::int64_t i = a - 1; i <= a + 1; ++i)
      for (std::int64_t j = b; j <= b + 1; ++j) consider({level, 1, i, j});
    return best;
  }

 private:
  static std::uint64_t pack(std::int64_t z1, std::int64_t z2) {
    return (static_cast<std::uint64_t>(z1) << 32) | static_cast<std::uint64_t>(z2);
  }

  void index_levels() {
    int top = 0;
    for (const Box& b : boxes_) top = std::max(top, b.level);
    by_level_.assign(top + 1, {});
    lookup_.assign(top + 1, {});
    for (const Box& b : boxes_) {
      by_level_[b.level].push_back(b.id);
      lookup_[b.level].emplace(pack(b.z1, b.z2), b.id);
    }
    nbor_.assign(boxes_.size(), {});
    rnbor_.assign(boxes_.size(), {});
    for (const Box& b : boxes_) {
      std::vector<int>& out = nbor_[b.id];
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const std::int64_t x = b.z1 + dx, y = b.z2 + dy;
          const std::int64_t n = std::int64_t{1} << b.level;
          if (x < 0 || y < 0 || x >= n || y >= n) continue;
          int q = find(b.level, x, y);
          if (q < 0) q = coarse_leaf_covering(b.level, x, y);
          if (q >= 0) out.push_back(q);
        }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      for (int q : out) rnbor_[q].push_back(b.id);
    }
  }

  void assign(const Discretization& disc) {
    for (Box& b : boxes_) b.dofs.clear();
    leaf_of_.assign(disc.size(), -1);
    for (std::size_t k = 0; k < disc.size(); ++k) {
      const int b = locate(disc.points[k]);
      boxes_[b].dofs.push_back(static_cast<Dof>(k));
      leaf_of_[k] = b;
    }
  }

  int n_occ_ = 0;
  RootRegion root_;
  std::vector<Box> boxes_;
  std::vector<std::vector<int>> by_level_;
  std::vector<std::unordered_map<std::uint64_t, int>> lookup_;
  std::vector<std::vector<int>> nbor_;
  std::vector<std::vector<int>> rnbor_;
  std::vector<int> leaf_of_;
};

// Partition of the given active DOFs among the existing edges of `level`.
// `active` maps a box id (level boxes and coarser leaves) to its active DOFs.
inline std::vector<EdgeCell> edge_cells(const QuadTree& tree, int level,
                                        const std::unordered_map<int, std::vector<Dof>>& active,
                                        const Discretization& disc) {
  std::vector<std::pair<EdgeKey, Dof>> hits;
  for (const auto& [b, dofs] : active)
    for (Dof d : dofs) {
      const EdgeKey e = tree.nearest_edge(disc.points[d], level);
      if (tree.edge_exists(e)) hits.emplace_back(e, d);
    }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    if (!(a.first == b.first)) return QuadTree::edge_less(a.first, b.first);
    return a.second < b.second;
  });
  std::vector<EdgeCell> out;
  for (const auto& [e, d] : hits) {
    if (out.empty() || !(out.back().key == e)) out.push_back({e, tree.edge_boxes(e), {}});
    out.back().dofs.push_back(d);
  }
  return out;
}

}  // namespace skelup
