#pragma once

#include <algorithm>
#include <bit>
#include <climits>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "skel.hpp"

namespace skelup {

enum class FactorKind { rskelf, hif };

inline const char* to_string(FactorKind k) { return k == FactorKind::rskelf ? "rskelf" : "hif"; }

struct StageTag {
  int level = 0;
  bool edge = false;  // edge stage l - 1/2
  friend bool operator==(const StageTag&, const StageTag&) = default;
};

// Stage order L, (L-1/2,) L-1, ..., 1(, 1/2).
inline std::vector<StageTag> stage_tags(const QuadTree& tree, FactorKind kind) {
  std::vector<StageTag> out;
  for (int l = tree.max_level(); l >= 1; --l) {
    out.push_back({l, false});
    if (kind == FactorKind::hif) out.push_back({l, true});
  }
  return out;
}

struct FactorOptions {
  double eps = 1e-6;
  int n_proxy = 64;
  double proxy_radius = 1.5;  // in units of box width
  bool guard_root = true;
};

template <class Scalar>
struct Stage {
  StageTag tag;
  std::vector<std::shared_ptr<const SkelData<Scalar>>> owners;  // ascending key
  std::unordered_map<OwnerKey, std::size_t, OwnerKeyHash> index;

  const SkelData<Scalar>* find(const OwnerKey& k) const {
    auto it = index.find(k);
    return it == index.end() ? nullptr : owners[it->second].get();
  }
  std::shared_ptr<const SkelData<Scalar>> find_shared(const OwnerKey& k) const {
    auto it = index.find(k);
    return it == index.end() ? nullptr : owners[it->second];
  }
  void reindex() {
    std::sort(owners.begin(), owners.end(), [](const auto& a, const auto& b) { return a->owner < b->owner; });
    index.clear();
    for (std::size_t k = 0; k < owners.size(); ++k) index.emplace(owners[k]->owner, k);
  }
};

template <class Scalar>
struct RootBlock {
  std::vector<Dof> dofs;
  Matrix<Scalar> a;
  Eigen::PartialPivLU<Matrix<Scalar>> lu;
};

struct StageStats {
  StageTag tag;
  std::size_t owners = 0;
  double mean_skel = 0.0;
  std::size_t max_skel = 0;
  std::size_t eliminated = 0;
};

class RootTooLarge : public std::runtime_error {
 public:
  explicit RootTooLarge(std::size_t n) : std::runtime_error("root block too large (" + std::to_string(n) + " DOFs); compression failed") {}
};

inline constexpr std::int32_t kNeverEliminated = INT32_MAX;

template <class Scalar>
class Factorization {
 public:
  FactorKind kind = FactorKind::rskelf;
  FactorOptions options;
  std::shared_ptr<const QuadTree> tree;
  std::shared_ptr<const KernelMatrix<Scalar>> kernel;
  std::vector<Stage<Scalar>> stages;
  std::shared_ptr<const RootBlock<Scalar>> root;
  std::vector<std::int32_t> elim_stage;  // per DOF, kNeverEliminated for root DOFs

  std::size_t size() const { return elim_stage.size(); }

  Vector<Scalar> apply(const Vector<Scalar>& x) const {
    check_dim(x);
    Vector<Scalar> y = x;
    for (const auto& st : stages)
      for (const auto& sk : st.owners) apply_elim_inv(*sk, ElimSide::right, y);
    for (const auto& st : stages)
      for (const auto& sk : st.owners) apply_rr(*sk, y);
    apply_root(y, false);
    for (auto st = stages.rbegin(); st != stages.rend(); ++st)
      for (const auto& sk : st->owners) apply_elim_inv(*sk, ElimSide::left_adjoint, y);
    return y;
  }

  Vector<Scalar> solve(const Vector<Scalar>& b) const {
    check_dim(b);
    Vector<Scalar> x = b;
    for (const auto& st : stages)
      for (const auto& sk : st.owners) apply_elim(*sk, ElimSide::left_adjoint, x);
    for (const auto& st : stages)
      for (const auto& sk : st.owners) solve_rr(*sk, x);
    apply_root(x, true);
    for (auto st = stages.rbegin(); st != stages.rend(); ++st)
      for (const auto& sk : st->owners) apply_elim(*sk, ElimSide::right, x);
    return x;
  }

  cdouble logdet() const {
    cdouble s(0.0);
    for (const auto& st : stages)
      for (const auto& sk : st.owners) s += sk->logdet_rr();
    if (root && !root->dofs.empty()) s += lu_logdet<Scalar>(root->lu);
    return wrap_phase(s);
  }

  std::vector<StageStats> skeleton_stats() const {
    std::vector<StageStats> out;
    for (const auto& st : stages) {
      StageStats s;
      s.tag = st.tag;
      s.owners = st.owners.size();
      std::size_t total = 0;
      for (const auto& sk : st.owners) {
        total += sk->skel.size();
        s.max_skel = std::max(s.max_skel, sk->skel.size());
        s.eliminated += sk->redund.size();
      }
      s.mean_skel = s.owners ? static_cast<double>(total) / static_cast<double>(s.owners) : 0.0;
      out.push_back(s);
    }
    return out;
  }

 private:
  void check_dim(const Vector<Scalar>& x) const {
    if (static_cast<std::size_t>(x.size()) != size()) throw std::invalid_argument("vector length differs from N");
  }
  void apply_root(Vector<Scalar>& x, bool inverse) const {
    if (!root || root->dofs.empty()) return;
    Vector<Scalar> v(root->dofs.size());
    for (std::size_t k = 0; k < root->dofs.size(); ++k) v(k) = x(root->dofs[k]);
    v = inverse ? Vector<Scalar>(root->lu.solve(v)) : Vector<Scalar>(root->a * v);
    for (std::size_t k = 0; k < root->dofs.size(); ++k) x(root->dofs[k]) = v(k);
  }
};

// Read access to the partially eliminated matrix before a given stage, and
// the computation of owners at that stage. Entry (i,j) before stage t equals
// D_SS of the latest earlier owner holding both i and j as skeletons, and the
// raw kernel entry when no such owner exists.
template <class Scalar>
class LevelView {
 public:
  struct Hist {
    int stage;
    const SkelData<Scalar>* sk;
    int slot;
  };
  struct Entry {
    Scalar value;
    const SkelData<Scalar>* source;  // nullptr for raw kernel entries
  };

  explicit LevelView(Factorization<Scalar>& f) : f_(f), tree_(*f.tree), disc_(f.kernel->disc()) {
    box_stage_.assign(tree_.max_level() + 1, -1);
    for (std::size_t t = 0; t < f_.stages.size(); ++t)
      if (!f_.stages[t].tag.edge) box_stage_[f_.stages[t].tag.level] = static_cast<int>(t);
  }

  std::vector<OwnerKey> all_keys(std::size_t t) const {
    const StageTag tag = f_.stages[t].tag;
    std::vector<OwnerKey> out;
    if (!tag.edge) {
      for (int b : tree_.level_boxes(tag.level)) out.push_back(OwnerKey::box(tag.level, b));
    } else {
      for (const EdgeKey& e : tree_.edges_at(tag.level)) out.push_back(OwnerKey::edge(e));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  bool active_before(std::size_t t, Dof x) const { return f_.elim_stage[x] >= static_cast<std::int32_t>(t); }

  // Active DOFs of subtree(b) before stage t, ascending.
  const std::vector<Dof>& active_in(std::size_t t, int b) {
    if (cache_stage_ != t) {
      cache_.clear();
      cache_stage_ = t;
    }
    if (auto it = cache_.find(b); it != cache_.end()) return it->second;
    const Box& B = tree_.box(b);
    std::vector<Dof> out;
    const int tb = B.level <= tree_.max_level() ? box_stage_[B.level] : -1;
    if (tb >= 0 && static_cast<std::size_t>(tb) < t) {
      if (const SkelData<Scalar>* sk = f_.stages[tb].find(OwnerKey::box(B.level, b)))
        for (int p : sk->skel)
          if (active_before(t, sk->dofs[p])) out.push_back(sk->dofs[p]);
    } else if (B.is_leaf) {
      for (Dof d : B.dofs)
        if (active_before(t, d)) out.push_back(d);
    } else {
      for (int c : B.children)
        if (c >= 0) {
          const std::vector<Dof>& sub = active_in(t, c);
          out.insert(out.end(), sub.begin(), sub.end());
        }
    }
    std::sort(out.begin(), out.end());
    return cache_.emplace(b, std::move(out)).first->second;
  }

  std::vector<Dof> owner_dofs(std::size_t t, const OwnerKey& key) {
    if (key.is_box()) return active_in(t, static_cast<int>(key.i));
    const EdgeKey e = key.edge_key();
    std::vector<std::int64_t> cols, rows;
    if (e.orient == 0) {
      cols = {e.i - 1, e.i};
      rows = {e.j - 1, e.j, e.j + 1};
    } else {
      cols = {e.i - 1, e.i, e.i + 1};
      rows = {e.j - 1, e.j};
    }
    std::vector<Dof> out;
    for (int b : cell_boxes(e.level, cols, rows))
      for (Dof d : active_in(t, b))
        if (tree_.nearest_edge(disc_.points[d], e.level) == e) out.push_back(d);
    std::sort(out.begin(), out.end());
    return out;
  }

  // Active DOFs near the owner, strictly inside its proxy disc, minus `self`.
  std::vector<Dof> near_dofs(std::size_t t, const OwnerKey& key, const std::vector<Dof>& self) {
    const Point c = owner_center(key);
    const double r = proxy_radius(key);
    std::vector<int> boxes;
    if (key.is_box()) {
      boxes = tree_.nbor(static_cast<int>(key.i));
    } else {
      const EdgeKey e = key.edge_key();
      std::vector<std::int64_t> cols, rows;
      if (e.orient == 0) {
        cols = {e.i - 2, e.i - 1, e.i, e.i + 1};
        rows = {e.j - 1, e.j, e.j + 1};
      } else {
        cols = {e.i - 1, e.i, e.i + 1};
        rows = {e.j - 2, e.j - 1, e.j, e.j + 1};
      }
      boxes = cell_boxes(e.level, cols, rows);
    }
    std::vector<Dof> out;
    for (int b : boxes)
      for (Dof d : active_in(t, b))
        if (distance(disc_.points[d], c) < r && !std::binary_search(self.begin(), self.end(), d)) out.push_back(d);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  Point owner_center(const OwnerKey& key) const {
    return key.is_box() ? tree_.box(static_cast<int>(key.i)).center : tree_.edge_center(key.edge_key());
  }
  double proxy_radius(const OwnerKey& key) const { return f_.options.proxy_radius * tree_.cell_width(key.level); }

  // Owners before stage t that hold x as a skeleton, latest first.
  std::vector<Hist> history(std::size_t t, Dof x) const {
    std::vector<Hist> out;
    const Point p = disc_.points[x];
    const int leaf = tree_.leaf_of(x);
    for (std::size_t s = t; s-- > 0;) {
      const Stage<Scalar>& st = f_.stages[s];
      const SkelData<Scalar>* sk = nullptr;
      if (!st.tag.edge) {
        const int a = tree_.ancestor(leaf, st.tag.level);
        if (a >= 0) sk = st.find(OwnerKey::box(st.tag.level, a));
      } else {
        sk = st.find(OwnerKey::edge(tree_.nearest_edge(p, st.tag.level)));
      }
      if (!sk) continue;
      const int pos = sk->position(x);
      if (pos < 0) continue;
      const int slot = sk->skel_slot[pos];
      if (slot < 0) break;  // eliminated here; nothing earlier can matter
      out.push_back({static_cast<int>(s), sk, slot});
    }
    return out;
  }

  Entry entry(Dof i, Dof j, const std::vector<Hist>& hi, const std::vector<Hist>& hj) const {
    std::size_t a = 0, b = 0;
    while (a < hi.size() && b < hj.size()) {
      if (hi[a].stage == hj[b].stage) {
        if (hi[a].sk == hj[b].sk) return {hi[a].sk->d_ss(hi[a].slot, hj[b].slot), hi[a].sk};
        ++a;
        ++b;
      } else if (hi[a].stage > hj[b].stage) {
        ++a;
      } else {
        ++b;
      }
    }
    return {f_.kernel->entry(i, j), nullptr};
  }

  Entry entry(std::size_t t, Dof i, Dof j) const { return entry(i, j, history(t, i), history(t, j)); }

  Matrix<Scalar> block(const std::vector<Dof>& rows, const std::vector<std::vector<Hist>>& hr,
                       const std::vector<Dof>& cols, const std::vector<std::vector<Hist>>& hc) const {
    Matrix<Scalar> out(rows.size(), cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
      for (std::size_t r = 0; r < rows.size(); ++r) out(r, c) = entry(rows[r], cols[c], hr[r], hc[c]).value;
    return out;
  }

  std::shared_ptr<const SkelData<Scalar>> compute_owner(std::size_t t, const OwnerKey& key) {
    std::vector<Dof> I = owner_dofs(t, key);
    if (I.empty()) return nullptr;
    const std::vector<Dof> N = near_dofs(t, key, I);
    std::vector<std::vector<Hist>> hI, hN;
    for (Dof d : I) hI.push_back(history(t, d));
    for (Dof d : N) hN.push_back(history(t, d));
    const Matrix<Scalar> a_ii = block(I, hI, I, hI);
    const Matrix<Scalar> a_ni = block(N, hN, I, hI);
    const Matrix<Scalar> a_in = block(I, hI, N, hN);
    const Matrix<Scalar> proxy =
        proxy_rows<Scalar>(*f_.kernel, owner_center(key), proxy_radius(key), f_.options.n_proxy, I);
    const Matrix<Scalar> stack = proxy_stack<Scalar>(a_ni, a_in, proxy);
    return std::make_shared<const SkelData<Scalar>>(skeletonize<Scalar>(key, std::move(I), a_ii, stack, f_.options.eps));
  }

  std::shared_ptr<const RootBlock<Scalar>> compute_root() {
    const std::size_t t = f_.stages.size();
    auto rb = std::make_shared<RootBlock<Scalar>>();
    rb->dofs = active_in(t, 0);
    const std::size_t n = f_.size();
    const double limit = std::max<double>(tree_.n_occ(), 4.0 * std::sqrt(double(n)) * std::log(std::max<double>(n, 2.0)));
    if (f_.options.guard_root && static_cast<double>(rb->dofs.size()) > limit) throw RootTooLarge(rb->dofs.size());
    std::vector<std::vector<Hist>> h;
    for (Dof d : rb->dofs) h.push_back(history(t, d));
    rb->a = block(rb->dofs, h, rb->dofs, h);
    if (!rb->dofs.empty()) rb->lu = checked_lu<Scalar>(rb->a);
    return rb;
  }

  // Elimination-map bookkeeping for owners of stage t. Clear every replaced
  // owner of a stage before marking the new ones.
  void clear_owner(std::size_t t, const SkelData<Scalar>* sk) {
    const auto st = static_cast<std::int32_t>(t);
    if (sk)
      for (int p : sk->redund)
        if (f_.elim_stage[sk->dofs[p]] == st) f_.elim_stage[sk->dofs[p]] = kNeverEliminated;
  }
  void mark_owner(std::size_t t, const SkelData<Scalar>* sk) {
    if (sk)
      for (int p : sk->redund) f_.elim_stage[sk->dofs[p]] = static_cast<std::int32_t>(t);
  }

 private:
  // Boxes at `level` for the given cells, or the coarse leaves covering them.
  std::vector<int> cell_boxes(int level, const std::vector<std::int64_t>& cols, const std::vector<std::int64_t>& rows) const {
    std::vector<int> out;
    for (auto x : cols)
      for (auto y : rows) {
        int b = tree_.find(level, x, y);
        if (b < 0) {
          const std::int64_t n = std::int64_t{1} << level;
          if (x < 0 || y < 0 || x >= n || y >= n) continue;
          b = tree_.coarse_leaf_covering(level, x, y);
        }
        if (b >= 0) out.push_back(b);
      }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  Factorization<Scalar>& f_;
  const QuadTree& tree_;
  const Discretization& disc_;
  std::vector<int> box_stage_;
  std::unordered_map<int, std::vector<Dof>> cache_;
  std::size_t cache_stage_ = SIZE_MAX;
};

template <class Scalar>
Factorization<Scalar> empty_factorization(FactorKind kind, std::shared_ptr<const KernelMatrix<Scalar>> kernel,
                                          std::shared_ptr<const QuadTree> tree, const FactorOptions& opt) {
  if (tree->dof_count() != kernel->size()) throw std::invalid_argument("tree and kernel sizes differ");
  Factorization<Scalar> f;
  f.kind = kind;
  f.options = opt;
  f.tree = std::move(tree);
  f.kernel = std::move(kernel);
  for (const StageTag& tag : stage_tags(*f.tree, kind)) f.stages.push_back(Stage<Scalar>{tag, {}, {}});
  f.elim_stage.assign(f.kernel->size(), kNeverEliminated);
  return f;
}

template <class Scalar>
Factorization<Scalar> build(FactorKind kind, std::shared_ptr<const KernelMatrix<Scalar>> kernel,
                            std::shared_ptr<const QuadTree> tree, const FactorOptions& opt) {
  Factorization<Scalar> f = empty_factorization(kind, std::move(kernel), std::move(tree), opt);
  LevelView<Scalar> view(f);
  for (std::size_t t = 0; t < f.stages.size(); ++t) {
    for (const OwnerKey& key : view.all_keys(t)) {
      auto sk = view.compute_owner(t, key);
      if (!sk) continue;
      view.mark_owner(t, sk.get());
      f.stages[t].owners.push_back(std::move(sk));
    }
    f.stages[t].reindex();
  }
  f.root = view.compute_root();
  return f;
}

template <class Scalar>
Factorization<Scalar> rskelf_build(std::shared_ptr<const KernelMatrix<Scalar>> kernel,
                                   std::shared_ptr<const QuadTree> tree, const FactorOptions& opt) {
  return build(FactorKind::rskelf, std::move(kernel), std::move(tree), opt);
}

template <class Scalar>
Factorization<Scalar> hif_build(std::shared_ptr<const KernelMatrix<Scalar>> kernel,
                                std::shared_ptr<const QuadTree> tree, const FactorOptions& opt) {
  return build(FactorKind::hif, std::move(kernel), std::move(tree), opt);
}

// Bitwise equality of every stored block.
template <class Scalar>
bool same_bits(const Factorization<Scalar>& a, const Factorization<Scalar>& b) {
  if (a.kind != b.kind || a.stages.size() != b.stages.size() || a.elim_stage != b.elim_stage) return false;
  for (std::size_t t = 0; t < a.stages.size(); ++t) {
    const auto& x = a.stages[t].owners;
    const auto& y = b.stages[t].owners;
    if (!(a.stages[t].tag == b.stages[t].tag) || x.size() != y.size()) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (!same_bits(*x[k], *y[k])) return false;
  }
  const auto& ra = *a.root;
  const auto& rb = *b.root;
  return ra.dofs == rb.dofs && ra.a.rows() == rb.a.rows() &&
         std::memcmp(ra.a.data(), rb.a.data(), sizeof(Scalar) * static_cast<std::size_t>(ra.a.size())) == 0;
}

// Binary container: magic, version, scalar and factorization kind, options,
// the generating config text, stages, root, elimination map. Little-endian
// IEEE-754 throughout.
namespace io {

inline constexpr char kMagic[8] = {'S', 'K', 'U', 'P', 'F', 'A', 'C', 'T'};
inline constexpr std::uint32_t kVersion = 1;
static_assert(std::endian::native == std::endian::little, "container format assumes a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Writer {
  std::ostream& os;
  template <class T>
  void pod(const T& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
  template <class T>
  void vec(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <class Scalar>
  void mat(const Matrix<Scalar>& m) {
    pod<std::uint64_t>(m.rows());
    pod<std::uint64_t>(m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
  }
};

struct Reader {
  std::istream& is;
  template <class T>
  T pod() {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated factorization file");
    return v;
  }
  template <class T>
  std::vector<T> vec() {
    const auto n = pod<std::uint64_t>();
    std::vector<T> v(n);
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T))))
      throw FormatError("truncated factorization file");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated factorization file");
    return s;
  }
  template <class Scalar>
  Matrix<Scalar> mat() {
    const auto r = pod<std::uint64_t>();
    const auto c = pod<std::uint64_t>();
    Matrix<Scalar> m(r, c);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar))))
      throw FormatError("truncated factorization file");
    return m;
  }
};

struct Header {
  std::uint32_t version = 0;
  bool complex = false;
  FactorKind kind = FactorKind::rskelf;
  FactorOptions options;
  std::string config;
};

inline Header read_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("not a factorization file");
  Reader r{is};
  Header h;
  h.version = r.pod<std::uint32_t>();
  if (h.version != kVersion) throw FormatError("unsupported container version " + std::to_string(h.version));
  h.complex = r.pod<std::uint8_t>() != 0;
  h.kind = r.pod<std::uint8_t>() == 0 ? FactorKind::rskelf : FactorKind::hif;
  h.options.eps = r.pod<double>();
  h.options.n_proxy = r.pod<std::int32_t>();
  h.options.proxy_radius = r.pod<double>();
  h.options.guard_root = r.pod<std::uint8_t>() != 0;
  h.config = r.str();
  return h;
}

}  // namespace io

template <class Scalar>
void write_factorization(std::ostream& os, const Factorization<Scalar>& f, const std::string& config) {
  io::Writer w{os};
  os.write(io::kMagic, 8);
  w.pod<std::uint32_t>(io::kVersion);
  w.pod<std::uint8_t>(std::is_same_v<Scalar, cdouble> ? 1 : 0);
  w.pod<std::uint8_t>(f.kind == FactorKind::rskelf ? 0 : 1);
  w.pod<double>(f.options.eps);
  w.pod<std::int32_t>(f.options.n_proxy);
  w.pod<double>(f.options.proxy_radius);
  w.pod<std::uint8_t>(f.options.guard_root ? 1 : 0);
  w.str(config);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(f.stages.size()));
  for (const auto& st : f.stages) {
    w.pod<std::int32_t>(st.tag.level);
    w.pod<std::uint8_t>(st.tag.edge ? 1 : 0);
    w.pod<std::uint64_t>(st.owners.size());
    for (const auto& sk : st.owners) {
      w.pod<std::int32_t>(sk->owner.level);
      w.pod<std::int32_t>(sk->owner.kind);
      w.pod<std::int64_t>(sk->owner.i);
      w.pod<std::int64_t>(sk->owner.j);
      w.vec(sk->dofs);
      w.vec(sk->skel);
      w.vec(sk->redund);
      w.mat(sk->T);
      w.mat(sk->d_ss);
      w.mat(sk->d_rr);
      w.mat(sk->x_sr);
      w.mat(sk->x_rs);
    }
  }
  w.vec(f.root->dofs);
  w.mat(f.root->a);
  w.vec(f.elim_stage);
  if (!os) throw io::FormatError("write failed");
}

// Reads the body after `read_header`; tree and kernel are regenerated by the caller.
template <class Scalar>
Factorization<Scalar> read_factorization(std::istream& is, const io::Header& h,
                                         std::shared_ptr<const KernelMatrix<Scalar>> kernel,
                                         std::shared_ptr<const QuadTree> tree) {
  if (h.complex != std::is_same_v<Scalar, cdouble>) throw io::FormatError("scalar type mismatch");
  io::Reader r{is};
  Factorization<Scalar> f;
  f.kind = h.kind;
  f.options = h.options;
  f.tree = std::move(tree);
  f.kernel = std::move(kernel);
  const auto ns = r.pod<std::uint32_t>();
  for (std::uint32_t s = 0; s < ns; ++s) {
    Stage<Scalar> st;
    st.tag.level = r.pod<std::int32_t>();
    st.tag.edge = r.pod<std::uint8_t>() != 0;
    const auto no = r.pod<std::uint64_t>();
    for (std::uint64_t o = 0; o < no; ++o) {
      auto sk = std::make_shared<SkelData<Scalar>>();
      sk->owner.level = r.pod<std::int32_t>();
      sk->owner.kind = r.pod<std::int32_t>();
      sk->owner.i = r.pod<std::int64_t>();
      sk->owner.j = r.pod<std::int64_t>();
      sk->dofs = r.vec<Dof>();
      sk->skel = r.vec<int>();
      sk->redund = r.vec<int>();
      sk->T = r.mat<Scalar>();
      sk->d_ss = r.mat<Scalar>();
      sk->d_rr = r.mat<Scalar>();
      sk->x_sr = r.mat<Scalar>();
      sk->x_rs = r.mat<Scalar>();
      sk->skel_slot.assign(sk->dofs.size(), -1);
      for (std::size_t k = 0; k < sk->skel.size(); ++k) sk->skel_slot[sk->skel[k]] = static_cast<int>(k);
      if (!sk->redund.empty()) sk->d_rr_lu.compute(sk->d_rr);
      st.owners.push_back(std::move(sk));
    }
    st.reindex();
    f.stages.push_back(std::move(st));
  }
  auto rb = std::make_shared<RootBlock<Scalar>>();
  rb->dofs = r.vec<Dof>();
  rb->a = r.mat<Scalar>();
  if (!rb->dofs.empty()) rb->lu.compute(rb->a);
  f.root = std::move(rb);
  f.elim_stage = r.vec<std::int32_t>();
  if (f.elim_stage.size() != f.kernel->size()) throw io::FormatError("factorization size differs from problem size");
  if (!(stage_tags(*f.tree, f.kind) == [&] {
        std::vector<StageTag> v;
        for (const auto& st : f.stages) v.push_back(st.tag);
        return v;
      }()))
    throw io::FormatError("stage list does not match the regenerated tree");
  return f;
}

}  // namespace skelup
