#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "update.hpp"

namespace skelup {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string problem = "circle-bump";  // or lippmann-schwinger
  std::size_t N = 4096;
  double eps = 1e-6;
  std::string kind = "rskelf";  // or hif
  std::string mode = "fixed-proportion";  // or fixed-count
  double kappa = 0.1;
  int n_occ = 32;
  int n_proxy = 64;
  std::uint64_t seed = 1;
  std::string state = "base";  // which geometry to factor: base or perturbed
  std::size_t oracle_cap = 8192;
  std::string out;

  bool is_circle() const { return problem == "circle-bump"; }
  FactorKind factor_kind() const { return kind == "hif" ? FactorKind::hif : FactorKind::rskelf; }
  FactorOptions factor_options() const {
    FactorOptions o;
    o.eps = eps;
    o.n_proxy = n_proxy;
    return o;
  }
  std::size_t grid_side() const { return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(N)))); }

  void validate() const {
    if (problem != "circle-bump" && problem != "lippmann-schwinger") throw ConfigError("unknown problem '" + problem + "'");
    if (kind != "rskelf" && kind != "hif") throw ConfigError("kind must be rskelf or hif");
    if (mode != "fixed-proportion" && mode != "fixed-count") throw ConfigError("mode must be fixed-proportion or fixed-count");
    if (state != "base" && state != "perturbed") throw ConfigError("state must be base or perturbed");
    if (N < 16 || N > (std::size_t{1} << 30)) throw ConfigError("N out of range");
    if (!(eps > 0.0 && eps <= 0.1)) throw ConfigError("eps must lie in (0, 0.1]");
    if (n_occ < 4) throw ConfigError("n_occ must be at least 4");
    if (n_proxy < 8) throw ConfigError("n_proxy must be at least 8");
    if (!is_circle()) {
      if (grid_side() * grid_side() != N) throw ConfigError("N must be a perfect square for lippmann-schwinger");
      if (!(kappa >= 0.0)) throw ConfigError("kappa must be nonnegative");
    } else if (mode == "fixed-count" && N <= 2000) {
      throw ConfigError("fixed-count window needs N > 2000");
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "problem = " << problem << "\n"
       << "N = " << N << "\n"
       << "eps = " << eps << "\n"
       << "kind = " << kind << "\n"
       << "mode = " << mode << "\n"
       << "kappa = " << kappa << "\n"
       << "n_occ = " << n_occ << "\n"
       << "n_proxy = " << n_proxy << "\n"
       << "seed = " << seed << "\n"
       << "state = " << state << "\n"
       << "oracle_cap = " << oracle_cap << "\n";
    if (!out.empty()) os << "out = " << out << "\n";
    return os.str();
  }

  void set(const std::string& key, const std::string& value) {
    try {
      if (key == "problem") problem = value;
      else if (key == "N") N = std::stoull(value);
      else if (key == "eps") eps = std::stod(value);
      else if (key == "kind") kind = value;
      else if (key == "mode") mode = value;
      else if (key == "kappa") kappa = std::stod(value);
      else if (key == "n_occ") n_occ = std::stoi(value);
      else if (key == "n_proxy") n_proxy = std::stoi(value);
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "state") state = value;
      else if (key == "oracle_cap") oracle_cap = std::stoull(value);
      else if (key == "out") out = value;
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for '" + key + "': " + value);
    } catch (const std::out_of_range&) {
      throw ConfigError("value out of range for '" + key + "': " + value);
    }
  }

  // Flat key = value lines; '#' starts a comment.
  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Old and new instance of one experiment over a shared box structure.
template <class Scalar>
struct ProblemPair {
  std::shared_ptr<const KernelMatrix<Scalar>> base;
  std::shared_ptr<const KernelMatrix<Scalar>> perturbed;
  std::shared_ptr<const QuadTree> base_tree;
  std::shared_ptr<const QuadTree> perturbed_tree;
};

inline BumpWindow window_for(const ExperimentConfig& c) {
  return c.mode == "fixed-count" ? count_window(c.N) : proportion_window();
}

// Bumped circle (base) and plain circle (perturbed) on one matched tree.
inline ProblemPair<double> circle_problem(const ExperimentConfig& c) {
  Discretization bumped = bump_circle(c.N, window_for(c));
  Discretization plain = bump_circle(c.N);
  const Discretization* both[2] = {&bumped, &plain};
  auto base_tree = std::make_shared<const QuadTree>(QuadTree::build_structure(both, c.n_occ));
  auto new_tree = std::make_shared<const QuadTree>(base_tree->reassign(plain));
  ProblemPair<double> p;
  p.base = laplace_dlp(std::move(bumped));
  p.perturbed = laplace_dlp(std::move(plain));
  p.base_tree = base_tree;
  p.perturbed_tree = new_tree;
  return p;
}

// Scatterer w0 (base) and w1 (perturbed) on the unit-square grid.
inline ProblemPair<cdouble> ls_problem(const ExperimentConfig& c) {
  Discretization grid = unit_grid(c.grid_side());
  const double k = 2.0 * std::numbers::pi * c.kappa;
  const double s = perturbation_scale(grid);
  auto tree = std::make_shared<const QuadTree>(QuadTree::build(grid, c.n_occ, RootRegion{{0.0, 0.0}, 1.0}));
  ProblemPair<cdouble> p;
  p.base = helmholtz_ls(grid, scatterer_w0(grid), k);
  p.perturbed = helmholtz_ls(grid, scatterer_w1(grid, s), k);
  p.base_tree = tree;
  p.perturbed_tree = tree;
  return p;
}

template <class Scalar>
class DenseOracle {
 public:
  DenseOracle(const KernelMatrix<Scalar>& k, std::size_t cap) {
    if (k.size() > cap) throw std::length_error("dense oracle cap exceeded");
    const auto n = static_cast<Eigen::Index>(k.size());
    a_.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (k.symmetric() && i < j)
          a_(i, j) = a_(j, i);
        else
          a_(i, j) = k.entry(static_cast<Dof>(i), static_cast<Dof>(j));
    lu_.compute(a_);
  }
  const Matrix<Scalar>& matrix() const { return a_; }
  Vector<Scalar> multiply(const Vector<Scalar>& x) const { return a_ * x; }
  Vector<Scalar> solve(const Vector<Scalar>& b) const { return lu_.solve(b); }
  cdouble logdet() const { return wrap_phase(lu_logdet<Scalar>(lu_)); }

 private:
  Matrix<Scalar> a_;
  Eigen::PartialPivLU<Matrix<Scalar>> lu_;
};

template <class Scalar>
DenseOracle<Scalar> dense_oracle(const KernelMatrix<Scalar>& k, std::size_t cap) {
  return DenseOracle<Scalar>(k, cap);
}

template <class Scalar>
Vector<Scalar> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vector<Scalar> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (std::is_same_v<Scalar, cdouble>)
      v(i) = cdouble(nd(rng), nd(rng));
    else
      v(i) = nd(rng);
  }
  return v;
}

struct ResultRow {
  std::string problem;
  std::size_t N = 0;
  double eps = 0.0;
  double kappa = 0.0;
  std::string mode;
  double t_f = 0.0;
  double t_u = 0.0;
  std::size_t marked_total = 0;
  double relerr = std::numeric_limits<double>::quiet_NaN();
  std::string exact_match = "unverified";
  std::size_t modified = 0;
  std::size_t violations = 0;
  bool sub_asymptotic = false;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct RunOptions {
  int repeats = 3;
  bool check_accuracy = true;
  bool check_exact = true;
};

template <class Scalar>
ResultRow run_pair(const ExperimentConfig& c, const ProblemPair<Scalar>& p, const RunOptions& ro) {
  const FactorKind kind = c.factor_kind();
  const FactorOptions opt = c.factor_options();
  ResultRow row;
  row.problem = c.problem;
  row.N = c.N;
  row.eps = c.eps;
  row.kappa = c.is_circle() ? 0.0 : c.kappa;
  row.mode = c.mode;

  std::vector<double> tf, tu;
  Factorization<Scalar> f_old;
  for (int r = 0; r < ro.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f_old = build(kind, p.base, p.base_tree, opt);
    tf.push_back(seconds_since(t0));
  }
  const Perturbation pert = diff(*p.base, *p.perturbed);
  row.modified = pert.modified.size();
  Factorization<Scalar> f_new;
  UpdateReport rep;
  for (int r = 0; r < ro.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f_new = update(f_old, p.perturbed, pert, &rep);
    tu.push_back(seconds_since(t0));
  }
  row.t_f = median(tf);
  row.t_u = median(tu);
  row.marked_total = rep.rules.total();
  row.violations = rep.violations;

  if (ro.check_accuracy && c.N <= c.oracle_cap) {
    std::mt19937_64 rng(c.seed);
    const Vector<Scalar> b = random_vector<Scalar>(c.N, rng);
    const Vector<Scalar> x = f_new.solve(b);
    row.relerr = (p.perturbed->multiply(x) - b).norm() / b.norm();
  }
  if (ro.check_exact && c.N <= c.oracle_cap) {
    const Factorization<Scalar> fresh = build(kind, p.perturbed, f_new.tree, opt);
    row.exact_match = same_bits(fresh, f_new) ? "true" : "false";
  }
  return row;
}

inline ResultRow run_example1(const ExperimentConfig& c, const RunOptions& ro = {}) {
  c.validate();
  if (!c.is_circle()) throw ConfigError("run_example1 needs problem = circle-bump");
  return run_pair<double>(c, circle_problem(c), ro);
}

// Levels whose boxes are more than a wavelength across dominate when they are
// at least half of all levels; such rows are flagged sub-asymptotic.
inline bool sub_asymptotic(const ExperimentConfig& c, const QuadTree& tree) {
  const double k = 2.0 * std::numbers::pi * c.kappa;
  const int L = tree.max_level();
  int wide = 0;
  for (int l = 1; l <= L; ++l)
    if (k * tree.cell_width(l) > 2.0 * std::numbers::pi) ++wide;
  return L > 0 && 2 * wide >= L;
}

inline ResultRow run_example2(const ExperimentConfig& c, const RunOptions& ro = {}) {
  c.validate();
  if (c.is_circle()) throw ConfigError("run_example2 needs problem = lippmann-schwinger");
  const ProblemPair<cdouble> p = ls_problem(c);
  ResultRow row = run_pair<cdouble>(c, p, ro);
  row.sub_asymptotic = sub_asymptotic(c, *p.base_tree);
  return row;
}

inline const char* kCsvHeader = "problem,N,eps,kappa,mode,t_f_seconds,t_u_seconds,marked_total,relerr,exact_match";

inline void emit(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << kCsvHeader << "\n";
  for (const ResultRow& r : rows) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.3g,%.3g,%s,%.6g,%.6g,%zu,%.3e,%s", r.problem.c_str(), r.N, r.eps, r.kappa,
                  r.mode.c_str(), r.t_f, r.t_u, r.marked_total, r.relerr, r.exact_match.c_str());
    os << buf << "\n";
  }
}

}  // namespace skelup
