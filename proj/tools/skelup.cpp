// Command-line driver: factor, update, verify and the two benchmark sweeps.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include <skelup/bench.hpp>

using namespace skelup;

namespace {

const char* kKeys[] = {"problem", "N", "eps", "kind", "mode", "kappa", "n_occ", "n_proxy", "seed", "state", "oracle_cap", "out"};

// Config assembled from --config (if any) and then the individual key flags.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    for (const char* k : kKeys) app->add_option(std::string("--") + k, values[k], std::string("config key ") + k);
  }

  ExperimentConfig resolve(ExperimentConfig base, const CLI::App* app) const {
    if (!file.empty()) base = ExperimentConfig::load(file);
    for (const char* k : kKeys)
      if (app->count(std::string("--") + k) > 0) base.set(k, values.at(k));
    base.validate();
    return base;
  }
};

template <class Scalar>
struct Problem {
  std::shared_ptr<const KernelMatrix<Scalar>> kernel;
  std::shared_ptr<const QuadTree> tree;
};

template <class Scalar>
Problem<Scalar> select(const ProblemPair<Scalar>& p, const ExperimentConfig& c) {
  if (c.state == "base") return {p.base, p.base_tree};
  return {p.perturbed, p.perturbed_tree};
}

std::ostream& output(const ExperimentConfig& c, std::ofstream& file) {
  if (c.out.empty()) return std::cout;
  file.open(c.out);
  if (!file) throw std::runtime_error("cannot open " + c.out);
  return file;
}

void write_file(const std::string& path, const auto& f, const ExperimentConfig& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_factorization(os, f, c.to_text());
}

double tolerance(const ExperimentConfig& c) { return (c.is_circle() ? 10.0 : 100.0) * c.eps; }

template <class Scalar>
int factor_cmd(const ExperimentConfig& c, const Problem<Scalar>& p, const std::string& path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto f = build(c.factor_kind(), p.kernel, p.tree, c.factor_options());
  const double t = seconds_since(t0);
  write_file(path, f, c);
  std::ofstream file;
  std::ostream& os = output(c, file);
  os << "N,levels,root_dofs,t_f_seconds\n" << c.N << "," << p.tree->max_level() << "," << f.root->dofs.size() << "," << t << "\n";
  return 0;
}

template <class Scalar>
int update_cmd(std::istream& is, const io::Header& h, const ExperimentConfig& old_c, const ExperimentConfig& new_c,
               const std::string& path) {
  const auto old_p = [&] {
    if constexpr (std::is_same_v<Scalar, double>)
      return select(circle_problem(old_c), old_c);
    else
      return select(ls_problem(old_c), old_c);
  }();
  const auto new_p = [&] {
    if constexpr (std::is_same_v<Scalar, double>)
      return select(circle_problem(new_c), new_c);
    else
      return select(ls_problem(new_c), new_c);
  }();
  const auto f_old = read_factorization<Scalar>(is, h, old_p.kernel, old_p.tree);
  const Perturbation pert = diff(*old_p.kernel, *new_p.kernel);
  UpdateReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  const auto f_new = update(f_old, new_p.kernel, pert, &rep);
  const double t = seconds_since(t0);
  write_file(path, f_new, new_c);
  std::ofstream file;
  std::ostream& os = output(new_c, file);
  os << "N,m,marked_total,t_u_seconds\n" << new_c.N << "," << pert.modified.size() << "," << rep.rules.total() << "," << t << "\n";
  if (rep.violations > 0) {
    std::cerr << "marking missed " << rep.violations << " owners\n";
    return 1;
  }
  return 0;
}

template <class Scalar>
int verify_cmd(std::istream& is, const io::Header& h, const ExperimentConfig& c) {
  const auto p = [&] {
    if constexpr (std::is_same_v<Scalar, double>)
      return select(circle_problem(c), c);
    else
      return select(ls_problem(c), c);
  }();
  const auto f = read_factorization<Scalar>(is, h, p.kernel, p.tree);
  std::mt19937_64 rng(c.seed);
  const Vector<Scalar> b = random_vector<Scalar>(c.N, rng);
  const double err = (p.kernel->multiply(f.solve(b)) - b).norm() / b.norm();
  const bool ok = err <= tolerance(c);
  std::cout << (ok ? "PASS" : "FAIL") << " residual " << err << " tolerance " << tolerance(c) << "\n";
  return ok ? 0 : 1;
}

int bench_cmd(ExperimentConfig c, const std::vector<std::size_t>& sizes, int repeats, bool circle) {
  RunOptions ro;
  ro.repeats = repeats;
  std::vector<ResultRow> rows;
  bool ok = true;
  for (std::size_t n : sizes.empty() ? std::vector<std::size_t>{c.N} : sizes) {
    c.N = n;
    const ResultRow r = circle ? run_example1(c, ro) : run_example2(c, ro);
    if (r.sub_asymptotic) std::cerr << "N=" << n << ": sub-asymptotic (boxes wider than a wavelength dominate)\n";
    if (r.exact_match == "false" || r.violations > 0 || (!std::isnan(r.relerr) && r.relerr > tolerance(c))) {
      std::cerr << "N=" << n << ": check failed (exact=" << r.exact_match << ", violations=" << r.violations
                << ", relerr=" << r.relerr << ")\n";
      ok = false;
    }
    rows.push_back(r);
  }
  std::ofstream file;
  emit(rows, output(c, file));
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skeletonization factorizations with selective updating"};
  app.require_subcommand(1);

  ConfigFlags factor_flags, update_flags, verify_flags, ex1_flags, ex2_flags;
  std::string factor_out = "factor.bin", update_in, update_out = "updated.bin", verify_in;
  std::vector<std::size_t> ex1_sizes, ex2_sizes;
  int ex1_repeats = 3, ex2_repeats = 3;

  auto* factor = app.add_subcommand("factor", "factor one geometry and write the container");
  factor_flags.attach(factor);
  factor->add_option("-o,--output", factor_out, "factorization file");

  auto* upd = app.add_subcommand("update", "update a stored factorization to a new problem");
  update_flags.attach(upd);
  upd->add_option("-i,--input", update_in, "factorization file")->required();
  upd->add_option("-o,--output", update_out, "updated factorization file");

  auto* verify = app.add_subcommand("verify", "check a stored factorization against direct summation");
  verify_flags.attach(verify);
  verify->add_option("-i,--input", verify_in, "factorization file")->required();

  auto* ex1 = app.add_subcommand("bench-ex1", "bumped circle to circle, Laplace double layer");
  ex1_flags.attach(ex1);
  ex1->add_option("--sizes", ex1_sizes, "list of N values (default: N)")->delimiter(',');
  ex1->add_option("--repeats", ex1_repeats, "timing repeats (median)");

  auto* ex2 = app.add_subcommand("bench-ex2", "Lippmann-Schwinger scatterer w0 to w1");
  ex2_flags.attach(ex2);
  ex2->add_option("--sizes", ex2_sizes, "list of N values, perfect squares (default: N)")->delimiter(',');
  ex2->add_option("--repeats", ex2_repeats, "timing repeats (median)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (factor->parsed()) {
      const ExperimentConfig c = factor_flags.resolve({}, factor);
      if (c.is_circle()) return factor_cmd<double>(c, select(circle_problem(c), c), factor_out);
      return factor_cmd<cdouble>(c, select(ls_problem(c), c), factor_out);
    }
    if (upd->parsed() || verify->parsed()) {
      const std::string& in = upd->parsed() ? update_in : verify_in;
      std::ifstream is(in, std::ios::binary);
      if (!is) throw std::runtime_error("cannot open " + in);
      const io::Header h = io::read_header(is);
      ExperimentConfig stored = ExperimentConfig::parse(h.config);
      stored.out.clear();
      if (verify->parsed()) {
        const ExperimentConfig c = verify_flags.resolve(stored, verify);
        return h.complex ? verify_cmd<cdouble>(is, h, c) : verify_cmd<double>(is, h, c);
      }
      ExperimentConfig next = stored;
      next.state = "perturbed";
      next = update_flags.resolve(next, upd);
      if (next.problem != stored.problem || next.N != stored.N) throw ConfigError("update cannot change problem or N");
      return h.complex ? update_cmd<cdouble>(is, h, stored, next, update_out)
                       : update_cmd<double>(is, h, stored, next, update_out);
    }
    if (ex1->parsed()) {
      ExperimentConfig base;
      base.problem = "circle-bump";
      return bench_cmd(ex1_flags.resolve(base, ex1), ex1_sizes, ex1_repeats, true);
    }
    if (ex2->parsed()) {
      ExperimentConfig base;
      base.problem = "lippmann-schwinger";
      base.kind = "hif";
      base.N = 4096;
      return bench_cmd(ex2_flags.resolve(base, ex2), ex2_sizes, ex2_repeats, false);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
