#pragma once

// Experiment configuration and orchestration behind the `hlab` CLI.
//
// A run writes into cfg.out:
//   metadata.json  config echo, library versions, PRNG names, wall time
//   summary.json   headline numbers of the experiment
//   *.csv          tables (byte-identical for a fixed config, any job count)
//   *.bin          field containers / path dumps when requested

#include "hlab/coarse.hpp"
#include "hlab/common.hpp"
#include "hlab/correctors.hpp"
#include "hlab/field_io.hpp"
#include "hlab/fields.hpp"
#include "hlab/renorm.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"
#include "hlab/stochproc.hpp"
#include "hlab/twoscale.hpp"

#include <Eigen/Core>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace hlab {

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"field-gen", "coarsen", "corrector", "twoscale", "cascade", "walk", "green"};
  return kinds;
}

struct ExperimentConfig {
  std::string kind = "field-gen";
  int dim = 2;
  FieldSpec field{};
  int m = 3;  // cube level (twoscale: period-cell level)
  int k = 1;
  std::vector<int> levels;      // cascade / twoscale / corrector (finite_volume) scales
  std::vector<double> radii;    // cascade heat-kernel radii
  std::size_t ensemble = 1;
  std::uint64_t seed = 1;
  SolveOptions solve{};
  int jobs = 0;  // 0: HLAB_JOBS, else 1
  std::string out = "hlab-out";

  // corrector
  std::string corrector_mode = "periodic";  // periodic | finite_volume
  bool dump_fields = false;
  // twoscale
  std::string macro = "affine";  // affine | quadratic
  std::vector<double> slope;     // affine p; empty means e1
  std::vector<double> hessian;   // quadratic B0, row-major; empty means e1 x e1
  // cascade
  int bootstrap = 200;
  // walk
  double horizon = 100.0;
  std::size_t paths = 10000;
  bool dump_paths = false;
  // green
  double time = 25.0;
  double dt = 0.0;
  std::string abar_source = "network";  // network | continuum

  int resolved_jobs() const { return jobs >= 1 ? jobs : default_jobs(); }

  void validate() const;
};

inline void to_json(nlohmann::json& j, const SolveOptions& s) {
  j = {{"tol", s.tol}, {"max_iter", s.max_iter}, {"preconditioner", to_string(s.preconditioner)}};
}

inline void from_json(const nlohmann::json& j, SolveOptions& s) {
  s.tol = j.value("tol", s.tol);
  s.max_iter = j.value("max_iter", s.max_iter);
  const std::string p = j.value("preconditioner", std::string(to_string(s.preconditioner)));
  if (p == "none") s.preconditioner = Preconditioner::none;
  else if (p == "diagonal") s.preconditioner = Preconditioner::diagonal;
  else if (p == "spectral") s.preconditioner = Preconditioner::spectral;
  else throw ArgumentError("unknown preconditioner '" + p + "'");
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"kind", c.kind},
       {"dim", c.dim},
       {"field", c.field},
       {"grid", {{"m", c.m}, {"k", c.k}}},
       {"scales", {{"levels", c.levels}, {"radii", c.radii}}},
       {"ensemble", c.ensemble},
       {"seed", c.seed},
       {"solver", c.solve},
       {"jobs", c.jobs},
       {"out", c.out},
       {"corrector", {{"mode", c.corrector_mode}, {"dump_fields", c.dump_fields}}},
       {"twoscale", {{"macro", c.macro}, {"slope", c.slope}, {"hessian", c.hessian}}},
       {"cascade", {{"bootstrap", c.bootstrap}}},
       {"walk", {{"horizon", c.horizon}, {"paths", c.paths}, {"dump_paths", c.dump_paths}}},
       {"green", {{"time", c.time}, {"dt", c.dt}, {"abar_source", c.abar_source}}}};
}

namespace detail {

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  const auto& s = j.at(key);
  if (!s.is_object()) throw ArgumentError(std::string("config section '") + key + "' must be an object");
  return s;
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ArgumentError("unknown config key '" + where + it.key() + "'");
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"kind", "dim", "field", "grid", "scales", "ensemble", "seed", "solver", "jobs", "out", "corrector",
                          "twoscale", "cascade", "walk", "green"},
                         "");
  try {
    c.kind = j.value("kind", c.kind);
    c.dim = j.value("dim", c.dim);
    if (j.contains("field")) c.field = j.at("field").get<FieldSpec>();
    const auto& grid = detail::section(j, "grid");
    c.m = grid.value("m", c.m);
    c.k = grid.value("k", c.k);
    const auto& scales = detail::section(j, "scales");
    c.levels = scales.value("levels", c.levels);
    c.radii = scales.value("radii", c.radii);
    c.ensemble = j.value("ensemble", c.ensemble);
    c.seed = j.value("seed", c.seed);
    if (j.contains("solver")) c.solve = j.at("solver").get<SolveOptions>();
    c.jobs = j.value("jobs", c.jobs);
    c.out = j.value("out", c.out);
    const auto& cor = detail::section(j, "corrector");
    c.corrector_mode = cor.value("mode", c.corrector_mode);
    c.dump_fields = cor.value("dump_fields", c.dump_fields);
    const auto& ts = detail::section(j, "twoscale");
    c.macro = ts.value("macro", c.macro);
    c.slope = ts.value("slope", c.slope);
    c.hessian = ts.value("hessian", c.hessian);
    c.bootstrap = detail::section(j, "cascade").value("bootstrap", c.bootstrap);
    const auto& w = detail::section(j, "walk");
    c.horizon = w.value("horizon", c.horizon);
    c.paths = w.value("paths", c.paths);
    c.dump_paths = w.value("dump_paths", c.dump_paths);
    const auto& g = detail::section(j, "green");
    c.time = g.value("time", c.time);
    c.dt = g.value("dt", c.dt);
    c.abar_source = g.value("abar_source", c.abar_source);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed config: ") + e.what());
  }
}

/// Checks everything the selected experiment would otherwise reject mid-run.
inline void ExperimentConfig::validate() const {
  const auto& kinds = experiment_kinds();
  require(std::find(kinds.begin(), kinds.end(), kind) != kinds.end(), "unknown experiment kind '" + kind + "'");
  require(dim == 2 || dim == 3, "dim must be 2 or 3");
  require(m >= 0 && m <= 8, "grid level m must lie in [0, 8]");
  require(k >= 1, "grid k must be >= 1");
  require(ensemble >= 1, "ensemble size must be >= 1");
  solve.validate();
  const std::size_t d = static_cast<std::size_t>(dim);
  if (field.kind == "constant") require(field.matrix.empty() || field.matrix.size() == d * d, "constant matrix must have d*d entries");
  if (field.kind == "laminate") {
    require(field.axis >= 1 && field.axis <= dim, "laminate axis must lie in 1..d");
    require(field.period > 0.0, "laminate period must be > 0");
    const double cells = field.period * k / 2.0;
    require(std::abs(cells - std::round(cells)) < 1e-12 && cells >= 1.0, "laminate layers must align with the cells (period*k even)");
  }
  if (field.kind == "checkerboard") require(field.p_black >= 0.0 && field.p_black <= 1.0, "checkerboard p_black must lie in [0, 1]");
  if (field.kind == "checkerboard" || field.kind == "laminate")
    require(field.v1 > 0.0 && field.v2 > 0.0, "field values must be positive");
  if (field.kind == "gaussian") field.gaussian.validate();

  if (kind == "corrector") {
    require(corrector_mode == "periodic" || corrector_mode == "finite_volume", "corrector mode must be periodic or finite_volume");
    for (int n : levels) require(n >= 0 && n <= m, "corrector levels must lie in [0, m]");
  }
  if (kind == "twoscale") {
    require(levels.size() >= 3, "twoscale needs at least three levels");
    for (int n : levels) require(n >= m && n <= 8, "twoscale levels must lie in [m, 8]");
    require(macro == "affine" || macro == "quadratic", "twoscale macro must be affine or quadratic");
    require(slope.empty() || slope.size() == d, "twoscale slope must have d entries");
    require(hessian.empty() || hessian.size() == d * d, "twoscale hessian must have d*d entries");
  }
  if (kind == "cascade") {
    require(!levels.empty() || !radii.empty(), "cascade needs levels or radii");
    for (int n : levels) require(n >= 0 && n < m, "cascade levels must lie in [0, m)");
    for (double r : radii) require(r > 0.0 && 12.0 * r <= static_cast<double>(ipow3(m)), "cascade radii must satisfy 0 < 12 r <= 3^m");
    require(bootstrap >= 0, "bootstrap count must be >= 0");
  }
  if (kind == "walk") {
    require(horizon > 0.0, "walk horizon must be > 0");
    require(paths >= 1000, "walk needs at least 1000 paths");
  }
  if (kind == "green") {
    require(time > 0.0, "green time must be > 0");
    require(dt >= 0.0 && dt <= time, "green dt must lie in [0, time]");
    require(abar_source == "network" || abar_source == "continuum", "green abar_source must be network or continuum");
  }
}

/// Applies a dotted-path override such as "walk.paths=2000"; the value is
/// parsed as JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!key.empty(), "override path has an empty component");
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

/// Serialized form of an error, as printed by the CLI.
inline nlohmann::json error_json(const std::exception& e) {
  std::string type = "error";
  if (const auto* he = dynamic_cast<const Error*>(&e)) type = he->kind();
  nlohmann::json err = {{"type", type}, {"message", e.what()}};
  if (const auto* se = dynamic_cast<const SolverError*>(&e)) {
    err["residual"] = se->residual();
    err["iterations"] = se->iterations();
  }
  if (const auto* ee = dynamic_cast<const EnsembleError*>(&e)) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& m : ee->failures()) f.push_back({{"index", m.index}, {"seed", m.seed}, {"message", m.message}});
    err["failures"] = f;
  }
  return {{"error", err}};
}

struct ExperimentResult {
  nlohmann::json summary;
  std::vector<std::string> outputs;  // file names inside cfg.out
  double wall_time = 0.0;
};

namespace detail {

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) { std::filesystem::create_directories(dir_); }

  template <class F>
  void write(const std::string& name, F&& writer) {
    write_file((dir_ / name).string(), std::forward<F>(writer));
    names_.push_back(name);
  }
  void write_json(const std::string& name, const nlohmann::json& j) {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
};

template <int D>
nlohmann::json mat_json(const Mat<D>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < D; ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (int j = 0; j < D; ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

template <int D>
void write_mat_csv(std::ostream& os, const Mat<D>& m) {
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) os << ',' << m(i, j);
}

template <int D>
std::string mat_csv_header(const std::string& prefix) {
  std::string s;
  for (int i = 1; i <= D; ++i)
    for (int j = 1; j <= D; ++j) s += "," + prefix + std::to_string(i) + std::to_string(j);
  return s;
}

template <int D>
CoefficientField<D> member_field(const ExperimentConfig& c, const GridSpec<D>& g, std::uint64_t seed) {
  CoefficientField<D> a = generate_field<D>(c.field, g, seed);
  a.provenance["seed"] = seed;
  return a;
}

template <int D>
nlohmann::json run_field_gen(const ExperimentConfig& c, OutputDir& out, int jobs) {
  const GridSpec<D> g(c.m, c.k);
  const auto fields = run_members<CoefficientField<D>>(c.ensemble, c.seed, jobs,
                                                       [&](std::uint64_t s, std::size_t) { return member_field<D>(c, g, s); });
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string name = c.ensemble == 1 ? "field.bin" : "field_" + std::to_string(i) + ".bin";
    out.write(name, [&](std::ostream& os) { write_field<D>(os, fields[i]); });
    files.push_back({{"file", name}, {"seed", member_seed(c.seed, i)}, {"lambda", fields[i].lambda}, {"Lambda", fields[i].Lambda}});
  }
  return {{"fields", files}};
}

template <int D>
nlohmann::json run_coarsen(const ExperimentConfig& c, OutputDir& out, int jobs) {
  const GridSpec<D> g(c.m, c.k);
  CorrectorOptions co;
  co.solve = c.solve;
  co.flux_correctors = false;
  CoarseOptions opts;
  opts.solve = c.solve;
  opts.keep_solutions = false;
  const auto recs = run_members<CascadeRecord<D>>(c.ensemble, c.seed, jobs, [&](std::uint64_t s, std::size_t) {
    const auto a = member_field<D>(c, g, s);
    const Mat<D> ref = periodic_homogenized_matrix(a, co).abar;
    return coarse_cascade(a, g.cube, ref, opts);
  });
  out.write("coarsen.csv", [&](std::ostream& os) {
    for (std::size_t i = 0; i < recs.size(); ++i) {
      std::ostringstream body;
      recs[i].write_csv(body);
      std::istringstream lines(body.str());
      std::string line;
      std::getline(lines, line);
      if (i == 0) os << "member,seed," << line << '\n';
      while (std::getline(lines, line)) os << i << ',' << member_seed(c.seed, i) << ',' << line << '\n';
    }
  });
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t n = 0; n < recs.front().levels.size(); ++n) {
    EnsembleStats gap, upper, lower;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto& lv = recs[i].levels[n];
      gap.add(member_seed(c.seed, i), lv.mean_gap);
      upper.add(member_seed(c.seed, i), lv.upper_defect);
      lower.add(member_seed(c.seed, i), lv.lower_defect);
    }
    levels.push_back({{"level", n},
                      {"mean_gap", gap.mean()},
                      {"mean_gap_variance", gap.variance()},
                      {"min_upper_defect", upper.min()},
                      {"min_lower_defect", lower.min()}});
  }
  EnsembleStats E;
  for (std::size_t i = 0; i < recs.size(); ++i) E.add(member_seed(c.seed, i), recs[i].E);
  return {{"levels", levels}, {"E_m", {{"mean", E.mean()}, {"variance", E.variance()}}}};
}

template <int D>
nlohmann::json run_corrector(const ExperimentConfig& c, OutputDir& out, int jobs) {
  const GridSpec<D> g(c.m, c.k);
  CorrectorOptions co;
  co.solve = c.solve;
  co.flux_correctors = true;
  const bool periodic = c.corrector_mode == "periodic";
  std::vector<int> levels = c.levels;
  if (levels.empty()) levels.push_back(c.m);
  struct Row {
    int level;
    CorrectorSet<D> set;
    double R;
  };
  const auto members = run_members<std::vector<Row>>(c.ensemble, c.seed, jobs, [&](std::uint64_t s, std::size_t i) {
    const auto a = member_field<D>(c, g, s);
    std::vector<Row> rows;
    if (periodic) {
      auto set = periodic_homogenized_matrix(a, co);
      const double R = sublinearity_R(set);
      rows.push_back({c.m, std::move(set), R});
    } else {
      for (int n : levels) {
        auto set = finite_volume_correctors(a, TriadicCube<D>{n, g.cube.center}, co);
        const double R = sublinearity_R(set);
        rows.push_back({n, std::move(set), R});
      }
    }
    // drop the fields except where a dump was requested
    for (auto& r : rows) {
      r.set.gradient.clear();
      r.set.flux.clear();
      r.set.g.clear();
      if (!(c.dump_fields && i == 0)) {
        r.set.phi.clear();
        r.set.s.clear();
      }
    }
    return rows;
  });
  out.write("corrector.csv", [&](std::ostream& os) {
    os.precision(17);
    os << "member,seed,mode,level" << mat_csv_header<D>("abar_") << ",drift,skew_residual,div_residual,R\n";
    for (std::size_t i = 0; i < members.size(); ++i)
      for (const auto& r : members[i]) {
        os << i << ',' << member_seed(c.seed, i) << ',' << to_string(r.set.mode) << ',' << r.level;
        write_mat_csv<D>(os, r.set.abar);
        os << ',' << r.set.drift << ',' << r.set.max_skew_residual() << ',' << r.set.max_div_residual() << ',' << r.R << '\n';
      }
  });
  if (c.dump_fields)
    for (const auto& r : members.front()) {
      const std::string tag = periodic ? "" : "_m" + std::to_string(r.level);
      for (std::size_t kx = 0; kx < r.set.phi.size(); ++kx)
        out.write("phi_" + std::to_string(kx + 1) + tag + ".bin", [&](std::ostream& os) {
          write_field<D>(os, r.set.phi[kx], {{"quantity", "phi"}, {"direction", kx + 1}});
        });
      for (std::size_t kx = 0; kx < r.set.s.size(); ++kx)
        out.write("s_" + std::to_string(kx + 1) + tag + ".bin", [&](std::ostream& os) {
          write_field<D>(os, r.set.s[kx].cells, {{"quantity", "flux_corrector"}, {"direction", kx + 1}});
        });
    }
  nlohmann::json per_level = nlohmann::json::array();
  for (std::size_t l = 0; l < members.front().size(); ++l) {
    EnsembleStats R;
    std::vector<Mat<D>> abars;
    for (std::size_t i = 0; i < members.size(); ++i) R.add(member_seed(c.seed, i), members[i][l].R);
    Mat<D> mean = Mat<D>::Zero();
    for (const auto& mem : members) mean += mem[l].set.abar;
    mean /= static_cast<double>(members.size());
    per_level.push_back({{"level", members.front()[l].level},
                         {"R_mean", R.mean()},
                         {"R_variance", R.variance()},
                         {"abar_mean", mat_json<D>(mean)}});
  }
  return {{"mode", c.corrector_mode}, {"levels", per_level}};
}

template <int D>
MacroFunction<D> macro_for(const ExperimentConfig& c, const Mat<D>& abar) {
  if (c.macro == "affine") {
    Vec<D> p = unit<D>(0);
    if (!c.slope.empty())
      for (int i = 0; i < D; ++i) p(i) = c.slope[static_cast<std::size_t>(i)];
    return affine_macro<D>(p);
  }
  Mat<D> B0 = Mat<D>::Zero();
  B0(0, 0) = 1.0;
  if (!c.hessian.empty())
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) B0(i, j) = c.hessian[static_cast<std::size_t>(i * D + j)];
  return harmonic_quadratic<D>(abar, B0);
}

template <int D>
nlohmann::json run_twoscale(const ExperimentConfig& c, OutputDir& out, int jobs) {
  const GridSpec<D> g(c.m, c.k);
  const auto cell = member_field<D>(c, g, member_seed(c.seed, 0));
  TwoScaleOptions opts;
  opts.period_level = c.m;
  opts.k = c.k;
  opts.levels = c.levels;
  opts.corrector.solve = c.solve;
  opts.corrector.flux_correctors = false;
  opts.jobs = jobs;
  const Mat<D> abar = periodic_homogenized_matrix(cell, opts.corrector).abar;
  const MacroFunction<D> u = macro_for<D>(c, abar);
  const auto seq = two_scale_sequence(cell, u, opts);
  out.write("twoscale.csv", [&](std::ostream& os) { seq.write_csv(os); });
  nlohmann::json reports = nlohmann::json::array();
  // affine data: u^eps is the Dirichlet extremal of the coarse module
  for (const auto& r : seq.reports) {
    nlohmann::json row = {{"eps", r.eps}, {"level", r.level}, {"grad_error", r.grad_error}, {"value_error", r.value_error},
                          {"energy", r.energy}};
    if (c.macro == "affine") {
      const auto a = periodic_extension(cell, r.level);
      Vec<D> p = u.gradient(Vec<D>::Zero());
      const auto v = solve_dirichlet_affine(a, a.grid().cube, p, c.solve);
      row["extremal_energy"] = v.energy;
      row["extremal_energy_gap"] = std::abs(v.energy - r.energy);
    }
    reports.push_back(row);
  }
  return {{"macro", u.name},
          {"abar", mat_json<D>(seq.abar)},
          {"grad_rate", seq.grad_rate},
          {"value_rate", seq.value_rate},
          {"rate_meaningful", seq.rate_meaningful},
          {"reports", reports}};
}

template <int D>
nlohmann::json run_cascade(const ExperimentConfig& c, OutputDir& out, int jobs) {
  CascadeOptions opt;
  opt.M = c.m;
  opt.k = c.k;
  opt.radii = c.radii;
  opt.levels = c.levels;
  opt.seeds = c.ensemble;
  opt.master_seed = c.seed;
  opt.jobs = jobs;
  opt.bootstrap = c.bootstrap;
  opt.solve = c.solve;
  const auto table = fluctuation_cascade<D>(c.field, opt);
  out.write("cascade.csv", [&](std::ostream& os) { table.write_csv(os); });
  out.write("cascade_samples.csv", [&](std::ostream& os) {
    os.precision(17);
    os << "member,seed,observable,scale,i,j,value\n";
    for (std::size_t s = 0; s < table.seeds.size(); ++s) {
      for (std::size_t r = 0; r < table.radii.size(); ++r)
        for (int e = 0; e < D * D; ++e)
          os << s << ',' << table.seeds[s] << ",b_r," << table.radii[r] << ',' << e / D + 1 << ',' << e % D + 1 << ','
             << table.samples_b[r][static_cast<std::size_t>(e)][s] << '\n';
      for (std::size_t n = 0; n < table.levels.size(); ++n)
        os << s << ',' << table.seeds[s] << ",a_box," << ipow3(table.levels[n]) << ",1,1," << table.samples_a[n][s] << '\n';
    }
  });
  return table.summary();
}

template <int D>
nlohmann::json run_walk(const ExperimentConfig& c, OutputDir& out, int jobs) {
  const GridSpec<D> g(c.m, c.k);
  const auto a = member_field<D>(c, g, member_seed(c.seed, 0));
  const auto net = build_network(a);
  WalkOptions wo;
  wo.horizon = c.horizon;
  wo.paths = c.paths;
  wo.seed = c.seed;
  wo.jobs = jobs;
  wo.keep_paths = c.dump_paths;
  const auto rep = simulate_walks(net, wo, c.solve);
  out.write("walk.csv", [&](std::ostream& os) { rep.write_csv(os); });
  if (c.dump_paths) out.write("paths.bin", [&](std::ostream& os) { rep.write_path_dump(os, net.grid.h()); });
  CorrectorOptions co;
  co.solve = c.solve;
  co.flux_correctors = false;
  const Mat<D> abar_cont = periodic_homogenized_matrix(a, co).abar;
  return {{"paths", rep.paths},
          {"horizon", c.horizon},
          {"abar_network", mat_json<D>(rep.abar_net)},
          {"abar_continuum", mat_json<D>(abar_cont)},
          {"target", mat_json<D>(rep.target)},
          {"final_scaled_cov", mat_json<D>(rep.scaled_cov(rep.times.size() - 1))},
          {"final_rel_error", rep.rel_error.back()},
          {"stabilization", rep.stabilization},
          {"max_mean_z", *std::max_element(rep.mean_z.begin(), rep.mean_z.end())}};
}

template <int D>
nlohmann::json run_green(const ExperimentConfig& c, OutputDir& out, int) {
  const GridSpec<D> g(c.m, c.k);
  const auto a = member_field<D>(c, g, member_seed(c.seed, 0));
  const auto net = build_network(a);
  Mat<D> abar;
  if (c.abar_source == "network") {
    abar = network_homogenized_matrix(net, c.solve).abar;
  } else {
    CorrectorOptions co;
    co.solve = c.solve;
    co.flux_correctors = false;
    abar = periodic_homogenized_matrix(a, co).abar;
  }
  IVec<D> src{};
  src.fill(g.n() / 2);
  GreenOptions go;
  go.dt = c.dt;
  const auto rep = parabolic_green(net, c.time, src, abar, go);
  out.write("green.csv", [&](std::ostream& os) {
    os.precision(17);
    for (int i = 0; i < D; ++i) os << 'x' << i + 1 << ',';
    os << "P,P_hom\n";
    IVec<D> i{};
    Index flat = 0;
    do {
      Vec<D> x;
      for (int ax = 0; ax < D; ++ax) {
        // minimal-image displacement from the source on the torus
        long off = floor_mod(i[ax] - src[ax], g.n());
        if (off > g.n() / 2) off -= g.n();
        x(ax) = static_cast<double>(off) * g.h();
      }
      for (int ax = 0; ax < D; ++ax) os << x(ax) << ',';
      os << rep.P[flat++] << ',' << homogenized_kernel<D>(abar, c.time, x) << '\n';
    } while (advance<D>(i, g.n()));
  });
  nlohmann::json s = rep.summary();
  s["abar"] = mat_json<D>(abar);
  s["abar_source"] = c.abar_source;
  return s;
}

template <int D>
nlohmann::json dispatch(const ExperimentConfig& c, OutputDir& out, int jobs) {
  if (c.kind == "field-gen") return run_field_gen<D>(c, out, jobs);
  if (c.kind == "coarsen") return run_coarsen<D>(c, out, jobs);
  if (c.kind == "corrector") return run_corrector<D>(c, out, jobs);
  if (c.kind == "twoscale") return run_twoscale<D>(c, out, jobs);
  if (c.kind == "cascade") return run_cascade<D>(c, out, jobs);
  if (c.kind == "walk") return run_walk<D>(c, out, jobs);
  if (c.kind == "green") return run_green<D>(c, out, jobs);
  throw ArgumentError("unknown experiment kind '" + c.kind + "'");
}

inline nlohmann::json versions() {
  return {{"hlab", std::string(kVersion)},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

}  // namespace detail

struct SelftestCheck {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed() const { return value <= tolerance; }
};

/// Quick closed-form and exact-identity checks on small grids.
inline std::vector<SelftestCheck> run_selftest() {
  std::vector<SelftestCheck> out;
  CorrectorOptions co;
  co.solve.tol = 1e-8;
  co.flux_correctors = false;
  {
    const auto lam = periodic_homogenized_matrix(make_laminate<2>(GridSpec<2>(0, 18), 1.0, 4.0, 1.0, 1), co);
    Mat<2> want;
    want << 1.6, 0.0, 0.0, 2.5;
    out.push_back({"laminate_abar", (lam.abar - want).cwiseAbs().maxCoeff(), 1e-6});
  }
  {
    const auto cb = sample_checkerboard<2>(GridSpec<2>(2, 1), 3, 1.0, 4.0, 0.5);
    CoarseOptions o;
    o.solve.tol = 1e-10;
    const auto r = coarse_matrices(cb, cb.grid().cube, o);
    const auto id = spatial_average_identities(r);
    out.push_back({"mean_gradient_identity", id.exact(), 1e-12});
    out.push_back({"mean_flux_identity", id.approximate(), 10.0 * o.solve.tol * cb.Lambda});
    out.push_back({"ordering_chain", std::max(0.0, -ordering_margins(r, cb.lambda, cb.Lambda).min()), 10.0 * o.solve.tol});
  }
  {
    CorrectorOptions fo = co;
    fo.flux_correctors = true;
    fo.solve.tol = 1e-10;
    const auto set = periodic_homogenized_matrix(sample_checkerboard<2>(GridSpec<2>(2, 1), 4, 1.0, 4.0, 0.5), fo);
    out.push_back({"flux_corrector_skew", set.max_skew_residual(), 0.0});
    out.push_back({"flux_corrector_divergence", set.max_div_residual(), 10.0 * fo.solve.tol});
  }
  {
    EnsembleStats all, lo, hi;
    for (std::size_t i = 0; i < 37; ++i) {
      const double v = to_unit(member_seed(99, i)) * 10.0 - 3.0;
      all.add(member_seed(99, i), v);
      (i % 3 == 0 ? lo : hi).add(member_seed(99, i), v);
    }
    out.push_back({"welford_merge", EnsembleStats::merge(lo, hi) == all ? 0.0 : 1.0, 0.0});
  }
  {
    const auto f = rate_fit({3.0, 9.0, 27.0}, {1.0 / 9.0, 1.0 / 81.0, 1.0 / 729.0}, {}, RateFitOptions{});
    out.push_back({"rate_fit_power", std::abs(f.slope + 2.0), 1e-12});
  }
  {
    auto bytes = [](std::uint64_t seed) {
      std::ostringstream os;
      write_field<2>(os, sample_checkerboard<2>(GridSpec<2>(2, 2), seed, 1.0, 4.0, 0.5));
      return os.str();
    };
    out.push_back({"seed_reproducibility", bytes(7) == bytes(7) && bytes(7) != bytes(8) ? 0.0 : 1.0, 0.0});
  }
  return out;
}

inline nlohmann::json selftest_json(const std::vector<SelftestCheck>& checks) {
  nlohmann::json arr = nlohmann::json::array();
  bool ok = true;
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"passed", c.passed()}});
    ok = ok && c.passed();
  }
  return {{"checks", arr}, {"passed", ok}};
}

/// Validates, runs and writes the output bundle. Throws hlab errors unchanged.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputDir out(cfg.out);
  const int jobs = cfg.resolved_jobs();
  ExperimentResult res;
  res.summary = cfg.dim == 2 ? detail::dispatch<2>(cfg, out, jobs) : detail::dispatch<3>(cfg, out, jobs);
  out.write_json("summary.json", res.summary);
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.outputs = out.names();
  res.outputs.push_back("metadata.json");
  const nlohmann::json meta = {{"config", cfg},
                               {"versions", detail::versions()},
                               {"prng", {{"fields", kPrngName}, {"member_seeds", kPrngName}, {"walks", "std::mt19937_64"}}},
                               {"jobs", jobs},
                               {"wall_time_s", res.wall_time},
                               {"outputs", res.outputs}};
  out.write_json("metadata.json", meta);
  return res;
}

}  // namespace hlab
