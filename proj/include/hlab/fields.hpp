#pragma once

// Coefficient fields: deterministic constructors and seeded random generators.
// Random values live on unit cells z + box_0, z in Z^d, so the grid resolution
// only refines the solver, never the randomness.

#include "hlab/common.hpp"
#include "hlab/lattice.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace hlab {

template <int D>
struct CoefficientField {
  MatrixField<D> a;
  double lambda = 1.0;
  double Lambda = 1.0;
  nlohmann::json provenance = nlohmann::json::object();

  const GridSpec<D>& grid() const { return a.grid; }
  const Mat<D>& operator[](Index c) const { return a[c]; }
  Index size() const { return a.size(); }

  /// Checks symmetry and lambda|e|^2 <= e.ae, e.a^{-1}e >= |e|^2/Lambda cellwise.
  void validate(double slack = 1e-12) const {
    for (Index c = 0; c < a.size(); ++c) {
      const Mat<D>& m = a[c];
      if (!m.allFinite()) throw ArgumentError("coefficient field has non-finite entries");
      if ((m - m.transpose()).cwiseAbs().maxCoeff() > slack * (1.0 + m.cwiseAbs().maxCoeff()))
        throw ArgumentError("coefficient matrix is not symmetric");
      if (min_eig<D>(m) < lambda * (1.0 - slack) || max_eig<D>(m) > Lambda * (1.0 + slack))
        throw ArgumentError("coefficient matrix violates the ellipticity bounds");
    }
  }

  CoefficientField restricted(const TriadicCube<D>& cube) const {
    CoefficientField out;
    out.a = restrict_to(a, cube);
    out.lambda = lambda;
    out.Lambda = Lambda;
    out.provenance = provenance;
    return out;
  }

  Mat<D> arithmetic_mean() const { return field_mean(a); }

  Mat<D> harmonic_mean() const {
    Mat<D> acc = Mat<D>::Zero();
    for (const auto& m : a.values) acc += m.inverse();
    return (acc / static_cast<double>(a.size())).inverse();
  }

  bool is_scalar() const {
    for (const auto& m : a.values) {
      Mat<D> iso = m(0, 0) * Mat<D>::Identity();
      if ((m - iso).cwiseAbs().maxCoeff() > 0.0) return false;
    }
    return true;
  }
};

namespace detail {

template <int D>
IVec<D> unit_cell_of(const GridSpec<D>& g, const IVec<D>& c) {
  // Unit cell z + box_0 has lower corner z - 1/2; cell centre coordinate
  // decides membership.
  IVec<D> z{};
  for (int a = 0; a < D; ++a) z[a] = static_cast<long>(std::floor(g.cell_coord(a, c[a]) + 0.5));
  return z;
}

template <int D, class F>
CoefficientField<D> scalar_field(const GridSpec<D>& g, F&& value_at_cell) {
  CoefficientField<D> f;
  f.a = MatrixField<D>(g, Mat<D>::Identity());
  const long n = g.n();
  IVec<D> c{};
  Index flat = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  do {
    const double v = value_at_cell(c);
    f.a[flat++] = v * Mat<D>::Identity();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  } while (advance<D>(c, n));
  f.lambda = lo;
  f.Lambda = hi;
  return f;
}

}  // namespace detail

template <int D>
CoefficientField<D> make_constant(const GridSpec<D>& g, const Mat<D>& m) {
  if (!m.allFinite()) throw ArgumentError("make_constant: non-finite matrix");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-14 * (1.0 + m.cwiseAbs().maxCoeff()))
    throw ArgumentError("make_constant: matrix is not symmetric");
  const double lo = min_eig<D>(m);
  if (!(lo > 0.0)) throw ArgumentError("make_constant: matrix is not positive definite");
  CoefficientField<D> f;
  f.a = MatrixField<D>(g, m);
  f.lambda = lo;
  f.Lambda = max_eig<D>(m);
  f.provenance = {{"generator", "constant"}, {"params", {{"matrix", std::vector<double>(m.data(), m.data() + D * D)}}}};
  return f;
}

/// Layers v1*I, v2*I of width period/2 alternating normal to `axis` (1-based).
/// Layer j = floor(2 x_axis / period) carries v1 when j is even.
template <int D>
CoefficientField<D> make_laminate(const GridSpec<D>& g, double v1, double v2, double period, int axis) {
  require(v1 > 0.0 && v2 > 0.0, "make_laminate: values must be positive");
  require(axis >= 1 && axis <= D, "make_laminate: axis out of range");
  require(period > 0.0, "make_laminate: period must be positive");
  const double cells_per_layer = 0.5 * period * g.k;
  const double layers_per_side = g.cube.side() / (0.5 * period);
  const double offset_layers = g.cube.lower(axis - 1) / (0.5 * period);
  auto is_int = [](double x) { return std::abs(x - std::round(x)) < 1e-9; };
  if (!is_int(cells_per_layer) || !is_int(layers_per_side) || !is_int(g.cube.side() / period) || !is_int(offset_layers))
    throw ArgumentError("make_laminate: layers are not aligned with the grid cells / period does not divide the cube");
  const int ax = axis - 1;
  auto f = detail::scalar_field<D>(g, [&](const IVec<D>& c) {
    const long layer = static_cast<long>(std::floor(2.0 * g.cell_coord(ax, c[ax]) / period));
    return floor_mod(layer, 2) == 0 ? v1 : v2;
  });
  f.lambda = std::min(v1, v2);
  f.Lambda = std::max(v1, v2);
  f.provenance = {{"generator", "laminate"},
                  {"params", {{"v1", v1}, {"v2", v2}, {"period", period}, {"axis", axis}}}};
  return f;
}

/// iid two-valued field on unit cells: v_black w.p. p_black, else v_white.
template <int D>
CoefficientField<D> sample_checkerboard(const GridSpec<D>& g, std::uint64_t seed, double v_white, double v_black,
                                        double p_black) {
  require(v_white > 0.0 && v_black > 0.0, "sample_checkerboard: values must be positive");
  require(p_black >= 0.0 && p_black <= 1.0, "sample_checkerboard: probability out of range");
  auto f = detail::scalar_field<D>(g, [&](const IVec<D>& c) {
    SiteStream<D> s(seed, detail::unit_cell_of<D>(g, c));
    return s.uniform() < p_black ? v_black : v_white;
  });
  f.lambda = std::min(v_white, v_black);
  f.Lambda = std::max(v_white, v_black);
  f.provenance = {{"generator", "checkerboard"},
                  {"params", {{"v_white", v_white}, {"v_black", v_black}, {"p_black", p_black}}},
                  {"seed", seed},
                  {"prng", kPrngName}};
  return f;
}

struct GaussianFieldParams {
  double amplitude = 1.0;   // K
  double decay = 1.0;       // s
  double truncation = 8.0;  // kernel support radius, unit lengths
  double lambda = 1.0;
  double Lambda = 4.0;
  bool periodic = false;    // wrap the white noise on the cube's unit cells

  void validate() const {
    require(amplitude >= 0.0, "gaussian: amplitude must be >= 0");
    require(decay > 0.0, "gaussian: decay exponent must be > 0");
    require(truncation >= 1.0, "gaussian: truncation radius must be >= 1");
    require(lambda >= 1.0 && Lambda > lambda, "gaussian: need 1 <= lambda < Lambda");
  }
};

/// Kernel f(x) = K (1+|x|)^{-(d/2+s)} on integer offsets with |x| <= truncation.
template <int D>
std::vector<std::pair<IVec<D>, double>> gaussian_kernel(const GaussianFieldParams& p) {
  std::vector<std::pair<IVec<D>, double>> out;
  const long r = static_cast<long>(std::floor(p.truncation));
  const long w = 2 * r + 1;
  IVec<D> j{};
  do {
    IVec<D> off{};
    double dist2 = 0.0;
    for (int a = 0; a < D; ++a) {
      off[a] = j[a] - r;
      dist2 += static_cast<double>(off[a] * off[a]);
    }
    const double dist = std::sqrt(dist2);
    if (dist <= p.truncation) out.emplace_back(off, p.amplitude * std::pow(1.0 + dist, -(0.5 * D + p.decay)));
  } while (advance<D>(j, w));
  return out;
}

/// Variance of F at a point: sum of squared kernel values.
template <int D>
double gaussian_point_variance(const GaussianFieldParams& p) {
  double acc = 0.0;
  for (const auto& [off, v] : gaussian_kernel<D>(p)) acc += v * v;
  return acc;
}

/// Upper bound for the variance discarded by truncating the kernel.
template <int D>
double gaussian_truncation_tail(const GaussianFieldParams& p) {
  const double sphere = D == 2 ? 2.0 * M_PI : 4.0 * M_PI;
  return p.amplitude * p.amplitude * sphere * std::pow(1.0 + p.truncation, -2.0 * p.decay) / (2.0 * p.decay);
}

inline double logistic_link(double t, double lambda, double Lambda) {
  return lambda + (Lambda - lambda) / (1.0 + std::exp(-t));
}

/// a(x) = a0(F(x)) I with F = f * W, W iid standard normal per unit cell.
template <int D>
CoefficientField<D> sample_gaussian_field(const GridSpec<D>& g, std::uint64_t seed, const GaussianFieldParams& p) {
  p.validate();
  const auto kernel = gaussian_kernel<D>(p);
  const long units = ipow3(g.m());
  // unit-cell index range, padded by the kernel radius
  IVec<D> lo{};
  for (int a = 0; a < D; ++a) lo[a] = g.cube.center[a] - (units - 1) / 2;
  const long pad = p.periodic ? 0 : static_cast<long>(std::floor(p.truncation));
  const long span = units + 2 * pad;
  std::vector<double> noise(static_cast<std::size_t>(ipow<D>(span)));
  {
    IVec<D> j{};
    Index flat = 0;
    do {
      IVec<D> z{};
      for (int a = 0; a < D; ++a) z[a] = lo[a] - pad + j[a];
      SiteStream<D> s(seed, z);
      noise[static_cast<std::size_t>(flat++)] = s.normal();
    } while (advance<D>(j, span));
  }
  std::vector<double> value(static_cast<std::size_t>(ipow<D>(units)));
  {
    IVec<D> j{};
    Index flat = 0;
    do {
      double acc = 0.0;
      for (const auto& [off, w] : kernel) {
        IVec<D> src{};
        for (int a = 0; a < D; ++a) src[a] = j[a] + pad - off[a];
        const Index idx = p.periodic ? flatten_wrapped<D>(src, span) : flatten<D>(src, span);
        acc += w * noise[static_cast<std::size_t>(idx)];
      }
      value[static_cast<std::size_t>(flat++)] = logistic_link(acc, p.lambda, p.Lambda);
    } while (advance<D>(j, units));
  }
  auto f = detail::scalar_field<D>(g, [&](const IVec<D>& c) {
    const IVec<D> z = detail::unit_cell_of<D>(g, c);
    IVec<D> j{};
    for (int a = 0; a < D; ++a) j[a] = z[a] - lo[a];
    return value[static_cast<std::size_t>(flatten<D>(j, units))];
  });
  f.lambda = p.lambda;
  f.Lambda = p.Lambda;
  f.provenance = {{"generator", "gaussian"},
                  {"params",
                   {{"amplitude", p.amplitude},
                    {"decay", p.decay},
                    {"truncation", p.truncation},
                    {"lambda", p.lambda},
                    {"Lambda", p.Lambda},
                    {"periodic", p.periodic}}},
                  {"truncation_tail_variance_bound", gaussian_truncation_tail<D>(p)},
                  {"seed", seed},
                  {"prng", kPrngName},
                  {"link", "logistic"}};
  return f;
}

/// Raw Gaussian values F on the unit cells of `g` (before the link), for
/// variance diagnostics.
template <int D>
std::vector<double> sample_gaussian_values(const GridSpec<D>& g, std::uint64_t seed, const GaussianFieldParams& p) {
  GaussianFieldParams raw = p;
  raw.lambda = 1.0;
  raw.Lambda = 2.0;
  const auto field = sample_gaussian_field<D>(GridSpec<D>(g.cube, 1), seed, raw);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(field.size()));
  for (const auto& m : field.a.values) {
    const double y = m(0, 0) - 1.0;  // logistic(t) in (0,1)
    out.push_back(std::log(y / (1.0 - y)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serializable generator description.

struct FieldSpec {
  std::string kind = "checkerboard";  // constant | laminate | checkerboard | gaussian
  std::vector<double> matrix;         // constant: row-major d x d; empty means value * I
  double value = 1.0;
  double v1 = 1.0;  // laminate v1 / checkerboard white
  double v2 = 4.0;  // laminate v2 / checkerboard black
  double p_black = 0.5;
  double period = 1.0;
  int axis = 1;
  GaussianFieldParams gaussian{};

  bool random() const { return kind == "checkerboard" || kind == "gaussian"; }
};

inline void to_json(nlohmann::json& j, const GaussianFieldParams& p) {
  j = {{"amplitude", p.amplitude}, {"decay", p.decay}, {"truncation", p.truncation},
       {"lambda", p.lambda},       {"Lambda", p.Lambda}, {"periodic", p.periodic}};
}

inline void from_json(const nlohmann::json& j, GaussianFieldParams& p) {
  p.amplitude = j.value("amplitude", p.amplitude);
  p.decay = j.value("decay", p.decay);
  p.truncation = j.value("truncation", p.truncation);
  p.lambda = j.value("lambda", p.lambda);
  p.Lambda = j.value("Lambda", p.Lambda);
  p.periodic = j.value("periodic", p.periodic);
}

inline void to_json(nlohmann::json& j, const FieldSpec& f) {
  j = {{"kind", f.kind}, {"value", f.value}, {"v1", f.v1}, {"v2", f.v2}, {"p_black", f.p_black},
       {"period", f.period}, {"axis", f.axis}, {"gaussian", f.gaussian}};
  if (!f.matrix.empty()) j["matrix"] = f.matrix;
}

inline void from_json(const nlohmann::json& j, FieldSpec& f) {
  if (!j.is_object()) throw ArgumentError("field spec must be a JSON object");
  f.kind = j.value("kind", f.kind);
  f.matrix = j.value("matrix", f.matrix);
  f.value = j.value("value", f.value);
  f.v1 = j.value("v1", f.v1);
  f.v2 = j.value("v2", f.v2);
  f.p_black = j.value("p_black", f.p_black);
  f.period = j.value("period", f.period);
  f.axis = j.value("axis", f.axis);
  if (j.contains("gaussian")) f.gaussian = j.at("gaussian").get<GaussianFieldParams>();
  if (f.kind != "constant" && f.kind != "laminate" && f.kind != "checkerboard" && f.kind != "gaussian")
    throw ArgumentError("unknown field kind '" + f.kind + "'");
}

template <int D>
CoefficientField<D> generate_field(const FieldSpec& spec, const GridSpec<D>& g, std::uint64_t seed) {
  if (spec.kind == "constant") {
    Mat<D> m = spec.value * Mat<D>::Identity();
    if (!spec.matrix.empty()) {
      require(spec.matrix.size() == static_cast<std::size_t>(D * D), "constant matrix must have d*d entries");
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) m(i, j) = spec.matrix[static_cast<std::size_t>(i * D + j)];
    }
    return make_constant<D>(g, m);
  }
  if (spec.kind == "laminate") return make_laminate<D>(g, spec.v1, spec.v2, spec.period, spec.axis);
  if (spec.kind == "checkerboard") return sample_checkerboard<D>(g, seed, spec.v1, spec.v2, spec.p_black);
  if (spec.kind == "gaussian") return sample_gaussian_field<D>(g, seed, spec.gaussian);
  throw ArgumentError("unknown field kind '" + spec.kind + "'");
}

}  // namespace hlab
