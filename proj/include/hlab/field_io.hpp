#pragma once

// Field container: one UTF-8 JSON header line
//   {"d","m","k","kind","provenance", ...}
// terminated by '\n', followed by little-endian float64 values in row-major
// order (cells or nodes; a value's components are contiguous).
//
// kinds: "scalar", "vector", "matrix" (cell fields), "node" (node scalar
// field; the header's "periodic" selects the layout), "coefficient" (a
// matrix field carrying lambda / Lambda).

#include "hlab/common.hpp"
#include "hlab/fields.hpp"
#include "hlab/lattice.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

namespace hlab {

namespace detail {

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ArgumentError("field container truncated");
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

template <int D>
void put_value(std::ostream& os, double v) {
  put_f64(os, v);
}
template <int D>
void put_value(std::ostream& os, const Vec<D>& v) {
  for (int i = 0; i < D; ++i) put_f64(os, v(i));
}
template <int D>
void put_value(std::ostream& os, const Mat<D>& m) {
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) put_f64(os, m(i, j));
}

template <int D>
void get_value(std::istream& is, double& v) {
  v = get_f64(is);
}
template <int D>
void get_value(std::istream& is, Vec<D>& v) {
  for (int i = 0; i < D; ++i) v(i) = get_f64(is);
}
template <int D>
void get_value(std::istream& is, Mat<D>& m) {
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) m(i, j) = get_f64(is);
}

template <class T>
constexpr const char* cell_kind() {
  if constexpr (std::is_same_v<T, double>) return "scalar";
  else if constexpr (T::ColsAtCompileTime == 1) return "vector";
  else return "matrix";
}

template <int D>
nlohmann::json grid_header(const GridSpec<D>& g, const std::string& kind, const nlohmann::json& provenance) {
  return {{"format", "hlab-field-v1"},
          {"d", D},
          {"m", g.m()},
          {"k", g.k},
          {"center", std::vector<long>(g.cube.center.begin(), g.cube.center.end())},
          {"kind", kind},
          {"dtype", "float64le"},
          {"provenance", provenance}};
}

template <int D>
GridSpec<D> grid_from_header(const nlohmann::json& h) {
  if (h.value("d", 0) != D) throw ArgumentError("field container dimension mismatch");
  IVec<D> c{};
  if (h.contains("center")) {
    const auto v = h.at("center").get<std::vector<long>>();
    if (v.size() != static_cast<std::size_t>(D)) throw ArgumentError("field container centre has the wrong length");
    for (int a = 0; a < D; ++a) c[a] = v[static_cast<std::size_t>(a)];
  }
  return GridSpec<D>(TriadicCube<D>{h.at("m").get<int>(), c}, h.at("k").get<int>());
}

}  // namespace detail

/// Reads and parses the header line only.
inline nlohmann::json read_field_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ArgumentError("field container has no header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("field container header is not JSON: ") + e.what());
  }
  for (const char* key : {"d", "m", "k", "kind"})
    if (!h.contains(key)) throw ArgumentError(std::string("field container header lacks '") + key + "'");
  return h;
}

template <int D, class T>
void write_field(std::ostream& os, const CellField<D, T>& f, const nlohmann::json& provenance = nlohmann::json::object()) {
  os << detail::grid_header<D>(f.grid, detail::cell_kind<T>(), provenance).dump() << '\n';
  for (const auto& v : f.values) detail::put_value<D>(os, v);
}

template <int D>
void write_field(std::ostream& os, const NodeField<D>& f, const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json h = detail::grid_header<D>(f.grid, "node", provenance);
  h["periodic"] = f.periodic;
  os << h.dump() << '\n';
  for (double v : f.values) detail::put_f64(os, v);
}

template <int D>
void write_field(std::ostream& os, const CoefficientField<D>& a) {
  nlohmann::json h = detail::grid_header<D>(a.grid(), "coefficient", a.provenance);
  h["lambda"] = a.lambda;
  h["Lambda"] = a.Lambda;
  os << h.dump() << '\n';
  for (const auto& m : a.a.values) detail::put_value<D>(os, m);
}

template <int D, class T>
CellField<D, T> read_cell_field(std::istream& is) {
  const nlohmann::json h = read_field_header(is);
  const std::string kind = h.at("kind");
  const std::string want = detail::cell_kind<T>();
  if (kind != want && !(want == std::string("matrix") && kind == "coefficient"))
    throw ArgumentError("field container holds '" + kind + "', expected '" + want + "'");
  const GridSpec<D> g = detail::grid_from_header<D>(h);
  CellField<D, T> f(g, zero_like(T{}));
  for (auto& v : f.values) detail::get_value<D>(is, v);
  return f;
}

template <int D>
NodeField<D> read_node_field(std::istream& is) {
  const nlohmann::json h = read_field_header(is);
  if (h.at("kind") != "node") throw ArgumentError("field container does not hold a node field");
  NodeField<D> f(detail::grid_from_header<D>(h), h.value("periodic", false));
  for (auto& v : f.values) v = detail::get_f64(is);
  return f;
}

template <int D>
CoefficientField<D> read_coefficient_field(std::istream& is) {
  const nlohmann::json h = read_field_header(is);
  if (h.at("kind") != "coefficient" && h.at("kind") != "matrix") throw ArgumentError("field container does not hold a coefficient field");
  CoefficientField<D> a;
  a.a = MatrixField<D>(detail::grid_from_header<D>(h), Mat<D>::Zero());
  for (auto& m : a.a.values) detail::get_value<D>(is, m);
  if (h.contains("lambda") && h.contains("Lambda")) {
    a.lambda = h.at("lambda");
    a.Lambda = h.at("Lambda");
  } else {
    a.lambda = std::numeric_limits<double>::infinity();
    a.Lambda = 0.0;
    for (const auto& m : a.a.values) {
      a.lambda = std::min(a.lambda, min_eig<D>(m));
      a.Lambda = std::max(a.Lambda, max_eig<D>(m));
    }
  }
  a.provenance = h.value("provenance", nlohmann::json::object());
  a.validate();
  return a;
}

template <class F>
void write_file(const std::string& path, F&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot open '" + path + "' for writing");
  writer(os);
  if (!os) throw Error("failed writing '" + path + "'");
}

}  // namespace hlab
