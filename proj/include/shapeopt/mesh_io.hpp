#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "shapeopt/errors.hpp"
#include "shapeopt/history.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

/// Formats a double with 17 significant digits; NaN is written as "nan".
inline std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Gmsh MSH 2.2 ASCII (ingest only)

struct MshNode {
  long id = 0;
  double x = 0.0, y = 0.0, z = 0.0;
};

struct MshElement {
  long id = 0;
  int type = 0;            // 1: 2-node line, 2: 3-node triangle
  std::vector<long> tags;  // tags[0] is the physical tag
  std::vector<long> nodes;
};

struct MshDocument {
  std::string version;
  std::vector<MshNode> nodes;
  std::vector<MshElement> elements;
  std::vector<std::string> warnings;
};

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      auto end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") != std::string_view::npos) return true;
    }
    return false;
  }

  std::string_view expect(const char* what) {
    std::string_view line;
    if (!next(line)) throw ParseError(std::string("unexpected end of input, expected ") + what, line_no_);
    return line;
  }

  int line() const noexcept { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_no_ = 0;
};

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view tok, int line) {
  T value{};
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("malformed number '" + std::string(tok) + "'", line);
  }
  return value;
}

inline void expect_marker(LineReader& in, std::string_view marker) {
  const auto line = trim(in.expect(std::string(marker).c_str()));
  if (line != marker) {
    throw ParseError("expected " + std::string(marker) + ", found '" + std::string(line) + "'", in.line());
  }
}

}  // namespace detail

inline MshDocument parse_msh_document(std::string_view text) {
  using detail::parse_number;
  detail::LineReader in(text);
  MshDocument doc;
  bool have_format = false, have_nodes = false, have_elements = false;
  std::string_view line;
  while (in.next(line)) {
    const auto head = detail::trim(line);
    if (head == "$MeshFormat") {
      const auto fields = detail::split_ws(in.expect("mesh format line"));
      if (fields.size() < 3) throw ParseError("incomplete $MeshFormat line", in.line());
      doc.version = std::string(fields[0]);
      if (doc.version != "2.2") {
        throw UnsupportedVersionError("unsupported MSH version " + doc.version + " (only 2.2 ASCII)", in.line());
      }
      if (parse_number<int>(fields[1], in.line()) != 0) {
        throw UnsupportedVersionError("binary MSH files are not supported", in.line());
      }
      detail::expect_marker(in, "$EndMeshFormat");
      have_format = true;
    } else if (head == "$Nodes") {
      if (!have_format) throw ParseError("$Nodes before $MeshFormat", in.line());
      const auto count = parse_number<long>(detail::trim(in.expect("node count")), in.line());
      if (count < 0) throw ParseError("negative node count", in.line());
      doc.nodes.reserve(count);
      for (long i = 0; i < count; ++i) {
        const auto f = detail::split_ws(in.expect("node"));
        if (f.size() != 4) throw ParseError("node line needs 4 fields", in.line());
        MshNode n;
        n.id = parse_number<long>(f[0], in.line());
        n.x = parse_number<double>(f[1], in.line());
        n.y = parse_number<double>(f[2], in.line());
        n.z = parse_number<double>(f[3], in.line());
        if (n.z != 0.0) {
          doc.warnings.push_back("node " + std::to_string(n.id) + " has nonzero z; ignored");
        }
        doc.nodes.push_back(n);
      }
      detail::expect_marker(in, "$EndNodes");
      have_nodes = true;
    } else if (head == "$Elements") {
      if (!have_format) throw ParseError("$Elements before $MeshFormat", in.line());
      const auto count = parse_number<long>(detail::trim(in.expect("element count")), in.line());
      if (count < 0) throw ParseError("negative element count", in.line());
      doc.elements.reserve(count);
      for (long i = 0; i < count; ++i) {
        const auto f = detail::split_ws(in.expect("element"));
        if (f.size() < 3) throw ParseError("element line too short", in.line());
        MshElement e;
        e.id = parse_number<long>(f[0], in.line());
        e.type = parse_number<int>(f[1], in.line());
        const auto ntags = parse_number<long>(f[2], in.line());
        int nnodes = 0;
        if (e.type == 1) {
          nnodes = 2;
        } else if (e.type == 2) {
          nnodes = 3;
        } else {
          throw UnsupportedElementError("unsupported element type " + std::to_string(e.type), in.line());
        }
        if (ntags < 0 || f.size() != static_cast<std::size_t>(3 + ntags + nnodes)) {
          throw ParseError("element line has wrong number of fields", in.line());
        }
        for (long k = 0; k < ntags; ++k) e.tags.push_back(parse_number<long>(f[3 + k], in.line()));
        for (int k = 0; k < nnodes; ++k) e.nodes.push_back(parse_number<long>(f[3 + ntags + k], in.line()));
        doc.elements.push_back(std::move(e));
      }
      detail::expect_marker(in, "$EndElements");
      have_elements = true;
    } else if (!head.empty() && head.front() == '$' && head.substr(0, 4) != "$End") {
      // Unknown section (e.g. $PhysicalNames): skip to its end marker.
      const std::string end = "$End" + std::string(head.substr(1));
      while (true) {
        const auto l = detail::trim(in.expect(end.c_str()));
        if (l == end) break;
      }
    } else {
      throw ParseError("unexpected line '" + std::string(head) + "'", in.line());
    }
  }
  if (!have_format) throw ParseError("missing $MeshFormat section");
  if (!have_nodes) throw ParseError("missing $Nodes section");
  if (!have_elements) throw ParseError("missing $Elements section");
  return doc;
}

/// Builds a mesh: triangles from type-2 elements, marked boundary edges from
/// type-1 elements (first tag), nodes renumbered contiguously in file order.
inline TriMesh msh_to_mesh(const MshDocument& doc) {
  std::map<long, int> index;
  std::vector<Point> vertices;
  vertices.reserve(doc.nodes.size());
  for (const auto& n : doc.nodes) {
    if (!index.emplace(n.id, static_cast<int>(vertices.size())).second) {
      throw IntegrityError("duplicate node id " + std::to_string(n.id));
    }
    vertices.emplace_back(n.x, n.y);
  }
  auto lookup = [&](long id, long element) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw IntegrityError("element " + std::to_string(element) + " references missing node " +
                           std::to_string(id));
    }
    return it->second;
  };
  std::vector<Triangle> triangles;
  std::vector<BoundaryEdge> edges;
  for (const auto& e : doc.elements) {
    if (e.type == 2) {
      triangles.push_back({lookup(e.nodes[0], e.id), lookup(e.nodes[1], e.id), lookup(e.nodes[2], e.id)});
    } else {
      const int marker = e.tags.empty() ? 0 : static_cast<int>(e.tags.front());
      edges.push_back({{lookup(e.nodes[0], e.id), lookup(e.nodes[1], e.id)}, marker});
    }
  }
  return TriMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

inline TriMesh parse_msh(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  auto doc = parse_msh_document(text);
  if (warnings) *warnings = doc.warnings;
  return msh_to_mesh(doc);
}

// ---------------------------------------------------------------------------
// Native text format, version 1:
//
//   shapeopt-mesh 1
//   vertices <n>
//   <x> <y>                  (n lines, 17 significant digits)
//   triangles <m>
//   <a> <b> <c>              (m lines, 0-based, counterclockwise)
//   boundary_edges <k>
//   <a> <b> <marker>         (k lines)

inline constexpr int kNativeMeshVersion = 1;

inline std::string write_native(const TriMesh& mesh) {
  std::string out = "shapeopt-mesh " + std::to_string(kNativeMeshVersion) + "\n";
  out += "vertices " + std::to_string(mesh.num_vertices()) + "\n";
  for (const auto& p : mesh.vertices()) out += format_real(p.x()) + " " + format_real(p.y()) + "\n";
  out += "triangles " + std::to_string(mesh.num_triangles()) + "\n";
  for (const auto& t : mesh.triangles()) {
    out += std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
  }
  out += "boundary_edges " + std::to_string(mesh.boundary_edges().size()) + "\n";
  for (const auto& e : mesh.boundary_edges()) {
    out += std::to_string(e.v[0]) + " " + std::to_string(e.v[1]) + " " + std::to_string(e.marker) + "\n";
  }
  return out;
}

inline TriMesh parse_native(std::string_view text) {
  using detail::parse_number;
  detail::LineReader in(text);
  auto header = detail::split_ws(in.expect("header"));
  if (header.size() != 2 || header[0] != "shapeopt-mesh") throw ParseError("not a shapeopt mesh file", in.line());
  if (parse_number<int>(header[1], in.line()) != kNativeMeshVersion) {
    throw UnsupportedVersionError("unsupported native mesh version " + std::string(header[1]), in.line());
  }
  auto section = [&](const char* name) {
    const auto f = detail::split_ws(in.expect(name));
    if (f.size() != 2 || f[0] != name) throw ParseError(std::string("expected '") + name + " <count>'", in.line());
    const auto n = parse_number<long>(f[1], in.line());
    if (n < 0) throw ParseError("negative count", in.line());
    return n;
  };
  std::vector<Point> vertices;
  for (long i = 0, n = section("vertices"); i < n; ++i) {
    const auto f = detail::split_ws(in.expect("vertex"));
    if (f.size() != 2) throw ParseError("vertex line needs 2 fields", in.line());
    vertices.emplace_back(parse_number<double>(f[0], in.line()), parse_number<double>(f[1], in.line()));
  }
  std::vector<Triangle> triangles;
  for (long i = 0, n = section("triangles"); i < n; ++i) {
    const auto f = detail::split_ws(in.expect("triangle"));
    if (f.size() != 3) throw ParseError("triangle line needs 3 fields", in.line());
    triangles.push_back({parse_number<int>(f[0], in.line()), parse_number<int>(f[1], in.line()),
                         parse_number<int>(f[2], in.line())});
  }
  std::vector<BoundaryEdge> edges;
  for (long i = 0, n = section("boundary_edges"); i < n; ++i) {
    const auto f = detail::split_ws(in.expect("boundary edge"));
    if (f.size() != 3) throw ParseError("boundary edge line needs 3 fields", in.line());
    edges.push_back({{parse_number<int>(f[0], in.line()), parse_number<int>(f[1], in.line())},
                     parse_number<int>(f[2], in.line())});
  }
  std::string_view extra;
  if (in.next(extra)) throw ParseError("trailing content", in.line());
  return TriMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

/// Dispatches on content: MSH documents start with $MeshFormat.
inline TriMesh parse_mesh_file_text(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text.substr(first, 11) == "$MeshFormat") return parse_msh(text, warnings);
  return parse_native(text);
}

// ---------------------------------------------------------------------------
// Legacy VTK

struct PointField {
  std::string name;
  int components = 1;  // 1 or 2; 2-vectors are padded with z = 0
  std::vector<double> values;
};

struct CellField {
  std::string name;
  std::vector<double> values;
};

inline std::string write_vtk(const TriMesh& mesh, const std::vector<PointField>& point_fields = {},
                             const std::vector<CellField>& cell_fields = {}) {
  const auto nv = static_cast<std::size_t>(mesh.num_vertices());
  const auto nt = static_cast<std::size_t>(mesh.num_triangles());
  for (const auto& f : point_fields) {
    if (f.components != 1 && f.components != 2) throw ShapeError("point field '" + f.name + "': 1 or 2 components");
    if (f.values.size() != nv * f.components) throw ShapeError("point field '" + f.name + "' has wrong length");
  }
  for (const auto& f : cell_fields) {
    if (f.values.size() != nt) throw ShapeError("cell field '" + f.name + "' has wrong length");
  }
  std::string out;
  out += "# vtk DataFile Version 3.0\nshapeopt\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out += "POINTS " + std::to_string(nv) + " double\n";
  for (const auto& p : mesh.vertices()) out += format_real(p.x()) + " " + format_real(p.y()) + " 0\n";
  out += "CELLS " + std::to_string(nt) + " " + std::to_string(4 * nt) + "\n";
  for (const auto& t : mesh.triangles()) {
    out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
  }
  out += "CELL_TYPES " + std::to_string(nt) + "\n";
  for (std::size_t i = 0; i < nt; ++i) out += "5\n";
  if (!point_fields.empty()) {
    out += "POINT_DATA " + std::to_string(nv) + "\n";
    for (const auto& f : point_fields) {
      if (f.components == 1) {
        out += "SCALARS " + f.name + " double 1\nLOOKUP_TABLE default\n";
        for (double v : f.values) out += format_real(v) + "\n";
      } else {
        out += "VECTORS " + f.name + " double\n";
        for (std::size_t i = 0; i < nv; ++i) {
          out += format_real(f.values[2 * i]) + " " + format_real(f.values[2 * i + 1]) + " 0\n";
        }
      }
    }
  }
  if (!cell_fields.empty()) {
    out += "CELL_DATA " + std::to_string(nt) + "\n";
    for (const auto& f : cell_fields) {
      out += "SCALARS " + f.name + " double 1\nLOOKUP_TABLE default\n";
      for (double v : f.values) out += format_real(v) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence history

inline constexpr const char* kHistoryHeader =
    "outer_iter,inner_iter,J,constraint,penalty,multiplier,tr_radius,step_norm,grad_norm,min_det_ratio";

inline std::string write_history_csv(const ConvergenceRecord& records) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.outer_iter) + "," + std::to_string(r.inner_iter) + "," + format_real(r.objective) +
           "," + format_real(r.constraint) + "," + format_real(r.penalty) + "," + format_real(r.multiplier) + "," +
           format_real(r.tr_radius) + "," + format_real(r.step_norm) + "," + format_real(r.grad_norm) + "," +
           format_real(r.min_det_ratio) + "\n";
  }
  return out;
}

}  // namespace shapeopt
