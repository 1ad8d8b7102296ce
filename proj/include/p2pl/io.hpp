#ifndef P2PL_IO_HPP
#define P2PL_IO_HPP

#include <p2pl/error.hpp>
#include <p2pl/point_cloud.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace p2pl::io {

namespace detail {

/// "%.*g" formatting; the library writes point data with 9 significant digits.
inline std::string fmt(double v, int digits = 9) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline bool parse_double(const std::string& tok, double& v) {
  try {
    std::size_t used = 0;
    v = std::stod(tok, &used);
    return used == tok.size();
  } catch (const std::exception&) {
    return false;
  }
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

inline std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace detail

// ---------------------------------------------------------------- PLY (ascii)

inline void write_ply(std::ostream& out, const PointCloud& cloud) {
  const bool normals = cloud.has_normals();
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    out << detail::fmt(p.x()) << ' ' << detail::fmt(p.y()) << ' ' << detail::fmt(p.z());
    if (normals) {
      const auto& n = cloud.normals[i];
      out << ' ' << detail::fmt(n.x()) << ' ' << detail::fmt(n.y()) << ' ' << detail::fmt(n.z());
    }
    out << '\n';
  }
}

/// Reads an ascii PLY. Only the vertex element is kept; x y z are required,
/// nx ny nz are optional (cloud.normals stays empty without them).
inline PointCloud read_ply(std::istream& in, const std::string& name = "<ply>") {
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    bool has_list = false;
  };
  std::vector<Element> elements;
  std::string line;
  std::size_t line_no = 0;

  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(name, line_no + 1, std::string("unexpected end of file: ") + what);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next("magic");
  if (line != "ply") throw ParseError(name, line_no, "missing 'ply' magic");
  bool saw_format = false;
  for (;;) {
    next("header");
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw ParseError(name, line_no, "only ascii PLY is supported");
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(name, line_no, "malformed element line");
      Element e;
      e.name = tok[1];
      try {
        e.count = std::stoul(tok[2]);
      } catch (const std::exception&) {
        throw ParseError(name, line_no, "bad element count");
      }
      elements.push_back(e);
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(name, line_no, "property before element");
      if (tok.size() >= 2 && tok[1] == "list") {
        elements.back().has_list = true;
        elements.back().props.push_back(tok.back());
      } else if (tok.size() == 3) {
        elements.back().props.push_back(tok[2]);
      } else {
        throw ParseError(name, line_no, "malformed property line");
      }
    } else {
      throw ParseError(name, line_no, "unknown header keyword '" + tok[0] + "'");
    }
  }
  if (!saw_format) throw ParseError(name, line_no, "missing format line");

  PointCloud cloud;
  bool found_vertex = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) next("element data");
      continue;
    }
    found_vertex = true;
    auto find = [&](const char* p) -> int {
      for (std::size_t k = 0; k < e.props.size(); ++k)
        if (e.props[k] == p) return static_cast<int>(k);
      return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int inx = find("nx"), iny = find("ny"), inz = find("nz");
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(name, line_no, "vertex element lacks x/y/z");
    if (e.has_list) throw ParseError(name, line_no, "list properties on vertex are not supported");
    const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
    cloud.positions.reserve(e.count);
    if (normals) cloud.normals.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      next("vertex data (fewer rows than declared)");
      const auto tok = detail::split_ws(line);
      if (tok.size() != e.props.size())
        throw ParseError(name, line_no,
                         "expected " + std::to_string(e.props.size()) + " values, got " + std::to_string(tok.size()));
      std::vector<double> v(tok.size());
      for (std::size_t k = 0; k < tok.size(); ++k)
        if (!detail::parse_double(tok[k], v[k])) throw ParseError(name, line_no, "bad number '" + tok[k] + "'");
      cloud.positions.emplace_back(v[ix], v[iy], v[iz]);
      if (normals) cloud.normals.emplace_back(v[inx], v[iny], v[inz]);
    }
  }
  if (!found_vertex) throw ParseError(name, line_no, "no vertex element");
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::split_ws(line).empty()) throw ParseError(name, line_no, "more rows than declared in header");
  }
  return cloud;
}

// ------------------------------------------------------------------- XYZN

inline void write_xyzn(std::ostream& out, const PointCloud& cloud) {
  const bool normals = cloud.has_normals();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    out << detail::fmt(p.x()) << ' ' << detail::fmt(p.y()) << ' ' << detail::fmt(p.z());
    if (normals) {
      const auto& n = cloud.normals[i];
      out << ' ' << detail::fmt(n.x()) << ' ' << detail::fmt(n.y()) << ' ' << detail::fmt(n.z());
    }
    out << '\n';
  }
}

/// Six floats per line (x y z nx ny nz); a file with three floats on every
/// line loads without normals. Blank lines and '#' comments are skipped.
inline PointCloud read_xyzn(std::istream& in, const std::string& name = "<xyzn>") {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (columns == 0) {
      if (tok.size() != 6 && tok.size() != 3) throw ParseError(name, line_no, "expected 6 (or 3) values per line");
      columns = tok.size();
    } else if (tok.size() != columns) {
      throw ParseError(name, line_no, "inconsistent column count");
    }
    double v[6];
    for (std::size_t k = 0; k < columns; ++k)
      if (!detail::parse_double(tok[k], v[k])) throw ParseError(name, line_no, "bad number '" + tok[k] + "'");
    cloud.positions.emplace_back(v[0], v[1], v[2]);
    if (columns == 6) cloud.normals.emplace_back(v[3], v[4], v[5]);
  }
  if (cloud.empty()) throw ParseError(name, line_no, "no points");
  return cloud;
}

// --------------------------------------------------------------- dispatch

/// Format chosen by extension: .ply, otherwise XYZN text.
inline PointCloud load(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return detail::lower_ext(path) == ".ply" ? read_ply(in, path.string()) : read_xyzn(in, path.string());
}

inline void save(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = detail::open_out(path);
  if (detail::lower_ext(path) == ".ply")
    write_ply(out, cloud);
  else
    write_xyzn(out, cloud);
}

/// Rescales every stored normal to unit length (file values carry 9 digits).
inline void normalize_normals(PointCloud& cloud) {
  for (auto& n : cloud.normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
}

// ------------------------------------------------------------- transforms

/// 3 lines x 4 values, row-major [R | t], 17 significant digits.
inline void write_transform(std::ostream& out, const RigidTransform& t) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << detail::fmt(t.rotation(r, c), 17) << ' ';
    out << detail::fmt(t.translation(r), 17) << '\n';
  }
}

inline RigidTransform read_transform(std::istream& in, const std::string& name = "<transform>") {
  RigidTransform t;
  std::string line;
  std::size_t line_no = 0;
  int row = 0;
  while (row < 3 && std::getline(in, line)) {
    ++line_no;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 4) throw ParseError(name, line_no, "expected 4 values per row");
    double v[4];
    for (int k = 0; k < 4; ++k)
      if (!detail::parse_double(tok[k], v[k])) throw ParseError(name, line_no, "bad number '" + tok[k] + "'");
    t.rotation.row(row) << v[0], v[1], v[2];
    t.translation(row) = v[3];
    ++row;
  }
  if (row != 3) throw ParseError(name, line_no, "expected 3 rows");
  return t;
}

inline void save_transform(const std::filesystem::path& path, const RigidTransform& t) {
  auto out = detail::open_out(path);
  write_transform(out, t);
}

inline RigidTransform load_transform(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_transform(in, path.string());
}

// -------------------------------------------------------------------- CSV

/// Header-free numeric CSV; commas and/or whitespace separate values.
inline std::vector<std::vector<double>> read_csv_rows(std::istream& in, const std::string& name = "<csv>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (auto& c : line)
      if (c == ',' || c == ';') c = ' ';
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    std::vector<double> row(tok.size());
    for (std::size_t k = 0; k < tok.size(); ++k)
      if (!detail::parse_double(tok[k], row[k])) throw ParseError(name, line_no, "bad number '" + tok[k] + "'");
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError(name, line_no, "ragged CSV row");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<std::vector<double>> load_csv_rows(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_csv_rows(in, path.string());
}

/// Flat list of values (one per line or comma separated).
inline std::vector<double> load_values(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (auto& c : line)
      if (c == ',' || c == ';') c = ' ';
    for (const auto& tok : detail::split_ws(line)) {
      double v;
      if (!detail::parse_double(tok, v)) throw ParseError(path.string(), line_no, "bad number '" + tok + "'");
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace p2pl::io

#endif  // P2PL_IO_HPP
