#include "uvfield/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "uvfield/errors.hpp"

namespace uvfield {

double Mesh::triangle_area(std::size_t t) const {
  const Triangle& tri = triangles[t];
  return 0.5 * (positions[tri[1]] - positions[tri[0]]).cross(positions[tri[2]] - positions[tri[0]]).norm();
}

Vec3 Mesh::face_normal(std::size_t t) const {
  const Triangle& tri = triangles[t];
  const Vec3 n = (positions[tri[1]] - positions[tri[0]]).cross(positions[tri[2]] - positions[tri[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double Mesh::total_area() const {
  double total = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) total += triangle_area(t);
  return total;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  // from_chars for double is available in libstdc++ 11.
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, long& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

// Resolves a 1-based (or negative, relative) OBJ index against `count` items.
int resolve_index(std::string_view token, std::size_t count, const std::string& path, std::size_t line,
                  const char* what) {
  long idx = 0;
  if (!parse_int(token, idx)) throw ParseError(path, line, std::string("malformed ") + what + " index");
  if (idx == 0) throw ParseError(path, line, std::string(what) + " index 0 is invalid (OBJ is 1-indexed)");
  const long resolved = idx > 0 ? idx - 1 : static_cast<long>(count) + idx;
  if (resolved < 0 || resolved >= static_cast<long>(count))
    throw ParseError(path, line, std::string(what) + " index " + std::string(token) + " out of range");
  return static_cast<int>(resolved);
}

}  // namespace

Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh: " + path);

  Mesh mesh;
  std::vector<Vec3> file_normals;
  std::vector<Vec2> file_uvs;
  std::vector<std::array<int, 3>> corner_vn;
  bool all_uv = true;
  bool all_vn = true;
  bool any_chart = false;
  int current_chart = -1;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    std::string_view view(line.data(), hash == std::string::npos ? line.size() : hash);
    const auto tok = split_ws(view);
    if (tok.empty()) continue;
    const std::string_view kind = tok[0];
    if (kind == "v" || kind == "vn") {
      if (tok.size() < 4) throw ParseError(path, line_no, "expected 3 coordinates");
      Vec3 p;
      for (int k = 0; k < 3; ++k)
        if (!parse_double(tok[k + 1], p[k])) throw ParseError(path, line_no, "malformed coordinate");
      (kind == "v" ? mesh.positions : file_normals).push_back(p);
    } else if (kind == "vt") {
      if (tok.size() < 3) throw ParseError(path, line_no, "expected 2 texture coordinates");
      Vec2 uv;
      for (int k = 0; k < 2; ++k)
        if (!parse_double(tok[k + 1], uv[k])) throw ParseError(path, line_no, "malformed texture coordinate");
      file_uvs.push_back(uv);
    } else if (kind == "f") {
      if (tok.size() < 4) throw ParseError(path, line_no, "face needs at least 3 vertices");
      std::vector<int> vi, ti, ni;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        std::string_view t = tok[k];
        const auto s1 = t.find('/');
        std::string_view sv = t.substr(0, s1), st, sn;
        if (s1 != std::string_view::npos) {
          const auto rest = t.substr(s1 + 1);
          const auto s2 = rest.find('/');
          st = rest.substr(0, s2);
          if (s2 != std::string_view::npos) sn = rest.substr(s2 + 1);
        }
        vi.push_back(resolve_index(sv, mesh.positions.size(), path, line_no, "vertex"));
        ti.push_back(st.empty() ? -1 : resolve_index(st, file_uvs.size(), path, line_no, "texture"));
        ni.push_back(sn.empty() ? -1 : resolve_index(sn, file_normals.size(), path, line_no, "normal"));
      }
      for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
        mesh.triangles.push_back({vi[0], vi[k], vi[k + 1]});
        for (std::size_t c : {std::size_t{0}, k, k + 1}) {
          if (ti[c] < 0)
            all_uv = false;
          else
            mesh.corner_uv.push_back(file_uvs[static_cast<std::size_t>(ti[c])]);
        }
        corner_vn.push_back({ni[0], ni[k], ni[k + 1]});
        if (ni[0] < 0 || ni[k] < 0 || ni[k + 1] < 0) all_vn = false;
        mesh.triangle_chart.push_back(current_chart);
      }
    } else if (kind == "g" || kind == "o") {
      current_chart = -1;
      if (tok.size() >= 2 && tok[1].starts_with("chart_")) {
        long id = 0;
        if (parse_int(tok[1].substr(6), id) && id >= 0) {
          current_chart = static_cast<int>(id);
          any_chart = true;
        }
      }
    }
    // mtllib, usemtl, s and unknown records are ignored.
  }

  if (!all_uv || mesh.corner_uv.size() != 3 * mesh.triangles.size()) mesh.corner_uv.clear();
  if (!any_chart) mesh.triangle_chart.clear();

  if (all_vn && !file_normals.empty() && !mesh.triangles.empty()) {
    mesh.normals.assign(mesh.positions.size(), Vec3::Zero());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      for (int c = 0; c < 3; ++c)
        mesh.normals[static_cast<std::size_t>(mesh.triangles[t][c])] += file_normals[static_cast<std::size_t>(corner_vn[t][c])];
    bool ok = true;
    for (Vec3& n : mesh.normals) {
      const double len = n.norm();
      if (len > 0.0)
        n /= len;
      else
        ok = false;
    }
    if (!ok) compute_vertex_normals(mesh);
  } else {
    compute_vertex_normals(mesh);
  }
  return mesh;
}

void compute_vertex_normals(Mesh& mesh) {
  mesh.normals.assign(mesh.positions.size(), Vec3::Zero());
  for (const Triangle& tri : mesh.triangles) {
    const Vec3 n = (mesh.positions[tri[1]] - mesh.positions[tri[0]]).cross(mesh.positions[tri[2]] - mesh.positions[tri[0]]);
    for (int v : tri) mesh.normals[static_cast<std::size_t>(v)] += n;
  }
  for (Vec3& n : mesh.normals) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }
}

Similarity unit_cube_transform(std::span<const Vec3> points) {
  if (points.empty()) throw ContractViolation("unit_cube_transform: no points");
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw ContractViolation("unit_cube_transform: degenerate bounds");
  return {0.5 * (lo + hi), 2.0 / extent};
}

Similarity unit_cube_transform(const Mesh& mesh) { return unit_cube_transform(std::span<const Vec3>(mesh.positions)); }

Mesh transformed(const Mesh& mesh, const Similarity& sim) {
  Mesh out = mesh;
  for (Vec3& p : out.positions) p = sim.apply(p);
  return out;
}

Mesh make_icosphere(int level) {
  if (level < 0) throw ContractViolation("make_icosphere: level must be >= 0");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.positions = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                 {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& p : m.positions) p.normalize();
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      m.positions.push_back((m.positions[static_cast<std::size_t>(a)] + m.positions[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(m.positions.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    next.reserve(m.triangles.size() * 4);
    for (const Triangle& tri : m.triangles) {
      const int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  m.normals = m.positions;
  return m;
}

std::pair<Vec3, Vec3> tangent_frame(const Vec3& normal, Rng& rng) {
  const double len = normal.norm();
  if (!(len > 0.0)) throw ContractViolation("tangent_frame: zero normal");
  const Vec3 n = normal / len;
  // Helper axis least aligned with n.
  Vec3 helper = Vec3::UnitX();
  if (std::abs(n.y()) < std::abs(n.x()) && std::abs(n.y()) <= std::abs(n.z()))
    helper = Vec3::UnitY();
  else if (std::abs(n.z()) < std::abs(n.x()))
    helper = Vec3::UnitZ();
  const Vec3 p0 = helper.cross(n).normalized();
  const Vec3 q0 = n.cross(p0);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec3 p = (std::cos(angle) * p0 + std::sin(angle) * q0).normalized();
  return {p, n.cross(p)};
}

AreaSampler::AreaSampler(const Mesh& mesh, NormalMode mode) : mesh_(&mesh), mode_(mode) {
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double a = mesh.triangle_area(t);
    if (!(a > kDegenerateArea)) continue;
    total_ += a;
    cdf_.push_back(total_);
    tri_.push_back(static_cast<int>(t));
  }
  if (!(total_ > 0.0)) throw ContractViolation("AreaSampler: mesh has zero total area");
}

int AreaSampler::pick_triangle(double r) const {
  const double target = r * total_;
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
  if (it == cdf_.end()) --it;
  return tri_[static_cast<std::size_t>(it - cdf_.begin())];
}

SurfaceSample AreaSampler::sample(Rng& rng) const {
  const Mesh& m = *mesh_;
  const int t = pick_triangle(rng.uniform());
  const Triangle& tri = m.triangles[static_cast<std::size_t>(t)];
  const double s = std::sqrt(rng.uniform());
  const double r2 = rng.uniform();
  const double b0 = 1.0 - s, b1 = s * (1.0 - r2), b2 = s * r2;
  SurfaceSample out;
  out.triangle = t;
  out.x = b0 * m.positions[tri[0]] + b1 * m.positions[tri[1]] + b2 * m.positions[tri[2]];
  Vec3 n = m.face_normal(static_cast<std::size_t>(t));
  if (mode_ == NormalMode::Interpolated && m.normals.size() == m.positions.size()) {
    const Vec3 interp = b0 * m.normals[tri[0]] + b1 * m.normals[tri[1]] + b2 * m.normals[tri[2]];
    if (interp.norm() > 1e-8) n = interp.normalized();
  }
  out.normal = n;
  std::tie(out.tangent_p, out.tangent_q) = tangent_frame(n, rng);
  return out;
}

void AreaSampler::sample(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const {
  out.reserve(out.size() + count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(sample(rng));
}

std::vector<SurfaceSample> sample_surface(const Mesh& mesh, std::size_t count, Rng& rng, NormalMode mode) {
  AreaSampler sampler(mesh, mode);
  std::vector<SurfaceSample> out;
  sampler.sample(count, rng, out);
  return out;
}

std::vector<SurfaceSample> load_point_cloud(const std::string& path, Rng& rng, std::size_t* rejected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud: " + path);
  std::vector<SurfaceSample> out;
  std::size_t skipped = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0].starts_with("#")) continue;
    if (tok.size() != 6) throw ParseError(path, line_no, "expected 6 values 'x y z nx ny nz'");
    double v[6];
    for (int k = 0; k < 6; ++k)
      if (!parse_double(tok[static_cast<std::size_t>(k)], v[k])) throw ParseError(path, line_no, "malformed number");
    const Vec3 n(v[3], v[4], v[5]);
    const double len = n.norm();
    if (!(len > 0.0) || !std::isfinite(len)) {
      ++skipped;
      continue;
    }
    SurfaceSample s;
    s.x = Vec3(v[0], v[1], v[2]);
    s.normal = n / len;
    std::tie(s.tangent_p, s.tangent_q) = tangent_frame(s.normal, rng);
    out.push_back(s);
  }
  if (rejected) *rejected = skipped;
  return out;
}

void write_point_cloud(const std::string& path, std::span<const SurfaceSample> samples) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write point cloud: " + path);
  for (const SurfaceSample& s : samples)
    std::fprintf(f, "%.9g %.9g %.9g %.9g %.9g %.9g\n", s.x.x(), s.x.y(), s.x.z(), s.normal.x(), s.normal.y(),
                 s.normal.z());
  if (std::fclose(f) != 0) throw IoError("failed writing point cloud: " + path);
}

}  // namespace uvfield
